"""Computational domain: grid, sound speed, boundary classification, regions, domain of influence."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import CHI0_RAMP_FRACTION, REGION_DILATION, REGION_MIN_MARGIN, SPACING_RTOL
from .errors import ConfigError, EmptyMask, InteriorViolation, NonDivisibleSpacing, PadTooSmall

log = logging.getLogger(__name__)

# (x, y) -> (c, dc/dx, dc/dy); only oracle tests and analytic presets supply one.
AnalyticSpeed = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


class NodeKind(IntEnum):
    INTERIOR = 0
    WALL = 1
    MEASUREMENT = 2
    TRUNCATION = 3


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    h: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ConfigError(f"grid must be at least 8x8 nodes, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ConfigError(f"grid spacing must be positive, got {self.h}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.h, y0, y0 + (self.ny - 1) * self.h)

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinates X[i, j], Y[i, j]."""
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def node_xy(self, i: int, j: int) -> Tuple[float, float]:
        return (self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def boundary_ring(self) -> np.ndarray:
        ring = np.zeros(self.shape, dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        return ring


@dataclass(frozen=True, eq=False)
class SpeedField:
    c: np.ndarray
    analytic: Optional[AnalyticSpeed] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise ConfigError("sound speed must be finite and strictly positive everywhere")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    @property
    def cmax(self) -> float:
        return float(self.c.max())

    @property
    def cmin(self) -> float:
        return float(self.c.min())

    @classmethod
    def constant(cls, grid: Grid, c0: float = 1.0) -> "SpeedField":
        def analytic(x, y):
            x = np.asarray(x, dtype=float)
            return np.full_like(x, c0), np.zeros_like(x), np.zeros_like(x)
        return cls(np.full(grid.shape, float(c0)), analytic)

    @classmethod
    def gradient(cls, grid: Grid, c0: float, gx: float = 0.0, gy: float = 0.0) -> "SpeedField":
        """c = c0 + gx*x + gy*y (linear-gradient medium)."""
        X, Y = grid.coords()

        def analytic(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            return c0 + gx * x + gy * y, np.full_like(x, gx), np.full_like(x, gy)
        return cls(c0 + gx * X + gy * Y, analytic)


@dataclass(frozen=True, eq=False)
class BoundaryMap:
    kind: np.ndarray      # int8 NodeKind per node
    chi0: np.ndarray      # cutoff, nonzero only on Measurement nodes

    def __post_init__(self):
        if self.kind.shape != self.chi0.shape:
            raise ConfigError("boundary kind and chi0 arrays differ in shape")
        if np.any(self.chi0 < 0) or np.any(self.chi0[self.kind != NodeKind.MEASUREMENT] != 0):
            raise ConfigError("chi0 must be non-negative and vanish off Measurement nodes")

    def mask(self, kind: NodeKind) -> np.ndarray:
        return self.kind == kind

    @property
    def measurement_nodes(self) -> np.ndarray:
        """(n, 2) node indices of Measurement nodes in row-major order."""
        return np.argwhere(self.kind == NodeKind.MEASUREMENT)

    def with_chi0(self, chi0: np.ndarray) -> "BoundaryMap":
        return BoundaryMap(self.kind, np.where(self.kind == NodeKind.MEASUREMENT, chi0, 0.0))


@dataclass(frozen=True, eq=False)
class Geometry:
    """Grid, speed and boundary classification travelling together."""
    grid: Grid
    speed: SpeedField
    boundary: BoundaryMap

    def __post_init__(self):
        if self.speed.c.shape != self.grid.shape or self.boundary.kind.shape != self.grid.shape:
            raise ConfigError("speed field / boundary map do not match the grid")

    def signature(self) -> dict:
        """Values that must agree between a data set and the geometry it is reused on."""
        return {
            "nx": self.grid.nx, "ny": self.grid.ny, "h": self.grid.h,
            "origin": list(self.grid.origin),
            "cmin": self.speed.cmin, "cmax": self.speed.cmax,
            "n_measurement": int(np.count_nonzero(self.boundary.kind == NodeKind.MEASUREMENT)),
        }


@dataclass(frozen=True, eq=False)
class RegionMask:
    mask: np.ndarray

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def margin(self) -> Optional[int]:
        """Minimum node distance from the mask to the grid's boundary ring; None if empty."""
        if self.empty:
            return None
        ii, jj = np.nonzero(self.mask)
        nx, ny = self.mask.shape
        return int(min(ii.min(), jj.min(), nx - 1 - ii.max(), ny - 1 - jj.max()))

    def require_interior(self) -> "RegionMask":
        if self.empty:
            raise EmptyMask("region K is empty")
        if self.margin < REGION_MIN_MARGIN:
            raise InteriorViolation(
                f"region K comes within {self.margin} node(s) of the boundary; "
                f"at least {REGION_MIN_MARGIN} required")
        return self

    def __or__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.mask | other.mask)

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.mask & other.mask)

    def __sub__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.mask & ~other.mask)

    def complement(self) -> "RegionMask":
        return RegionMask(~self.mask)


def _tiles(length: float, h: float) -> int:
    n = length / h
    k = round(n)
    if k < 1 or abs(n - k) > SPACING_RTOL * max(n, 1.0):
        raise NonDivisibleSpacing(f"spacing h={h} does not tile length {length} ({n:.6g} cells)")
    return int(k)


def _raised_cosine(s: np.ndarray, width: float) -> np.ndarray:
    """0 at s=0, 1 for s >= width, raised cosine in between."""
    s = np.clip(s, 0.0, width)
    return 0.5 * (1.0 - np.cos(np.pi * s / width))


def build_corner_geometry(arm_length: float, pad: float, h: float) -> Tuple[Grid, BoundaryMap]:
    """Quadrant {x, y > 0} truncated to [0, arm_length + pad]^2, Gamma = both axes up to arm_length."""
    if not arm_length > 0:
        raise ConfigError(f"arm_length must be positive, got {arm_length}")
    if pad < 0:
        raise ConfigError(f"pad must be non-negative, got {pad}")
    n_arm = _tiles(arm_length, h)
    n = n_arm + int(math.ceil(pad / h - SPACING_RTOL))
    grid = Grid(n + 1, n + 1, h)

    kind = np.zeros(grid.shape, dtype=np.int8)
    kind[-1, :] = NodeKind.TRUNCATION
    kind[:, -1] = NodeKind.TRUNCATION
    axis = np.zeros(grid.shape, dtype=bool)
    axis[0, :] = axis[:, 0] = True
    kind[axis & (kind != NodeKind.TRUNCATION)] = NodeKind.WALL
    meas = np.zeros(grid.shape, dtype=bool)
    meas[0, : n_arm + 1] = True
    meas[: n_arm + 1, 0] = True
    kind[meas] = NodeKind.MEASUREMENT

    # distance along Gamma to its nearest free end; the corner is interior to Gamma
    X, Y = grid.coords()
    s = np.where(meas, arm_length - np.maximum(X, Y), 0.0)
    width = CHI0_RAMP_FRACTION * 2.0 * arm_length
    chi0 = np.where(meas, _raised_cosine(s, width), 0.0)
    log.debug("corner geometry: %dx%d nodes, %d measurement nodes", grid.nx, grid.ny, meas.sum())
    return grid, BoundaryMap(kind, chi0)


def build_cavity_geometry(width: float, height: float, h: float,
                          gamma_start: float, gamma_end: float) -> Tuple[Grid, BoundaryMap]:
    """Closed rectangle, Gamma = [gamma_start, gamma_end] on the bottom edge, Wall elsewhere."""
    nx = _tiles(width, h) + 1
    ny = _tiles(height, h) + 1
    if not 0 <= gamma_start < gamma_end <= width:
        raise ConfigError(f"Gamma segment [{gamma_start}, {gamma_end}] not inside [0, {width}]")
    grid = Grid(nx, ny, h)
    kind = np.zeros(grid.shape, dtype=np.int8)
    kind[grid.boundary_ring()] = NodeKind.WALL
    xs = grid.xs()
    tol = SPACING_RTOL * h
    on_gamma = (xs >= gamma_start - tol) & (xs <= gamma_end + tol)
    kind[on_gamma, 0] = NodeKind.MEASUREMENT
    s = np.minimum(xs - gamma_start, gamma_end - xs)
    chi0 = np.zeros(grid.shape)
    chi0[on_gamma, 0] = _raised_cosine(s[on_gamma], CHI0_RAMP_FRACTION * (gamma_end - gamma_start))
    return grid, BoundaryMap(kind, chi0)


def check_causal_padding(geometry: Geometry, T: float, region: Optional[RegionMask] = None) -> float:
    """Raise PadTooSmall unless every Truncation node is > 2*cmax*T + 4h from Gamma and K.

    Returns the actual clearance (inf when the grid has no Truncation nodes)."""
    trunc = geometry.boundary.mask(NodeKind.TRUNCATION)
    if not trunc.any():
        return math.inf
    sources = geometry.boundary.mask(NodeKind.MEASUREMENT)
    if region is not None:
        sources = sources | region.mask
    clearance = mask_distance(RegionMask(trunc), RegionMask(sources), geometry.grid)
    need = 2.0 * geometry.speed.cmax * T + 4.0 * geometry.grid.h
    if clearance <= need:
        raise PadTooSmall(
            f"truncation edge is {clearance:.4g} from Gamma/K but T={T} needs more than {need:.4g}")
    return clearance


_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def travel_times(geometry: Geometry) -> np.ndarray:
    """First-arrival times from the Measurement nodes: first-order upwind fast marching of |grad d| = 1/c."""
    grid = geometry.grid
    nx, ny = grid.shape
    f = grid.h / geometry.speed.c
    t = np.full(grid.shape, np.inf)
    known = np.zeros(grid.shape, dtype=bool)
    heap = []
    for i, j in geometry.boundary.measurement_nodes:
        t[i, j] = 0.0
        heap.append((0.0, int(i), int(j)))
    heapq.heapify(heap)

    def known_min(i, j, di, dj):
        best = np.inf
        for s in (-1, 1):
            a, b = i + s * di, j + s * dj
            if 0 <= a < nx and 0 <= b < ny and known[a, b]:
                best = min(best, t[a, b])
        return best

    while heap:
        tij, i, j = heapq.heappop(heap)
        if known[i, j]:
            continue
        known[i, j] = True
        for di, dj in _NEIGHBOURS:
            a, b = i + di, j + dj
            if not (0 <= a < nx and 0 <= b < ny) or known[a, b]:
                continue
            tx = known_min(a, b, 1, 0)
            ty = known_min(a, b, 0, 1)
            fab = f[a, b]
            if abs(tx - ty) < fab:
                cand = 0.5 * (tx + ty + math.sqrt(2.0 * fab * fab - (tx - ty) ** 2))
            else:
                cand = min(tx, ty) + fab
            if cand < t[a, b]:
                t[a, b] = cand
                heapq.heappush(heap, (cand, a, b))
    return t


def domain_of_influence(geometry: Geometry, T: float) -> RegionMask:
    """M(Gamma, T): nodes whose travel time from Gamma is at most T (+ h/cmin for the closed condition)."""
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    times = travel_times(geometry)
    return RegionMask(times <= T + geometry.grid.h / geometry.speed.cmin)


def region_from_phantom(field: np.ndarray, threshold: float) -> RegionMask:
    """K = {|field| > threshold * max|field|}, dilated by REGION_DILATION nodes."""
    field = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(field)):
        raise ConfigError("phantom field contains non-finite values")
    if not 0 < threshold < 1:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    peak = np.abs(field).max()
    if peak == 0:
        return RegionMask(np.zeros(field.shape, dtype=bool))
    mask = np.abs(field) > threshold * peak
    cross = ndimage.generate_binary_structure(2, 1)
    mask = ndimage.binary_dilation(mask, structure=cross, iterations=REGION_DILATION)
    return RegionMask(mask).require_interior()


MaskLike = Union[RegionMask, np.ndarray]


def mask_distance(mask_a: MaskLike, mask_b: MaskLike, grid: Grid) -> float:
    """Minimum Euclidean distance between the node sets of two masks."""
    a = mask_a.mask if isinstance(mask_a, RegionMask) else np.asarray(mask_a, dtype=bool)
    b = mask_b.mask if isinstance(mask_b, RegionMask) else np.asarray(mask_b, dtype=bool)
    if not a.any() or not b.any():
        raise EmptyMask("mask_distance needs two nonempty masks")
    dist = ndimage.distance_transform_edt(~b, sampling=grid.h)
    return float(dist[a].min())
