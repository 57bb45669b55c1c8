"""Geodesic rays of the metric c^-2 dx^2 and sampled checks of the visibility condition.

Rays follow the Hamiltonian H = 1/2 c^2 |xi|^2 in travel-time parametrisation:

    dx/dt = c^2 xi,    dxi/dt = -1/2 grad(c^2) |xi|^2

with |xi| c = 1 on entry. Many rays are integrated as one batch; nothing is
continued past its first contact with the grid box."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .config import (
    N_DIRS_DEFAULT,
    RAY_BISECT_TOL,
    RAY_CONSERVATION_TOL,
    RAY_STEP_SAFETY,
    REGION_DILATION,
    TANGENCY_THRESHOLD,
)
from .errors import ConfigError, EmptyMask, NonFiniteRay
from .geometry import Geometry, NodeKind, RegionMask, domain_of_influence

log = logging.getLogger(__name__)


class Outcome(IntEnum):
    # higher value wins when combining the +xi and -xi traces of one direction
    TRAPPED = 0
    HIT_WALL = 1
    TANGENTIAL = 2
    VISIBLE = 3


@dataclass(frozen=True)
class RayState:
    x: np.ndarray     # (2,)
    xi: np.ndarray    # (2,)
    t: float


@dataclass(frozen=True)
class RayResult:
    state: RayState
    outcome: Outcome
    hit_time: float                 # nan when Trapped
    cos_incidence: float            # nan when Trapped
    drift: float                    # max | |xi| c - 1 | along the trace
    path: Optional[np.ndarray] = None

    def __iter__(self):
        return iter((self.state, self.outcome))


class SpeedSampler:
    """c^2 and grad(c^2) at arbitrary points.

    Grid mode interpolates nodal c^2 and its centred differences bilinearly;
    analytic mode calls the SpeedField hook."""

    def __init__(self, geometry: Geometry, analytic: bool = False):
        speed, grid = geometry.speed, geometry.grid
        if analytic and speed.analytic is None:
            raise ConfigError("analytic ray tracing needs a speed field with an analytic hook")
        self.analytic = speed.analytic if analytic else None
        c2 = speed.c ** 2
        gx, gy = np.gradient(c2, grid.h)
        stacked = np.stack([c2, gx, gy], axis=-1)
        self._interp = RegularGridInterpolator((grid.xs(), grid.ys()), stacked,
                                               bounds_error=False, fill_value=None)
        gcx, gcy = np.gradient(speed.c, grid.h)
        self.max_grad_c = float(np.hypot(gcx, gcy).max())

    def __call__(self, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.analytic is not None:
            c, cx, cy = self.analytic(pts[:, 0], pts[:, 1])
            return c * c, 2.0 * c * cx, 2.0 * c * cy
        vals = self._interp(pts)
        return vals[:, 0], vals[:, 1], vals[:, 2]

    def speed(self, pts: np.ndarray) -> np.ndarray:
        return np.sqrt(self(pts)[0])


def _rhs(sampler: SpeedSampler, y: np.ndarray) -> np.ndarray:
    c2, gx, gy = sampler(y[:, :2])
    xi2 = y[:, 2] ** 2 + y[:, 3] ** 2
    return np.stack([c2 * y[:, 2], c2 * y[:, 3], -0.5 * gx * xi2, -0.5 * gy * xi2], axis=1)


def _rk4(sampler: SpeedSampler, y: np.ndarray, dt: np.ndarray) -> np.ndarray:
    d = dt[:, None]
    k1 = _rhs(sampler, y)
    k2 = _rhs(sampler, y + 0.5 * d * k1)
    k3 = _rhs(sampler, y + 0.5 * d * k2)
    k4 = _rhs(sampler, y + d * k3)
    return y + d / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Box:
    def __init__(self, geometry: Geometry):
        self.x0, self.x1, self.y0, self.y1 = geometry.grid.extent
        self.tol = 1e-12 * max(abs(self.x1), abs(self.y1), 1.0)
        self.walls = np.array([self.x0, self.x1, self.y0, self.y1])

    def inside(self, pts: np.ndarray) -> np.ndarray:
        x, y = pts[:, 0], pts[:, 1]
        t = self.tol
        return (x >= self.x0 - t) & (x <= self.x1 + t) & (y >= self.y0 - t) & (y <= self.y1 + t)

    def side(self, pts: np.ndarray) -> np.ndarray:
        """0 left, 1 right, 2 bottom, 3 top: the edge with the largest violation."""
        viol = np.stack([self.x0 - pts[:, 0], pts[:, 0] - self.x1,
                         self.y0 - pts[:, 1], pts[:, 1] - self.y1], axis=1)
        return np.argmax(viol, axis=1)

    def clip(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([np.clip(pts[:, 0], self.x0, self.x1), np.clip(pts[:, 1], self.y0, self.y1)], axis=1)


_NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])


@dataclass
class _Batch:
    x: np.ndarray
    xi: np.ndarray
    t: np.ndarray
    outcome: np.ndarray
    hit_time: np.ndarray
    hit_xy: np.ndarray
    cos: np.ndarray
    drift: np.ndarray


def _classify(geometry: Geometry, pts: np.ndarray, side: np.ndarray, cos: np.ndarray,
              tangency: float) -> np.ndarray:
    """Outcome of a boundary contact: Visible on supp(chi0) with |cos| >= tangency."""
    grid, bmap = geometry.grid, geometry.boundary
    fi = (pts[:, 0] - grid.origin[0]) / grid.h
    fj = (pts[:, 1] - grid.origin[1]) / grid.h
    fi = np.where(side == 0, 0.0, np.where(side == 1, grid.nx - 1, fi))
    fj = np.where(side == 2, 0.0, np.where(side == 3, grid.ny - 1, fj))
    fi = np.clip(fi, 0, grid.nx - 1)
    fj = np.clip(fj, 0, grid.ny - 1)
    ni = np.rint(fi).astype(int)
    nj = np.rint(fj).astype(int)
    kind = bmap.kind[ni, nj]
    # chi0 linearly interpolated along the hit edge
    along_x = side >= 2
    f = np.where(along_x, fi, fj)
    lo = np.floor(f).astype(int)
    frac = f - lo
    lo_i = np.where(along_x, lo, ni)
    lo_j = np.where(along_x, nj, lo)
    hi_i = np.where(along_x, np.minimum(lo + 1, grid.nx - 1), ni)
    hi_j = np.where(along_x, nj, np.minimum(lo + 1, grid.ny - 1))
    chi = (1 - frac) * bmap.chi0[lo_i, lo_j] + frac * bmap.chi0[hi_i, hi_j]
    on_gamma = (kind == NodeKind.MEASUREMENT) & (chi > 0)
    out = np.full(pts.shape[0], Outcome.HIT_WALL, dtype=np.int8)
    out[on_gamma & (cos >= tangency)] = Outcome.VISIBLE
    out[on_gamma & (cos < tangency)] = Outcome.TANGENTIAL
    return out


def _trace_batch(x0: np.ndarray, xi0: np.ndarray, T: float, geometry: Geometry,
                 sampler: SpeedSampler, tangency: float, step: Optional[float] = None,
                 path: Optional[List[np.ndarray]] = None) -> _Batch:
    n = x0.shape[0]
    box = _Box(geometry)
    h = geometry.grid.h
    c0 = sampler.speed(x0)
    xi_norm = np.hypot(xi0[:, 0], xi0[:, 1])
    if np.any(xi_norm == 0):
        raise ConfigError("ray direction must be nonzero")
    xi = xi0 / (xi_norm * c0)[:, None]
    y = np.concatenate([x0, xi], axis=1).astype(np.float64)

    cmax = geometry.speed.cmax
    if step is None:
        limit = h / cmax
        if sampler.max_grad_c > 0:
            limit = min(limit, 0.1 / sampler.max_grad_c)
        step = RAY_STEP_SAFETY * limit
    bisect_iters = max(1, int(math.ceil(math.log2(step * cmax / (RAY_BISECT_TOL * h))))) + 2

    t = np.zeros(n)
    outcome = np.full(n, Outcome.TRAPPED, dtype=np.int8)
    hit_time = np.full(n, np.nan)
    hit_xy = np.full((n, 2), np.nan)
    cos = np.full(n, np.nan)
    drift = np.zeros(n)
    active = np.ones(n, dtype=bool)
    if path is not None:
        path.append(y[:, :2].copy())

    while active.any():
        idx = np.flatnonzero(active)
        ya = y[idx]
        dt = np.minimum(step, T - t[idx])
        y_new = _rk4(sampler, ya, dt)
        if not np.all(np.isfinite(y_new)):
            raise NonFiniteRay("ray state became non-finite; check the speed field")
        inside = box.inside(y_new[:, :2])

        stay = idx[inside]
        y[stay] = y_new[inside]
        t[stay] += dt[inside]

        leaving = ~inside
        if leaving.any():
            yl, dl = ya[leaving], dt[leaving]
            lo, hi = np.zeros_like(dl), dl.copy()
            for _ in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                ok = box.inside(_rk4(sampler, yl, mid)[:, :2])
                lo = np.where(ok, mid, lo)
                hi = np.where(ok, hi, mid)
            y_lo, y_hi = _rk4(sampler, yl, lo), _rk4(sampler, yl, hi)
            side = box.side(y_hi[:, :2])
            # secant on the crossed coordinate inside the bracket
            axis = side // 2
            rows = np.arange(side.size)
            a, b = y_lo[rows, axis], y_hi[rows, axis]
            wall = box.walls[side]
            span = np.where(b != a, b - a, 1.0)
            frac = np.clip(np.where(b != a, (wall - a) / span, 1.0), 0.0, 1.0)
            hi = lo + frac * (hi - lo)
            y_hit = _rk4(sampler, yl, hi)
            pts = box.clip(y_hit[:, :2])
            xi_hit = y_hit[:, 2:]
            cos_hit = np.abs(np.einsum("ij,ij->i", xi_hit, _NORMALS[side])) / np.hypot(xi_hit[:, 0], xi_hit[:, 1])
            out_idx = idx[leaving]
            y[out_idx, :2] = pts
            y[out_idx, 2:] = xi_hit
            t[out_idx] += hi
            hit_time[out_idx] = t[out_idx]
            hit_xy[out_idx] = pts
            cos[out_idx] = cos_hit
            outcome[out_idx] = _classify(geometry, pts, side, cos_hit, tangency)
            active[out_idx] = False

        expired = idx[inside][t[stay] >= T * (1 - 1e-14)]
        active[expired] = False

        cur = y[idx]
        conserved = np.sqrt(sampler(cur[:, :2])[0]) * np.hypot(cur[:, 2], cur[:, 3])
        drift[idx] = np.maximum(drift[idx], np.abs(conserved - 1.0))
        if path is not None:
            path.append(y[:, :2].copy())

    worst = float(drift.max()) if n else 0.0
    if worst > RAY_CONSERVATION_TOL:
        log.warning("slowness drift %.2e exceeds %.0e; refine the ray step", worst, RAY_CONSERVATION_TOL)
    return _Batch(y[:, :2], y[:, 2:], t, outcome, hit_time, hit_xy, cos, drift)


def trace_ray(x0: Sequence[float], xi0: Sequence[float], T: float, geometry: Geometry,
              tangency: float = TANGENCY_THRESHOLD, step: Optional[float] = None,
              analytic: bool = False, record_path: bool = False) -> RayResult:
    """One geodesic from x0 along xi0 (normalised to |xi| c = 1) for travel time T or until it leaves the box."""
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    sampler = SpeedSampler(geometry, analytic)
    path: Optional[List[np.ndarray]] = [] if record_path else None
    b = _trace_batch(np.asarray([x0], dtype=float), np.asarray([xi0], dtype=float), T,
                     geometry, sampler, tangency, step, path)
    state = RayState(b.x[0].copy(), b.xi[0].copy(), float(b.t[0]))
    return RayResult(state, Outcome(int(b.outcome[0])), float(b.hit_time[0]), float(b.cos[0]),
                     float(b.drift[0]), None if path is None else np.array([p[0] for p in path]))


@dataclass(frozen=True, eq=False)
class VisibilityReport:
    """Per (node, direction) outcomes for a sampled visibility check."""
    xy: np.ndarray            # (n_nodes, 2)
    outcome: np.ndarray       # (n_nodes, n_dirs) combined Outcome codes
    hit_time: np.ndarray      # (n_nodes, n_dirs) of the deciding trace; nan if Trapped
    hit_xy: np.ndarray        # (n_nodes, n_dirs, 2)
    cos_incidence: np.ndarray
    tangency: float

    @property
    def n_dirs(self) -> int:
        return self.outcome.shape[1]

    @property
    def fraction(self) -> float:
        return float(np.count_nonzero(self.outcome == Outcome.VISIBLE)) / self.outcome.size

    @property
    def passed(self) -> bool:
        return bool(np.all(self.outcome == Outcome.VISIBLE))

    @property
    def min_cos_margin(self) -> Optional[float]:
        """Smallest |cos(incidence)| among Visible hits: how close sampling came to grazing."""
        vis = self.outcome == Outcome.VISIBLE
        return float(self.cos_incidence[vis].min()) if vis.any() else None

    def worst_case(self) -> Optional[Tuple[Tuple[float, float], int, Outcome]]:
        """(node xy, direction index, outcome) of the first non-visible sample in row-major order."""
        bad = np.argwhere(self.outcome != Outcome.VISIBLE)
        if bad.size == 0:
            return None
        k, d = bad[0]
        return (tuple(self.xy[k]), int(d), Outcome(int(self.outcome[k, d])))

    def counts(self) -> dict:
        return {o.name.lower(): int(np.count_nonzero(self.outcome == o)) for o in Outcome}

    def rows(self):
        for k in range(self.outcome.shape[0]):
            x, y = self.xy[k]
            for d in range(self.n_dirs):
                yield (float(x), float(y), d, Outcome(int(self.outcome[k, d])).name.lower(),
                       float(self.hit_time[k, d]), float(self.cos_incidence[k, d]))


def _directions(n_dirs: int) -> np.ndarray:
    if n_dirs < 8:
        raise ConfigError(f"n_dirs must be >= 8, got {n_dirs}")
    theta = np.pi * np.arange(n_dirs) / n_dirs      # half circle: each is traced as +-xi
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def _visibility_of(xy: np.ndarray, T: float, n_dirs: int, geometry: Geometry,
                   tangency: float, threads: int, analytic: bool = False):
    """Combined per-direction results for node coordinates xy (n, 2)."""
    dirs = _directions(n_dirs)
    sampler = SpeedSampler(geometry, analytic)
    n = xy.shape[0]

    def run(chunk: np.ndarray):
        m = chunk.shape[0]
        x0 = np.repeat(chunk, n_dirs, axis=0)
        d = np.tile(dirs, (m, 1))
        fwd = _trace_batch(x0, d, T, geometry, sampler, tangency)
        bwd = _trace_batch(x0, -d, T, geometry, sampler, tangency)
        return fwd, bwd

    chunks = np.array_split(xy, max(1, min(threads, n))) if threads > 1 else [xy]
    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(xy)]

    def cat(attr, which):
        return np.concatenate([getattr(p[which], attr) for p in parts], axis=0)

    out_f, out_b = cat("outcome", 0), cat("outcome", 1)
    use_b = out_b > out_f
    outcome = np.where(use_b, out_b, out_f)
    hit_time = np.where(use_b, cat("hit_time", 1), cat("hit_time", 0))
    cos = np.where(use_b, cat("cos", 1), cat("cos", 0))
    hit_xy = np.where(use_b[:, None], cat("hit_xy", 1), cat("hit_xy", 0))
    shape = (n, n_dirs)
    return (outcome.reshape(shape), hit_time.reshape(shape), hit_xy.reshape(shape + (2,)),
            cos.reshape(shape))


def check_visibility(K: RegionMask, T: float, n_dirs: int = N_DIRS_DEFAULT,
                     geometry: Optional[Geometry] = None, tangency: float = TANGENCY_THRESHOLD,
                     threads: int = 1, analytic: bool = False) -> VisibilityReport:
    """Trace +xi and -xi for time T from every node of K; a direction is Visible if either trace is."""
    if geometry is None:
        raise ConfigError("check_visibility needs a geometry")
    if K.empty:
        raise EmptyMask("visibility check needs a nonempty K")
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    X, Y = geometry.grid.coords()
    xy = np.stack([X[K.mask], Y[K.mask]], axis=1)
    outcome, hit_time, hit_xy, cos = _visibility_of(xy, T, n_dirs, geometry, tangency, threads, analytic)
    report = VisibilityReport(xy, outcome, hit_time, hit_xy, cos, tangency)
    log.info("visibility: %d node(s) x %d direction(s), fraction %.6f, pass=%s",
             xy.shape[0], n_dirs, report.fraction, report.passed)
    margin = report.min_cos_margin
    if margin is not None and margin < 2 * tangency:
        log.warning("smallest visible incidence cosine %.4f is close to the tangency threshold %.3f",
                    margin, tangency)
    return report


def visibility_heatmap(T: float, n_dirs: int = N_DIRS_DEFAULT, geometry: Optional[Geometry] = None,
                       stride: int = 1, tangency: float = TANGENCY_THRESHOLD,
                       threads: int = 1) -> np.ndarray:
    """Per-node visible fraction. Nodes outside M(Gamma, T) dilated by two nodes are 0: no ray
    of travel time T from there can reach Gamma. With stride s, lattice nodes (s*i, s*j) are
    traced and each fills its s x s block."""
    if geometry is None:
        raise ConfigError("visibility_heatmap needs a geometry")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    grid = geometry.grid
    doi = domain_of_influence(geometry, T).mask
    cross = ndimage.generate_binary_structure(2, 1)
    near = ndimage.binary_dilation(doi, structure=cross, iterations=REGION_DILATION)
    lattice = np.zeros(grid.shape, dtype=bool)
    lattice[::stride, ::stride] = True
    interior = ~grid.boundary_ring()
    sample = near & lattice & interior

    heat = np.zeros(grid.shape)
    if sample.any():
        X, Y = grid.coords()
        xy = np.stack([X[sample], Y[sample]], axis=1)
        outcome, *_ = _visibility_of(xy, T, n_dirs, geometry, tangency, threads)
        heat[sample] = np.count_nonzero(outcome == Outcome.VISIBLE, axis=1) / n_dirs
    if stride > 1:
        ii = (np.arange(grid.nx) // stride) * stride
        jj = (np.arange(grid.ny) // stride) * stride
        heat = heat[np.ix_(ii, jj)]
    log.info("heatmap: %d node(s) traced, fraction-1 area %d node(s)", int(sample.sum()),
             int(np.count_nonzero(heat >= 1.0)))
    return heat
