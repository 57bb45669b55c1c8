"""Operator algebra on the energy space: Lambda, nudging cycles N, stabilized cycles S, P_K, energy forms, E.

In two dimensions the weight mu = c^(n-2) is identically one and the energy
norm reduces, in Euclidean coordinates, to

    ||U||*^2 = 1/2 [ sum_e w_e (du0)^2 + h^2 sum_i W_i u1_i^2 / c_i^2 ]

with the edge and node weights of npat.stencil. The projection uses this form
directly; the solver conserves it exactly through its level map, which is what
makes S self-adjoint in it."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import cg

from .config import CFL_DEFAULT, CG_MAXITER_FACTOR, CG_RTOL
from .errors import CgDivergence, ConfigError
from .geometry import Geometry, Grid, RegionMask
from .stencil import apply_stiffness, gradient_form, node_weights, stiffness_matrix
from .wavesolver import (
    BoundaryMode,
    Direction,
    Interval,
    MeasurementTrace,
    SolverConfig,
    leapfrog_energy,
    solve,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StatePair:
    """(u0, u1) on a geometry's grid: displacement and velocity at one instant."""
    u0: np.ndarray
    u1: np.ndarray
    geometry: Geometry

    def __post_init__(self):
        shape = self.geometry.grid.shape
        for name in ("u0", "u1"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, grid is {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    @property
    def grid(self) -> Grid:
        return self.geometry.grid

    @classmethod
    def zeros(cls, geometry: Geometry) -> "StatePair":
        return cls(np.zeros(geometry.grid.shape), np.zeros(geometry.grid.shape), geometry)

    def __add__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.u0 + other.u0, self.u1 + other.u1, self.geometry)

    def __sub__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.u0 - other.u0, self.u1 - other.u1, self.geometry)

    def __mul__(self, factor: float) -> "StatePair":
        return StatePair(factor * self.u0, factor * self.u1, self.geometry)

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not (self.u0.any() or self.u1.any())

    def support(self) -> np.ndarray:
        return (self.u0 != 0) | (self.u1 != 0)


class EnergyValue(float):
    """||U||*, the energy norm; `.energy` is its square (energy units)."""

    def __new__(cls, value: float):
        if value < 0 or math.isnan(value):
            raise ValueError(f"energy norm must be non-negative, got {value}")
        return super().__new__(cls, value)

    @property
    def energy(self) -> float:
        return float(self) ** 2


def energy_inner(U: StatePair, W: StatePair) -> float:
    grid, c = U.geometry.grid, U.geometry.speed.c
    weights = node_weights(*grid.shape)
    kinetic = grid.h ** 2 * np.sum(weights * U.u1 * W.u1 / (c * c))
    return 0.5 * (gradient_form(U.u0, W.u0) + float(kinetic))


def energy_norm(U: StatePair) -> EnergyValue:
    return EnergyValue(math.sqrt(max(energy_inner(U, U), 0.0)))


# ---- time legs

class Leg(Enum):
    """The four solves of a cycle: (direction, impedance sign, interval)."""
    UP_PLUS = (Direction.FORWARD, BoundaryMode.IMPEDANCE_PLUS, Interval.PLUS)
    DOWN_PLUS = (Direction.BACKWARD, BoundaryMode.IMPEDANCE_MINUS, Interval.PLUS)
    DOWN_MINUS = (Direction.BACKWARD, BoundaryMode.IMPEDANCE_MINUS, Interval.MINUS)
    UP_MINUS = (Direction.FORWARD, BoundaryMode.IMPEDANCE_PLUS, Interval.MINUS)

    @property
    def direction(self) -> Direction:
        return self.value[0]

    @property
    def bc_mode(self) -> BoundaryMode:
        return self.value[1]

    @property
    def interval(self) -> Interval:
        return self.value[2]


class Traces(NamedTuple):
    """Measured data on I+ and I-."""
    plus: MeasurementTrace
    minus: MeasurementTrace

    def for_interval(self, interval: Interval) -> MeasurementTrace:
        return self.plus if interval is Interval.PLUS else self.minus


@dataclass(frozen=True, eq=False)
class Propagator:
    """Everything a solve needs besides its initial state: geometry, horizon T, Courant number."""
    geometry: Geometry
    T: float
    cfl: float = CFL_DEFAULT
    threads: int = 1

    def config(self, direction: Direction, bc_mode: BoundaryMode, interval: Interval,
               drive: Optional[MeasurementTrace] = None, monitor_energy: bool = False) -> SolverConfig:
        return SolverConfig.for_horizon(self.geometry, self.T, self.cfl, direction, bc_mode,
                                        interval, drive, monitor_energy)

    def leg(self, U: StatePair, leg: Leg, data: Optional[Traces] = None):
        drive = None if data is None else data.for_interval(leg.interval)
        config = self.config(leg.direction, leg.bc_mode, leg.interval, drive,
                             monitor_energy=data is None)
        final, trace = solve(U, config, self.geometry)
        return StatePair(final.u, final.v, self.geometry), trace

    @property
    def dt(self) -> float:
        return self.config(Direction.FORWARD, BoundaryMode.NEUMANN, Interval.PLUS).dt


def lambda_op(V0: StatePair, prop: Propagator) -> Traces:
    """Neumann solves from t=0 forward to T and backward to -T; velocity traces on Gamma."""
    _, plus = solve(V0, prop.config(Direction.FORWARD, BoundaryMode.NEUMANN, Interval.PLUS),
                    prop.geometry)
    _, minus = solve(V0, prop.config(Direction.BACKWARD, BoundaryMode.NEUMANN, Interval.MINUS),
                     prop.geometry)
    return Traces(plus, minus)


def reflect_pat_trace(plus: MeasurementTrace) -> MeasurementTrace:
    """I- data of an even-in-time solution: v(-t) = -v(t) for the velocity trace."""
    return MeasurementTrace(-plus.values, plus.dt, plus.nodes, Interval.MINUS)


def _cycle_plus(U: StatePair, prop: Propagator, data: Optional[Traces]) -> StatePair:
    up, _ = prop.leg(U, Leg.UP_PLUS, data)
    down, _ = prop.leg(up, Leg.DOWN_PLUS, data)
    return down


def _cycle_minus(U: StatePair, prop: Propagator, data: Optional[Traces]) -> StatePair:
    down, _ = prop.leg(U, Leg.DOWN_MINUS, data)
    up, _ = prop.leg(down, Leg.UP_MINUS, data)
    return up


def _average_cycles(U: StatePair, prop: Propagator, data: Optional[Traces]) -> StatePair:
    if prop.threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_plus = pool.submit(_cycle_plus, U, prop, data)
            fut_minus = pool.submit(_cycle_minus, U, prop, data)
            plus, minus = fut_plus.result(), fut_minus.result()
    else:
        plus = _cycle_plus(U, prop, data)
        minus = _cycle_minus(U, prop, data)
    return (plus + minus) * 0.5


def nudge_cycle(U0: StatePair, data: Traces, prop: Propagator) -> StatePair:
    """N(U0; Lambda V0) = (N+ + N-)/2 with N+ = N_down+ N_up+, N- = N_up- N_down-."""
    return _average_cycles(U0, prop, data)


def s_cycle(U0: StatePair, prop: Propagator) -> StatePair:
    """S = (S+ + S-)/2: the nudging cycle with zero drive."""
    return _average_cycles(U0, prop, None)


@lru_cache(maxsize=8)
def _restricted_system(nx: int, ny: int, mask_bytes: bytes):
    idx = np.flatnonzero(np.frombuffer(mask_bytes, dtype=bool))
    A = stiffness_matrix(nx, ny)
    return idx, A[idx][:, idx].tocsr()


def project_K(U: StatePair, K: RegionMask) -> StatePair:
    """Energy-orthogonal projection onto pairs supported in K.

    u1 is restricted pointwise; u0 -> p0 minimising sum_e w_e d(u0 - p0)^2 over
    K-supported p0, i.e. (A p0)_K = (A u0)_K, solved by conjugate gradients."""
    K.require_interior()
    grid = U.grid
    if K.mask.shape != grid.shape:
        raise ConfigError(f"region mask {K.mask.shape} does not match grid {grid.shape}")
    idx, A_KK = _restricted_system(grid.nx, grid.ny, np.ascontiguousarray(K.mask).tobytes())
    rhs = apply_stiffness(U.u0).ravel()[idx]
    x0 = U.u0.ravel()[idx]
    p, info = cg(A_KK, rhs, x0=x0, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER_FACTOR * idx.size)
    if info != 0:
        raise CgDivergence(f"CG did not reach relative residual {CG_RTOL} (info={info}, |K|={idx.size})")
    u0 = np.zeros(grid.nx * grid.ny)
    u0[idx] = p
    u1 = np.where(K.mask, U.u1, 0.0)
    return StatePair(u0.reshape(grid.shape), u1, U.geometry)


@dataclass(frozen=True, eq=False)
class FluxTrace:
    """sqrt(chi0) * d_t u on Gamma for t in [-T, T] (row k is t = -T + k dt)."""
    values: np.ndarray
    dt: float
    nodes: np.ndarray

    def l2_norm_sq(self, geometry: Geometry) -> float:
        """Trapezoid-in-time quadrature of the integral of chi0 |d_t u|^2 mu dy dt (mu dy = h/c)."""
        c = geometry.speed.c[self.nodes[:, 0], self.nodes[:, 1]]
        wt = np.ones(self.values.shape[0])
        wt[0] = wt[-1] = 0.5
        per_step = (self.values ** 2 * (geometry.grid.h / c)).sum(axis=1)
        return float(self.dt * np.dot(wt, per_step))


def boundary_flux_trace(U0: StatePair, prop: Propagator) -> FluxTrace:
    """E U0 from the two zero-drive stabilized solves glued at t=0 (S_up+ forward, S_down- backward)."""
    _, plus = prop.leg(U0, Leg.UP_PLUS)
    _, minus = prop.leg(U0, Leg.DOWN_MINUS)
    nodes = prop.geometry.boundary.measurement_nodes
    root = np.sqrt(prop.geometry.boundary.chi0[nodes[:, 0], nodes[:, 1]])
    glued = np.concatenate([minus.values[::-1], plus.values[1:]], axis=0)
    return FluxTrace(glued * root, plus.dt, nodes)


def apply_r(U: StatePair, K: RegionMask, prop: Propagator) -> StatePair:
    """R = P_K S."""
    return project_K(s_cycle(U, prop), K)


def symmetry_residual(U: StatePair, W: StatePair, K: RegionMask, prop: Propagator) -> Tuple[float, float]:
    """(|<RU, W> - <U, RW>| / (||U|| ||W||), <RU, U> / ||U||^2)."""
    RU = apply_r(U, K, prop)
    RW = apply_r(W, K, prop)
    nu, nw = energy_norm(U), energy_norm(W)
    asym = abs(energy_inner(RU, W) - energy_inner(U, RW)) / (nu * nw)
    return asym, energy_inner(RU, U) / nu ** 2


# ---- energy audit

@dataclass(frozen=True, eq=False)
class EnergyAudit:
    """Per-step energy bookkeeping of one zero-drive stabilized forward solve.

    `energy` is the leapfrog energy of the two levels around step n, which is
    ||U(t_n)||*^2 for the state the solver reports at t_n; `flux` is the
    trapezoid-in-time integral of sum chi0 h/c v^2 over the recorded trace up
    to t_n; `residual` = energy - energy[0] + flux. The scheme itself loses
    energy at the midpoint rate, so the residual is the quadrature error of
    the trapezoid rule, sum dt chi0 h/c (v_{n+1} - v_n)^2 / 4 >= 0."""
    times: np.ndarray
    energy: np.ndarray
    flux: np.ndarray
    h: float

    @property
    def residual(self) -> np.ndarray:
        return self.energy - self.energy[0] + self.flux

    @property
    def final_residual(self) -> float:
        return float(abs(self.residual[-1]))

    def rows(self):
        res = self.residual
        for n in range(self.times.size):
            yield (n, float(self.times[n]), float(self.energy[n]), float(self.flux[n]), float(res[n]))


def energy_audit(U0: StatePair, prop: Propagator) -> EnergyAudit:
    geometry = prop.geometry
    config = prop.config(Direction.FORWARD, BoundaryMode.IMPEDANCE_PLUS, Interval.PLUS,
                         monitor_energy=True)
    nodes = geometry.boundary.measurement_nodes
    meas = (nodes[:, 0], nodes[:, 1])
    flux_weight = geometry.boundary.chi0[meas] * geometry.grid.h / geometry.speed.c[meas]
    n = config.n_steps + 1
    energy = np.empty(n)

    def observe(k, u_a, u_b):
        energy[k] = leapfrog_energy(u_a, u_b, config.dt, geometry)

    _, trace = solve(U0, config, geometry, observe)
    rate = trace.values ** 2 @ flux_weight
    flux = np.zeros(n)
    flux[1:] = np.cumsum(0.5 * config.dt * (rate[1:] + rate[:-1]))
    times = config.dt * np.arange(n)
    log.info("energy audit h=%g: E0=%.6e, final residual %.3e", geometry.grid.h,
             energy[0], abs(energy[-1] - energy[0] + flux[-1]))
    return EnergyAudit(times, energy, flux, geometry.grid.h)


def balance_orders(audits: Sequence[EnergyAudit]) -> List[float]:
    """Observed orders log(r_a / r_b) / log(h_a / h_b) between consecutive resolutions."""
    out = []
    for a, b in zip(audits, audits[1:]):
        ra, rb = a.final_residual, b.final_residual
        if ra <= 0 or rb <= 0:
            out.append(float("nan"))
        else:
            out.append(math.log(ra / rb) / math.log(a.h / b.h))
    return out
