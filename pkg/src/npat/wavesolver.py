"""Leapfrog FDTD integrator for u_tt = c^2 Laplacian(u) with Neumann / impedance boundary nodes.

Boundary condition at a Measurement node, in Euclidean coordinates (the metric
normal derivative of g = c^-2 dx^2 is c times the Euclidean one):

    d_nu u + s * (chi0 / c) * (d_t u - g) = 0,     s = +1 (ImpedancePlus), -1 (ImpedanceMinus)

imposed through the mirror ghost with the centred velocity (u^{n+1} - u^{n-1}) / 2dt,
which makes the update an explicit per-node division. Walls and Truncation
edges use the plain mirror ghost (s = 0)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable, Optional, Tuple

import numpy as np
from numpy.polynomial import Chebyshev

from .config import CFL_MAX, ENERGY_MONITOR_RTOL, VELOCITY_MAP_TOL
from .errors import (
    CflViolation,
    ConfigError,
    DriveMismatch,
    EnergyIncrease,
    IllPosedBoundary,
    NonFiniteField,
)
from .geometry import Geometry
from .stencil import apply_stiffness, gradient_form, node_weights

if TYPE_CHECKING:
    from .operators import StatePair

log = logging.getLogger(__name__)


class Direction(Enum):
    FORWARD = 1
    BACKWARD = -1


class BoundaryMode(Enum):
    NEUMANN = 0
    IMPEDANCE_PLUS = 1
    IMPEDANCE_MINUS = -1


class Interval(Enum):
    """I+ = (0, T) and I- = (-T, 0)."""
    PLUS = 1
    MINUS = -1


@dataclass(frozen=True, eq=False)
class MeasurementTrace:
    """Boundary velocity on Measurement nodes; row k is time sign(interval) * k * dt."""
    values: np.ndarray        # (n_steps + 1, n_nodes)
    dt: float
    nodes: np.ndarray         # (n_nodes, 2)
    interval: Interval

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.interval.value * self.dt * np.arange(self.values.shape[0])

    def stepping_values(self, direction: Direction) -> np.ndarray:
        """Rows in the order a solve over this interval in `direction` consumes them.

        Forward on I+ and backward on I- start at t=0; the other two start at the far end."""
        if direction.value == self.interval.value:
            return self.values
        return self.values[::-1]

    def scaled(self, factor: float) -> "MeasurementTrace":
        return MeasurementTrace(factor * self.values, self.dt, self.nodes, self.interval)

    def __sub__(self, other: "MeasurementTrace") -> "MeasurementTrace":
        return MeasurementTrace(self.values - other.values, self.dt, self.nodes, self.interval)


@dataclass(frozen=True, eq=False)
class WaveState:
    u: np.ndarray
    v: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class SolverConfig:
    dt: float                 # positive; the direction carries the sign
    n_steps: int
    cfl: float                # effective Courant number dt * cmax / h
    direction: Direction
    bc_mode: BoundaryMode
    interval: Interval
    drive: Optional[MeasurementTrace] = None
    cfl_requested: Optional[float] = None
    monitor_energy: bool = False

    @property
    def signed_dt(self) -> float:
        return self.direction.value * self.dt

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def start_time(self) -> float:
        """t at step 0: 0 for legs leaving t=0, +-T for legs starting at the far end."""
        if self.direction.value == self.interval.value:
            return 0.0
        return self.interval.value * self.horizon

    @classmethod
    def for_horizon(cls, geometry: Geometry, T: float, cfl: float,
                    direction: Direction = Direction.FORWARD,
                    bc_mode: BoundaryMode = BoundaryMode.NEUMANN,
                    interval: Optional[Interval] = None,
                    drive: Optional[MeasurementTrace] = None,
                    monitor_energy: bool = False) -> "SolverConfig":
        """Largest dt <= cfl*h/cmax that divides T exactly."""
        if not T > 0:
            raise ConfigError(f"T must be positive, got {T}")
        if not 0 < cfl <= CFL_MAX:
            raise CflViolation(f"cfl={cfl} outside (0, {CFL_MAX}]")
        dt_max = cfl * geometry.grid.h / geometry.speed.cmax
        n_steps = int(math.ceil(T / dt_max - 1e-12))
        dt = T / n_steps
        if interval is None:
            interval = Interval.PLUS if direction is Direction.FORWARD else Interval.MINUS
        config = cls(dt, n_steps, dt * geometry.speed.cmax / geometry.grid.h, direction,
                     bc_mode, interval, drive, cfl, monitor_energy)
        config.validate(geometry)
        return config

    def with_drive(self, drive: Optional[MeasurementTrace]) -> "SolverConfig":
        return SolverConfig(self.dt, self.n_steps, self.cfl, self.direction, self.bc_mode,
                            self.interval, drive, self.cfl_requested, self.monitor_energy)

    def validate(self, geometry: Geometry) -> None:
        if self.cfl > CFL_MAX * (1 + 1e-12):
            raise CflViolation(f"cfl={self.cfl:.6g} exceeds {CFL_MAX}")
        if self.bc_mode.value * self.direction.value < 0:
            raise IllPosedBoundary(
                f"{self.bc_mode.name} integrated {self.direction.name} is not well posed")
        if self.drive is not None:
            d = self.drive
            if d.values.shape[0] != self.n_steps + 1:
                raise DriveMismatch(
                    f"drive has {d.values.shape[0]} samples, solve needs {self.n_steps + 1}")
            if abs(d.dt - self.dt) > 1e-12 * self.dt:
                raise DriveMismatch(f"drive dt={d.dt} differs from solver dt={self.dt}")
            if d.interval is not self.interval:
                raise DriveMismatch(f"drive recorded on {d.interval.name}, solve runs on {self.interval.name}")
            if not np.array_equal(d.nodes, geometry.boundary.measurement_nodes):
                raise DriveMismatch("drive node map does not match the boundary map")


class Leapfrog:
    """Per-(geometry, config) coefficients of the update

        (m + b) u^{n+1} = m (2u^n - u^{n-1}) - A u^n + b u^{n-1} + sB g^{n}

    with m = W h^2 / (c dt)^2, sB = s h chi0 / c, b = sB / (2 dt).

    The levels sit at half steps: a state (u, v) at t_k is the pair of levels
    u -/+ dt/2 * w around it, where w = (I - X)^(-1/2) v and X = A / (4m).
    The conserved leapfrog energy of that pair then equals ||(u, v)||*^2, so
    forward and backward legs are adjoint in the energy norm. Both square
    roots are Chebyshev series in X, whose spectrum lies in [0, 2 cfl^2]."""

    def __init__(self, geometry: Geometry, config: SolverConfig):
        config.validate(geometry)
        self.geometry = geometry
        self.config = config
        grid, c = geometry.grid, geometry.speed.c
        self.dt = config.signed_dt
        self.weights = node_weights(*grid.shape)
        self.m = self.weights * grid.h ** 2 / (c * c * self.dt * self.dt)
        nodes = geometry.boundary.measurement_nodes
        self.meas = (nodes[:, 0], nodes[:, 1])
        self.sB = config.bc_mode.value * grid.h * geometry.boundary.chi0 / c
        self.b = self.sB / (2.0 * self.dt)
        self.denom = self.m + self.b
        if config.drive is not None:
            self.drive = config.drive.stepping_values(config.direction)
        else:
            self.drive = None
        x_max = 2.0 * (config.dt * geometry.speed.cmax / grid.h) ** 2
        self._to_half = _chebyshev_coefficients(-0.5, x_max)
        self._from_half = _chebyshev_coefficients(0.5, x_max)
        self._x_max = x_max

    def drive_at(self, k: int) -> Optional[np.ndarray]:
        """Drive at level k (time t_{k-1/2}): mean of trace rows k-1 and k."""
        if self.drive is None:
            return None
        return 0.5 * (self.drive[k - 1] + self.drive[k])

    def advance(self, u_prev: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
        """Level k+1 from levels k-1 and k, for k = 1..n_steps."""
        rhs = self.m * (2.0 * u - u_prev) - apply_stiffness(u) + self.b * u_prev
        g = self.drive_at(k)
        if g is not None:
            rhs[self.meas] += self.sB[self.meas] * g
        u_next = rhs / self.denom
        if not np.all(np.isfinite(u_next)):
            raise NonFiniteField(f"non-finite field after step {k} (unstable run)")
        return u_next

    def _series(self, coef: np.ndarray, v: np.ndarray) -> np.ndarray:
        # Clenshaw recurrence with t = 2X/x_max - 1
        def shifted(w):
            return (2.0 / self._x_max) * apply_stiffness(w) / (4.0 * self.m) - w

        b1 = np.zeros_like(v)
        b2 = np.zeros_like(v)
        for ck in coef[:0:-1]:
            b1, b2 = ck * v + 2.0 * shifted(b1) - b2, b1
        return coef[0] * v + shifted(b1) - b2

    def levels(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """The two levels straddling the state (u, v), in stepping order."""
        half = 0.5 * self.dt * self._series(self._to_half, v)
        return u - half, u + half

    def state(self, u_a: np.ndarray, u_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(u, v) at the instant between consecutive levels a, b."""
        return 0.5 * (u_a + u_b), self._series(self._from_half, (u_b - u_a) / self.dt)


def _chebyshev_coefficients(power: float, x_max: float) -> np.ndarray:
    """Chebyshev series of (1 - x)^power on [0, x_max], truncated at VELOCITY_MAP_TOL."""
    t_sing = 2.0 / x_max - 1.0
    rho = t_sing + math.sqrt(t_sing * t_sing - 1.0)
    degree = min(max(int(math.ceil(-math.log(VELOCITY_MAP_TOL) / math.log(rho))), 2), 64)
    series = Chebyshev.interpolate(lambda x: (1.0 - x) ** power, degree, domain=[0.0, x_max])
    return series.coef


def leapfrog_energy(u_a: np.ndarray, u_b: np.ndarray, dt: float, geometry: Geometry) -> float:
    """Energy the scheme conserves between consecutive levels a, b:
    1/2 [ h^2 sum W c^-2 ((u_b - u_a)/dt)^2 + sum_e w_e (du_a)(du_b) ]."""
    grid, c = geometry.grid, geometry.speed.c
    W = node_weights(*grid.shape)
    kinetic = grid.h ** 2 * np.sum(W * ((u_b - u_a) / dt) ** 2 / (c * c))
    return 0.5 * float(kinetic + gradient_form(u_a, u_b))


def step(state: WaveState, config: SolverConfig, geometry: Geometry, k: int = 0) -> WaveState:
    """One time step from the state at step k; a drive must have rows k and k+1."""
    lf = Leapfrog(geometry, config)
    u_a, u_b = lf.levels(state.u, state.v)
    u_c = lf.advance(u_a, u_b, k + 1)
    u, v = lf.state(u_b, u_c)
    return WaveState(u, v, state.t + lf.dt)


Observer = Callable[[int, np.ndarray, np.ndarray], None]


def solve(U0: "StatePair", config: SolverConfig, geometry: Geometry,
          observer: Optional[Observer] = None):
    """Integrate n_steps from U0; return the final WaveState and the velocity trace on Gamma.

    `observer(k, u_a, u_b)` sees the two levels around step k = 0..n_steps.
    Trace row k is (u_b - u_a) / dt at the Measurement nodes."""
    lf = Leapfrog(geometry, config)
    n_steps = config.n_steps
    n_meas = lf.meas[0].size
    recorded = np.empty((n_steps + 1, n_meas))

    u_prev, u = lf.levels(np.asarray(U0.u0, dtype=np.float64), np.asarray(U0.u1, dtype=np.float64))
    E0 = E_prev = None
    for k in range(n_steps + 1):
        recorded[k] = (u[lf.meas] - u_prev[lf.meas]) / lf.dt
        if observer is not None:
            observer(k, u_prev, u)
        if config.monitor_energy:
            E = leapfrog_energy(u_prev, u, lf.dt, geometry)
            if E0 is None:
                E0 = E
            elif config.drive is None and E > E_prev + ENERGY_MONITOR_RTOL * max(E0, 1e-300):
                raise EnergyIncrease(f"energy grew from {E_prev:.17g} to {E:.17g} at step {k}")
            E_prev = E
        if k == n_steps:
            break
        u_prev, u = u, lf.advance(u_prev, u, k + 1)

    u_final, v_final = lf.state(u_prev, u)
    # canonical trace order runs outward from t=0
    values = recorded if config.direction.value == config.interval.value else recorded[::-1].copy()
    trace = MeasurementTrace(values, config.dt, geometry.boundary.measurement_nodes, config.interval)
    t_final = config.start_time + config.direction.value * config.horizon
    log.debug("solve %s/%s: %d steps, dt=%.6g", config.direction.name, config.bc_mode.name,
              n_steps, config.dt)
    return WaveState(u_final, v_final, t_final), trace
