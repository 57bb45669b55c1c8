"""Iteration drivers: (P_K N)^j(0), the Neumann series sum_j R^j P_K N(0), rate fitting, ||R|| estimate."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import STOP_RATIO_DEFAULT
from .errors import ConfigError, GeometryMismatch, InsufficientData
from .geometry import RegionMask, domain_of_influence
from .operators import (
    Propagator,
    StatePair,
    Traces,
    apply_r,
    energy_inner,
    energy_norm,
    nudge_cycle,
    project_K,
)

log = logging.getLogger(__name__)

IterateCallback = Callable[[int, StatePair], None]


@dataclass
class IterationRecord:
    j: int
    error: Optional[float]
    update: Optional[float]
    seconds: float


@dataclass
class ConvergenceLog:
    records: List[IterationRecord] = field(default_factory=list)
    rate: Optional[float] = None
    r2: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def errors(self) -> List[Optional[float]]:
        return [r.error for r in self.records]

    @property
    def updates(self) -> List[Optional[float]]:
        return [r.update for r in self.records]

    def ratios(self) -> List[Optional[float]]:
        """Per-iteration e_j / e_{j-1} (update ratios when no truth was supplied)."""
        series = self._series()
        out: List[Optional[float]] = [None]
        for prev, cur in zip(series, series[1:]):
            out.append(cur / prev if prev not in (None, 0.0) and cur is not None else None)
        return out

    def _series(self) -> List[Optional[float]]:
        return self.errors if self.records and self.records[0].error is not None else self.updates

    def fit(self) -> None:
        try:
            self.rate, self.r2 = estimate_rate(self)
        except InsufficientData as exc:
            log.info("no rate fitted: %s", exc)


def _check_data(data: Traces, prop: Propagator) -> None:
    nodes = prop.geometry.boundary.measurement_nodes
    dt = prop.dt
    for trace in data:
        if not np.array_equal(trace.nodes, nodes):
            raise GeometryMismatch("measurement traces were recorded on a different Gamma")
        if abs(trace.dt - dt) > 1e-12 * dt:
            raise GeometryMismatch(f"trace dt={trace.dt} does not match the solver dt={dt}")
        if abs(trace.n_steps * trace.dt - prop.T) > 1e-9 * prop.T:
            raise GeometryMismatch(f"traces cover {trace.n_steps * trace.dt}, T is {prop.T}")


def check_region(K: RegionMask, prop: Propagator) -> bool:
    """True when K lies inside M(Gamma, T); otherwise logs warning W1 and returns False."""
    doi = domain_of_influence(prop.geometry, prop.T)
    outside = (K - doi).size
    if outside:
        log.warning("W1: %d node(s) of K lie outside M(Gamma, T=%g); the data cannot determine "
                    "the source there", outside, prop.T)
        return False
    return True


def reconstruct_nudging(data: Traces, K: RegionMask, j_max: int, prop: Propagator,
                        truth: Optional[StatePair] = None, start: Optional[StatePair] = None,
                        stop_ratio: float = STOP_RATIO_DEFAULT,
                        on_iterate: Optional[IterateCallback] = None) -> Tuple[StatePair, ConvergenceLog]:
    """U_{j+1} = P_K N(U_j; data) from U_0 = 0 (or `start`)."""
    if j_max < 1:
        raise ConfigError(f"j_max must be >= 1, got {j_max}")
    _check_data(data, prop)
    K.require_interior()
    check_region(K, prop)

    U = StatePair.zeros(prop.geometry) if start is None else start
    clog = ConvergenceLog()
    clog.records.append(IterationRecord(0, _error(U, truth), None, 0.0))
    first_update = None
    for j in range(1, j_max + 1):
        t0 = time.perf_counter()
        U_next = project_K(nudge_cycle(U, data, prop), K)
        update = float(energy_norm(U_next - U))
        U = U_next
        rec = IterationRecord(j, _error(U, truth), update, time.perf_counter() - t0)
        clog.records.append(rec)
        log.info("nudging j=%d update=%.6e error=%s", j, update,
                 "n/a" if rec.error is None else f"{rec.error:.6e}")
        if on_iterate is not None:
            on_iterate(j, U)
        first_update = update if first_update is None else first_update
        if update <= stop_ratio * first_update:
            log.info("stopped at j=%d: update below %.1e of the first", j, stop_ratio)
            break
    clog.fit()
    return U, clog


def reconstruct_neumann_series(data: Traces, K: RegionMask, n_terms: int, prop: Propagator,
                               truth: Optional[StatePair] = None,
                               on_iterate: Optional[IterateCallback] = None) -> Tuple[StatePair, ConvergenceLog]:
    """sum_{j < n_terms} R^j b with b = P_K N(0; data) and R = P_K S."""
    if n_terms < 1:
        raise ConfigError(f"n_terms must be >= 1, got {n_terms}")
    _check_data(data, prop)
    K.require_interior()
    check_region(K, prop)

    zero = StatePair.zeros(prop.geometry)
    clog = ConvergenceLog()
    clog.records.append(IterationRecord(0, _error(zero, truth), None, 0.0))
    t0 = time.perf_counter()
    term = project_K(nudge_cycle(zero, data, prop), K)
    total = term
    for j in range(1, n_terms + 1):
        if j > 1:
            t0 = time.perf_counter()
            term = apply_r(term, K, prop)
            total = total + term
        rec = IterationRecord(j, _error(total, truth), float(energy_norm(term)),
                              time.perf_counter() - t0)
        clog.records.append(rec)
        log.info("neumann n=%d increment=%.6e", j, rec.update)
        if on_iterate is not None:
            on_iterate(j, total)
    clog.fit()
    return total, clog


def _error(U: StatePair, truth: Optional[StatePair]) -> Optional[float]:
    return None if truth is None else float(energy_norm(U - truth))


def estimate_rate(log_or_series: Union[ConvergenceLog, Sequence[float]]) -> Tuple[float, float]:
    """Least-squares fit of log e_j against j over the tail half; returns (exp(slope), r^2)."""
    if isinstance(log_or_series, ConvergenceLog):
        series = log_or_series._series()
    else:
        series = list(log_or_series)
    pts = [(j, e) for j, e in enumerate(series) if e is not None]
    if not pts:
        raise InsufficientData("no error entries")
    floor = 10.0 * np.finfo(float).eps * max(e for _, e in pts)
    pts = [(j, e) for j, e in pts if e > floor]
    if len(pts) < 4:
        raise InsufficientData(f"{len(pts)} usable entries above the noise floor, need 4")
    tail = pts[len(pts) // 2:]
    j = np.array([p[0] for p in tail], dtype=float)
    y = np.log(np.array([p[1] for p in tail]))
    slope, intercept = np.polyfit(j, y, 1)
    ss_res = float(np.sum((y - (slope * j + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 else 1.0 - ss_res / ss_tot
    return math.exp(slope), r2


def estimate_r_norm(K: RegionMask, prop: Propagator, n_iter: int = 20,
                    start: Optional[StatePair] = None) -> List[float]:
    """Power iteration on R = P_K S; returns the Rayleigh quotients <RU, U>/<U, U> per step.

    R is self-adjoint and positive, so the quotients increase towards ||R||."""
    K.require_interior()
    if start is None:
        rng = np.random.default_rng(0)
        noise = rng.standard_normal(prop.geometry.grid.shape)
        start = project_K(StatePair(noise, noise * prop.geometry.speed.c, prop.geometry), K)
    U = start * (1.0 / float(energy_norm(start)))
    quotients = []
    for k in range(n_iter):
        RU = apply_r(U, K, prop)
        quotients.append(energy_inner(RU, U))
        norm = float(energy_norm(RU))
        if norm == 0.0:
            break
        U = RU * (1.0 / norm)
        log.debug("power iteration %d: %.8f", k, quotients[-1])
    return quotients
