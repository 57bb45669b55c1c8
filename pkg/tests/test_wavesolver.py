import numpy as np
import pytest

from conftest import bump, closed_box, corner
from npat.errors import CflViolation, DriveMismatch, IllPosedBoundary
from npat.geometry import SpeedField
from npat.operators import StatePair, energy_norm
from npat.phantoms import make_phantom
from npat.wavesolver import (
    BoundaryMode,
    Direction,
    Interval,
    Leapfrog,
    MeasurementTrace,
    SolverConfig,
    WaveState,
    leapfrog_energy,
    solve,
    step,
)


def _config(geometry, T, direction=Direction.FORWARD, bc=BoundaryMode.NEUMANN, interval=None, **kw):
    return SolverConfig.for_horizon(geometry, T, 0.45, direction, bc, interval, **kw)


def test_time_step_divides_horizon(small_corner):
    cfg = _config(small_corner, 0.6)
    assert cfg.n_steps * cfg.dt == pytest.approx(0.6, rel=1e-12)
    assert cfg.cfl <= 0.45
    assert cfg.cfl_requested == 0.45


def test_reference_step_count():
    g = corner(h=0.025, pad=2.2)
    cfg = _config(g, 1.0)
    assert g.grid.shape == (129, 129)
    assert cfg.n_steps == 89


def test_zero_state_stays_zero(small_corner):
    U0 = StatePair.zeros(small_corner)
    final, trace = solve(U0, _config(small_corner, 0.6), small_corner)
    assert not final.u.any() and not final.v.any()
    assert not trace.values.any()


def test_constant_state_is_stationary(small_corner):
    shape = small_corner.grid.shape
    state = WaveState(np.full(shape, 2.5), np.zeros(shape), 0.0)
    cfg = _config(small_corner, 0.6)
    for k in range(5):
        state = step(state, cfg, small_corner, k)
    assert np.allclose(state.u, 2.5, atol=1e-13)
    assert np.allclose(state.v, 0.0, atol=1e-12)


def test_neumann_round_trip_is_exact(small_corner, small_bump):
    fwd = _config(small_corner, 0.6)
    final, _ = solve(small_bump, fwd, small_corner)
    back = _config(small_corner, 0.6, Direction.BACKWARD, interval=Interval.PLUS)
    restored, _ = solve(StatePair(final.u, final.v, small_corner), back, small_corner)
    err = energy_norm(StatePair(restored.u, restored.v, small_corner) - small_bump)
    assert err <= 1e-10 * energy_norm(small_bump)
    assert restored.t == pytest.approx(0.0, abs=1e-12)


def test_finite_speed_of_propagation():
    g = corner(h=0.05, pad=1.5)
    far = make_phantom(bump(1.5, 1.5, 0.2), g)
    # nearest Gamma node is the arm end (1, 0) at distance ~1.58, bump edge at ~1.38
    _, trace = solve(far, _config(g, 0.6), g)
    assert np.abs(trace.values).max() <= 1e-12 * energy_norm(far)


def test_impedance_energy_is_non_increasing(small_corner, small_bump):
    cfg = _config(small_corner, 0.6, bc=BoundaryMode.IMPEDANCE_PLUS, monitor_energy=True)
    energies = []

    def observe(k, u_a, u_b):
        energies.append(leapfrog_energy(u_a, u_b, cfg.dt, small_corner))

    solve(small_bump, cfg, small_corner, observe)
    E = np.array(energies)
    assert np.all(np.diff(E) <= 1e-12 * E[0])
    assert E[-1] < E[0]


def test_neumann_energy_is_conserved(small_corner, small_bump):
    cfg = _config(small_corner, 0.6)
    energies = []
    solve(small_bump, cfg, small_corner,
          lambda k, a, b: energies.append(leapfrog_energy(a, b, cfg.dt, small_corner)))
    E = np.array(energies)
    assert np.abs(E - E[0]).max() <= 1e-12 * E[0]


def test_wrong_impedance_sign_is_rejected(small_corner):
    with pytest.raises(IllPosedBoundary):
        _config(small_corner, 0.6, Direction.BACKWARD, BoundaryMode.IMPEDANCE_PLUS)
    with pytest.raises(IllPosedBoundary):
        _config(small_corner, 0.6, Direction.FORWARD, BoundaryMode.IMPEDANCE_MINUS)


def test_cfl_limit(small_corner):
    with pytest.raises(CflViolation):
        SolverConfig.for_horizon(small_corner, 0.6, 0.6)


def test_drive_mismatch(small_corner, small_prop):
    cfg = small_prop.config(Direction.FORWARD, BoundaryMode.IMPEDANCE_PLUS, Interval.PLUS)
    nodes = small_corner.boundary.measurement_nodes
    short = MeasurementTrace(np.zeros((cfg.n_steps, nodes.shape[0])), cfg.dt, nodes, Interval.PLUS)
    with pytest.raises(DriveMismatch):
        cfg.with_drive(short).validate(small_corner)
    wrong_side = MeasurementTrace(np.zeros((cfg.n_steps + 1, nodes.shape[0])), cfg.dt, nodes, Interval.MINUS)
    with pytest.raises(DriveMismatch):
        cfg.with_drive(wrong_side).validate(small_corner)


def test_zero_drive_zero_data(small_prop, small_corner):
    cfg = small_prop.config(Direction.BACKWARD, BoundaryMode.IMPEDANCE_MINUS, Interval.MINUS)
    nodes = small_corner.boundary.measurement_nodes
    drive = MeasurementTrace(np.zeros((cfg.n_steps + 1, nodes.shape[0])), cfg.dt, nodes, Interval.MINUS)
    final, trace = solve(StatePair.zeros(small_corner), cfg.with_drive(drive), small_corner)
    assert not final.u.any() and not trace.values.any()


def test_long_run_stable_with_speed_contrast():
    def contrast(grid):
        return SpeedField.gradient(grid, 1.0, gx=3.0 / ((grid.nx - 1) * grid.h))

    g = closed_box(31, 31, 0.05, speed=contrast)
    assert g.speed.cmax / g.speed.cmin == pytest.approx(4.0)
    X, Y = g.grid.coords()
    u0 = np.exp(-((X - 0.75) ** 2 + (Y - 0.75) ** 2) / 0.02)
    U0 = StatePair(u0, np.zeros_like(u0), g)
    cfg = SolverConfig.for_horizon(g, 10 * 0.75, 0.5)
    final, _ = solve(U0, cfg, g)
    assert np.all(np.isfinite(final.u))
    assert np.abs(final.u).max() < 10 * np.abs(u0).max()


def _pulse_error(h):
    g = closed_box(int(round(3.2 / h)) + 1, int(round(0.4 / h)) + 1, h)
    X, _ = g.grid.coords()
    sigma, x0, t = 0.2, 0.9, 1.0

    def f(s):
        return np.exp(-((s - x0) / sigma) ** 2)

    u0 = f(X)
    v0 = 2 * (X - x0) / sigma ** 2 * u0          # -c f'(x): travels to +x
    final, _ = solve(StatePair(u0, v0, g), SolverConfig.for_horizon(g, t, 0.45), g)
    err = final.u - f(X - t)
    return np.sqrt(h * h * np.sum(err ** 2))


def test_plane_pulse_dispersion_is_second_order():
    ratio = _pulse_error(0.05) / _pulse_error(0.025)
    assert 3.0 < ratio < 5.5


def _moving_bump(geometry):
    return make_phantom(bump(0.5, 0.5, 0.25, velocity_part=True), geometry)


def test_levels_carry_the_state_energy(small_corner):
    U0 = _moving_bump(small_corner)
    assert U0.u1.any()
    for direction in Direction:
        interval = Interval.PLUS if direction is Direction.FORWARD else Interval.MINUS
        lf = Leapfrog(small_corner, _config(small_corner, 0.6, direction, interval=interval))
        u_a, u_b = lf.levels(U0.u0, U0.u1)
        E = leapfrog_energy(u_a, u_b, lf.dt, small_corner)
        assert E == pytest.approx(energy_norm(U0).energy, rel=1e-12)


def test_levels_and_state_are_inverse(small_corner):
    U0 = _moving_bump(small_corner)
    lf = Leapfrog(small_corner, _config(small_corner, 0.6))
    u, v = lf.state(*lf.levels(U0.u0, U0.u1))
    scale = np.abs(U0.u1).max()
    assert np.abs(u - U0.u0).max() <= 1e-14 * np.abs(U0.u0).max()
    assert np.abs(v - U0.u1).max() <= 1e-12 * scale


def test_solver_energy_matches_state_norm_after_a_leg(small_corner):
    U0 = _moving_bump(small_corner)
    cfg = _config(small_corner, 0.6, bc=BoundaryMode.IMPEDANCE_PLUS)
    energies = []
    final, _ = solve(U0, cfg, small_corner,
                     lambda k, a, b: energies.append(leapfrog_energy(a, b, cfg.dt, small_corner)))
    assert energies[-1] == pytest.approx(
        energy_norm(StatePair(final.u, final.v, small_corner)).energy, rel=1e-11)
