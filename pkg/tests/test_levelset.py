from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mcfhomog.errors import BudgetExceeded, CflViolation, ParameterError
from mcfhomog.forcing import constant, sinprod
from mcfhomog.levelset import (
    PERIODIC,
    FrontTracker,
    Grid,
    LevelSetField,
    SchemeParams,
    SnapshotRecorder,
    SpeedTable,
    box_grid,
    cfl_dt,
    cone_data,
    curvature_reach,
    extract_front,
    grad_reg_sensitivity,
    planar_data,
    planar_grid,
    sample_forcing,
    solve,
    solve_homogenized,
    step,
)


def test_grid_validation() -> None:
    with pytest.raises(ParameterError):
        Grid(shape=(3, 8), dx=0.1)
    with pytest.raises(ParameterError):
        Grid(shape=(8, 8), dx=0.1, lateral_topology=PERIODIC)
    with pytest.raises(ParameterError):
        Grid(shape=(8, 8, 8, 8), dx=0.1)
    g = Grid(shape=(8, 8), dx=0.5, origin_index=(-4, 0))
    assert g.node((0, 0)) == pytest.approx([-2.0, 0.0])


def test_cfl_step_matches_formula() -> None:
    grid = box_grid(-8.0, 8.0, 1 / 16)
    assert grid.shape == (256, 256)
    dt = cfl_dt(grid, 1.5, 1.0, 0.5)
    assert dt == pytest.approx(1 / 2048)
    assert math.ceil(1.0 / dt) == 2048


def test_step_rejects_oversized_dt() -> None:
    grid = box_grid(-1.0, 1.0, 1 / 8)
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), 0.5))
    g = constant(1.0)
    bound = cfl_dt(grid, 1.0, 1.0, 0.5)
    with pytest.raises(CflViolation):
        step(state, g, SchemeParams(), bound * 1.01)


def test_grad_reg_must_not_exceed_dx() -> None:
    grid = box_grid(-1.0, 1.0, 1 / 8)
    with pytest.raises(ParameterError):
        SchemeParams(grad_reg=0.5).check_grid(grid)


def test_sample_forcing_lookup_matches_direct_evaluation() -> None:
    g = sinprod(1.0, 0.5)
    grid = box_grid(-1.3, 2.1, 1 / 8)
    assert np.allclose(sample_forcing(grid, g), g(grid.coords()))
    assert np.allclose(sample_forcing(grid, g, 0.5), g(grid.coords() / 0.5))


def _planar_run(nu: tuple[float, float], T: float) -> tuple[FrontTracker, LevelSetField]:
    grid = planar_grid(nu, 1 / 8, lateral_periods=1, half_length=2.0)
    state = LevelSetField(grid, planar_data(grid))
    tracker = FrontTracker(every=0.25)
    final = solve(state, constant(1.0), SchemeParams(), T, callbacks=[tracker])
    return tracker, final


def test_planar_front_moves_at_unit_speed() -> None:
    tracker, final = _planar_run((0.0, 1.0), 4.0)
    track = tracker.track()
    # clamped window ends perturb the profile far behind the front only
    assert np.allclose(track.heads, track.times, atol=0.02)
    assert np.allclose(track.tails, track.times, atol=0.02)
    assert np.allclose(track.spreads, 0.0, atol=1e-9)
    assert final.grid.window_offset[1] > 0


def test_tilted_planar_front_respects_twisted_periodicity() -> None:
    nu = (1 / math.sqrt(2), 1 / math.sqrt(2))
    tracker, final = _planar_run(nu, 3.0)
    track = tracker.track()
    assert np.allclose(track.heads, track.times, atol=0.02)
    assert np.allclose(track.spreads, 0.0, atol=0.02)
    assert final.time == pytest.approx(3.0)


def test_circle_radius_follows_curvature_ode() -> None:
    grid = box_grid(-3.0, 3.0, 1 / 16)
    c, r0, T = 0.5, 1.5, 1.0
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), r0))
    final = solve(state, constant(c), SchemeParams(), T)
    front = extract_front(final)
    radius = float(np.mean(np.linalg.norm(front.points, axis=1)))
    oracle = solve_ivp(lambda t, r: c - 1.0 / r, (0.0, T), [r0], rtol=1e-10, atol=1e-12)
    assert radius == pytest.approx(float(oracle.y[0, -1]), rel=0.02)


def test_step_is_worker_independent() -> None:
    grid = box_grid(-2.0, 2.0, 1 / 8)
    state = LevelSetField(grid, cone_data(grid, (0.1, -0.2), 1.0))
    g = sinprod(1.0, 0.5)
    results = [step(state, g, SchemeParams(workers=w)).values for w in (1, 2, 8)]
    assert np.array_equal(results[0], results[1])
    assert np.array_equal(results[0], results[2])


def test_step_commutes_with_lattice_translations() -> None:
    g = sinprod(1.0, 0.5)
    a = Grid(shape=(24, 24), dx=1 / 8, origin_index=(-12, -12))
    b = Grid(shape=(24, 24), dx=1 / 8, origin_index=(-4, -20))
    values = cone_data(a, (0.3, 0.1), 1.0)
    ua = step(LevelSetField(a, values), g, SchemeParams())
    ub = step(LevelSetField(b, values), g, SchemeParams())
    assert np.array_equal(ua.values, ub.values)


def test_step_respects_parabolic_rescaling() -> None:
    g = sinprod(1.0, 0.5)
    coarse = Grid(shape=(24, 24), dx=1 / 8, origin_index=(-12, -12))
    fine = Grid(shape=(24, 24), dx=1 / 16, origin_index=(-12, -12))
    v = cone_data(coarse, (0.3, 0.1), 1.0)
    params = SchemeParams(grad_reg=1e-3)
    one = step(LevelSetField(coarse, v, 0.0, 1.0), g, params)
    half = step(LevelSetField(fine, 0.5 * v, 0.0, 0.5), g, params)
    assert half.time == pytest.approx(0.5 * one.time)
    assert np.allclose(half.values, 0.5 * one.values, rtol=1e-12, atol=1e-12)


def test_snapshot_recorder_keeps_copies() -> None:
    grid = box_grid(-2.0, 2.0, 1 / 8)
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), 1.0))
    rec = SnapshotRecorder(every=0.1)
    solve(state, constant(1.0), SchemeParams(), 0.5, callbacks=[rec])
    assert rec.times[0] == 0.0
    assert len(rec.times) >= 5
    assert np.array_equal(rec.frames[0].values, state.values)
    assert not np.array_equal(rec.frames[-1].values, state.values)


def _smooth_pair(rng: np.random.Generator, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    x, y = grid.coords()[..., 0], grid.coords()[..., 1]
    k = rng.integers(1, 4, size=2)
    m = rng.integers(1, 4, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    u = 1.0 - 0.5 * (x * x + y * y) + 0.2 * np.sin(k[0] * x) * np.cos(k[1] * y)
    gap = 0.1 + 0.05 * np.sin(m[0] * x + phase[0]) * np.sin(m[1] * y + phase[1])
    return u, u + gap


def test_ordered_pairs_stay_ordered() -> None:
    grid = box_grid(-2.0, 2.0, 1 / 8)
    rng = np.random.default_rng(0)
    g = sinprod(1.0, 0.5)
    for _ in range(50):
        lo, hi = _smooth_pair(rng, grid)
        low, high = SnapshotRecorder(every=0.05), SnapshotRecorder(every=0.05)
        solve(LevelSetField(grid, lo), g, SchemeParams(), 0.1, callbacks=[low])
        solve(LevelSetField(grid, hi), g, SchemeParams(), 0.1, callbacks=[high])
        assert low.times == high.times
        for a, b in zip(low.frames, high.frames):
            assert np.all(b.values >= a.values)


def test_diagonal_bump_keeps_order_after_one_step() -> None:
    grid = box_grid(-1.0, 1.0, 1 / 16)
    x = grid.coords()
    u = -(x[..., 0] + x[..., 1]) / math.sqrt(2)
    v = u.copy()
    v[17, 17] += 0.05
    g = constant(1.0)
    a = step(LevelSetField(grid, u), g, SchemeParams())
    b = step(LevelSetField(grid, v), g, SchemeParams())
    assert np.all(b.values >= a.values)
    assert float(np.max(b.values - a.values)) > 0.0


def test_curvature_reach_scales_with_resolution() -> None:
    assert curvature_reach(box_grid(-1.0, 1.0, 1 / 8), 1.0) == 3
    assert curvature_reach(box_grid(-1.0, 1.0, 1 / 64), 1.0) == 8
    assert curvature_reach(box_grid(-1.0, 1.0, 1 / 8), 0.01) == 2
    window = planar_grid((0.0, 1.0), 1 / 32, eps=0.5)
    assert curvature_reach(window, 0.5) == 4


def test_grad_reg_sensitivity_is_small() -> None:
    grid = box_grid(-2.0, 2.0, 1 / 8)
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), 1.0))
    report = grad_reg_sensitivity(state, constant(1.0), SchemeParams(), 0.25)
    assert report.grad_regs == pytest.approx((1e-3, 1e-4))
    assert report.max_diffs[0] == 0.0
    assert report.max_diff < 0.05
    with pytest.raises(ParameterError):
        grad_reg_sensitivity(state, constant(1.0), SchemeParams(), 0.25, factors=())
    with pytest.raises(ParameterError):
        grad_reg_sensitivity(state, constant(1.0), SchemeParams(), 0.25, factors=(1.0, 1000.0))


def test_solve_enforces_step_budget() -> None:
    grid = box_grid(-1.0, 1.0, 1 / 8)
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), 0.5))
    with pytest.raises(BudgetExceeded):
        solve(state, constant(1.0), SchemeParams(max_steps=2), 1.0)
    with pytest.raises(ParameterError):
        solve(state, constant(1.0), SchemeParams(), 0.0)


def test_extract_front_of_empty_set() -> None:
    grid = box_grid(-1.0, 1.0, 1 / 8)
    front = extract_front(LevelSetField(grid, -np.ones(grid.shape)))
    assert front.empty and math.isnan(front.head)


def test_homogenized_constant_speed_grows_disc() -> None:
    grid = box_grid(-3.0, 3.0, 1 / 16)
    u0 = LevelSetField(grid, cone_data(grid, (0.0, 0.0), 1.0))
    final = solve_homogenized(1.0, u0, 1.0)
    radius = np.linalg.norm(extract_front(final).points, axis=1)
    assert float(np.mean(radius)) == pytest.approx(2.0, abs=0.1)


def test_speed_table_interpolates_periodically() -> None:
    table = SpeedTable(np.array([0.0, math.pi]), np.array([1.0, 2.0]))
    dirs = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0]])
    assert np.allclose(table(dirs), [1.5, 1.5, 2.0])
    with pytest.raises(ParameterError):
        SpeedTable(np.array([0.0, 1.0]), np.array([1.0, -1.0]))


def _circle_radius_error(dx: float, T: float = 0.5) -> float:
    grid = box_grid(-2.5, 2.5, dx)
    c, r0 = 0.5, 1.5
    state = LevelSetField(grid, cone_data(grid, (0.0, 0.0), r0))
    final = solve(state, constant(c), SchemeParams(grad_reg=min(1e-3, dx)), T)
    radius = float(np.mean(np.linalg.norm(extract_front(final).points, axis=1)))
    oracle = solve_ivp(lambda t, r: c - 1.0 / r, (0.0, T), [r0], rtol=1e-10, atol=1e-12)
    return abs(radius - float(oracle.y[0, -1]))


@pytest.mark.slow
def test_circle_error_shrinks_with_resolution() -> None:
    coarse = _circle_radius_error(1 / 8)
    fine = _circle_radius_error(1 / 32)
    assert fine <= 0.5 * coarse


@pytest.mark.slow
def test_small_eps_solutions_approach_homogenized_solution() -> None:
    grid = box_grid(-3.0, 3.0, 1 / 16)
    T = 0.2
    r = np.linalg.norm(grid.coords(), axis=-1)
    window = (r >= 1.0) & (r <= 2.0)
    u0 = cone_data(grid, (0.0, 0.0), 1.5)
    limit = solve_homogenized(1.0, LevelSetField(grid, u0), T).values
    gaps = []
    for eps in (1 / 4, 1 / 8):
        u = solve(LevelSetField(grid, u0, 0.0, eps), constant(1.0), SchemeParams(), T).values
        gaps.append(float(np.max(np.abs(u - limit)[window])))
    assert gaps[1] < gaps[0]
    assert gaps[1] <= 0.05 * float(np.max(np.abs(limit[window])))
