from __future__ import annotations

import math

import numpy as np
import pytest

from mcfhomog.errors import BudgetExceeded, CflViolation, ParameterError
from mcfhomog.forcing import CorollaryParams, constant, corollary_field, laminar_sin
from mcfhomog.laminar import (
    SUB,
    SUPER,
    GraphState,
    construct_subsolution_profile,
    construct_supersolution_profile,
    diagnostics_within_bounds,
    estimate_graph_speeds,
    evolve_graph,
    evolve_graph_obstacle,
    extract_traveling_wave,
    flat_state,
    graph_diagnostics,
    graph_dt,
    graph_front_track,
    graph_operator,
    graph_step,
    interior_mask,
    measure_T_star,
    profile_quadrature,
    residual_check,
    subsolution_radial,
    supersolution_radial,
    t_star_ladder,
    verify_corollary,
)
from mcfhomog.levelset import SchemeParams

DX = 1 / 16


def test_graph_state_validation() -> None:
    with pytest.raises(ParameterError):
        GraphState(np.zeros((3, 3)), 0.3)
    with pytest.raises(ParameterError):
        GraphState(np.zeros((8, 8)), DX)
    assert flat_state(DX, 2).U.shape == (16, 16)
    assert graph_dt(1 / 32, 2, 1.0, 0.5) == pytest.approx(1 / 4096)


def test_graph_step_guards() -> None:
    state = flat_state(DX, 1)
    with pytest.raises(ParameterError):
        graph_step(state, constant(1.0, dim=2), SchemeParams())
    with pytest.raises(CflViolation):
        graph_step(state, constant(1.0, dim=1), SchemeParams(), dt=1.0)
    with pytest.raises(BudgetExceeded):
        evolve_graph(state, constant(1.0, dim=1), SchemeParams(max_steps=2), 1.0)


def test_flat_graph_rises_at_forcing_speed() -> None:
    final = evolve_graph(flat_state(DX, 2), constant(2.0, dim=2), SchemeParams(), 0.5)
    assert final.time == pytest.approx(0.5)
    assert np.allclose(final.U, 1.0, atol=1e-12)


def test_graph_forcing_uses_upwind_slope_at_a_valley() -> None:
    U = np.zeros(16)
    U[8] = -DX
    state = GraphState(U, DX)
    W, div, Wm = graph_operator(U, DX)
    assert W[8] == pytest.approx(1.0)
    assert Wm[8] == pytest.approx(math.sqrt(3.0))
    dt = graph_dt(DX, 1, 1.0, 0.5)
    new = graph_step(state, constant(1.0, dim=1), SchemeParams(), dt)
    assert new.U[8] == pytest.approx(U[8] + dt * (W[8] * div[8] + Wm[8]))
    assert new.U[0] == pytest.approx(dt)


def test_small_sine_decays_like_heat_equation() -> None:
    dx = 1 / 64
    state = flat_state(dx, 1)
    x = state.coords()[..., 0]
    start = GraphState(0.01 * np.sin(2 * np.pi * x), dx)
    final = evolve_graph(start, constant(1e-3, dim=1), SchemeParams(), 0.05)
    amplitude = (final.U.max() - final.U.min()) / 2
    assert amplitude == pytest.approx(0.01 * math.exp(-4 * math.pi**2 * 0.05), rel=0.03)


def test_graph_obstacle_caps_and_gaps() -> None:
    g = constant(1.0, dim=1)
    capped = evolve_graph_obstacle(0.5, g, SchemeParams(), 1.0, SUB, dx=DX)
    assert np.allclose(capped.final.U, 0.5, atol=1e-12)
    assert all(abs(row.gap_to_obstacle) < 1e-12 for row in capped.rows)

    free = evolve_graph_obstacle(2.0, g, SchemeParams(), 1.0, SUB, dx=DX)
    assert free.rows[-1].gap_to_obstacle == pytest.approx(free.rows[-1].t, abs=1e-9)
    assert free.rows[-1].spread == pytest.approx(0.0, abs=1e-12)

    pushed = evolve_graph_obstacle(2.0, g, SchemeParams(), 1.0, SUPER, dx=DX)
    assert np.allclose(pushed.final.U, 2.0, atol=1e-12)

    with pytest.raises(ParameterError):
        evolve_graph_obstacle(0.0, g, SchemeParams(), 1.0)
    with pytest.raises(ParameterError):
        evolve_graph_obstacle(1.0, g, SchemeParams(), 1.0, "side")


def test_t_star_for_constant_forcing() -> None:
    g = constant(1.0, dim=1)
    params = SchemeParams()
    assert measure_T_star(2.0, g, params, dx=DX) == pytest.approx(1.0, abs=2e-3)
    assert measure_T_star(0.5, g, params, kind=SUPER, dx=DX) == pytest.approx(2.0, abs=2e-3)
    assert measure_T_star(1.5, g, params, dx=DX, horizon=1.0) == math.inf
    ladder = t_star_ladder(1.0, g, params, offsets=(0.5, 1.0), dx=DX)
    assert [s for s, _ in ladder] == [1.5, 2.0]
    assert ladder[0][1] == pytest.approx(2.0, abs=2e-3)
    assert ladder[1][1] == pytest.approx(1.0, abs=2e-3)


def test_graph_speeds_and_front_track() -> None:
    head, tail = estimate_graph_speeds(constant(1.0, dim=1), SchemeParams(), 1.0, dx=DX)
    assert head == pytest.approx(1.0, abs=1e-9)
    assert tail == pytest.approx(1.0, abs=1e-9)
    track = graph_front_track(laminar_sin(1.0, 0.5, dim=1), SchemeParams(), 0.5, dx=DX)
    assert track.times[0] == 0.0
    assert np.all(track.spreads >= -1e-12)
    assert track.heads[-1] > track.tails[-1]


def test_traveling_wave_of_constant_forcing_is_flat() -> None:
    report = extract_traveling_wave(
        constant(1.0, dim=1), SchemeParams(), SUB, speed=1.0, levels=(2, 4), dx=DX
    )
    assert report.status == "stable"
    assert report.profile.E.all()
    assert np.allclose(report.profile.Uprof, 0.0, atol=1e-9)
    assert [lvl.s for lvl in report.levels] == [1.25, 1.0625]
    assert report.boundary_nodes == 0
    with pytest.raises(ParameterError):
        extract_traveling_wave(constant(1.0, dim=1), SchemeParams(), "side", speed=1.0)


def test_radial_profiles_match_quadrature() -> None:
    for r in (0.0, 0.05, 0.1, 0.14):
        closed = float(subsolution_radial(r, 0.15))
        assert closed == pytest.approx(profile_quadrature(SUB, r, r1=0.15), abs=1e-8)
        assert closed <= 0.0
    for r in (0.3, 0.4, 0.44):
        closed = float(supersolution_radial(r, 0.25, 0.45))
        assert closed == pytest.approx(
            profile_quadrature(SUPER, r, r2=0.25, R=0.45), abs=1e-8
        )
        assert closed >= 0.0
    assert float(supersolution_radial(0.47, 0.25, 0.45)) == 0.0
    assert profile_quadrature(SUPER, 0.47, r2=0.25, R=0.45) == 0.0


def test_profile_constructors_validate_radii() -> None:
    with pytest.raises(ParameterError):
        construct_subsolution_profile(0.6, (0.5, 0.5), 1.0, dx=DX)
    with pytest.raises(ParameterError):
        construct_supersolution_profile(0.3, 0.2, (0.5, 0.5), 1.0, dx=DX)


def test_subsolution_profile_residual() -> None:
    p = CorollaryParams()
    g = corollary_field(p)
    dx = 1 / 128
    profile = construct_subsolution_profile(p.r1, p.y1, p.sbar_lb, dx=dx)
    inner = interior_mask(profile, p.y1, -1.0, p.r1 - 4 * dx)
    assert residual_check(profile, p.sbar_lb, g, mask=inner).ok
    too_fast = residual_check(profile, 2 * p.g_high, g, mask=inner)
    assert not too_fast.ok
    assert too_fast.worst_excess > 0


def test_supersolution_profile_residual() -> None:
    p = CorollaryParams()
    g = corollary_field(p)
    dx = 1 / 128
    profile = construct_supersolution_profile(p.r2, p.R, p.y2, p.sunder_ub, dx=dx)
    annulus = interior_mask(profile, p.y2, p.r2 + 4 * dx, 0.49)
    assert residual_check(profile, p.sunder_ub, g, mask=annulus).ok
    assert not residual_check(profile, 0.0, g, mask=annulus).ok


def test_residual_mask_must_be_nonempty() -> None:
    p = CorollaryParams()
    profile = construct_subsolution_profile(p.r1, p.y1, p.sbar_lb, dx=1 / 32)
    empty = np.zeros(profile.E.shape, dtype=bool)
    with pytest.raises(ParameterError):
        residual_check(profile, p.sbar_lb, corollary_field(p), mask=empty)


def test_corollary_hypothesis_on_the_field() -> None:
    p = CorollaryParams()
    report = verify_corollary(corollary_field(p), p, SchemeParams(), simulate=False)
    assert report.ok
    assert report.hypothesis_ok
    assert not report.simulated
    assert report.min_g_E1 == pytest.approx(p.g_high)
    assert report.max_g_E2 == pytest.approx(p.g_low)
    assert report.required_rate == pytest.approx(0.9 * (report.sbar_lb - report.sunder_ub))

    warm = CorollaryParams(g_low=1.5)
    bad = verify_corollary(corollary_field(warm, validate=False), warm, SchemeParams())
    assert not bad.ok
    assert not bad.hypothesis_ok
    assert any("min(sigma, n-2)" in v for v in bad.violations)

    flat = verify_corollary(constant(1.0, dim=2), p, SchemeParams())
    assert not flat.ok
    assert any("sigma" in v for v in flat.violations)


def test_graph_diagnostics() -> None:
    prev = flat_state(DX, 1)
    cur = GraphState(np.full(16, 0.1), DX, 0.1)
    d = graph_diagnostics(prev, cur)
    assert d.min_rate == pytest.approx(1.0)
    assert d.max_rate == pytest.approx(1.0)
    assert diagnostics_within_bounds(d, 0.5, 1.5)
    assert not diagnostics_within_bounds(d, 0.5, 1.5, s=0.5)
    with pytest.raises(ParameterError):
        graph_diagnostics(cur, prev)


@pytest.mark.slow
def test_corollary_spread_grows() -> None:
    p = CorollaryParams()
    report = verify_corollary(corollary_field(p), p, SchemeParams(), dx=1 / 64)
    assert report.simulated
    assert report.fingering is not None
    assert report.spread_rate >= report.required_rate
    assert report.required_rate == pytest.approx(0.9 * (p.sbar_lb - p.sunder_ub))
    assert report.ok


@pytest.mark.slow
def test_traveling_wave_peaks_over_the_fast_ball() -> None:
    p = CorollaryParams()
    report = extract_traveling_wave(corollary_field(p), SchemeParams(), SUB, levels=(2, 4))
    prof = report.profile
    speed = prof.speed
    assert speed > 0
    assert [lvl.s for lvl in report.levels] == pytest.approx([speed + 0.25, speed + 0.0625])
    assert float(prof.Uprof.max()) == 0.0
    centre = tuple(round(c / prof.dx) for c in p.y1)
    assert prof.Uprof[centre] == pytest.approx(0.0, abs=1e-9)
    assert float(np.ptp(prof.Uprof)) > 1.0
