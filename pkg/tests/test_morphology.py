from __future__ import annotations

import numpy as np
import pytest

from mcfhomog.errors import DomainError, ParameterError
from mcfhomog.levelset import LevelSetField, box_grid
from mcfhomog.morphology import (
    InfConvParams,
    ball_offsets,
    check_evolution_inequality,
    check_exterior_ball,
    check_lcp_pair,
    finite_speed_dt_bound,
    inf_convolution,
    lcp_pair,
)
from mcfhomog.obstacle import lcp_required_radius

DX = 1 / 16


def test_ball_offsets_include_boundary_ties() -> None:
    offsets = ball_offsets(2 * DX, DX, 2)
    as_set = {tuple(int(v) for v in o) for o in offsets}
    assert (2, 0) in as_set and (0, -2) in as_set
    assert (2, 1) not in as_set
    assert len(offsets) == 13


def test_erosion_of_linear_field_subtracts_radius() -> None:
    grid = box_grid(-1.0, 1.0, DX)
    x = grid.coords()[..., 0]
    u = LevelSetField(grid, x.copy())
    c = 4 * DX
    out = inf_convolution(u, c)
    interior = (slice(4, None), slice(None))
    assert np.allclose(out[interior], (x - c)[interior])
    assert np.all(out <= x)


def test_erosion_is_monotone_in_radius_and_worker_independent() -> None:
    rng = np.random.default_rng(3)
    values = rng.normal(size=(40, 33))
    small = inf_convolution(values, 2 * DX, dx=DX)
    large = inf_convolution(values, 5 * DX, dx=DX)
    assert np.all(large <= small)
    assert np.array_equal(large, inf_convolution(values, 5 * DX, dx=DX, workers=4))


def test_variable_radius_zero_is_identity() -> None:
    values = np.random.default_rng(4).normal(size=(12, 12))
    r = np.zeros_like(values)
    r[0, 0] = 3 * DX
    out = inf_convolution(values, r, dx=DX)
    rest = np.ones_like(values, dtype=bool)
    rest[0, 0] = False
    assert np.array_equal(out[rest], values[rest])
    near = np.sum(np.indices((4, 4)) ** 2, axis=0) <= 9
    assert out[0, 0] == values[:4, :4][near].min()


def test_erosion_radius_limits() -> None:
    values = np.zeros((8, 8))
    with pytest.raises(DomainError):
        inf_convolution(values, -DX, dx=DX)
    with pytest.raises(DomainError):
        inf_convolution(values, 11 * DX, dx=DX)
    with pytest.raises(ParameterError):
        inf_convolution(values, DX)


def test_eroded_random_fields_have_interior_balls() -> None:
    rng = np.random.default_rng(11)
    r = 3 * DX
    for _ in range(20):
        values = rng.normal(size=(32, 32))
        eroded = inf_convolution(values, r, dx=DX)
        for q in (0.2, 0.5, 0.8):
            level = float(np.quantile(eroded, q))
            report = check_exterior_ball(eroded, level, r, dx=DX)
            assert report.ok, report.first_failure
            assert not report.vacuous


def test_quadrant_corner_has_no_interior_ball() -> None:
    grid = box_grid(-1.0, 1.0, DX)
    x = grid.coords()
    u = np.maximum(x[..., 0], x[..., 1])
    report = check_exterior_ball(LevelSetField(grid, u), 0.0, 8 * DX)
    assert not report.ok
    assert report.failures > 0


def test_exterior_ball_edge_cases() -> None:
    values = np.ones((8, 8))
    with pytest.raises(ParameterError):
        check_exterior_ball(values, 0.0, 2 * DX, dx=DX)
    values[3, 3] = -1.0
    report = check_exterior_ball(values, 0.0, DX / 2, dx=DX)
    assert report.vacuous and report.ok


def test_lcp_pair_satisfies_evolution_inequality() -> None:
    assert lcp_required_radius(2, 1.0, 1.0) == pytest.approx(408.0)
    pair = lcp_pair(2, 1.0, 1.0)
    assert pair.R == pytest.approx(408.0)
    assert pair.params.r(0.0) == 0.5
    report = check_lcp_pair(2, 1.0, 1.0, 1.0)
    assert report.ok
    assert report.max_r_grad < 1
    assert report.notes == ()


def test_lcp_pair_with_small_radius_is_flagged() -> None:
    report = check_lcp_pair(2, 1.0, 1.0, 1.0, R=50.0)
    assert any("below" in note for note in report.notes)


def test_constant_radius_fails_evolution_inequality() -> None:
    params = InfConvParams(
        r=lambda t: 0.1,
        r_prime=lambda t: 0.0,
        phi=lambda x: np.ones(x.shape[:-1]),
        phi_grad_bound=0.0,
        phi_hess_bound=0.0,
    )
    domain = np.zeros((5, 2))
    report = check_evolution_inequality(params, domain, 1.0, n=2, M0=1.0, L0=1.0)
    assert not report.ok
    assert report.max_lhs == pytest.approx(0.1)


def test_finite_speed_dt_bound() -> None:
    assert finite_speed_dt_bound(2.0, 1.0, 2, 1.0) == pytest.approx(1 / 6)
    with pytest.raises(ParameterError):
        finite_speed_dt_bound(1.0, 1.0, 2, 1.0)
    with pytest.raises(ParameterError):
        finite_speed_dt_bound(2.0, 0.0, 2, 1.0)
