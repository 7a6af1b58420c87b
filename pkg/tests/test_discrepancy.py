from __future__ import annotations

import math

import numpy as np
import pytest

from mcfhomog.discrepancy import (
    classify,
    comparison_constants,
    delta_rationalized,
    discrepancy,
    discrepancy_bruteforce,
    exhaustive_min_shift,
    gamma,
    is_comparison_consistent,
    lattice_min_shift,
    lattice_point_near_hyperplane,
    modified_discrepancy,
    omega,
    radius_threshold,
)
from mcfhomog.errors import InternalSearchError, ParameterError, PreconditionError

GOLDEN = (math.sqrt(5) - 1) / 2


def test_star_discrepancy_small_cases() -> None:
    assert modified_discrepancy(0.5, 2) == pytest.approx(0.5)
    for x in (0.0, 0.3, 0.8, 2.25):
        frac = x % 1.0
        assert modified_discrepancy(x, 1) == pytest.approx(0.5 + abs(frac - 0.5))


def test_extreme_discrepancy_small_cases() -> None:
    assert discrepancy(0.5, 2) == pytest.approx(0.5)
    for N in (1, 5, 40):
        assert discrepancy(0.0, N) == pytest.approx(1.0)


def test_discrepancy_rejects_empty_sequences() -> None:
    with pytest.raises(ParameterError):
        discrepancy(0.3, 0)
    with pytest.raises(ParameterError):
        modified_discrepancy(0.3, 0)


def test_golden_mean_star_discrepancy_decays() -> None:
    values = [modified_discrepancy(GOLDEN, N) for N in (10, 100, 1000)]
    assert values[0] > values[1] > values[2]
    assert values[2] < 0.01


def test_star_and_extreme_discrepancy_are_equivalent() -> None:
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = float(rng.uniform(0, 1))
        N = int(rng.integers(1, 300))
        star = modified_discrepancy(x, N)
        ext = discrepancy(x, N)
        assert star <= ext + 1e-12
        assert ext <= 2 * star + 1e-12


def test_sorted_formula_matches_interval_enumeration() -> None:
    for x in (GOLDEN, math.sqrt(2) - 1, 0.5, 0.123):
        for N in (1, 2, 3, 17, 64, 200):
            assert discrepancy(x, N) == pytest.approx(discrepancy_bruteforce(x, N), abs=1e-12)


def test_classify_rational_and_undecided() -> None:
    d = classify([1.0, 2.0])
    assert d.is_rational
    assert d.integer_vector == (1, 2)
    assert d.denominator == 2
    assert not classify([1.0, math.sqrt(2)]).is_rational
    assert classify([1.0, math.sqrt(2)]).rationality == "undecided"
    assert classify([0.0, -3.0]).integer_vector == (0, -1)


def test_omega_for_axis_direction_is_constant() -> None:
    for N in (2, 10, 100):
        assert omega([1.0, 0.0], N) == pytest.approx(2.0)
    with pytest.raises(ParameterError, match="N >= 2"):
        omega([1.0, 0.0], 1)


def test_omega_rational_direction_stays_away_from_zero() -> None:
    d = classify([1.0, 2.0])
    assert min(omega(d, N) for N in range(2, 201)) >= 0.2


def test_omega_golden_direction_becomes_small() -> None:
    d = classify([1.0, GOLDEN])
    assert omega(d, 1000) < 0.05
    assert omega(d, 1000) == pytest.approx(2 * modified_discrepancy(GOLDEN, 1000))


def test_radius_threshold_returns_first_admissible_N() -> None:
    d = classify([1.0, GOLDEN])
    R0, N = radius_threshold(d, 0.3)
    target = 0.3 / (3 * d.linf)
    assert omega(d, N) < target
    assert N == 2 or omega(d, N - 1) >= target
    assert R0 == pytest.approx(6 * N + 3 * math.sqrt(2) + 9)


@pytest.mark.parametrize("delta", [0.3, 0.05])
def test_lattice_point_on_cylinder_boundary(delta: float) -> None:
    d = classify([1.0, GOLDEN])
    R0, _ = radius_threshold(d, delta)
    lateral = np.array([-d.nu[1], d.nu[0]])
    x0 = R0 * lateral
    w = lattice_point_near_hyperplane(d, delta, x0, R0)
    k = np.asarray(w.k, dtype=float)
    assert delta / 3 < float(k @ d.array) < delta
    assert float(np.linalg.norm(np.asarray(w.z0) - 2 * x0)) < R0 / 3
    assert np.allclose(np.asarray(w.z0) - x0, k)


def test_lattice_point_rational_direction_not_applicable() -> None:
    with pytest.raises(PreconditionError):
        lattice_point_near_hyperplane([0.0, 1.0], 0.1, [0.0, 0.0])


def test_constructive_lattice_path_verifies_or_reports() -> None:
    d = classify([1.0, GOLDEN])
    try:
        w = lattice_point_near_hyperplane(d, 0.3, [0.0, 0.0], method="constructive")
    except InternalSearchError:
        return
    assert 0.1 < w.along < 0.3


def test_lattice_min_shift_examples() -> None:
    assert lattice_min_shift([1.0, 0.0], 1.0) == (2, 0)
    assert lattice_min_shift([1.0, 1.0], 0.0) == (0, 1)


def test_lattice_min_shift_is_minimal() -> None:
    nu = np.array([1.0, GOLDEN]) / math.hypot(1.0, GOLDEN)
    for A in (0.5, 1.0, 3.0):
        xi = np.asarray(lattice_min_shift(nu, A), dtype=float)
        assert float(xi @ nu) > A
        assert float(xi @ xi) == pytest.approx(exhaustive_min_shift(nu, A, 20))


def test_gamma_and_delta() -> None:
    assert gamma(0.0, 3.0) == 0.5
    c = comparison_constants(1.0, 1.0, 2.0, 1.0, 2)
    assert c.delta_T == pytest.approx(delta_rationalized(1.0, 1.0, 2.0, 1.0, 2), rel=1e-12)
    deltas = [comparison_constants(T, 1.0, 2.0, 1.0, 2).delta_T for T in np.linspace(0, 3, 7)]
    assert all(a > b for a, b in zip(deltas, deltas[1:]))
    with pytest.raises(ParameterError):
        comparison_constants(1.0, 1.0, 1.0, 1.0, 2)


def test_comparison_consistency_irrational_direction() -> None:
    kw = {"m0": 1.0, "M0": 2.0, "L0": 1.0}
    report = is_comparison_consistent([1.0, GOLDEN], 0.0, 1.0, **kw)
    R0, _ = radius_threshold(classify([1.0, GOLDEN]), report.delta)
    report = is_comparison_consistent([1.0, GOLDEN], 0.0, R0, **kw)
    assert report.consistent, report.reason


def test_comparison_consistency_failures() -> None:
    kw = {"m0": 1.0, "M0": 2.0, "L0": 1.0}
    tiny = is_comparison_consistent([1.0, GOLDEN], 0.0, 0.5, **kw)
    assert not tiny.consistent
    rational = is_comparison_consistent([1.0, 0.0], 0.0, 3.0, **kw)
    assert not rational.consistent
    assert "rational" in rational.reason
