from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from mcfhomog.errors import InternalSearchError, ParameterError, PreconditionError
from mcfhomog.geometry import unit
from mcfhomog.logging_json import get_logger, log

logger = get_logger("discrepancy")

DENOMINATOR_BOUND = 10**6
RATIONAL_TOL = 1e-14


@dataclass(frozen=True)
class Direction:
    """Unit direction with its rationality class.

    `rationality` is "rational" (then `denominator·ν/|ν|_∞` is an integer vector),
    or "undecided" when no fraction with denominator ≤ `bound` reproduces every component
    ratio; undecided directions are searched as irrational.
    """

    nu: tuple[float, ...]
    rationality: str
    denominator: int | None = None
    integer_vector: tuple[int, ...] | None = None
    bound: int = DENOMINATOR_BOUND

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.nu, dtype=float)

    @property
    def is_rational(self) -> bool:
        return self.rationality == "rational"

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.array)))

    def m(self) -> np.ndarray:
        """m_j(ν) with m_j·|ν|_∞ = |ν_j|."""
        return np.abs(self.array) / self.linf


def classify(nu: Sequence[float], bound: int = DENOMINATOR_BOUND) -> Direction:
    v = unit(nu)
    k = int(np.argmax(np.abs(v)))
    ratios = v / v[k]
    fracs = []
    for r in ratios:
        f = Fraction(float(r)).limit_denominator(bound)
        if abs(float(f) - float(r)) > RATIONAL_TOL:
            return Direction(tuple(float(x) for x in v), "undecided", bound=bound)
        fracs.append(f)
    den = math.lcm(*[f.denominator for f in fracs])
    ints = [int(f * den) for f in fracs]
    common = math.gcd(*ints)
    ints = [i // common for i in ints]
    sign = 1 if v[k] > 0 else -1
    ints = [sign * i for i in ints]
    return Direction(
        tuple(float(x) for x in v),
        "rational",
        denominator=den // common,
        integer_vector=tuple(ints),
        bound=bound,
    )


def _frac_points(x: float, N: int) -> np.ndarray:
    ell = np.arange(1, N + 1, dtype=float)
    return np.sort(np.mod(ell * x, 1.0))


def modified_discrepancy(x: float, N: int) -> float:
    """D*_N(x) = 1/(2N) + max_i |x_(i) − (2i − 1)/(2N)| over the sorted fractional parts."""
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    pts = _frac_points(x, N)
    i = np.arange(1, N + 1)
    return float(1.0 / (2 * N) + np.max(np.abs(pts - (2 * i - 1) / (2 * N))))


def discrepancy(x: float, N: int) -> float:
    """D_N(x) = 1/N + max_i(i/N − x_(i)) − min_i(i/N − x_(i))."""
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    pts = _frac_points(x, N)
    d = np.arange(1, N + 1) / N - pts
    return float(1.0 / N + d.max() - d.min())


def discrepancy_bruteforce(x: float, N: int) -> float:
    """Sup over intervals with endpoints at 0, 1 and the sample points (oracle path)."""
    pts = _frac_points(x, N)
    lefts = np.concatenate([[0.0], pts])
    rights = np.concatenate([pts, [1.0]])
    a = lefts[:, None]
    b = rights[None, :]
    valid = b >= a
    closed = np.searchsorted(pts, b, side="right") - np.searchsorted(pts, a, side="left")
    opened = np.searchsorted(pts, b, side="left") - np.searchsorted(pts, a, side="right")
    over = closed / N - (b - a)
    under = (b - a) - np.maximum(opened, 0) / N
    best_over = np.max(np.where(valid, over, -np.inf))
    best_under = np.max(np.where(valid, under, -np.inf))
    return float(max(best_over, best_under))


def omega(direction: Direction | Sequence[float], N: int) -> float:
    """ω_ν(N) = 2·min_j D*_N(m_j(ν))."""
    d = direction if isinstance(direction, Direction) else classify(direction)
    if N < 2:
        raise ParameterError(f"omega needs N >= 2, got {N}")
    return 2.0 * min(modified_discrepancy(float(m), N) for m in d.m())


def radius_threshold(
    direction: Direction, delta: float, max_N: int = 10**6
) -> tuple[float, int]:
    """(R0, N): N is the least integer >= 2 with ω_ν(N) < δ/(3|ν|_∞), and R0 = 6N + 3√n + 9."""
    if delta <= 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    target = delta / (3 * direction.linf)
    n = len(direction.nu)
    N = 2
    while N <= max_N:
        if omega(direction, N) < target:
            return 6 * N + 3 * math.sqrt(n) + 9, N
        N += 1
    raise InternalSearchError(f"omega never fell below {target:.3g} for N <= {max_N}")


@dataclass(frozen=True)
class LatticeWitness:
    z0: tuple[float, ...]
    k: tuple[int, ...]
    along: float
    distance: float
    method: str


def _verify(nu: np.ndarray, delta: float, x0: np.ndarray, z0: np.ndarray, R: float) -> bool:
    k = z0 - x0
    along = float((z0 - x0) @ nu)
    return (
        delta / 3 < along < delta
        and float(np.linalg.norm(z0 - 2 * x0)) < R / 3
        and bool(np.all(np.abs(k - np.rint(k)) < 1e-9))
    )


def _exhaustive(nu: np.ndarray, delta: float, x0: np.ndarray, R: float) -> np.ndarray | None:
    """Integer k nearest to x0 (then lexicographic) with δ/3 < k·ν < δ and |k − x0| < R/3."""
    n = len(nu)
    m = int(np.argmax(np.abs(nu)))
    others = [j for j in range(n) if j != m]
    axes = [np.arange(math.ceil(x0[j] - R / 3), math.floor(x0[j] + R / 3) + 1) for j in others]
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = np.stack([a.ravel() for a in mesh], axis=-1).astype(float)
    rest = cols @ nu[others]
    lo = (delta / 3 - rest) / nu[m]
    hi = (delta - rest) / nu[m]
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    best: np.ndarray | None = None
    best_key: tuple[float, ...] | None = None
    for cand in (np.floor(lo) + 1, np.ceil(hi) - 1):
        k = np.zeros((len(cols), n))
        k[:, others] = cols
        k[:, m] = cand
        along = k @ nu
        dist = np.linalg.norm(k - x0, axis=1)
        ok = (along > delta / 3) & (along < delta) & (dist < R / 3)
        if not ok.any():
            continue
        idx = np.flatnonzero(ok)
        order = np.lexsort(tuple(k[idx, j] for j in reversed(range(n))) + (dist[idx],))
        pick = k[idx[order[0]]]
        key = (float(dist[idx[order[0]]]), *pick.tolist())
        if best_key is None or key < best_key:
            best, best_key = pick, key
    return best


def _constructive(
    direction: Direction, delta: float, x0: np.ndarray, N: int
) -> np.ndarray | None:
    """Follow the equidistribution argument: pick one irrational ratio m_j and k0 ≤ N.

    Returns k = z0 − x0 or None when the chosen component admits no k0 ≤ N.
    """
    nu = direction.array.copy()
    n = len(nu)
    top = int(np.argmax(np.abs(nu)))
    flip = nu[top] < 0
    x = x0.astype(float).copy()
    if flip:
        nu[top] = -nu[top]
        x[top] = -x[top]
    linf = float(nu[top])
    d = delta / (3 * linf)
    m = np.abs(nu) / linf
    candidates = [j for j in range(n) if j != top]
    j = min(candidates, key=lambda c: modified_discrepancy(float(m[c]), N))
    sign = 1.0 if nu[j] * nu[top] > 0 else -1.0
    a = -sign * m[j]
    s = np.mod(-x, 1.0)
    ratio = float(s @ nu) / linf
    c = ratio - math.floor(ratio)
    if c >= 2 * d:
        window = (c - 2 * d, c - d)
        wrap = 0.0
    elif c >= d:
        window = (1 - d, 1.0)
        wrap = 1.0
    else:
        window = (1 - 2 * d, 1 - d)
        wrap = 1.0
    for k0 in range(1, N + 1):
        f = (k0 * a) % 1.0
        if window[0] < f < window[1]:
            flat = c + wrap - f
            w = np.zeros(n)
            w[j] = 1.0
            w[top] = a
            y0 = 2 * x + k0 * w + s - ratio * np.eye(n)[top]
            z0 = y0 + flat * np.eye(n)[top]
            k = z0 - x
            k = np.rint(k)
            if flip:
                k[top] = -k[top]
            return k
    return None


def lattice_point_near_hyperplane(
    direction: Direction | Sequence[float],
    delta: float,
    x0: Sequence[float],
    R: float | None = None,
    *,
    method: str = "exhaustive",
) -> LatticeWitness:
    """z0 with δ/3 < (z0 − x0)·ν < δ, |z0 − 2x0| < R/3 and z0 − x0 ∈ Z^n."""
    d = direction if isinstance(direction, Direction) else classify(direction)
    if d.is_rational:
        raise PreconditionError(
            f"direction {d.nu} is rational (denominator {d.denominator}); not applicable"
        )
    if delta <= 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    nu = d.array
    x = np.asarray(x0, dtype=float)
    R0, N = radius_threshold(d, delta)
    if R is None:
        R = R0
    if method == "exhaustive":
        k = _exhaustive(nu, delta, x, R)
    elif method == "constructive":
        k = _constructive(d, delta, x, N)
    else:
        raise ParameterError(f"unknown lattice search method {method!r}")
    if k is None:
        raise InternalSearchError(
            f"no lattice point found for nu={d.nu}, delta={delta}, R={R:.6g} (R0={R0:.6g})"
        )
    z0 = x + k
    if not _verify(nu, delta, x, z0, R):
        raise InternalSearchError(
            f"{method} candidate {tuple(k)} fails the lattice-point conditions (R={R:.6g})"
        )
    return LatticeWitness(
        z0=tuple(float(v) for v in z0),
        k=tuple(int(v) for v in k),
        along=float(k @ nu),
        distance=float(np.linalg.norm(k)),
        method=method,
    )


def lattice_min_shift(nu: Sequence[float], A: float) -> tuple[int, ...]:
    """Minimal-norm ξ ∈ Z^n with ξ·ν > A; ties go to the lexicographically smallest."""
    v = unit(nu)
    n = len(v)
    if A < 0:
        return (0,) * n
    k = int(np.argmax(np.abs(v)))
    steps = math.floor(A / abs(v[k])) + 1
    B = steps
    axes = [np.arange(-B, B + 1)] * n
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    ok = cand @ v > A
    cand = cand[ok]
    norms = np.sum(cand * cand, axis=1)
    cand = cand[norms == norms.min()]
    order = np.lexsort(tuple(cand[:, j] for j in reversed(range(n))))
    return tuple(int(c) for c in cand[order[0]])


def gamma(t: float, L0: float) -> float:
    return 0.5 * math.exp(-2.0 * L0 * t)


@dataclass(frozen=True)
class ComparisonConstants:
    T: float
    m0: float
    M0: float
    L0: float
    n: int
    gamma_T: float
    delta_T: float


def comparison_constants(T: float, m0: float, M0: float, L0: float, n: int) -> ComparisonConstants:
    if not (M0 > m0):
        raise ParameterError(f"comparison constants need M0 > m0 (got m0={m0}, M0={M0})")
    if not (m0 > 0) or not (L0 > 0) or T < 0 or n < 1:
        raise ParameterError(f"need m0 > 0, L0 > 0, T >= 0, n >= 1 (got {m0}, {L0}, {T}, {n})")
    g = gamma(T, L0)
    root = math.sqrt(M0 * g + (n - 1)) + math.sqrt(n - 1)
    delta = (M0 * m0 / (M0 - m0)) * g * g / (root * root)
    return ComparisonConstants(T, m0, M0, L0, n, g, delta)


def delta_rationalized(T: float, m0: float, M0: float, L0: float, n: int) -> float:
    """Same δ(T) written as (m0/(M0 − m0))·(√(M0γ + n − 1) − √(n − 1))²/M0."""
    g = gamma(T, L0)
    diff = math.sqrt(M0 * g + (n - 1)) - math.sqrt(n - 1)
    return (m0 / (M0 - m0)) * diff * diff / M0


def boundary_samples(nu: np.ndarray, R: float, count: int = 16) -> np.ndarray:
    """Deterministic points of R·S^{n−1} ∩ H_ν."""
    n = len(nu)
    basis = np.linalg.svd(nu.reshape(1, -1))[2][1:]
    if n == 2:
        return np.stack([R * basis[0], -R * basis[0]])
    theta = 2 * np.pi * np.arange(count) / count
    return R * (np.cos(theta)[:, None] * basis[0] + np.sin(theta)[:, None] * basis[1])


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    delta: float
    reason: str
    samples: int
    failures: int


def is_comparison_consistent(
    nu: Sequence[float],
    T: float,
    R: float,
    *,
    m0: float,
    M0: float,
    L0: float,
    samples: int = 16,
) -> ConsistencyReport:
    d = classify(nu)
    n = len(d.nu)
    consts = comparison_constants(T, m0, M0, L0, n)
    delta = consts.delta_T / 2
    if R <= math.sqrt(n) / 2:
        return ConsistencyReport(False, delta, f"R={R} <= sqrt(n)/2", 0, 0)
    pts = boundary_samples(d.array, R, samples)
    failures = 0
    for x0 in pts:
        k = _exhaustive(d.array, delta, x0, R)
        if k is None or not _verify(d.array, delta, x0, x0 + k, R):
            failures += 1
    reason = "ok" if failures == 0 else f"{failures} of {len(pts)} boundary samples lack a point"
    if failures and d.is_rational:
        reason += f" (rational direction, denominator {d.denominator})"
    log(logger, logging.DEBUG, "comparison_consistency", nu=d.nu, R=R, delta=delta, failed=failures)
    return ConsistencyReport(failures == 0, delta, reason, len(pts), failures)


def exhaustive_min_shift(nu: Sequence[float], A: float, radius: int) -> float:
    """Smallest |ξ|² over |ξ_i| ≤ radius with ξ·ν > A (oracle for lattice_min_shift)."""
    v = unit(nu)
    best = math.inf
    for xi in itertools.product(range(-radius, radius + 1), repeat=len(v)):
        arr = np.asarray(xi, dtype=float)
        if arr @ v > A:
            best = min(best, float(arr @ arr))
    return best
