from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mcfhomog.discrepancy import gamma
from mcfhomog.errors import DomainError, ParameterError
from mcfhomog.geometry import unit
from mcfhomog.levelset import LevelSetField
from mcfhomog.logging_json import get_logger, log
from mcfhomog.obstacle import lcp_required_radius
from mcfhomog.stencil import map_rows

logger = get_logger("morphology")

MAX_RADIUS_CELLS = 10
_TIE = 1e-12


def ball_offsets(radius: float, dx: float, dim: int) -> np.ndarray:
    """Integer offsets o with |o|·dx <= radius, boundary ties included."""
    k = int(math.floor(radius / dx + 1e-9))
    axes = [np.arange(-k, k + 1)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    d2 = np.sum(grid * grid, axis=1) * dx * dx
    return grid[d2 <= radius * radius * (1 + _TIE) + _TIE]


def _shift_view(padded: np.ndarray, pad: int, a: int, b: int, o: np.ndarray) -> np.ndarray:
    index = [slice(pad + a + int(o[0]), pad + b + int(o[0]))]
    for axis in range(1, padded.ndim):
        n = padded.shape[axis] - 2 * pad
        index.append(slice(pad + int(o[axis]), pad + n + int(o[axis])))
    return padded[tuple(index)]


def inf_convolution(
    field: LevelSetField | np.ndarray,
    radius: float | np.ndarray,
    *,
    dx: float | None = None,
    margin: float | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Discrete erosion: the minimum of u over the closed node ball of `radius` around each node.

    `radius` is a scalar or a grid function r(t)·φ(x). Nodes outside the grid do not take
    part in the minimum.
    """
    if isinstance(field, LevelSetField):
        values = field.values
        dx = field.grid.dx
    else:
        values = np.asarray(field, dtype=float)
        if dx is None:
            raise ParameterError("inf_convolution on a bare array needs dx")
    r = np.broadcast_to(np.asarray(radius, dtype=float), values.shape)
    if np.any(r < 0):
        raise DomainError("inf-convolution radius must be nonnegative")
    limit = margin if margin is not None else MAX_RADIUS_CELLS * dx
    rmax = float(r.max()) if r.size else 0.0
    if rmax > limit * (1 + _TIE):
        raise DomainError(f"inf-convolution radius {rmax:.6g} exceeds the margin {limit:.6g}")
    offsets = ball_offsets(rmax, dx, values.ndim)
    if len(offsets) == 1:
        return values.copy()
    pad = int(np.abs(offsets).max())
    padded = np.pad(values, pad, mode="constant", constant_values=np.inf)
    lengths = np.sqrt(np.sum(offsets * offsets, axis=1)) * dx
    uniform = bool(np.all(r == rmax))

    def rows(a: int, b: int) -> np.ndarray:
        out = values[a:b].copy()
        rr = r[a:b]
        for o, length in zip(offsets, lengths):
            view = _shift_view(padded, pad, a, b, o)
            if uniform:
                np.minimum(out, view, out=out)
            else:
                inside = length <= rr * (1 + _TIE) + _TIE
                out = np.where(inside, np.minimum(out, view), out)
        return out

    return map_rows(rows, values.shape[0], workers)


@dataclass(frozen=True)
class ExteriorBallReport:
    level: float
    radius: float
    boundary_nodes: int
    failures: int
    first_failure: tuple[int, ...] | None
    vacuous: bool

    @property
    def ok(self) -> bool:
        return self.failures == 0


def _boolean_erode(mask: np.ndarray, offsets: np.ndarray, outside: bool) -> np.ndarray:
    """out[x] = all(mask[x + o] for o in offsets), with `outside` for nodes off the grid."""
    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    padded = np.pad(mask, pad, mode="constant", constant_values=outside)
    out = np.ones(mask.shape, dtype=bool)
    for o in offsets:
        out &= _shift_view(padded, pad, 0, mask.shape[0], o)
    return out


def _boolean_dilate(mask: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    padded = np.pad(mask, pad, mode="constant", constant_values=False)
    out = np.zeros(mask.shape, dtype=bool)
    for o in offsets:
        out |= _shift_view(padded, pad, 0, mask.shape[0], o)
    return out


def check_exterior_ball(
    field: LevelSetField | np.ndarray,
    level: float,
    radius: float,
    *,
    dx: float | None = None,
) -> ExteriorBallReport:
    """Each boundary node of {u <= level} must sit on a ball of `radius` inside the set.

    The ball centre is searched on the annulus radius ± dx around the node.
    """
    if isinstance(field, LevelSetField):
        values = field.values
        dx = field.grid.dx
    else:
        values = np.asarray(field, dtype=float)
        if dx is None:
            raise ParameterError("check_exterior_ball on a bare array needs dx")
    inside = values <= level
    if not inside.any():
        raise ParameterError(f"the {level}-sublevel set is empty")
    if radius < dx:
        return ExteriorBallReport(level, radius, 0, 0, None, True)
    dim = values.ndim
    boundary = np.zeros_like(inside)
    for axis in range(dim):
        for step in (1, -1):
            nb = np.roll(inside, step, axis=axis)
            edge = [slice(None)] * dim
            edge[axis] = 0 if step == 1 else -1
            nb[tuple(edge)] = True
            boundary |= inside & ~nb
    ball = ball_offsets(radius, dx, dim)
    fits = _boolean_erode(inside, ball, outside=True)
    outer = ball_offsets(radius + dx, dx, dim)
    lengths = np.sqrt(np.sum(outer * outer, axis=1)) * dx
    annulus = outer[lengths >= radius - dx - _TIE]
    supported = _boolean_dilate(fits, annulus)
    failed = boundary & ~supported
    failures = int(failed.sum())
    first = tuple(int(i) for i in np.argwhere(failed)[0]) if failures else None
    if failures:
        log(logger, logging.DEBUG, "ball_check_failed", failures=failures, first=first)
    return ExteriorBallReport(level, radius, int(boundary.sum()), failures, first, False)


@dataclass(frozen=True)
class InfConvParams:
    """h = (r(t), φ(x)) with certified sup-norms of Dφ and D²φ.

    `phi_grad` gives |Dφ(x)| pointwise when known; otherwise the bound is used everywhere.
    """

    r: Callable[[float], float]
    phi: Callable[[np.ndarray], np.ndarray]
    phi_grad_bound: float
    phi_hess_bound: float
    phi_grad: Callable[[np.ndarray], np.ndarray] | None = None
    r_prime: Callable[[float], float] | None = None

    def derivative(self, t: float) -> float:
        if self.r_prime is not None:
            return self.r_prime(t)
        h = 1e-6 * max(1.0, abs(t))
        return (self.r(t + h) - self.r(max(t - h, 0.0))) / (t + h - max(t - h, 0.0))


@dataclass(frozen=True)
class EvolutionReport:
    ok: bool
    max_lhs: float
    worst_point: tuple[float, ...]
    worst_time: float
    max_r_grad: float
    samples: int
    notes: tuple[str, ...] = ()


def evolution_lhs(
    params: InfConvParams, x: np.ndarray, t: float, *, n: int, M0: float, L0: float
) -> np.ndarray:
    """r′ + ((n+1)‖D²φ‖/φ + M0|Dφ|/φ + L0)·r + |Dφ|²r/((1 − r|Dφ|)²φ²) at the points x."""
    phi = np.asarray(params.phi(x), dtype=float)
    grad = (
        np.asarray(params.phi_grad(x), dtype=float)
        if params.phi_grad is not None
        else np.full(phi.shape, params.phi_grad_bound)
    )
    r = params.r(t)
    rp = params.derivative(t)
    linear = ((n + 1) * params.phi_hess_bound / phi + M0 * grad / phi + L0) * r
    with np.errstate(divide="ignore"):
        quad = grad * grad * r / ((1.0 - r * grad) ** 2 * phi * phi)
    return rp + linear + quad


def check_evolution_inequality(
    params: InfConvParams,
    domain: np.ndarray,
    horizon: float,
    *,
    n: int,
    M0: float,
    L0: float,
    time_samples: int = 33,
    tol: float = 0.0,
) -> EvolutionReport:
    """Sample the inf-convolution evolution inequality and r(t)|Dφ(x)| < 1 on domain × [0, T]."""
    pts = np.asarray(domain, dtype=float).reshape(-1, np.shape(domain)[-1])
    if not (horizon >= 0):
        raise ParameterError(f"horizon must be nonnegative, got {horizon}")
    worst, worst_x, worst_t, worst_rg = -math.inf, pts[0], 0.0, 0.0
    for t in np.linspace(0.0, horizon, max(2, time_samples)):
        lhs = evolution_lhs(params, pts, float(t), n=n, M0=M0, L0=L0)
        i = int(np.argmax(lhs))
        if lhs[i] > worst:
            worst, worst_x, worst_t = float(lhs[i]), pts[i], float(t)
        grad = (
            np.asarray(params.phi_grad(pts))
            if params.phi_grad is not None
            else np.full(len(pts), params.phi_grad_bound)
        )
        worst_rg = max(worst_rg, float(np.max(params.r(float(t)) * grad)))
    notes = []
    if worst_rg >= 1:
        notes.append(f"r|Dphi| reaches {worst_rg:.6g} >= 1")
    ok = worst <= tol and worst_rg < 1
    return EvolutionReport(
        ok,
        worst,
        tuple(float(v) for v in worst_x),
        worst_t,
        worst_rg,
        len(pts) * max(2, time_samples),
        tuple(notes),
    )


@dataclass(frozen=True)
class LcpPair:
    params: InfConvParams
    domain: np.ndarray
    R: float
    C: float
    nu: tuple[float, ...]


def lcp_pair(
    n: int,
    M0: float,
    L0: float,
    *,
    C: float = 2.0,
    R: float | None = None,
    nu: Sequence[float] | None = None,
    radial_samples: int = 41,
) -> LcpPair:
    """γ(t) = ½e^{−2L0 t} with φ = −9(1+C)/(2CR²)|x⊤|² + ½(3 − 1/C) on |x⊤| <= R/3.

    x⊤ is the part of x orthogonal to ν; φ only depends on |x⊤|, so the domain is sampled
    along one lateral ray.
    """
    if C <= 1:
        raise ParameterError(f"C must exceed 1, got {C}")
    R = lcp_required_radius(n, M0, L0) if R is None else float(R)
    direction = unit(nu if nu is not None else np.eye(n)[-1])
    a = 9 * (1 + C) / (2 * C * R * R)
    top = 0.5 * (3 - 1 / C)
    lateral = np.linalg.svd(direction.reshape(1, -1))[2][1]

    def lateral_norm(x: np.ndarray) -> np.ndarray:
        along = x @ direction
        perp = x - along[..., None] * direction
        return np.sqrt(np.sum(perp * perp, axis=-1))

    params = InfConvParams(
        r=lambda t: gamma(t, L0),
        r_prime=lambda t: -2 * L0 * gamma(t, L0),
        phi=lambda x: top - a * lateral_norm(x) ** 2,
        phi_grad=lambda x: 2 * a * lateral_norm(x),
        phi_grad_bound=2 * a * R / 3,
        phi_hess_bound=2 * a,
    )
    rho = np.linspace(0.0, R / 3, radial_samples)
    domain = rho[:, None] * lateral[None, :]
    return LcpPair(params, domain, R, C, tuple(float(v) for v in direction))


def check_lcp_pair(
    n: int, M0: float, L0: float, T: float, *, C: float = 2.0, R: float | None = None
) -> EvolutionReport:
    pair = lcp_pair(n, M0, L0, C=C, R=R)
    report = check_evolution_inequality(pair.params, pair.domain, T, n=n, M0=M0, L0=L0)
    need = lcp_required_radius(n, M0, L0)
    if pair.R < need:
        note = f"R={pair.R:.6g} below max(6, 12(3n + M0 + 27)/L0)={need:.6g}"
        report = EvolutionReport(
            report.ok,
            report.max_lhs,
            report.worst_point,
            report.worst_time,
            report.max_r_grad,
            report.samples,
            (*report.notes, note),
        )
    return report


def finite_speed_dt_bound(C: float, delta: float, n: int, M0: float) -> float:
    """Largest admissible Δt: (C−1)δ²/((n−1)C² + C(C−1)M0δ)."""
    if not (C > 1):
        raise ParameterError(f"C must exceed 1, got {C}")
    if not (delta > 0):
        raise ParameterError(f"delta must be positive, got {delta}")
    if n < 2:
        log(logger, logging.WARNING, "degenerate_dimension", n=n)
    return (C - 1) * delta * delta / ((n - 1) * C * C + C * (C - 1) * M0 * delta)
