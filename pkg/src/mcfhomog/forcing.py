from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from scipy import ndimage

from mcfhomog.errors import HypothesisViolation, ParameterError
from mcfhomog.logging_json import get_logger, log

logger = get_logger("forcing")

Evaluator = Callable[[np.ndarray], np.ndarray]

KINDS = ("closed_form", "grid_sampled", "laminar")


@dataclass(frozen=True)
class ForcingField:
    """Z^n-periodic positive forcing g with certified bounds m0 ≤ g ≤ M0 and Lipschitz L0.

    `evaluator` receives points reduced to the unit cell, shape (..., dim), and returns
    values of shape (...).
    """

    evaluator: Evaluator
    dim: int
    m0: float
    M0: float
    L0: float
    kind: str = "closed_form"
    name: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown forcing kind: {self.kind}")
        if self.dim < 1:
            raise ParameterError("forcing dimension must be >= 1")
        if not (self.m0 > 0):
            raise HypothesisViolation(f"forcing lower bound must be positive, got m0={self.m0}")
        if self.M0 < self.m0:
            raise ParameterError(f"forcing bounds out of order: m0={self.m0} > M0={self.M0}")
        if self.L0 < 0:
            raise ParameterError("Lipschitz constant must be nonnegative")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        if pts.shape[-1] != self.dim:
            raise ParameterError(
                f"forcing {self.name or self.kind} expects points of dim {self.dim}, "
                f"got trailing axis {pts.shape[-1]}"
            )
        return np.asarray(self.evaluator(np.mod(pts, 1.0)), dtype=float)

    @property
    def is_constant(self) -> bool:
        return self.M0 - self.m0 <= 1e-15


@dataclass(frozen=True)
class HypothesisReport:
    m0_est: float
    M0_est: float
    L0_est: float
    ok: bool
    samples: int


def constant(c: float, dim: int = 2) -> ForcingField:
    if c <= 0:
        raise HypothesisViolation(f"constant forcing must be positive, got c={c}")
    value = float(c)

    def _eval(x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[:-1], value)

    return ForcingField(_eval, dim, value, value, 0.0, "closed_form", "constant", {"c": value})


def sinprod(c: float = 1.0, a: float = 0.5, dim: int = 2) -> ForcingField:
    """c + a·sin(2πx1)·sin(2πx2)."""
    if dim < 2:
        raise ParameterError("sinprod forcing needs dim >= 2")
    lo, hi = c - abs(a), c + abs(a)
    if lo <= 0:
        raise HypothesisViolation(f"sinprod forcing is not positive: c - |a| = {lo}")

    def _eval(x: np.ndarray) -> np.ndarray:
        return c + a * np.sin(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])

    meta = {"c": float(c), "a": float(a)}
    return ForcingField(_eval, dim, lo, hi, 2 * math.pi * abs(a), "closed_form", "sinprod", meta)


def laminar_sin(c: float = 1.0, a: float = 0.5, dim: int = 2) -> ForcingField:
    """c + a·sin(2πx1); independent of the last coordinate when dim >= 2."""
    lo, hi = c - abs(a), c + abs(a)
    if lo <= 0:
        raise HypothesisViolation(f"laminar_sin forcing is not positive: c - |a| = {lo}")

    def _eval(x: np.ndarray) -> np.ndarray:
        return c + a * np.sin(2 * np.pi * x[..., 0])

    meta = {"c": float(c), "a": float(a)}
    kind = "laminar" if dim >= 2 else "closed_form"
    return ForcingField(_eval, dim, lo, hi, 2 * math.pi * abs(a), kind, "laminar_sin", meta)


CLOSED_FORMS: dict[str, Callable[..., ForcingField]] = {
    "constant": constant,
    "sinprod": sinprod,
    "laminar_sin": laminar_sin,
}


def closed_form(name: str, dim: int = 2, **params: float) -> ForcingField:
    try:
        builder = CLOSED_FORMS[name]
    except KeyError as e:
        raise ParameterError(
            f"unknown closed-form forcing id {name!r}; expected one of {sorted(CLOSED_FORMS)}"
        ) from e
    try:
        return builder(dim=dim, **params)
    except TypeError as e:
        raise ParameterError(f"bad parameters for forcing {name!r}: {e}") from e


def grid_sampled(table: np.ndarray, name: str = "grid") -> ForcingField:
    """Multilinear periodic interpolant of samples taken at the lattice k/P of the unit cell."""
    values = np.asarray(table, dtype=float)
    if values.ndim not in (2, 3):
        raise ParameterError("grid-sampled forcing supports dim 2 or 3")
    if len(set(values.shape)) != 1 or values.shape[0] < 2:
        raise ParameterError(f"grid-sampled forcing needs a P^n table, got shape {values.shape}")
    P = values.shape[0]
    h = 1.0 / P
    if not np.all(np.isfinite(values)):
        raise HypothesisViolation("grid-sampled forcing contains non-finite values")
    bad = np.argwhere(values <= 0)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        point = tuple(i * h for i in idx)
        raise HypothesisViolation(f"grid-sampled forcing is not positive at x={point}", point=point)

    # Lipschitz constant of the interpolant: per-axis maximal slopes combined in l2
    slopes = [
        float(np.max(np.abs(np.roll(values, -1, axis=i) - values))) / h
        for i in range(values.ndim)
    ]
    L0 = float(math.sqrt(sum(s * s for s in slopes)))
    frozen = values.copy()
    frozen.setflags(write=False)

    def _eval(x: np.ndarray) -> np.ndarray:
        flat = x.reshape(-1, x.shape[-1]) * P
        out = ndimage.map_coordinates(frozen, flat.T, order=1, mode="grid-wrap")
        return out.reshape(x.shape[:-1])

    meta = {"P": P, "table": frozen}
    return ForcingField(
        _eval, values.ndim, float(values.min()), float(values.max()), L0, "grid_sampled", name, meta
    )


def load_grid_forcing(path: str | Path) -> ForcingField:
    """Read a CSV with header x1,...,xn,g whose rows sample the lattice k/P."""
    p = Path(path)
    with p.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    if not header or header[-1] != "g" or len(header) < 3:
        raise ParameterError(f"{p}: header must be x1,...,xn,g; got {','.join(header)}")
    dim = len(header) - 1
    data = np.asarray(rows, dtype=float)
    P = round(len(data) ** (1.0 / dim))
    if P**dim != len(data):
        raise ParameterError(f"{p}: {len(data)} rows do not form a P^{dim} lattice")
    idx = np.rint(np.mod(data[:, :dim], 1.0) * P).astype(int) % P
    table = np.full((P,) * dim, np.nan)
    table[tuple(idx.T)] = data[:, dim]
    if np.isnan(table).any():
        raise ParameterError(f"{p}: samples do not cover the lattice k/{P}")
    log(logger, logging.INFO, "grid_forcing_loaded", path=str(p), P=P, dim=dim)
    return grid_sampled(table, name=p.stem)


def _lattice(samples: int, dim: int) -> np.ndarray:
    axes = [np.arange(samples) / samples] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def validate_hypothesis(g: ForcingField, samples: int, tol: float = 1e-9) -> HypothesisReport:
    if samples < 2:
        raise ParameterError(f"validate_hypothesis needs samples >= 2 per axis, got {samples}")
    pts = _lattice(samples, g.dim)
    values = g(pts)
    bad = np.argwhere(~(values > 0))
    if bad.size:
        point = tuple(float(v) for v in pts[tuple(bad[0])])
        raise HypothesisViolation(f"forcing is not positive at x={point}", point=point)
    h = 1.0 / samples
    quotients = [
        float(np.max(np.abs(np.roll(values, -1, axis=i) - values))) / h for i in range(g.dim)
    ]
    report = HypothesisReport(
        m0_est=float(values.min()),
        M0_est=float(values.max()),
        L0_est=max(quotients),
        ok=False,
        samples=samples,
    )
    ok = (
        report.m0_est >= g.m0 - tol
        and report.M0_est <= g.M0 + tol
        and report.L0_est <= g.L0 + tol
    )
    return HypothesisReport(report.m0_est, report.M0_est, report.L0_est, ok, samples)


def make_laminar(gprime: ForcingField) -> ForcingField:
    """Lift g'(x') to g(x', x_n) := g'(x')."""

    def _eval(x: np.ndarray) -> np.ndarray:
        return gprime.evaluator(x[..., :-1])

    meta = dict(gprime.meta)
    meta["lifted_from"] = gprime.name
    return ForcingField(
        _eval, gprime.dim + 1, gprime.m0, gprime.M0, gprime.L0, "laminar", gprime.name, meta
    )


def torus_distance(y: np.ndarray, center: np.ndarray) -> np.ndarray:
    d = np.asarray(y, dtype=float) - np.asarray(center, dtype=float)
    d = d - np.rint(d)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class CorollaryParams:
    n: int = 3
    r1: float = 0.15
    r2: float = 0.25
    R: float = 0.45
    y1: tuple[float, ...] = (0.5, 0.5)
    y2: tuple[float, ...] = (0.5, 0.5)
    sigma: float = 1.0
    g_high: float = 45.0
    g_low: float = 0.5

    @property
    def rho1(self) -> float:
        return self.r1 + float(torus_distance(np.asarray(self.y1), np.asarray(self.y2)))

    @property
    def sbar_lb(self) -> float:
        return self.g_high - math.sqrt(2) * self.n / self.r1

    @property
    def sunder_ub(self) -> float:
        return 2.0 / (self.R - self.r2) + self.sigma

    def violations(self) -> list[str]:
        out: list[str] = []
        if self.n < 3:
            out.append(f"n >= 3 (got n={self.n})")
        if len(self.y1) != self.n - 1 or len(self.y2) != self.n - 1:
            out.append(f"y1, y2 must be points of the {self.n - 1}-torus")
            return out
        if not (0 < self.r1 < self.r2 < self.R < 0.5):
            out.append(f"0 < r1 < r2 < R < 1/2 (got r1={self.r1}, r2={self.r2}, R={self.R})")
            return out
        if not (self.rho1 < self.r2):
            out.append(f"|y1 - y2| + r1 < r2 (got {self.rho1:.6g} >= r2={self.r2})")
        bound = math.sqrt(2) * self.n / self.r1
        if not (self.g_high > bound):
            out.append(f"g_high > sqrt(2)*n/r1 = {bound:.6g} (got {self.g_high})")
        upper = self.g_high - (bound + 2.0 / (self.R - self.r2))
        if not (0 < self.sigma < upper):
            out.append(
                f"0 < sigma < g_high - (sqrt(2)*n/r1 + 2/(R - r2)) = {upper:.6g} (got {self.sigma})"
            )
        cap = min(self.sigma, self.n - 2)
        if not (0 < self.g_low < cap):
            out.append(f"max_{{y in E_2}} g(y) < min{{sigma, n-2}} = {cap:.6g} (got {self.g_low})")
        return out


def corollary_field(p: CorollaryParams, *, validate: bool = True) -> ForcingField:
    """Radial plateau field: g_high on B(y2, rho1) ⊇ B(y1, r1), g_low off B(y2, r2)."""
    if validate:
        bad = p.violations()
        if bad:
            raise ParameterError("corollary parameters violate: " + "; ".join(bad))
    if not (0 < p.r1 < p.r2) or p.g_low <= 0 or p.g_high <= 0:
        raise ParameterError(
            f"corollary field needs 0 < r1 < r2 and positive plateaus (got r1={p.r1}, r2={p.r2})"
        )
    rho1 = min(p.rho1, p.r2 - 1e-12)
    width = p.r2 - rho1
    y2 = np.asarray(p.y2, dtype=float)
    hi, lo = float(p.g_high), float(p.g_low)

    def _eval(y: np.ndarray) -> np.ndarray:
        d = torus_distance(y, y2)
        t = np.clip((d - rho1) / width, 0.0, 1.0)
        smooth = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        return hi - (hi - lo) * smooth

    meta = {
        "sbar_lb": p.sbar_lb,
        "sunder_ub": p.sunder_ub,
        "params": p,
    }
    L0 = 15.0 * abs(hi - lo) / (8.0 * width)
    return ForcingField(
        _eval, p.n - 1, min(hi, lo), max(hi, lo), L0, "laminar", "corollary", meta
    )


def make_corollary_forcing(p: CorollaryParams) -> ForcingField:
    return corollary_field(p, validate=True)
