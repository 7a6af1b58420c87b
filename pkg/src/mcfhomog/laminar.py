from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from mcfhomog.errors import BudgetExceeded, CflViolation, NumericBlowup, ParameterError
from mcfhomog.forcing import CorollaryParams, ForcingField, torus_distance
from mcfhomog.levelset import FrontTrack, SchemeParams
from mcfhomog.logging_json import get_logger, log
from mcfhomog.speeds import FingeringReport, fingering_metric
from mcfhomog.stencil import PERIODIC, first_bad_index, map_rows, neighbor, pad, unit_offset

logger = get_logger("laminar")

H_MAX = 20.0
SUB = "sub"
SUPER = "super"


@dataclass(frozen=True)
class GraphState:
    """Graph height U on the torus [0, 1)^d, d = n − 1, with nodes at i·dx."""

    U: np.ndarray
    dx: float
    time: float = 0.0

    def __post_init__(self) -> None:
        cells = 1.0 / self.dx
        if abs(cells - round(cells)) > 1e-9:
            raise ParameterError(f"torus spacing must divide 1, got dx={self.dx}")
        if any(s != round(cells) for s in self.U.shape):
            raise ParameterError(f"graph shape {self.U.shape} does not match dx={self.dx}")

    @property
    def dim(self) -> int:
        return self.U.ndim

    def coords(self) -> np.ndarray:
        axis = np.arange(self.U.shape[0]) * self.dx
        mesh = np.meshgrid(*[axis] * self.dim, indexing="ij")
        return np.stack(mesh, axis=-1)

    def with_values(self, U: np.ndarray, time: float) -> GraphState:
        return GraphState(U, self.dx, time)


def flat_state(dx: float, dim: int, height: float = 0.0) -> GraphState:
    cells = round(1.0 / dx)
    return GraphState(np.full((cells,) * dim, float(height)), dx, 0.0)


def graph_dt(dx: float, dim: int, M0: float, cfl_factor: float) -> float:
    return cfl_factor * min(dx * dx / (2 * dim), dx / (dim * M0))


def _graph_terms(
    U: np.ndarray, dx: float, a: int, b: int, padded: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows [a, b) of W, div(DU/W) in divergence form, and the upwind W⁻."""
    d = U.ndim
    zero = (0,) * d
    u = neighbor(padded, a, b, zero)
    div = np.zeros_like(u)
    central = []
    upwind = np.ones_like(u)
    for k in range(d):
        up = neighbor(padded, a, b, unit_offset(d, k, 1))
        um = neighbor(padded, a, b, unit_offset(d, k, -1))
        central.append((up - um) / (2 * dx))
        upwind += np.minimum((u - um) / dx, 0.0) ** 2 + np.maximum((up - u) / dx, 0.0) ** 2
        fluxes = []
        for sign in (1, -1):
            normal = sign * ((up if sign == 1 else um) - u) / dx
            w2 = 1.0 + normal * normal
            for j in range(d):
                if j == k:
                    continue
                here = neighbor(padded, a, b, unit_offset(d, j, 1)) - neighbor(
                    padded, a, b, unit_offset(d, j, -1)
                )
                off_p = tuple(sign if i == k else (1 if i == j else 0) for i in range(d))
                off_m = tuple(sign if i == k else (-1 if i == j else 0) for i in range(d))
                there = neighbor(padded, a, b, off_p) - neighbor(padded, a, b, off_m)
                trans = (here + there) / (4 * dx)
                w2 = w2 + trans * trans
            fluxes.append(normal / np.sqrt(w2))
        div += (fluxes[0] - fluxes[1]) / dx
    grad = np.stack(central, axis=-1)
    W = np.sqrt(1.0 + np.sum(grad * grad, axis=-1))
    return W, div, np.sqrt(upwind)


def graph_operator(U: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    padded = pad(U, (PERIODIC,) * U.ndim)
    return _graph_terms(U, dx, 0, U.shape[0], padded)


def graph_step(
    state: GraphState,
    gprime: ForcingField,
    params: SchemeParams,
    dt: float | None = None,
    *,
    gvals: np.ndarray | None = None,
) -> GraphState:
    """U ← U + dt·(W·div(DU/W) + g·W⁻), W = √(|DU|² + 1)."""
    if gprime.dim != state.dim:
        raise ParameterError(f"forcing dim {gprime.dim} does not match torus dim {state.dim}")
    bound = graph_dt(state.dx, state.dim, gprime.M0, params.cfl_factor)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} violates the graph CFL bound {bound:.6g}")
    g = gvals if gvals is not None else gprime(state.coords())
    padded = pad(state.U, (PERIODIC,) * state.dim)
    dx = state.dx

    def rows(a: int, b: int) -> np.ndarray:
        W, div, Wm = _graph_terms(state.U, dx, a, b, padded)
        return state.U[a:b] + dt * (W * div + g[a:b] * Wm)

    new = map_rows(rows, state.U.shape[0], params.workers)
    bad = first_bad_index(new)
    if bad is not None:
        raise NumericBlowup(f"non-finite graph height at cell {bad}", index=bad)
    return state.with_values(new, state.time + dt)


GraphCallback = Callable[[GraphState], bool | None]


def evolve_graph(
    state: GraphState,
    gprime: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    projection: Callable[[GraphState], GraphState] | None = None,
    callbacks: Iterable[GraphCallback] = (),
) -> GraphState:
    """Run graph_step to T. A callback returning True stops the run early."""
    if not (T > state.time):
        raise ParameterError(f"graph horizon T={T} must exceed the current time {state.time}")
    callbacks = list(callbacks)
    dt = graph_dt(state.dx, state.dim, gprime.M0, params.cfl_factor)
    gvals = gprime(state.coords())
    steps = 0
    for cb in callbacks:
        if cb(state):
            return state
    while state.time < T - 1e-12 * max(1.0, T):
        if steps >= params.max_steps:
            raise BudgetExceeded(f"max_steps={params.max_steps} reached at t={state.time:.6g}")
        state = graph_step(state, gprime, params, min(dt, T - state.time), gvals=gvals)
        if projection is not None:
            state = projection(state)
        steps += 1
        if any([bool(cb(state)) for cb in callbacks]):
            break
    log(logger, logging.DEBUG, "graph_done", steps=steps, t=state.time)
    return state


def _projector(s: float, kind: str) -> Callable[[GraphState], GraphState]:
    if kind not in (SUB, SUPER):
        raise ParameterError(f"kind must be 'sub' or 'super', got {kind!r}")

    def project(state: GraphState) -> GraphState:
        cap = s * state.time
        U = np.minimum(state.U, cap) if kind == SUB else np.maximum(state.U, cap)
        return state.with_values(U, state.time)

    return project


@dataclass(frozen=True)
class GraphRow:
    t: float
    maxU: float
    minU: float
    spread: float
    gap_to_obstacle: float


@dataclass
class GraphRecorder:
    every: float
    s: float | None = None
    kind: str = SUB
    rows: list[GraphRow] = field(default_factory=list)
    frames: list[GraphState] = field(default_factory=list)
    keep_frames: bool = False

    def __call__(self, state: GraphState) -> None:
        if self.rows and state.time < self.rows[-1].t + self.every - 1e-9 * self.every:
            return
        hi, lo = float(state.U.max()), float(state.U.min())
        if self.s is None:
            gap = math.nan
        elif self.kind == SUB:
            gap = self.s * state.time - hi
        else:
            gap = lo - self.s * state.time
        self.rows.append(GraphRow(state.time, hi, lo, hi - lo, gap))
        if self.keep_frames:
            self.frames.append(state)

    def track(self) -> FrontTrack:
        return FrontTrack(
            tuple(r.t for r in self.rows),
            tuple(r.maxU for r in self.rows),
            tuple(r.minU for r in self.rows),
        )


@dataclass(frozen=True)
class GraphRun:
    final: GraphState
    rows: tuple[GraphRow, ...]
    frames: tuple[GraphState, ...]
    s: float | None
    kind: str


def evolve_graph_obstacle(
    s: float,
    gprime: ForcingField,
    params: SchemeParams,
    T: float,
    kind: str = SUB,
    *,
    dx: float = 1 / 32,
    record_every: float | None = None,
    keep_frames: bool = False,
) -> GraphRun:
    """From U ≡ 0 with U ← min(U, s·t) (sub) or U ← max(U, s·t) (super) after each step."""
    if not (s > 0):
        raise ParameterError(f"obstacle speed must be positive, got s={s}")
    if not (gprime.m0 - 1e-12 <= s <= gprime.M0 + 1e-12):
        log(logger, logging.WARNING, "speed_outside_bounds", s=s, m0=gprime.m0, M0=gprime.M0)
    recorder = GraphRecorder(
        record_every if record_every is not None else T / 50, s, kind, keep_frames=keep_frames
    )
    final = evolve_graph(
        flat_state(dx, gprime.dim),
        gprime,
        params,
        T,
        projection=_projector(s, kind),
        callbacks=[recorder],
    )
    return GraphRun(final, tuple(recorder.rows), tuple(recorder.frames), s, kind)


def measure_T_star(
    s: float,
    gprime: ForcingField,
    params: SchemeParams,
    *,
    kind: str = SUB,
    dx: float = 1 / 32,
    horizon: float = 10.0,
) -> float:
    """First time the whole graph is one unit off the obstacle: Ū^s < s·t − 1 (sub) or
    U̲_s > s·t + 1 (super). math.inf when the horizon is reached first."""
    hit: list[float] = []

    def check(state: GraphState) -> bool:
        cap = s * state.time
        done = (
            bool(np.all(state.U < cap - 1)) if kind == SUB else bool(np.all(state.U > cap + 1))
        )
        if done:
            hit.append(state.time)
        return done

    if kind not in (SUB, SUPER):
        raise ParameterError(f"kind must be 'sub' or 'super', got {kind!r}")
    evolve_graph(
        flat_state(dx, gprime.dim),
        gprime,
        params,
        horizon,
        projection=_projector(s, kind),
        callbacks=[check],
    )
    value = hit[0] if hit else math.inf
    log(logger, logging.INFO, "t_star_measured", s=s, kind=kind, T_star=value)
    return value


def t_star_ladder(
    base: float,
    gprime: ForcingField,
    params: SchemeParams,
    *,
    offsets: Sequence[float] = (0.25, 0.5, 1.0),
    kind: str = SUB,
    **options: float,
) -> list[tuple[float, float]]:
    """T*(s) on s = base ± offset (plus for sub, minus for super)."""
    sign = 1.0 if kind == SUB else -1.0
    return [
        (base + sign * o, measure_T_star(base + sign * o, gprime, params, kind=kind, **options))
        for o in offsets
    ]


def graph_front_track(
    gprime: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    dx: float = 1 / 32,
    record_every: float | None = None,
) -> FrontTrack:
    """Free graph flow from U ≡ 0; head = max U, tail = min U."""
    recorder = GraphRecorder(record_every if record_every is not None else T / 50)
    evolve_graph(flat_state(dx, gprime.dim), gprime, params, T, callbacks=[recorder])
    return recorder.track()


def estimate_graph_speeds(
    gprime: ForcingField, params: SchemeParams, T: float, *, dx: float = 1 / 32
) -> tuple[float, float]:
    """Head and tail slopes of the free graph flow over the second half of [0, T]."""
    track = graph_front_track(gprime, params, T, dx=dx)
    t = np.asarray(track.times)
    late = t >= T / 2
    head = float(np.polyfit(t[late], np.asarray(track.heads)[late], 1)[0])
    tail = float(np.polyfit(t[late], np.asarray(track.tails)[late], 1)[0])
    return head, tail


@dataclass(frozen=True)
class TravelingWaveProfile:
    E: np.ndarray
    Uprof: np.ndarray
    speed: float
    kind: str
    dx: float
    clipped: np.ndarray | None = None


@dataclass(frozen=True)
class LadderLevel:
    level: int
    s: float
    mask_size: int
    mask_change: float
    max_height_change: float


@dataclass(frozen=True)
class TravelingWaveReport:
    profile: TravelingWaveProfile
    levels: tuple[LadderLevel, ...]
    status: str
    boundary_nodes: int
    boundary_curvature_error: float


def _boundary(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    for axis in range(mask.ndim):
        for step in (1, -1):
            out |= mask & ~np.roll(mask, step, axis=axis)
    return out


def _boundary_curvature_error(
    U: np.ndarray, mask: np.ndarray, g: np.ndarray, dx: float, kind: str
) -> tuple[int, float]:
    """Median |g − κ|/g over boundary nodes of E, κ the curvature of the level curve at ∂E."""
    edge = _boundary(mask)
    if not edge.any() or mask.all():
        return 0, 0.0
    padded = pad(U, (PERIODIC,) * U.ndim)
    d = U.ndim
    zero = (0,) * d
    u = neighbor(padded, 0, U.shape[0], zero)
    grads, flux_div = [], np.zeros_like(u)
    for k in range(d):
        up = neighbor(padded, 0, U.shape[0], unit_offset(d, k, 1))
        um = neighbor(padded, 0, U.shape[0], unit_offset(d, k, -1))
        grads.append((up - um) / (2 * dx))
    grad = np.stack(grads, axis=-1)
    norm = np.sqrt(np.sum(grad * grad, axis=-1)) + 1e-12
    normal = grad / norm[..., None]
    for k in range(d):
        flux_div += (np.roll(normal[..., k], -1, axis=k) - np.roll(normal[..., k], 1, axis=k)) / (
            2 * dx
        )
    # outward normal is −DU/|DU| for sub profiles, +DU/|DU| for super profiles
    kappa = -flux_div if kind == SUB else flux_div
    rel = np.abs(g[edge] - kappa[edge]) / np.abs(g[edge])
    return int(edge.sum()), float(np.median(rel))


def extract_traveling_wave(
    gprime: ForcingField,
    params: SchemeParams,
    kind: str = SUB,
    *,
    speed: float | None = None,
    levels: Sequence[int] = (2, 4, 8),
    K: float = 1.0,
    dx: float = 1 / 32,
    speed_horizon: float = 4.0,
    stable_fraction: float = 0.05,
) -> TravelingWaveReport:
    """Ladder s_ℓ = s̄ + 1/ℓ² (sub) or s̲ − 1/ℓ² (super), profile Ū^{s_ℓ}(·, ℓ) − s_ℓ·ℓ on
    E_ℓ = {Ũ > −2·M0·K} (sub) or {Ũ < 2·M0·K} (super)."""
    if kind not in (SUB, SUPER):
        raise ParameterError(f"kind must be 'sub' or 'super', got {kind!r}")
    if speed is None:
        head, tail = estimate_graph_speeds(gprime, params, speed_horizon, dx=dx)
        speed = head if kind == SUB else tail
    sign = 1.0 if kind == SUB else -1.0
    threshold = 2 * gprime.M0 * K
    diagnostics: list[LadderLevel] = []
    prev_mask: np.ndarray | None = None
    prev_prof: np.ndarray | None = None
    profile = None
    for level in levels:
        s = speed + sign / level**2
        run = evolve_graph_obstacle(s, gprime, params, float(level), kind, dx=dx)
        shifted = run.final.U - s * level
        if kind == SUB:
            prof = shifted - shifted.max()
            mask = prof > -threshold
        else:
            prof = shifted - shifted.min()
            mask = prof < threshold
        change = 0.0 if prev_mask is None else float(np.mean(mask != prev_mask))
        height = (
            0.0
            if prev_prof is None
            else float(np.max(np.abs(prof - prev_prof)[mask & prev_mask], initial=0.0))
        )
        diagnostics.append(LadderLevel(int(level), s, int(mask.sum()), change, height))
        log(logger, logging.DEBUG, "ladder_level", level=level, s=s, mask_change=change)
        prev_mask, prev_prof = mask, prof
        profile = TravelingWaveProfile(mask, prof, speed, kind, dx)
    assert profile is not None
    status = "stable" if diagnostics[-1].mask_change <= stable_fraction else "undecided"
    g = gprime(GraphState(profile.Uprof, dx).coords())
    nodes, err = _boundary_curvature_error(profile.Uprof, profile.E, g, dx, kind)
    return TravelingWaveReport(profile, tuple(diagnostics), status, nodes, err)


def subsolution_radial(r: np.ndarray | float, r1: float) -> np.ndarray:
    """U1(r) = ∫_0^r τ/(τ − r1) dτ = r + r1·ln((r1 − r)/r1) for 0 <= r < r1."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return r + r1 * np.log((r1 - r) / r1)


def supersolution_radial(r: np.ndarray | float, r2: float, R: float) -> np.ndarray:
    """U2(r) = ∫_r^R (R − τ)/(τ − r2) dτ on (r2, R], 0 beyond R."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (R - r2) * np.log((R - r2) / (r - r2)) - (R - r)
    return np.where(r >= R, 0.0, inner)


def profile_quadrature(
    kind: str, r: float, *, r1: float = 0.0, r2: float = 0.0, R: float = 0.0
) -> float:
    if kind == SUB:
        return float(integrate.quad(lambda t: t / (t - r1), 0.0, r, epsabs=1e-13, epsrel=1e-13)[0])
    if r >= R:
        return 0.0
    return float(
        integrate.quad(lambda t: (R - t) / (t - r2), r, R, epsabs=1e-13, epsrel=1e-13)[0]
    )


def construct_subsolution_profile(
    r1: float, y1: Sequence[float], sbar: float, *, dx: float, h_max: float = H_MAX
) -> TravelingWaveProfile:
    if not (0 < r1 < 0.5):
        raise ParameterError(f"need 0 < r1 < 1/2, got r1={r1}")
    state = flat_state(dx, len(y1))
    r = torus_distance(state.coords(), np.asarray(y1, dtype=float))
    E = r < r1
    raw = np.where(E, subsolution_radial(np.where(E, r, 0.0), r1), -np.inf)
    clipped = raw <= -h_max
    U = np.maximum(raw, -h_max)
    return TravelingWaveProfile(E, U, sbar, SUB, dx, clipped)


def construct_supersolution_profile(
    r2: float, R: float, y2: Sequence[float], sunder: float, *, dx: float, h_max: float = H_MAX
) -> TravelingWaveProfile:
    if not (0 < r2 < R < 0.5):
        raise ParameterError(f"need 0 < r2 < R < 1/2, got r2={r2}, R={R}")
    state = flat_state(dx, len(y2))
    r = torus_distance(state.coords(), np.asarray(y2, dtype=float))
    E = r > r2
    raw = np.where(E, supersolution_radial(np.where(E, r, R), r2, R), np.inf)
    clipped = raw >= h_max
    U = np.minimum(raw, h_max)
    return TravelingWaveProfile(E, U, sunder, SUPER, dx, clipped)


@dataclass(frozen=True)
class ResidualReport:
    ok: bool
    kind: str
    speed: float
    worst_excess: float
    worst_node: tuple[int, ...] | None
    checked: int


def residual_check(
    profile: TravelingWaveProfile,
    speed: float,
    gprime: ForcingField,
    *,
    mask: np.ndarray | None = None,
    rel_tol: float = 0.05,
) -> ResidualReport:
    """F = W·div(DU/W) + g·W − s on the mask; sub needs F >= −tol, super needs F <= tol.

    tol is `rel_tol` of |W·div| + |g·W| + |s| at each node.
    """
    W, div, _ = graph_operator(profile.Uprof, profile.dx)
    g = gprime(GraphState(profile.Uprof, profile.dx).coords())
    curv = W * div
    F = curv + g * W - speed
    tol = rel_tol * (np.abs(curv) + np.abs(g * W) + abs(speed))
    sel = mask if mask is not None else profile.E
    if profile.clipped is not None:
        sel = sel & ~_grow(profile.clipped | ~profile.E)
    excess = (-F - tol) if profile.kind == SUB else (F - tol)
    excess = np.where(sel, excess, -np.inf)
    if not sel.any():
        raise ParameterError("residual mask is empty")
    idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[idx])
    ok = worst <= 0
    node = tuple(int(i) for i in idx)
    if not ok:
        log(logger, logging.INFO, "residual_violation", kind=profile.kind, node=node, excess=worst)
    return ResidualReport(ok, profile.kind, speed, worst, node, int(sel.sum()))


def _grow(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for axis in range(mask.ndim):
        out |= np.roll(mask, 1, axis=axis) | np.roll(mask, -1, axis=axis)
    return out


def interior_mask(
    profile: TravelingWaveProfile, center: Sequence[float], lo: float, hi: float
) -> np.ndarray:
    r = torus_distance(GraphState(profile.Uprof, profile.dx).coords(), np.asarray(center))
    return (r > lo) & (r < hi)


@dataclass(frozen=True)
class CorollaryReport:
    ok: bool
    hypothesis_ok: bool
    violations: tuple[str, ...]
    min_g_E1: float
    max_g_E2: float
    sbar_lb: float
    sunder_ub: float
    simulated: bool
    spread_rate: float
    required_rate: float
    fingering: FingeringReport | None = None


def corollary_hypothesis(
    gprime: ForcingField, p: CorollaryParams, *, samples: int = 256
) -> tuple[list[str], float, float]:
    """Check both corollary inequalities on the actual field by dense lattice sampling."""
    d = gprime.dim
    axis = np.arange(samples) / samples
    pts = np.stack(np.meshgrid(*[axis] * d, indexing="ij"), axis=-1)
    g = gprime(pts)
    in_E1 = torus_distance(pts, np.asarray(p.y1)) < p.r1
    in_E2 = torus_distance(pts, np.asarray(p.y2)) >= p.r2
    min_E1 = float(g[in_E1].min()) if in_E1.any() else math.nan
    max_E2 = float(g[in_E2].max()) if in_E2.any() else math.nan
    out = []
    upper = min_E1 - (math.sqrt(2) * p.n / p.r1 + 2 / (p.R - p.r2))
    if not (0 < p.sigma < upper):
        out.append(
            f"0 < sigma < min_E1 g - (sqrt(2)*n/r1 + 2/(R - r2)) = {upper:.6g} (sigma={p.sigma})"
        )
    cap = min(p.sigma, p.n - 2)
    if not (max_E2 < cap):
        out.append(f"max_E2 g < min(sigma, n-2) = {cap:.6g} (got {max_E2:.6g})")
    if torus_distance(np.asarray(p.y1), np.asarray(p.y2)) + p.r1 >= p.r2:
        out.append("E1 and E2 must be disjoint")
    return out, min_E1, max_E2


def verify_corollary(
    gprime: ForcingField,
    p: CorollaryParams,
    params: SchemeParams,
    *,
    simulate: bool = True,
    dx: float = 1 / 128,
    T: float = 0.5,
    window: tuple[float, float] = (0.1, 0.5),
) -> CorollaryReport:
    violations, min_E1, max_E2 = corollary_hypothesis(gprime, p)
    sbar = min_E1 - math.sqrt(2) * p.n / p.r1
    sunder = 2 / (p.R - p.r2) + p.sigma
    required = 0.9 * (sbar - sunder)
    if violations:
        log(logger, logging.INFO, "corollary_hypothesis_failed", violations=violations)
        return CorollaryReport(
            False, False, tuple(violations), min_E1, max_E2, sbar, sunder, False, math.nan,
            required,
        )
    if not simulate:
        return CorollaryReport(
            True, True, (), min_E1, max_E2, sbar, sunder, False, math.nan, required
        )
    track = graph_front_track(gprime, params, T, dx=dx, record_every=T / 50)
    report = fingering_metric(track, window=window, jitter=2 * dx)
    ok = report.rate >= required
    log(logger, logging.INFO, "corollary_verified", rate=report.rate, required=required, ok=ok)
    return CorollaryReport(
        ok, True, (), min_E1, max_E2, sbar, sunder, True, report.rate, required, report
    )


@dataclass(frozen=True)
class GraphDiagnostics:
    min_rate: float
    max_rate: float
    min_neg_div: float
    max_neg_div: float


def graph_diagnostics(
    prev: GraphState, cur: GraphState, *, mask: np.ndarray | None = None
) -> GraphDiagnostics:
    """Nodewise (U(t+dt) − U(t))/dt and −div(DU/W) ranges at the later state."""
    dt = cur.time - prev.time
    if not (dt > 0):
        raise ParameterError("graph diagnostics need two states at increasing times")
    rate = (cur.U - prev.U) / dt
    _, div, _ = graph_operator(cur.U, cur.dx)
    sel = mask if mask is not None else np.ones(cur.U.shape, dtype=bool)
    return GraphDiagnostics(
        float(rate[sel].min()),
        float(rate[sel].max()),
        float((-div)[sel].min()),
        float((-div)[sel].max()),
    )


def diagnostics_within_bounds(
    d: GraphDiagnostics, m0: float, M0: float, s: float | None = None, tol: float = 1e-6
) -> bool:
    upper = s if s is not None else M0
    rate_ok = m0 - tol <= d.min_rate and d.max_rate <= upper + tol
    div_ok = m0 - M0 - tol <= d.min_neg_div and d.max_neg_div <= 2 * M0 + tol
    return rate_ok and div_ok

