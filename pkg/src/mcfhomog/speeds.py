from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from mcfhomog.discrepancy import classify
from mcfhomog.errors import MisuseError, ParameterError, UndecidedError
from mcfhomog.forcing import ForcingField
from mcfhomog.geometry import Cylinder, unit
from mcfhomog.levelset import (
    Callback,
    FrontTrack,
    FrontTracker,
    LevelSetField,
    SchemeParams,
    extract_front,
    planar_data,
    planar_grid,
    solve,
    window_centre,
)
from mcfhomog.logging_json import get_logger, log
from mcfhomog.obstacle import ObstacleProblem, ObstacleRun, evolve_sub, evolve_super

logger = get_logger("speeds")

DETACHED = "detached"
ATTACHED = "attached"
UNDECIDED = "undecided"


@dataclass(frozen=True)
class DetachmentReport:
    level: float
    radius: float
    first_detach_time: float | None
    persistent: bool
    min_gap_after: float
    status: str
    times: tuple[float, ...]
    gaps: tuple[float, ...]


@dataclass(frozen=True)
class SpeedEstimate:
    nu: tuple[float, ...]
    kind: str
    value: float
    method: str
    half_width: float
    horizon: float

    def within_bounds(self, m0: float, M0: float) -> bool:
        return m0 - self.half_width <= self.value <= M0 + self.half_width


def _gap_series(run: ObstacleRun, mu: float, radius: float) -> list[float]:
    p = run.problem
    nu = np.asarray(p.nu)
    cyl = Cylinder(p.nu, (0.0,) * len(p.nu), radius)
    gaps = []
    for i, t in enumerate(run.times):
        plane = p.s * t - mu / p.qnorm
        front = extract_front(run.state(i), mu, cyl, nu=nu)
        if front.empty:
            gaps.append(math.nan)
        elif run.kind == "sub":
            gaps.append(plane - front.head)
        else:
            gaps.append(front.tail - plane)
    return gaps


def detect_detachment(run: ObstacleRun, mu: float = 0.0, r: float = 1.0) -> DetachmentReport:
    """Detached when the μ-front sits at least 2·dx off the obstacle plane inside Ω(0, r; ν)
    from some time up to the horizon, that time being at most three quarters of the way in."""
    if r > run.problem.R:
        raise ParameterError(f"detection radius r={r} exceeds the cylinder radius {run.problem.R}")
    gaps = _gap_series(run, mu, r)
    dx = run.dx
    T = run.times[-1]
    start = None
    for i in range(len(gaps) - 1, -1, -1):
        if not (gaps[i] >= 2 * dx):
            break
        start = i
    if start is not None and run.times[start] <= 0.75 * T:
        after = gaps[start:]
        return DetachmentReport(
            mu, r, run.times[start], True, float(min(after)), DETACHED, tuple(run.times),
            tuple(gaps),
        )
    last = gaps[-1]
    status = UNDECIDED if (math.isnan(last) or last >= dx / 2) else ATTACHED
    finite = [v for v in gaps if not math.isnan(v)]
    return DetachmentReport(
        mu,
        r,
        None,
        False,
        float(min(finite)) if finite else math.nan,
        status,
        tuple(run.times),
        tuple(gaps),
    )


def _check_planar(u0: np.ndarray, reference: np.ndarray) -> None:
    diff = u0 - reference
    if float(np.ptp(diff)) > 1e-9 * max(1.0, float(np.max(np.abs(reference)))):
        raise MisuseError(
            "front tracking needs planar initial data u0 = c - x.nu; use check_envelope for "
            "general profiles"
        )


def _fit(times: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    A = np.stack([times, np.ones_like(times)], axis=1)
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    resid = values - A @ coef
    return float(coef[0]), float(np.max(np.abs(resid))) if resid.size else 0.0


def track_planar_front(
    nu: Sequence[float],
    g: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    eps: float = 1.0,
    dx: float = 1 / 16,
    lateral_periods: int = 1,
    half_length: float = 2.0,
    r: float | None = None,
    record_every: float | None = None,
    u0: np.ndarray | None = None,
    callbacks: Iterable[Callback] = (),
) -> FrontTrack:
    """Evolve u0 = −x·ν on a moving window and record head/tail inside Ω(z0, r; ν)."""
    direction = unit(nu)
    n = len(direction)
    grid = planar_grid(
        direction, dx, lateral_periods=lateral_periods, half_length=half_length * eps, eps=eps
    )
    reference = planar_data(grid)
    if u0 is not None:
        _check_planar(np.asarray(u0, dtype=float), reference)
        data = np.asarray(u0, dtype=float)
    else:
        data = reference
    radius = (r if r is not None else math.sqrt(n)) * eps
    anchor = window_centre(grid)
    anchor = anchor - float(anchor @ direction) * direction
    cyl = Cylinder(tuple(float(v) for v in direction), tuple(float(v) for v in anchor), radius)
    L = lateral_periods * eps
    tracker = FrontTracker(
        every=record_every if record_every is not None else T / 200,
        cylinder=cyl,
        nu=tuple(float(v) for v in direction),
        images=math.ceil(radius / L) + 1,
    )
    solve(LevelSetField(grid, data, 0.0, eps), g, params, T, callbacks=[tracker, *callbacks])
    return tracker.track()


def estimate_speed_front_tracking(
    nu: Sequence[float],
    g: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    eps: float = 1.0,
    dx: float = 1 / 16,
    lateral_periods: int = 1,
    half_length: float = 2.0,
    r: float | None = None,
    record_every: float | None = None,
    u0: np.ndarray | None = None,
) -> tuple[SpeedEstimate, SpeedEstimate]:
    """Head and tail slopes from least-squares lines over the second half of [0, T]."""
    if T / eps < 20 / g.m0:
        raise ParameterError(
            f"front tracking needs T/eps >= 20/m0 = {20 / g.m0:.6g}, got {T / eps:.6g}"
        )
    direction = unit(nu)
    track = track_planar_front(
        direction,
        g,
        params,
        T,
        eps=eps,
        dx=dx * eps,
        lateral_periods=lateral_periods,
        half_length=half_length,
        r=r,
        record_every=record_every,
        u0=u0,
    )
    times = np.asarray(track.times)
    late = times >= T / 2
    heads = np.asarray(track.heads)[late]
    tails = np.asarray(track.tails)[late]
    keep = np.isfinite(heads) & np.isfinite(tails)
    if keep.sum() < 2:
        raise UndecidedError("front left the tracking cylinder; no samples to fit")
    window = times[late][keep]
    span = float(window[-1] - window[0])
    nu_t = tuple(float(v) for v in direction)
    estimates = []
    for kind, series in (("head", heads[keep]), ("tail", tails[keep])):
        slope, resid = _fit(window, series)
        hw = 2 * resid / span + dx * eps / T
        estimates.append(SpeedEstimate(nu_t, kind, slope, "front_tracking", hw, T))
    log(
        logger,
        logging.INFO,
        "speed_estimated",
        method="front_tracking",
        nu=nu_t,
        head=estimates[0].value,
        tail=estimates[1].value,
    )
    return estimates[0], estimates[1]


def _probe(
    kind: str,
    nu: tuple[float, ...],
    s: float,
    g: ForcingField,
    params: SchemeParams,
    *,
    T: float,
    dx: float,
    r: float,
    R: float,
    record_every: float,
) -> DetachmentReport:
    p = ObstacleProblem.create(nu, R, s)
    evolve = evolve_sub if kind == "head" else evolve_super
    run = evolve(p, g, params, T, dx=dx, record_every=record_every)
    report = detect_detachment(run, 0.0, r)
    log(logger, logging.DEBUG, "bisection_probe", kind=kind, s=s, status=report.status, T=T)
    return report


def estimate_speed_obstacle_bisection(
    nu: Sequence[float],
    g: ForcingField,
    kind: str,
    params: SchemeParams,
    *,
    dx: float = 1 / 8,
    T: float = 4.0,
    r: float = 1.0,
    iterations: int = 8,
    bracket: tuple[float, float] | None = None,
) -> SpeedEstimate:
    """Bisect on the obstacle speed with detachment as the predicate.

    Head: the smallest s whose subsolution detaches. Tail: the largest s whose supersolution
    detaches. The bracket is halved `iterations` times. A probe still undecided after one
    horizon doubling ends the search at that probe when its final gap is finite, and raises
    when the front was lost.
    """
    if kind not in ("head", "tail"):
        raise ParameterError(f"kind must be 'head' or 'tail', got {kind!r}")
    direction = unit(nu)
    n = len(direction)
    nu_t = tuple(float(v) for v in direction)
    lo, hi = bracket if bracket is not None else (g.m0, g.M0)
    R = r + 2 * math.sqrt(n) + 1
    if classify(direction).is_rational:
        R *= 2
    resolution = 4 * dx / T
    horizon = T
    if hi - lo <= 0:
        return SpeedEstimate(nu_t, kind, (lo + hi) / 2, "obstacle_bisection", resolution, horizon)
    doubled = False
    for _ in range(iterations):
        mid = (lo + hi) / 2
        report = _probe(
            kind, nu_t, mid, g, params, T=horizon, dx=dx, r=r, R=R, record_every=horizon / 32
        )
        if report.status == UNDECIDED and not doubled:
            horizon *= 2
            doubled = True
            log(logger, logging.INFO, "horizon_doubled", kind=kind, s=mid, T=horizon)
            report = _probe(
                kind, nu_t, mid, g, params, T=horizon, dx=dx, r=r, R=R,
                record_every=horizon / 32,
            )
        if report.status == UNDECIDED:
            if not report.gaps or math.isnan(report.gaps[-1]):
                raise UndecidedError(
                    f"detachment undecided at s={mid:.6g} even with horizon {horizon:.6g}"
                )
            # finite gap: mid is within the detection resolution of the threshold
            reach = 4 * dx / horizon
            lo, hi = max(lo, mid - reach), min(hi, mid + reach)
            log(logger, logging.INFO, "bisection_resolved", kind=kind, s=mid, T=horizon)
            break
        detached = report.status == DETACHED
        if kind == "head":
            hi, lo = (mid, lo) if detached else (hi, mid)
        else:
            lo, hi = (mid, hi) if detached else (lo, mid)
    value = (lo + hi) / 2
    hw = (hi - lo) / 2 + 4 * dx / horizon
    log(
        logger, logging.INFO, "speed_estimated", method="obstacle_bisection", kind=kind, value=value
    )
    return SpeedEstimate(nu_t, kind, value, "obstacle_bisection", hw, horizon)


@dataclass(frozen=True)
class SweepRow:
    theta: float
    nu: tuple[float, ...]
    s_head: float
    s_tail: float
    hw_head: float
    hw_tail: float
    method: str

    @property
    def ordered(self) -> bool:
        return self.s_tail <= self.s_head + self.hw_head + self.hw_tail


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    ordering_ok: bool
    variations: tuple[float, ...]

    @property
    def max_variation(self) -> float:
        return max(self.variations) if self.variations else 0.0

    def csv_rows(self) -> list[list[object]]:
        dim = len(self.rows[0].nu) if self.rows else 0
        header: list[object] = ["theta", *[f"nu{i + 1}" for i in range(dim)]]
        header += ["s_head", "s_tail", "hw_head", "hw_tail", "method", "ordered"]
        out = [header]
        for row in self.rows:
            out.append(
                [
                    row.theta,
                    *row.nu,
                    row.s_head,
                    row.s_tail,
                    row.hw_head,
                    row.hw_tail,
                    row.method,
                    row.ordered,
                ]
            )
        return out


def circle_directions(count: int) -> list[tuple[float, float]]:
    return [
        (math.cos(2 * math.pi * k / count), math.sin(2 * math.pi * k / count))
        for k in range(count)
    ]


SPEED_METHODS = ("front_tracking", "obstacle_bisection")


def speed_row(
    nu: Sequence[float],
    g: ForcingField,
    params: SchemeParams,
    *,
    method: str = "front_tracking",
    **options: Any,
) -> SweepRow:
    """Head and tail speed for one direction; `T` defaults to 20/m0."""
    direction = unit(nu)
    theta = math.atan2(direction[1], direction[0]) if len(direction) >= 2 else 0.0
    opts = dict(options)
    T = float(opts.pop("T", 20.0 / g.m0))
    if method == "front_tracking":
        head, tail = estimate_speed_front_tracking(direction, g, params, T, **opts)
    elif method == "obstacle_bisection":
        head = estimate_speed_obstacle_bisection(direction, g, "head", params, T=T, **opts)
        tail = estimate_speed_obstacle_bisection(direction, g, "tail", params, T=T, **opts)
    else:
        raise ParameterError(f"unknown speed method {method!r}")
    return SweepRow(
        theta,
        tuple(float(v) for v in direction),
        head.value,
        tail.value,
        head.half_width,
        tail.half_width,
        method,
    )


def sweep_directions(
    g: ForcingField,
    directions: Sequence[Sequence[float]],
    params: SchemeParams,
    *,
    method: str = "front_tracking",
    workers: int = 1,
    **options: Any,
) -> SweepTable:
    """Head/tail per direction; probes run in parallel and are merged by direction index."""
    if len(directions) < 3:
        raise ParameterError(f"a sweep needs at least 3 directions, got {len(directions)}")
    if method not in SPEED_METHODS:
        raise ParameterError(f"unknown speed method {method!r}")
    inner = replace(params, workers=1)

    def run(nu: Sequence[float]) -> SweepRow:
        return speed_row(nu, g, inner, method=method, **options)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(run, directions))
    variations = []
    for a, b in zip(rows, rows[1:]):
        step = float(np.linalg.norm(np.subtract(a.nu, b.nu)))
        if step > 0:
            variations.append(max(abs(a.s_head - b.s_head), abs(a.s_tail - b.s_tail)) / step)
    ordering_ok = all(row.ordered for row in rows)
    log(
        logger,
        logging.INFO,
        "sweep_done",
        directions=len(rows),
        ordering_ok=ordering_ok,
        max_variation=max(variations) if variations else 0.0,
    )
    return SweepTable(tuple(rows), ordering_ok, tuple(variations))


@dataclass(frozen=True)
class FingeringReport:
    times: tuple[float, ...]
    spreads: tuple[float, ...]
    rate: float
    nondecreasing: bool
    max_drop: float


def fingering_metric(
    track: FrontTrack,
    *,
    window: tuple[float, float] | None = None,
    jitter: float = 0.0,
) -> FingeringReport:
    """spread(t) = head(t) − tail(t), with a line fit over `window` (default: second half)."""
    times = np.asarray(track.times)
    spreads = track.spreads
    if len(times) < 2:
        raise ParameterError("fingering metric needs at least two samples")
    lo, hi = window if window is not None else (times[-1] / 2, times[-1])
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12) & np.isfinite(spreads)
    rate = _fit(times[sel], spreads[sel])[0] if sel.sum() >= 2 else math.nan
    finite = spreads[np.isfinite(spreads)]
    running = np.maximum.accumulate(finite) if finite.size else finite
    drop = float(np.max(running - finite)) if finite.size else 0.0
    return FingeringReport(
        tuple(float(t) for t in times),
        tuple(float(s) for s in spreads),
        float(rate),
        drop <= jitter,
        drop,
    )


@dataclass(frozen=True)
class EnvelopeReport:
    ok: bool
    max_excess: float
    worst_point: tuple[float, ...] | None
    worst_time: float
    tolerance: float


HeadTable = Union[Callable[[np.ndarray], float], Mapping[tuple[float, ...], float]]


def _head_lookup(head: HeadTable, nu: np.ndarray) -> float:
    if callable(head):
        return float(head(nu))
    key = tuple(float(v) for v in nu)
    if key in head:
        return float(head[key])
    for k, v in head.items():
        if np.allclose(unit(k), nu):
            return float(v)
    raise ParameterError(f"no head speed for direction {key}")


def check_envelope(
    frames: Sequence[LevelSetField],
    anchors: Sequence[tuple[Sequence[float], Sequence[float]]],
    head: HeadTable,
    *,
    tolerance: float | None = None,
    edge_margin: float = 0.0,
) -> EnvelopeReport:
    """Zero-superlevel sets must stay in ∩ {(x − x_i)·ν_i <= s̄(ν_i)·t}, dilated by 3·dx."""
    if not frames:
        raise ParameterError("check_envelope needs at least one frame")
    grid = frames[0].grid
    coords = grid.coords()
    tol = tolerance if tolerance is not None else 3 * grid.dx
    lo = coords.reshape(-1, grid.dim).min(axis=0) + edge_margin
    hi = coords.reshape(-1, grid.dim).max(axis=0) - edge_margin
    inner = np.all((coords >= lo - 1e-12) & (coords <= hi + 1e-12), axis=-1)
    planes = [(np.asarray(x, dtype=float), unit(v)) for x, v in anchors]
    speeds = [_head_lookup(head, v) for _, v in planes]

    def excess(frame: LevelSetField) -> np.ndarray:
        pts = frame.grid.coords()
        out = np.full(frame.grid.shape, -np.inf)
        for (x, v), s in zip(planes, speeds):
            out = np.maximum(out, (pts - x) @ v - s * frame.time)
        return out

    first = frames[0]
    e0 = excess(first)[(first.values >= 0) & inner]
    if e0.size and float(e0.max()) > 1e-9:
        raise ParameterError(
            f"initial zero-superlevel set leaves the envelope by {float(e0.max()):.6g}"
        )
    worst, worst_pt, worst_t = -math.inf, None, 0.0
    for frame in frames:
        mask = (frame.values >= 0) & inner
        if not mask.any():
            continue
        e = excess(frame)
        e = np.where(mask, e, -np.inf)
        idx = np.unravel_index(int(np.argmax(e)), e.shape)
        if e[idx] > worst:
            worst = float(e[idx])
            worst_pt = tuple(float(v) for v in frame.grid.coords()[idx])
            worst_t = frame.time
    ok = worst <= tol
    if not ok:
        log(logger, logging.WARNING, "envelope_violated", excess=worst, point=worst_pt, t=worst_t)
    return EnvelopeReport(ok, worst, worst_pt, worst_t, tol)


@dataclass(frozen=True)
class ScaleReport:
    unit_scale: tuple[SpeedEstimate, SpeedEstimate]
    half_scale: tuple[SpeedEstimate, SpeedEstimate]
    ok: bool


def scale_consistency(
    nu: Sequence[float],
    g: ForcingField,
    params: SchemeParams,
    T: float,
    **options: Any,
) -> ScaleReport:
    """Front-tracking estimates at ε = 1 and ε = 1/2 (horizon T/2) must agree within twice the
    combined half-widths."""
    one = estimate_speed_front_tracking(nu, g, params, T, eps=1.0, **options)
    half = estimate_speed_front_tracking(nu, g, params, T / 2, eps=0.5, **options)
    ok = all(
        abs(a.value - b.value) <= 2 * (a.half_width + b.half_width) for a, b in zip(one, half)
    )
    return ScaleReport(one, half, ok)
