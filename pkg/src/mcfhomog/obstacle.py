from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mcfhomog.discrepancy import comparison_constants, lattice_min_shift
from mcfhomog.errors import GeometryError, ParameterError, PreconditionError, ResourceError
from mcfhomog.forcing import ForcingField
from mcfhomog.geometry import Cylinder, unit
from mcfhomog.levelset import (
    Grid,
    LevelSetField,
    SchemeParams,
    SnapshotRecorder,
    cfl_dt,
    solve,
)
from mcfhomog.logging_json import get_logger, log

logger = get_logger("obstacle")

DEFAULT_MAX_CELLS = 4_000_000


@dataclass(frozen=True)
class Obstacle:
    """O_e(x, t) = x·q + s·t·|q|; its zero set is the plane x·ν = s·t."""

    nu: tuple[float, ...]
    q: tuple[float, ...]
    s: float

    @property
    def qnorm(self) -> float:
        return float(np.linalg.norm(self.q))

    def value(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.q) + self.s * t * self.qnorm


def obstacle_value(e: Obstacle, x: Sequence[float] | np.ndarray, t: float) -> float | np.ndarray:
    out = e.value(np.asarray(x, dtype=float), t)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ObstacleProblem:
    nu: tuple[float, ...]
    R: float
    Rdot: float
    q: tuple[float, ...]
    s: float

    def __post_init__(self) -> None:
        nu = np.asarray(self.nu, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if abs(float(np.linalg.norm(nu)) - 1.0) > 1e-9:
            raise ParameterError(f"obstacle direction must be a unit vector, got {self.nu}")
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ParameterError("obstacle slope q must be nonzero")
        if float(np.max(np.abs(nu + q / qn))) > 1e-9:
            raise ParameterError("obstacle direction must satisfy nu = -q/|q|")
        if not (self.R > 0):
            raise GeometryError(f"cylinder radius must be positive, got R={self.R}")

    @classmethod
    def create(
        cls, nu: Sequence[float], R: float, s: float, *, Rdot: float = 0.0, qnorm: float = 1.0
    ) -> ObstacleProblem:
        v = unit(nu)
        return cls(
            nu=tuple(float(x) for x in v),
            R=float(R),
            Rdot=float(Rdot),
            q=tuple(float(-qnorm * x) for x in v),
            s=float(s),
        )

    @property
    def obstacle(self) -> Obstacle:
        return Obstacle(self.nu, self.q, self.s)

    @property
    def cylinder(self) -> Cylinder:
        return Cylinder(self.nu, (0.0,) * len(self.nu), self.R, self.Rdot)

    @property
    def qnorm(self) -> float:
        return float(np.linalg.norm(self.q))


def sub_barrier(p: ObstacleProblem, m0: float, x: np.ndarray, t: float) -> np.ndarray:
    """Subsolution V̄_a that meets O_e on the lateral boundary of C_d (Rdot >= 0)."""
    s, Rd = p.s, max(p.Rdot, 0.0)
    denom = Rd * Rd + s * s
    sigma = (m0 * s + Rd * math.sqrt(max(denom - m0 * m0, 0.0))) / denom
    sigma = min(sigma, 1.0)
    nu = np.asarray(p.nu)
    along = x @ nu
    lateral = p.cylinder.lateral(x)
    tilt = math.sqrt(max(1.0 - sigma * sigma, 0.0))
    return -(p.qnorm / sigma) * (sigma * along - tilt * (lateral - p.R) - m0 * t)


def super_barrier(p: ObstacleProblem, M0: float, x: np.ndarray, t: float) -> np.ndarray | None:
    """Supersolution V̲_a, or None when Rdot < sqrt(M0² − s²) leaves it undefined."""
    s, Rd = p.s, p.Rdot
    if Rd < math.sqrt(max(M0 * M0 - s * s, 0.0)):
        return None
    speed = math.sqrt(Rd * Rd + s * s)
    sigma = s / speed
    nu = np.asarray(p.nu)
    along = x @ nu
    lateral = p.cylinder.lateral(x)
    tilt = math.sqrt(max(1.0 - sigma * sigma, 0.0))
    return -(p.qnorm / sigma) * (sigma * along + tilt * (lateral - p.R) - speed * t)


@dataclass(frozen=True)
class ObstacleRow:
    t: float
    axis_gap: float
    max_gap: float
    min_gap: float
    touching_fraction: float


@dataclass
class ObstacleRun:
    """Snapshots of a projected obstacle evolution.

    Gaps are oriented so they are nonnegative: O_e − u for sub runs, u − O_e for super runs.
    """

    problem: ObstacleProblem
    kind: str
    grid: Grid
    m0: float
    M0: float
    T: float
    interest: np.ndarray
    times: list[float] = field(default_factory=list)
    frames: list[np.ndarray] = field(default_factory=list)
    frozen: list[np.ndarray] = field(default_factory=list)
    barrier_fallback: bool = False
    barrier_gap: float = 0.0
    eps: float = 1.0

    @property
    def dx(self) -> float:
        return self.grid.dx

    def obstacle_at(self, t: float) -> np.ndarray:
        return self.problem.obstacle.value(self.grid.coords(), t)

    def state(self, i: int) -> LevelSetField:
        return LevelSetField(self.grid, self.frames[i], self.times[i], self.eps)

    def active(self, i: int, inset: float = 0.0) -> np.ndarray:
        """Nodes inside the cylinder at snapshot i, at least `inset` from its wall, not frozen."""
        t = self.times[i]
        cyl = self.problem.cylinder
        lateral = cyl.lateral(self.grid.coords())
        return (lateral < cyl.radius(t) - inset) & ~self.frozen[i]

    def gap(self, i: int) -> np.ndarray:
        diff = self.obstacle_at(self.times[i]) - self.frames[i]
        return diff if self.kind == "sub" else -diff

    def index_of(self, t: float) -> int:
        times = np.asarray(self.times)
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise PreconditionError(f"t={t} is not a snapshot time of this run")
        return i

    def rows(self) -> list[ObstacleRow]:
        out = []
        coords = self.grid.coords()
        nu = np.asarray(self.problem.nu)
        for i, t in enumerate(self.times):
            gap = self.gap(i)
            inner = self.active(i, inset=2 * self.dx) & self.interest
            axis_point = self.problem.s * t * nu
            d = np.sum((coords - axis_point) ** 2, axis=-1)
            axis_idx = np.unravel_index(int(np.argmin(d)), d.shape)
            sel = gap[inner]
            if sel.size:
                touching = float(np.mean(np.abs(sel) < self.dx))
                mx, mn = float(sel.max()), float(sel.min())
            else:
                touching, mx, mn = math.nan, math.nan, math.nan
            out.append(ObstacleRow(t, float(gap[axis_idx]), mx, mn, touching))
        return out


def obstacle_grid(
    p: ObstacleProblem,
    T: float,
    dx: float,
    M0: float,
    *,
    back_margin: float | None = None,
    s_slab: float | None = None,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> tuple[Grid, np.ndarray]:
    """Clamped box around the cylinder piece −1 − back ≤ x·ν ≤ sT + 1, plus the slab mask.

    The back margin absorbs errors from the rear cap, which travel forward at most at
    speed 2·M0.
    """
    nu = np.asarray(p.nu)
    s = p.s if s_slab is None else s_slab
    back = back_margin if back_margin is not None else 2 * M0 * T + 1 + 8 * dx
    lo_along = -1.0 - back
    hi_along = s * T + 1.0 + 8 * dx
    rho = max(p.R, p.R + p.Rdot * T) + 4 * dx
    start, cells = [], []
    for i in range(len(nu)):
        a, c = lo_along * nu[i], hi_along * nu[i]
        w = rho * math.sqrt(max(0.0, 1.0 - nu[i] * nu[i]))
        lo_i = min(a, c) - w - 2 * dx
        hi_i = max(a, c) + w + 2 * dx
        first = math.floor(lo_i / dx)
        start.append(first)
        cells.append(max(4, math.ceil(hi_i / dx) - first + 1))
    total = math.prod(cells)
    if total > max_cells:
        raise ResourceError(
            f"obstacle grid needs {total} cells, budget is {max_cells}",
            required=total,
            available=max_cells,
        )
    grid = Grid(shape=tuple(cells), dx=dx, origin_index=tuple(start))
    along = grid.coords() @ nu
    interest = (along >= -1.0) & (along <= s * T + 1.0)
    return grid, interest


def _check_covers(grid: Grid, p: ObstacleProblem, T: float) -> None:
    coords = grid.coords()
    lo, hi = coords.reshape(-1, grid.dim).min(axis=0), coords.reshape(-1, grid.dim).max(axis=0)
    nu = np.asarray(p.nu)
    rho = max(p.R, p.R + p.Rdot * T)
    for i in range(grid.dim):
        w = rho * math.sqrt(max(0.0, 1.0 - nu[i] * nu[i]))
        need_lo = min(-nu[i], (p.s * T + 1) * nu[i]) - w
        need_hi = max(-nu[i], (p.s * T + 1) * nu[i]) + w
        if need_lo < lo[i] - 1e-12 or need_hi > hi[i] + 1e-12:
            raise GeometryError(
                f"cylinder of radius {rho:.6g} leaves the grid along axis {i} "
                f"(needs [{need_lo:.6g}, {need_hi:.6g}], grid [{lo[i]:.6g}, {hi[i]:.6g}])"
            )


class _Projector:
    """Post-step hook: projection onto the obstacle, with nodes outside the cylinder clamped to
    O_e, which coincides with the barrier data on the cylinder boundary. On a shrinking
    cylinder a node that leaves keeps its last value."""

    def __init__(self, p: ObstacleProblem, kind: str, grid: Grid, initial: np.ndarray) -> None:
        self.p = p
        self.kind = kind
        self.base = grid.coords() @ np.asarray(p.q)
        self.lateral = p.cylinder.lateral(grid.coords())
        self.ever_inside = self.lateral < p.R
        self.frozen = np.zeros(grid.shape, dtype=bool)
        self.frozen_values = np.zeros(grid.shape)
        self.prev = initial.copy()

    def obstacle(self, t: float) -> np.ndarray:
        return self.base + self.p.s * t * self.p.qnorm

    def __call__(self, state: LevelSetField) -> LevelSetField:
        t = state.time
        O = self.obstacle(t)
        inside = self.lateral < self.p.cylinder.radius(t)
        if self.kind == "sub":
            u = np.minimum(state.values, O)
        else:
            u = np.maximum(state.values, O)
        if self.p.Rdot < 0:
            leaving = self.ever_inside & ~inside & ~self.frozen
            self.frozen_values[leaving] = self.prev[leaving]
            self.frozen |= leaving
            u = np.where(self.frozen, self.frozen_values, u)
            u = np.where(~inside & ~self.ever_inside, O, u)
        else:
            self.ever_inside |= inside
            u = np.where(inside, u, O)
        self.prev = u
        return state.with_values(u)


def _evolve(
    kind: str,
    p: ObstacleProblem,
    g: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    dx: float,
    record_every: float | None = None,
    eps: float = 1.0,
    back_margin: float | None = None,
    s_slab: float | None = None,
    grid: Grid | None = None,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> ObstacleRun:
    if not (T > 0):
        raise ParameterError(f"obstacle horizon must be positive, got T={T}")
    p.cylinder.check_horizon(T)
    if grid is None:
        grid, interest = obstacle_grid(
            p, T, dx, g.M0, back_margin=back_margin, s_slab=s_slab, max_cells=max_cells
        )
    else:
        _check_covers(grid, p, T)
        along = grid.coords() @ np.asarray(p.nu)
        interest = (along >= -1.0) & (along <= p.s * T + 1.0)
    every = record_every if record_every is not None else T / 8
    base_dt = cfl_dt(grid, g.M0, eps, params.cfl_factor)
    dt = every / math.ceil(every / base_dt - 1e-9)

    coords = grid.coords()
    u0 = p.obstacle.value(coords, 0.0)
    state = LevelSetField(grid, u0, 0.0, eps)
    projector = _Projector(p, kind, grid, u0)
    recorder = SnapshotRecorder(every)
    frozen_masks: list[np.ndarray] = []

    def record_frozen(s: LevelSetField) -> None:
        if len(frozen_masks) < len(recorder.times):
            frozen_masks.append(projector.frozen.copy())

    fallback = False
    if kind == "super" and super_barrier(p, g.M0, coords[:1], 0.0) is None:
        fallback = True
        log(
            logger,
            logging.WARNING,
            "barrier_fallback",
            s=p.s,
            Rdot=p.Rdot,
            required=math.sqrt(max(g.M0**2 - p.s**2, 0.0)),
        )
    log(logger, logging.INFO, "obstacle_start", kind=kind, shape=grid.shape, s=p.s, R=p.R, T=T)
    solve(
        state,
        g,
        params,
        T,
        callbacks=[recorder, record_frozen],
        dt=dt,
        post_step=projector,
        track_window=False,
    )
    run = ObstacleRun(
        problem=p,
        kind=kind,
        grid=grid,
        m0=g.m0,
        M0=g.M0,
        T=T,
        interest=interest,
        times=recorder.times,
        frames=[f.values for f in recorder.frames],
        frozen=frozen_masks,
        barrier_fallback=fallback,
        eps=eps,
    )
    run.barrier_gap = _barrier_gap(run)
    log(logger, logging.INFO, "obstacle_done", kind=kind, snapshots=len(run.times))
    return run


def _barrier_gap(run: ObstacleRun) -> float:
    """max(V̄ − Ū) (sub) or max(U̲ − V̲) (super) over inner nodes; positive means the barrier
    is not respected."""
    p = run.problem
    coords = run.grid.coords()
    worst = -math.inf
    for i, t in enumerate(run.times):
        mask = run.active(i, inset=2 * run.dx) & run.interest
        if not mask.any():
            continue
        if run.kind == "sub":
            if p.Rdot < 0:
                return math.nan
            v = sub_barrier(p, run.m0, coords[mask], t)
            worst = max(worst, float(np.max(v - run.frames[i][mask])))
        else:
            v = super_barrier(p, run.M0, coords[mask], t)
            if v is None:
                return math.nan
            worst = max(worst, float(np.max(run.frames[i][mask] - v)))
    return worst


def evolve_sub(
    p: ObstacleProblem, g: ForcingField, params: SchemeParams, T: float, **kwargs: object
) -> ObstacleRun:
    """Projected evolution u ← min(u, O_e) from u = O_e; approximates Ū_a."""
    return _evolve("sub", p, g, params, T, **kwargs)  # type: ignore[arg-type]


def evolve_super(
    p: ObstacleProblem, g: ForcingField, params: SchemeParams, T: float, **kwargs: object
) -> ObstacleRun:
    """Projected evolution u ← max(u, O_e) from u = O_e; approximates U̲_a."""
    return _evolve("super", p, g, params, T, **kwargs)  # type: ignore[arg-type]


@dataclass(frozen=True)
class CapSensitivity:
    margins: tuple[float, float]
    max_difference: float
    compared_nodes: int


def _lattice_overlap(a: Grid, b: Grid) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    sa, sb = [], []
    for i in range(a.dim):
        lo = max(a.origin_index[i], b.origin_index[i])
        hi = min(a.origin_index[i] + a.shape[i], b.origin_index[i] + b.shape[i])
        if hi <= lo:
            raise GeometryError("grids do not overlap")
        sa.append(slice(lo - a.origin_index[i], hi - a.origin_index[i]))
        sb.append(slice(lo - b.origin_index[i], hi - b.origin_index[i]))
    return tuple(sa), tuple(sb)


def cap_sensitivity(
    p: ObstacleProblem,
    g: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    dx: float,
    kind: str = "sub",
    margins: tuple[float, float] | None = None,
) -> CapSensitivity:
    """Compare final snapshots for two rear-cap margins on the shared slab nodes."""
    if margins is None:
        full = 2 * g.M0 * T + 1 + 8 * dx
        margins = (full / 2, full)
    runs = [
        _evolve(kind, p, g, params, T, dx=dx, record_every=T, back_margin=m) for m in margins
    ]
    sa, sb = _lattice_overlap(runs[0].grid, runs[1].grid)
    mask = (runs[0].interest[sa] & runs[0].active(-1, 2 * dx)[sa]) & runs[1].interest[sb]
    diff = np.abs(runs[0].frames[-1][sa] - runs[1].frames[-1][sb])[mask]
    return CapSensitivity(
        (float(margins[0]), float(margins[1])),
        float(diff.max()) if diff.size else math.nan,
        int(diff.size),
    )


BIRKHOFF_VARIANTS = (
    "expanding_sub",
    "expanding_super",
    "static_sub",
    "static_super",
    "shrinking_sub",
    "shrinking_super",
)


@dataclass(frozen=True)
class BirkhoffReport:
    variant: str
    dz: tuple[float, ...]
    dt: float
    max_violation: float
    compared_nodes: int
    times_checked: int
    ok: bool
    tolerance: float


def _lateral_norm(dz: np.ndarray, nu: np.ndarray) -> float:
    return float(np.linalg.norm(dz - (dz @ nu) * nu))


def _check_admissible(
    variant: str,
    p: ObstacleProblem,
    dz: np.ndarray,
    dt: float,
    m0: float,
    M0: float,
    R_pair: tuple[float, float] | None,
) -> None:
    nu = np.asarray(p.nu)
    along = float(dz @ nu)
    lat = _lateral_norm(dz, nu)
    s = p.s
    tol = 1e-12

    def need(cond: bool, text: str) -> None:
        if not cond:
            raise PreconditionError(f"{variant}: inadmissible shift, requires {text}")

    need(dt >= 0, "dt >= 0")
    if variant.startswith("expanding"):
        need(p.Rdot >= 0, "Rdot >= 0 (expanding domain)")
        need(p.Rdot * dt >= lat - tol, "Rdot*dt >= |dz - (dz.nu)nu|")
        if variant.endswith("sub"):
            need(0 < s * dt <= along + tol, "0 < s*dt <= dz.nu")
        else:
            need(s * dt >= along - tol and along > 0, "s*dt >= dz.nu > 0")
    elif variant.startswith("static"):
        need(p.Rdot == 0, "Rdot = 0 (static domain)")
        need(R_pair is not None and R_pair[1] > R_pair[0], "a second run with R2 > R1")
        assert R_pair is not None
        need(R_pair[1] - R_pair[0] >= lat - tol, "R2 - R1 >= |dz - (dz.nu)nu|")
        if variant.endswith("sub"):
            need(0 < s * dt <= along + tol, "0 < s*dt <= dz.nu")
        else:
            need(s * dt >= along - tol and along > 0, "s*dt >= dz.nu > 0")
    else:
        need(p.Rdot < 0, "Rdot < 0 (shrinking domain)")
        need(-p.Rdot * dt >= lat - tol, "(-Rdot)*dt >= |dz - (dz.nu)nu|")
        if variant.endswith("sub"):
            need(m0 * dt >= along - tol and along > 0, "m0*dt >= dz.nu > 0")
        else:
            need(along >= M0 * dt - tol and M0 * dt >= 0, "dz.nu >= M0*dt >= 0")


def _cells(dz: np.ndarray, dx: float) -> np.ndarray:
    c = dz / dx
    if np.any(np.abs(c - np.rint(c)) > 1e-9):
        raise PreconditionError(f"shift {tuple(dz)} is not a multiple of the grid spacing {dx}")
    return np.rint(c).astype(int)


def _shifted_pair(
    a: np.ndarray, b: np.ndarray, cells: np.ndarray, offset: np.ndarray
) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    """Slices so that a[sa] at node x pairs with b[sb] at node x + cells (in b's indexing,
    where b's index = a's index − offset)."""
    sa, sb = [], []
    for i in range(a.ndim):
        shift = int(cells[i]) - int(offset[i])
        lo = max(0, -shift)
        hi = min(a.shape[i], b.shape[i] - shift)
        if hi <= lo:
            return (), ()
        sa.append(slice(lo, hi))
        sb.append(slice(lo + shift, hi + shift))
    return tuple(sa), tuple(sb)


def check_birkhoff(
    run: ObstacleRun,
    dz: Sequence[float],
    dt: float,
    variant: str,
    *,
    other: ObstacleRun | None = None,
    tolerance: float | None = None,
) -> BirkhoffReport:
    """Evaluate the shift-monotonicity inequality of `variant` on all common snapshot nodes.

    expanding_sub:   Ū(x+Δz, t+Δt) ≤ Ū(x, t)
    expanding_super: U̲(x, t) ≤ U̲(x+Δz, t+Δt)
    static_sub:      Ū_{R2}(x+Δz, t+Δt) ≤ Ū_{R1}(x, t)     (other = the R2 run)
    static_super:    U̲_{R1}(x, t) ≤ U̲_{R2}(x+Δz, t+Δt)
    shrinking_sub:   Ū(x−Δz, t) ≤ Ū(x, t+Δt)
    shrinking_super: U̲(x, t+Δt) ≤ U̲(x−Δz, t)
    """
    if variant not in BIRKHOFF_VARIANTS:
        raise ParameterError(f"unknown Birkhoff variant {variant!r}")
    kind = "sub" if variant.endswith("sub") else "super"
    if run.kind != kind:
        raise PreconditionError(f"{variant} needs a {kind} run, got {run.kind}")
    shift = np.asarray(dz, dtype=float)
    p = run.problem
    R_pair = None
    if variant.startswith("static"):
        if other is None or other.kind != kind:
            raise PreconditionError(f"{variant} needs a second {kind} run with a larger radius")
        R_pair = (p.R, other.problem.R)
    _check_admissible(variant, p, shift, dt, run.m0, run.M0, R_pair)
    cells = _cells(shift, run.dx)
    second = other if other is not None else run
    offset = np.asarray(second.grid.origin_index) - np.asarray(run.grid.origin_index)
    tol = tolerance if tolerance is not None else 3 * run.dx * p.qnorm

    worst = -math.inf
    nodes = 0
    checked = 0
    for i, t in enumerate(run.times):
        try:
            j = second.index_of(t + dt)
        except PreconditionError:
            continue
        # shrinking variants read this as x − Δz at t (first) against x at t + Δt (second)
        sa, sb = _shifted_pair(run.frames[i], second.frames[j], cells, offset)
        early, late = i, j
        if not sa:
            continue
        inset = 2 * run.dx
        mask = (
            (run.active(early, inset) & run.interest)[sa]
            & (second.active(late, inset) & second.interest)[sb]
        )
        if not mask.any():
            continue
        a = run.frames[early][sa][mask]
        b = second.frames[late][sb][mask]
        if variant in ("expanding_sub", "static_sub"):
            viol = b - a
        elif variant in ("expanding_super", "static_super"):
            viol = a - b
        elif variant == "shrinking_sub":
            viol = a - b
        else:
            viol = b - a
        worst = max(worst, float(viol.max()))
        nodes += int(mask.sum())
        checked += 1
    if checked == 0:
        raise PreconditionError(
            f"no snapshot pair (t, t + {dt}) with overlapping active nodes; "
            "record snapshots at a divisor of dt"
        )
    worst = max(worst, 0.0)
    return BirkhoffReport(
        variant, tuple(float(v) for v in shift), float(dt), worst, nodes, checked, worst <= tol, tol
    )


@dataclass(frozen=True)
class LcpReport:
    applicable: bool
    ok: bool
    min_margin: float
    margins: tuple[float, ...]
    times: tuple[float, ...]
    xi0: tuple[int, ...]
    R: float
    Rdot: float
    delta: float
    mode: str
    notes: tuple[str, ...]


def lcp_required_radius(n: int, M0: float, L0: float) -> float:
    return max(6.0, 12.0 * (3 * n + M0 + 27) / L0)


def check_lcp(
    nu: Sequence[float],
    s1: float,
    s2: float,
    g: ForcingField,
    T: float,
    params: SchemeParams,
    *,
    dx: float,
    mode: str = "strict",
    R: float | None = None,
    Rdot: float | None = None,
    negate_shift: bool = False,
    record_every: float | None = None,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> LcpReport:
    """Check Ū_{a2}(x, t) < U̲_{a1}(x − ξ0, t) on the inner cylinder at snapshot times."""
    v = unit(nu)
    n = len(v)
    direction = tuple(float(x) for x in v)
    if g.is_constant:
        return LcpReport(
            False, False, math.nan, (), (), (0,) * n, 0.0, 0.0, 0.0, mode,
            ("constant forcing forces s1 = s2; no admissible pair",),
        )
    if not (g.m0 <= s1 < s2 <= g.M0):
        raise PreconditionError(f"need m0 <= s1 < s2 <= M0 (got {s1}, {s2}; [{g.m0}, {g.M0}])")
    if not (T < 1.0 / (s2 - s1)):
        raise PreconditionError(f"need T < 1/(s2 - s1) = {1.0 / (s2 - s1):.6g}, got T={T}")
    xi0 = np.asarray(lattice_min_shift(v, 1.0))
    if negate_shift:
        xi0 = -xi0
    delta = comparison_constants(T, g.m0, g.M0, g.L0, n).delta_T / 2
    notes: list[str] = []
    R_req = lcp_required_radius(n, g.M0, g.L0)
    if mode == "strict":
        R_use = R_req
        Rdot_use = 4 * g.M0 * R_use / delta
    elif mode == "relaxed":
        if R is None:
            raise ParameterError("relaxed LCP check needs an explicit R")
        R_use = float(R)
        Rdot_use = float(Rdot) if Rdot is not None else 0.0
        if R_use < R_req:
            notes.append(f"R={R_use:.6g} below the required {R_req:.6g}")
        if Rdot_use != 4 * g.M0 * R_use / delta:
            expected = 4 * g.M0 * R_use / delta
            notes.append(f"Rdot={Rdot_use:.6g} instead of 4*M0*R/delta={expected:.6g}")
    else:
        raise ParameterError(f"unknown LCP mode {mode!r}")

    sub_p = ObstacleProblem.create(direction, R_use, s2, Rdot=Rdot_use)
    sup_p = ObstacleProblem.create(direction, R_use, s1, Rdot=Rdot_use)
    grid, interest = obstacle_grid(sub_p, T, dx, g.M0, max_cells=max_cells)
    every = record_every if record_every is not None else T / 4
    sub = evolve_sub(sub_p, g, params, T, dx=dx, grid=grid, record_every=every)
    sup = evolve_super(sup_p, g, params, T, dx=dx, grid=grid, record_every=every)

    cells = _cells(xi0.astype(float), dx)
    margins = []
    checked: list[float] = []
    for i, t in enumerate(sub.times):
        # U̲(x − ξ0) pairs node x in sub with node x − ξ0 in sup
        sa, sb = _shifted_pair(sub.frames[i], sup.frames[i], -cells, np.zeros(n, dtype=int))
        if not sa:
            continue
        inner = sub.active(i, inset=0.0) & interest
        lateral = sub_p.cylinder.lateral(grid.coords())
        inner &= lateral < sub_p.cylinder.radius(t) / 2
        mask = inner[sa] & (interest & sup.active(i, 0.0))[sb]
        if not mask.any():
            continue
        margin = sup.frames[i][sb][mask] - sub.frames[i][sa][mask]
        margins.append(float(margin.min()))
        checked.append(t)
    min_margin = min(margins) if margins else math.nan
    ok = bool(margins) and min_margin > 0
    log(
        logger,
        logging.INFO,
        "lcp_checked",
        nu=direction,
        s1=s1,
        s2=s2,
        min_margin=min_margin,
        ok=ok,
        mode=mode,
        negated=negate_shift,
    )
    return LcpReport(
        True,
        ok,
        min_margin,
        tuple(margins),
        tuple(checked),
        tuple(int(x) for x in xi0),
        R_use,
        Rdot_use,
        delta,
        mode,
        tuple(notes),
    )
