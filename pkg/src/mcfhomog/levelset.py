from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from mcfhomog.errors import BudgetExceeded, CflViolation, NumericBlowup, ParameterError
from mcfhomog.forcing import ForcingField
from mcfhomog.geometry import Cylinder, unit
from mcfhomog.logging_json import get_logger, log
from mcfhomog.stencil import (
    CLAMPED,
    PERIODIC,
    first_bad_index,
    interpolate,
    map_rows,
    neighbor,
    pad,
    unit_offset,
)

logger = get_logger("levelset")

TOPOLOGIES = (CLAMPED, PERIODIC)


@dataclass(frozen=True)
class Grid:
    """Uniform grid whose node i sits at (origin_index + i + window_offset) * dx.

    Integer origins and offsets keep every node on the lattice dx·Z^n, so periodic
    forcing is sampled identically before and after window shifts.
    """

    shape: tuple[int, ...]
    dx: float
    origin_index: tuple[int, ...] | None = None
    lateral_topology: str = CLAMPED
    window_offset: tuple[int, ...] | None = None
    axis: int | None = None
    nu: tuple[float, ...] | None = None
    twist: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        dim = len(self.shape)
        if dim not in (2, 3):
            raise ParameterError(f"grids must be 2-D or 3-D, got shape {self.shape}")
        if not (self.dx > 0):
            raise ParameterError(f"grid spacing must be positive, got dx={self.dx}")
        if min(self.shape) < 4:
            raise ParameterError(f"every grid axis needs at least 4 nodes, got {self.shape}")
        if self.lateral_topology not in TOPOLOGIES:
            raise ParameterError(f"unknown lateral topology {self.lateral_topology!r}")
        if self.lateral_topology == PERIODIC and self.axis is None:
            raise ParameterError("periodic lateral topology needs a propagation axis")
        zeros = (0,) * dim
        object.__setattr__(self, "origin_index", tuple(self.origin_index or zeros))
        object.__setattr__(self, "window_offset", tuple(self.window_offset or zeros))
        object.__setattr__(self, "twist", tuple(self.twist or (0.0,) * dim))
        if len(self.origin_index) != dim or len(self.window_offset) != dim:
            raise ParameterError("origin_index and window_offset must match the grid dimension")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def origin(self) -> np.ndarray:
        return (np.asarray(self.origin_index) + np.asarray(self.window_offset)) * self.dx

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def topology(self) -> tuple[str, ...]:
        if self.lateral_topology == PERIODIC:
            return tuple(CLAMPED if j == self.axis else PERIODIC for j in range(self.dim))
        return (CLAMPED,) * self.dim

    def periodic_axes(self) -> list[int]:
        return [j for j, t in enumerate(self.topology()) if t == PERIODIC]

    def lattice_index(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) + self.origin_index[axis] + self.window_offset[axis]

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.lattice_index(axis) * self.dx

    def coords(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis_coords(i) for i in range(self.dim)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def node(self, index: Sequence[int]) -> np.ndarray:
        return np.array([self.axis_coords(i)[index[i]] for i in range(self.dim)])

    def shifted(self, cells: int) -> Grid:
        if self.axis is None:
            raise ParameterError("window shifts need a propagation axis")
        offset = list(self.window_offset)
        offset[self.axis] += int(cells)
        return replace(self, window_offset=tuple(offset))


@dataclass(frozen=True)
class SchemeParams:
    cfl_factor: float = 0.5
    grad_reg: float = 1e-3
    max_steps: int = 1_000_000
    workers: int = 1

    def __post_init__(self) -> None:
        if not (0 < self.cfl_factor <= 1):
            raise ParameterError(f"cfl_factor must lie in (0, 1], got {self.cfl_factor}")
        if not (self.grad_reg > 0):
            raise ParameterError(f"grad_reg must be positive, got {self.grad_reg}")
        if self.max_steps < 1:
            raise ParameterError("max_steps must be >= 1")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    def check_grid(self, grid: Grid) -> None:
        if self.grad_reg > grid.dx:
            raise ParameterError(
                f"grad_reg={self.grad_reg} must not exceed the grid spacing dx={grid.dx}"
            )


@dataclass(frozen=True)
class LevelSetField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0
    eps: float = 1.0

    def __post_init__(self) -> None:
        if tuple(self.values.shape) != tuple(self.grid.shape):
            raise ParameterError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not (0 < self.eps <= 1):
            raise ParameterError(f"eps must lie in (0, 1], got {self.eps}")

    def with_values(self, values: np.ndarray, time: float | None = None) -> LevelSetField:
        return LevelSetField(self.grid, values, self.time if time is None else time, self.eps)


@dataclass(frozen=True)
class Front:
    points: np.ndarray
    head: float
    tail: float
    empty: bool = False

    @property
    def spread(self) -> float:
        return self.head - self.tail


def cfl_dt(grid: Grid, M0: float, eps: float, cfl_factor: float) -> float:
    n = grid.dim
    bound = grid.dx / (n * M0)
    if eps > 0:
        bound = min(bound, grid.dx * grid.dx / (2 * n * eps))
    return cfl_factor * bound


def sample_forcing(grid: Grid, g: ForcingField, eps: float = 1.0) -> np.ndarray:
    """g(x/eps) at the grid nodes.

    When eps/dx is an integer P the field is tabulated on the lattice k/P and looked up by
    node index mod P, which is exact under lattice translations and window shifts.
    """
    if g.dim != grid.dim:
        raise ParameterError(f"forcing dim {g.dim} does not match grid dim {grid.dim}")
    ratio = eps / grid.dx
    P = round(ratio)
    if P >= 1 and abs(ratio - P) < 1e-9:
        axes = [np.arange(P) / P] * grid.dim
        table = g(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))
        idx = [np.mod(grid.lattice_index(i), P) for i in range(grid.dim)]
        return table[np.ix_(*idx)]
    return g(grid.coords() / eps)


def curvature_reach(grid: Grid, eps: float) -> int:
    """Cells spanned by the directional second differences: about sqrt(eps/dx), at least 2."""
    k = max(2, round(math.sqrt(max(eps, grid.dx) / grid.dx)))
    periodic = [n for n, topo in zip(grid.shape, grid.topology()) if topo == PERIODIC]
    return min([k, *periodic])


def _frame(phat: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """|p̂|² and an orthonormal frame whose first column is ∓p̂/|p̂| (Householder)."""
    dim = len(phat)
    rho2 = sum(p * p for p in phat)
    rho = np.sqrt(rho2)
    flat = rho == 0
    nhat = [
        np.where(flat, 1.0 if i == 0 else 0.0, p / np.where(flat, 1.0, rho))
        for i, p in enumerate(phat)
    ]
    w = list(nhat)
    w[0] = nhat[0] + np.where(nhat[0] >= 0, 1.0, -1.0)
    wn = sum(x * x for x in w)
    cols = [
        np.stack([(1.0 if j == k else 0.0) - 2.0 * w[j] * w[k] / wn for j in range(dim)], -1)
        for k in range(dim)
    ]
    return rho2, cols


def _curvature_rows(
    padded: np.ndarray,
    a: int,
    b: int,
    *,
    dx: float,
    eps: float,
    delta: float,
    gvals: np.ndarray,
    dt: float,
    reach: int,
) -> np.ndarray:
    # tr(D²u(I − p̂⊗p̂)) = Σ λ_k ∂²u/∂c_k² over the frame, each second difference taken
    # `reach` cells out with interpolated end values, so every neighbour weight is >= 0.
    dim = padded.ndim
    zero = (0,) * dim
    u = neighbor(padded, a, b, zero, reach)
    grads = []
    upwind = np.zeros_like(u)
    for i in range(dim):
        up = neighbor(padded, a, b, unit_offset(dim, i, 1), reach)
        um = neighbor(padded, a, b, unit_offset(dim, i, -1), reach)
        grads.append((up - um) / (2 * dx))
        dm = (u - um) / dx
        dp = (up - u) / dx
        upwind += np.minimum(dm, 0.0) ** 2 + np.maximum(dp, 0.0) ** 2
    norm = np.sqrt(sum(d * d for d in grads) + delta * delta)
    rho2, cols = _frame([d / norm for d in grads])
    h2 = (reach * dx) ** 2
    curv = np.zeros_like(u)
    for k, col in enumerate(cols):
        fwd = interpolate(padded, a, b, reach * col, reach)
        bwd = interpolate(padded, a, b, -reach * col, reach)
        lam = 1.0 - rho2 if k == 0 else 1.0
        curv += lam * (fwd + bwd - 2.0 * u) / h2
    return u + dt * (eps * curv + gvals[a:b] * np.sqrt(upwind))


def step(
    state: LevelSetField,
    g: ForcingField,
    params: SchemeParams,
    dt: float | None = None,
    *,
    gvals: np.ndarray | None = None,
) -> LevelSetField:
    """One explicit Euler step of u_t = eps·tr(D²u(I − p̂⊗p̂)) + g(x/eps)|Du|."""
    grid = state.grid
    params.check_grid(grid)
    bound = cfl_dt(grid, g.M0, state.eps, params.cfl_factor)
    if dt is None:
        dt = bound
    if not (dt > 0) or dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} violates the CFL bound {bound:.6g}")
    if gvals is None:
        gvals = sample_forcing(grid, g, state.eps)
    reach = curvature_reach(grid, state.eps)
    padded = pad(state.values, grid.topology(), grid.twist, reach)

    def rows(a: int, b: int) -> np.ndarray:
        return _curvature_rows(
            padded,
            a,
            b,
            dx=grid.dx,
            eps=state.eps,
            delta=params.grad_reg,
            gvals=gvals,
            dt=dt,
            reach=reach,
        )

    new = map_rows(rows, grid.shape[0], params.workers)
    bad = first_bad_index(new)
    if bad is not None:
        raise NumericBlowup(f"non-finite value at cell {bad} at t={state.time + dt:.6g}", index=bad)
    return LevelSetField(grid, new, state.time + dt, state.eps)


def front_index(values: np.ndarray, axis: int, forward: bool) -> np.ndarray:
    """Per-column count of nodes with u >= 0 along `axis` (mirrored when moving backwards)."""
    count = np.sum(values >= 0, axis=axis)
    return count if forward else values.shape[axis] - count


def shift_window(state: LevelSetField) -> tuple[LevelSetField, int]:
    """Recentre a planar window on the front; exposed rows copy the edge row."""
    grid = state.grid
    if grid.axis is None or grid.nu is None:
        return state, 0
    k = grid.axis
    forward = grid.nu[k] > 0
    idx = front_index(state.values, k, forward)
    centre = grid.shape[k] / 2
    move = float(np.median(idx)) - centre
    if abs(move) < 1.0:
        return state, 0
    cells = int(math.trunc(move))
    n = grid.shape[k]
    cells = max(-(n - 1), min(n - 1, cells))
    src = np.arange(n) + cells
    src = np.clip(src, 0, n - 1)
    values = np.take(state.values, src, axis=k)
    return LevelSetField(grid.shifted(cells), values, state.time, state.eps), cells


Callback = Callable[[LevelSetField], None]
PostStep = Callable[[LevelSetField], LevelSetField]


def solve(
    state: LevelSetField,
    g: ForcingField,
    params: SchemeParams,
    T: float,
    callbacks: Iterable[Callback] = (),
    *,
    dt: float | None = None,
    post_step: PostStep | None = None,
    track_window: bool | None = None,
) -> LevelSetField:
    if not (T > state.time):
        raise ParameterError(f"solve horizon T={T} must exceed the current time {state.time}")
    callbacks = list(callbacks)
    params.check_grid(state.grid)
    bound = cfl_dt(state.grid, g.M0, state.eps, params.cfl_factor)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.6g} violates the CFL bound {bound:.6g}")
    if track_window is None:
        track_window = state.grid.lateral_topology == PERIODIC and state.grid.nu is not None
    log(
        logger,
        logging.DEBUG,
        "solve_start",
        shape=state.grid.shape,
        dx=state.grid.dx,
        dt=dt,
        T=T,
        eps=state.eps,
    )
    gvals = sample_forcing(state.grid, g, state.eps)
    steps = 0
    shifts = 0
    for cb in callbacks:
        cb(state)
    while state.time < T - 1e-12 * max(1.0, T):
        if steps >= params.max_steps:
            raise BudgetExceeded(
                f"max_steps={params.max_steps} reached at t={state.time:.6g} before T={T:.6g}"
            )
        h = min(dt, T - state.time)
        state = step(state, g, params, h, gvals=gvals)
        steps += 1
        if post_step is not None:
            state = post_step(state)
        if track_window:
            state, moved = shift_window(state)
            if moved:
                shifts += 1
                gvals = sample_forcing(state.grid, g, state.eps)
        for cb in callbacks:
            cb(state)
    log(logger, logging.DEBUG, "solve_done", steps=steps, window_shifts=shifts, t=state.time)
    return state


@dataclass(frozen=True)
class RegularizationReport:
    grad_regs: tuple[float, ...]
    max_diffs: tuple[float, ...]

    @property
    def max_diff(self) -> float:
        return max(self.max_diffs)


def grad_reg_sensitivity(
    state: LevelSetField,
    g: ForcingField,
    params: SchemeParams,
    T: float,
    *,
    factors: Sequence[float] = (1.0, 0.1),
) -> RegularizationReport:
    """Re-solve with grad_reg scaled by each factor; diffs are sup-norms against the first run.

    The window stays fixed so every run ends on the same nodes."""
    if not factors:
        raise ParameterError("factors must not be empty")
    regs = tuple(params.grad_reg * float(f) for f in factors)
    finals = [
        solve(state, g, replace(params, grad_reg=reg), T, track_window=False).values
        for reg in regs
    ]
    diffs = tuple(float(np.max(np.abs(u - finals[0]))) for u in finals)
    log(logger, logging.INFO, "grad_reg_sensitivity", grad_regs=regs, max_diffs=diffs)
    return RegularizationReport(regs, diffs)


@dataclass
class SnapshotRecorder:
    """Keeps copies of the field at multiples of `every` (and at the first call)."""

    every: float
    times: list[float] = field(default_factory=list)
    frames: list[LevelSetField] = field(default_factory=list)

    def __call__(self, state: LevelSetField) -> None:
        if self.times and state.time < self.times[-1] + self.every - 1e-9 * self.every:
            return
        self.times.append(state.time)
        self.frames.append(state.with_values(state.values.copy()))


def _crossings(values: np.ndarray, coords: np.ndarray, level: float, dx: float) -> np.ndarray:
    pts = []
    for i in range(values.ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[i] = slice(0, -1)
        hi[i] = slice(1, None)
        a = values[tuple(lo)]
        b = values[tuple(hi)]
        mask = (a >= level) != (b >= level)
        if not mask.any():
            continue
        theta = (a[mask] - level) / (a[mask] - b[mask])
        base = coords[tuple(lo)][mask]
        base[:, i] += theta * dx
        pts.append(base)
    if not pts:
        return np.zeros((0, values.ndim))
    return np.concatenate(pts, axis=0)


def extract_front(
    state: LevelSetField,
    level: float = 0.0,
    cylinder: Cylinder | None = None,
    *,
    nu: Sequence[float] | None = None,
    images: int = 1,
    image_center: Sequence[int] | None = None,
) -> Front:
    """Level crossings along grid edges, with head/tail := sup/inf of x·ν over the cylinder.

    Periodic lateral axes are unfolded into `images` neighbouring copies on each side so that
    a cylinder wider than one period still sees a complete front.
    """
    grid = state.grid
    coords = grid.coords()
    periodic = grid.periodic_axes()
    if periodic and images > 0:
        parts = []
        mid = list(image_center) if image_center is not None else [0] * len(periodic)
        ranges = [range(c - images, c + images + 1) for c in mid]
        for combo in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(periodic), -1).T:
            shift = np.zeros(grid.dim)
            jump = 0.0
            for m, j in zip(combo, periodic):
                shift[j] = m * grid.shape[j] * grid.dx
                jump += m * grid.twist[j]
            found = _crossings(state.values, coords, level - jump, grid.dx)
            parts.append(found + shift)
        points = np.concatenate(parts, axis=0)
    else:
        points = _crossings(state.values, coords, level, grid.dx)
    if cylinder is not None and len(points):
        points = points[cylinder.contains(points, state.time)]
    if nu is not None:
        direction = unit(nu)
    elif cylinder is not None:
        direction = cylinder.axis
    elif grid.nu is not None:
        direction = np.asarray(grid.nu)
    else:
        direction = None
    if len(points) == 0:
        return Front(points, math.nan, math.nan, True)
    if direction is None:
        return Front(points, math.nan, math.nan, False)
    proj = points @ direction
    return Front(points, float(proj.max()), float(proj.min()), False)


@dataclass(frozen=True)
class FrontTrack:
    times: tuple[float, ...]
    heads: tuple[float, ...]
    tails: tuple[float, ...]

    @property
    def spreads(self) -> np.ndarray:
        return np.asarray(self.heads) - np.asarray(self.tails)


@dataclass
class FrontTracker:
    """Callback recording head/tail of the level set inside a cylinder every `every` time units.

    On twisted periodic grids the unfolding is centred on the periodic images closest to the
    cylinder axis, so the axis may drift out of the moving window.
    """

    every: float
    cylinder: Cylinder | None = None
    nu: tuple[float, ...] | None = None
    level: float = 0.0
    images: int = 1
    times: list[float] = field(default_factory=list)
    heads: list[float] = field(default_factory=list)
    tails: list[float] = field(default_factory=list)

    def _image_center(self, grid: Grid) -> list[int] | None:
        periodic = grid.periodic_axes()
        if not periodic or self.cylinder is None:
            return None
        axis = self.cylinder.axis
        x0 = np.asarray(self.cylinder.x0, dtype=float)
        mid = window_centre(grid)
        on_axis = x0 + float((mid - x0) @ axis) * axis
        return [round((on_axis[j] - mid[j]) / (grid.shape[j] * grid.dx)) for j in periodic]

    def __call__(self, state: LevelSetField) -> None:
        if self.times and state.time < self.times[-1] + self.every - 1e-9 * self.every:
            return
        front = extract_front(
            state,
            self.level,
            self.cylinder,
            nu=self.nu,
            images=self.images,
            image_center=self._image_center(state.grid),
        )
        self.times.append(state.time)
        self.heads.append(front.head)
        self.tails.append(front.tail)

    def track(self) -> FrontTrack:
        return FrontTrack(tuple(self.times), tuple(self.heads), tuple(self.tails))


def planar_grid(
    nu: Sequence[float],
    dx: float,
    *,
    lateral_periods: int = 1,
    half_length: float = 2.0,
    eps: float = 1.0,
) -> Grid:
    """Moving-window grid for fronts with normal ν: periodic (twisted) across, clamped along.

    The propagation axis is the coordinate where |ν_j| is largest. Lateral extents are
    whole periods of g(·/eps); the twist keeps u(x + L e_j) = u(x) − L ν_j for planar data.
    """
    direction = unit(nu)
    dim = len(direction)
    k = int(np.argmax(np.abs(direction)))
    L = lateral_periods * eps
    cells = L / dx
    if lateral_periods < 1 or abs(cells - round(cells)) > 1e-9:
        raise ParameterError(
            f"lateral extent {L} must be a positive whole number of cells of size {dx}"
        )
    cells = round(cells)
    # the plane x·ν = 0 spans this much along axis k over one lateral box
    tilt = sum(abs(direction[j]) * L for j in range(dim) if j != k) / abs(direction[k])
    along = 2 * math.ceil((half_length + tilt) / dx)
    shape = tuple(along if j == k else cells for j in range(dim))
    origin = tuple(-along // 2 if j == k else 0 for j in range(dim))
    twist = tuple(0.0 if j == k else -L * float(direction[j]) for j in range(dim))
    return Grid(
        shape=shape,
        dx=dx,
        origin_index=origin,
        lateral_topology=PERIODIC,
        axis=k,
        nu=tuple(float(v) for v in direction),
        twist=twist,
    )


def planar_data(grid: Grid, nu: Sequence[float] | None = None, offset: float = 0.0) -> np.ndarray:
    direction = unit(nu if nu is not None else grid.nu)
    return offset - grid.coords() @ direction


def window_centre(grid: Grid) -> np.ndarray:
    return grid.node([s // 2 for s in grid.shape])


def box_grid(lo: float, hi: float, dx: float, dim: int = 2) -> Grid:
    """Clamped cube [lo, hi)^dim on the lattice dx·Z^dim."""
    start = math.floor(lo / dx + 1e-9)
    cells = math.ceil(hi / dx - 1e-9) - start
    return Grid(shape=(cells,) * dim, dx=dx, origin_index=(start,) * dim)


def cone_data(grid: Grid, center: Sequence[float], radius: float) -> np.ndarray:
    """radius − |x − center|: positive inside the ball, unit slope."""
    d = grid.coords() - np.asarray(center, dtype=float)
    return radius - np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class SpeedTable:
    """Direction-dependent speed on an angle mesh (2-D), periodic linear interpolation."""

    angles: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.angles) != len(self.values) or len(self.angles) < 2:
            raise ParameterError("speed table needs matching angles and values, at least 2")
        if np.any(np.asarray(self.values) <= 0):
            raise ParameterError("speed table values must be positive")

    def __call__(self, directions: np.ndarray) -> np.ndarray:
        theta = np.mod(np.arctan2(directions[..., 1], directions[..., 0]), 2 * np.pi)
        return np.interp(theta, self.angles, self.values, period=2 * np.pi)

    @property
    def max(self) -> float:
        return float(np.max(self.values))


SpeedLike = Union[float, SpeedTable, Callable[[np.ndarray], np.ndarray]]


def _direction_mesh(dim: int, count: int = 360) -> np.ndarray:
    if dim == 2:
        theta = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    # Fibonacci sphere
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], -1)


def _speed_function(speed: SpeedLike, dim: int) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
    if isinstance(speed, (int, float)):
        c = float(speed)
        if c <= 0:
            raise ParameterError(f"homogenized speed must be positive, got {c}")
        return (lambda d: np.full(d.shape[:-1], c)), c
    if isinstance(speed, SpeedTable):
        if dim != 2:
            raise ParameterError("angle speed tables are 2-D only")
        return speed, speed.max
    mesh = _direction_mesh(dim)
    sampled = np.asarray(speed(mesh), dtype=float)
    if np.any(sampled <= 0):
        raise ParameterError("homogenized speed must be positive on every sampled direction")
    return speed, float(sampled.max())


def solve_homogenized(
    speed: SpeedLike,
    u0: LevelSetField,
    T: float,
    params: SchemeParams | None = None,
) -> LevelSetField:
    """Upwind solve of u_t = s(−Du/|Du|)|Du|."""
    params = params or SchemeParams()
    grid = u0.grid
    fn, s_max = _speed_function(speed, grid.dim)
    if not (T > u0.time):
        raise ParameterError(f"solve horizon T={T} must exceed the current time {u0.time}")
    dt = params.cfl_factor * grid.dx / (grid.dim * s_max)
    dim = grid.dim
    zero = (0,) * dim
    state = u0
    steps = 0
    while state.time < T - 1e-12 * max(1.0, T):
        if steps >= params.max_steps:
            raise BudgetExceeded(f"max_steps={params.max_steps} reached in solve_homogenized")
        h = min(dt, T - state.time)
        padded = pad(state.values, grid.topology(), grid.twist)

        def rows(a: int, b: int, padded: np.ndarray = padded, h: float = h) -> np.ndarray:
            u = neighbor(padded, a, b, zero)
            upwind = np.zeros_like(u)
            central = []
            for i in range(dim):
                up = neighbor(padded, a, b, unit_offset(dim, i, 1))
                um = neighbor(padded, a, b, unit_offset(dim, i, -1))
                upwind += np.minimum((u - um) / grid.dx, 0.0) ** 2
                upwind += np.maximum((up - u) / grid.dx, 0.0) ** 2
                central.append((up - um) / (2 * grid.dx))
            grad = np.stack(central, axis=-1)
            norm = np.sqrt(np.sum(grad * grad, axis=-1))
            flat = norm <= 1e-14
            normal = -grad / np.where(flat, 1.0, norm)[..., None]
            s = np.where(flat, s_max, fn(normal))
            return u + h * s * np.sqrt(upwind)

        new = map_rows(rows, grid.shape[0], params.workers)
        bad = first_bad_index(new)
        if bad is not None:
            raise NumericBlowup(f"non-finite value at cell {bad} in solve_homogenized", index=bad)
        state = LevelSetField(grid, new, state.time + h, u0.eps)
        steps += 1
    return state
