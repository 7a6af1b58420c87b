from __future__ import annotations

import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from mcfhomog.errors import ConfigError, McfError
from mcfhomog.forcing import (
    CLOSED_FORMS,
    CorollaryParams,
    ForcingField,
    closed_form,
    corollary_field,
    load_grid_forcing,
    make_laminar,
)
from mcfhomog.levelset import SchemeParams

SCENARIOS = (
    "simulate",
    "obstacle",
    "speeds",
    "sweep",
    "finger",
    "laminar",
    "discrepancy",
    "lcp",
)
FORCING_KINDS = ("closed_form", "grid", "corollary")

_MISSING = object()


def _get(table: Mapping[str, Any], key: str, path: str, kind: type, default: Any = _MISSING) -> Any:
    dotted = f"{path}.{key}" if path else key
    if key not in table:
        if default is _MISSING:
            raise ConfigError(f"{dotted}: missing required key")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{dotted}: expected int, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{dotted}: expected {kind.__name__}, got {type(value).__name__}")
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{dotted}: must be finite")
    return value


def _numbers(raw: list[Any], dotted: str) -> tuple[float, ...]:
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{dotted}[{i}]: expected a number, got {type(v).__name__}")
        out.append(float(v))
    if not out:
        raise ConfigError(f"{dotted}: must not be empty")
    return tuple(out)


def _vector(table: Mapping[str, Any], key: str, path: str, default: Any = _MISSING) -> Any:
    raw = _get(table, key, path, list, default)
    if raw is default and default is not _MISSING:
        return default
    return _numbers(raw, f"{path}.{key}" if path else key)


def _vectors(table: Mapping[str, Any], key: str, path: str) -> tuple[tuple[float, ...], ...]:
    raw = _get(table, key, path, list, [])
    dotted = f"{path}.{key}" if path else key
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, list):
            raise ConfigError(f"{dotted}[{i}]: expected a list of numbers")
        out.append(_numbers(item, f"{dotted}[{i}]"))
    return tuple(out)


def _section(data: Mapping[str, Any], key: str) -> Mapping[str, Any] | None:
    if key not in data:
        return None
    value = data[key]
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a table")
    return value


def _corollary(table: Mapping[str, Any], path: str) -> CorollaryParams:
    base = CorollaryParams()
    return CorollaryParams(
        n=_get(table, "n", path, int, base.n),
        r1=_get(table, "r1", path, float, base.r1),
        r2=_get(table, "r2", path, float, base.r2),
        R=_get(table, "R", path, float, base.R),
        y1=_vector(table, "y1", path, base.y1),
        y2=_vector(table, "y2", path, base.y2),
        sigma=_get(table, "sigma", path, float, base.sigma),
        g_high=_get(table, "g_high", path, float, base.g_high),
        g_low=_get(table, "g_low", path, float, base.g_low),
    )


@dataclass(frozen=True)
class ForcingSpec:
    kind: str
    name: str = ""
    dim: int = 2
    params: Mapping[str, float] = field(default_factory=dict)
    path: str = ""
    corollary: CorollaryParams | None = None
    lift: bool = False
    validate: bool = True

    def build(self) -> ForcingField:
        if self.kind == "closed_form":
            g = closed_form(self.name, self.dim, **self.params)
        elif self.kind == "grid":
            g = load_grid_forcing(self.path)
        else:
            assert self.corollary is not None
            g = corollary_field(self.corollary, validate=self.validate)
        return make_laminar(g) if self.lift else g


def _forcing(table: Mapping[str, Any], base_dir: Path) -> ForcingSpec:
    path = "forcing"
    kind = _get(table, "kind", path, str)
    if kind not in FORCING_KINDS:
        raise ConfigError(f"forcing.kind: expected one of {FORCING_KINDS}, got {kind!r}")
    lift = _get(table, "lift", path, bool, False)
    if kind == "closed_form":
        name = _get(table, "name", path, str)
        if name not in CLOSED_FORMS:
            raise ConfigError(f"forcing.name: unknown closed form {name!r}")
        params = _get(table, "params", path, dict, {})
        clean = {k: _get(params, k, "forcing.params", float) for k in params}
        dim = _get(table, "dim", path, int, 2)
        return ForcingSpec(kind, name, dim, clean, lift=lift)
    if kind == "grid":
        file = _get(table, "path", path, str)
        resolved = Path(file) if Path(file).is_absolute() else base_dir / file
        return ForcingSpec(kind, "grid", path=str(resolved), lift=lift)
    cor = _section(table, "corollary") or {}
    p = _corollary(cor, "forcing.corollary")
    validate = _get(table, "validate", path, bool, True)
    return ForcingSpec(kind, "corollary", p.n - 1, corollary=p, lift=lift, validate=validate)


@dataclass(frozen=True)
class GridSpec:
    kind: str = "planar"
    dx: float = 1 / 16
    lateral_periods: int = 1
    half_length: float = 2.0
    eps: float = 1.0
    lo: float = -4.0
    hi: float = 4.0
    center: tuple[float, ...] = ()
    radius: float = 1.0


def _grid(table: Mapping[str, Any]) -> GridSpec:
    path = "grid"
    kind = _get(table, "kind", path, str, "planar")
    if kind not in ("planar", "box"):
        raise ConfigError(f"grid.kind: expected 'planar' or 'box', got {kind!r}")
    spec = GridSpec(
        kind=kind,
        dx=_get(table, "dx", path, float),
        lateral_periods=_get(table, "lateral_periods", path, int, 1),
        half_length=_get(table, "half_length", path, float, 2.0),
        eps=_get(table, "eps", path, float, 1.0),
        lo=_get(table, "lo", path, float, -4.0),
        hi=_get(table, "hi", path, float, 4.0),
        center=_vector(table, "center", path, ()),
        radius=_get(table, "radius", path, float, 1.0),
    )
    if not (spec.dx > 0):
        raise ConfigError("grid.dx: must be positive")
    if not (0 < spec.eps <= 1):
        raise ConfigError("grid.eps: must lie in (0, 1]")
    if spec.kind == "box" and not (spec.hi > spec.lo):
        raise ConfigError("grid.hi: must exceed grid.lo")
    return spec


def _scheme(table: Mapping[str, Any], workers: int) -> SchemeParams:
    path = "scheme"
    try:
        return SchemeParams(
            cfl_factor=_get(table, "cfl_factor", path, float, 0.5),
            grad_reg=_get(table, "grad_reg", path, float, 1e-3),
            max_steps=_get(table, "max_steps", path, int, 1_000_000),
            workers=workers,
        )
    except ConfigError:
        raise
    except McfError as e:
        raise ConfigError(f"scheme: {e}") from e


@dataclass(frozen=True)
class RunSpec:
    T: float
    directions: tuple[tuple[float, ...], ...] = ()
    count: int = 16
    record_every: float | None = None
    method: str = "front_tracking"
    r: float | None = None
    iterations: int = 8


def _run(table: Mapping[str, Any]) -> RunSpec:
    path = "run"
    T = _get(table, "T", path, float)
    if not (T > 0):
        raise ConfigError("run.T: must be positive")
    method = _get(table, "method", path, str, "front_tracking")
    if method not in ("front_tracking", "obstacle_bisection"):
        raise ConfigError(f"run.method: unknown method {method!r}")
    every = _get(table, "record_every", path, float, -1.0)
    r = _get(table, "r", path, float, -1.0)
    return RunSpec(
        T=T,
        directions=_vectors(table, "directions", path),
        count=_get(table, "count", path, int, 16),
        record_every=every if every > 0 else None,
        method=method,
        r=r if r > 0 else None,
        iterations=_get(table, "iterations", path, int, 8),
    )


@dataclass(frozen=True)
class ObstacleSpec:
    nu: tuple[float, ...]
    R: float
    s: float
    Rdot: float = 0.0
    kind: str = "sub"
    detect_radius: float = 1.0
    variant: str = ""
    dz: tuple[float, ...] = ()
    dt: float = 0.0


def _obstacle(table: Mapping[str, Any]) -> ObstacleSpec:
    path = "obstacle"
    kind = _get(table, "kind", path, str, "sub")
    if kind not in ("sub", "super"):
        raise ConfigError(f"obstacle.kind: expected 'sub' or 'super', got {kind!r}")
    return ObstacleSpec(
        nu=_vector(table, "nu", path),
        R=_get(table, "R", path, float),
        s=_get(table, "s", path, float),
        Rdot=_get(table, "Rdot", path, float, 0.0),
        kind=kind,
        detect_radius=_get(table, "detect_radius", path, float, 1.0),
        variant=_get(table, "variant", path, str, ""),
        dz=_vector(table, "dz", path, ()),
        dt=_get(table, "dt", path, float, 0.0),
    )


@dataclass(frozen=True)
class LaminarSpec:
    dx: float
    T: float
    s: float | None = None
    kind: str = "sub"
    window: tuple[float, float] = (0.1, 0.5)


def _laminar(table: Mapping[str, Any]) -> LaminarSpec:
    path = "laminar"
    kind = _get(table, "kind", path, str, "sub")
    if kind not in ("sub", "super"):
        raise ConfigError(f"laminar.kind: expected 'sub' or 'super', got {kind!r}")
    s = _get(table, "s", path, float, -1.0)
    window = _vector(table, "window", path, (0.1, 0.5))
    if len(window) != 2:
        raise ConfigError("laminar.window: expected [start, end]")
    return LaminarSpec(
        dx=_get(table, "dx", path, float),
        T=_get(table, "T", path, float),
        s=s if s > 0 else None,
        kind=kind,
        window=(window[0], window[1]),
    )


@dataclass(frozen=True)
class DiscrepancySpec:
    x: float
    N: tuple[int, ...]
    nu: tuple[float, ...] = ()
    delta: float = 0.0
    x0: tuple[float, ...] = ()
    method: str = "exhaustive"


def _discrepancy(table: Mapping[str, Any]) -> DiscrepancySpec:
    path = "discrepancy"
    raw_N = _get(table, "N", path, list)
    N = []
    for i, v in enumerate(raw_N):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"discrepancy.N[{i}]: expected a positive int")
        N.append(v)
    method = _get(table, "method", path, str, "exhaustive")
    if method not in ("exhaustive", "constructive"):
        raise ConfigError(f"discrepancy.method: unknown method {method!r}")
    return DiscrepancySpec(
        x=_get(table, "x", path, float),
        N=tuple(N),
        nu=_vector(table, "nu", path, ()),
        delta=_get(table, "delta", path, float, 0.0),
        x0=_vector(table, "x0", path, ()),
        method=method,
    )


@dataclass(frozen=True)
class LcpSpec:
    nu: tuple[float, ...]
    s1: float
    s2: float
    mode: str = "relaxed"
    R: float | None = None
    Rdot: float | None = None
    negate: bool = False


def _lcp(table: Mapping[str, Any]) -> LcpSpec:
    path = "lcp"
    mode = _get(table, "mode", path, str, "relaxed")
    if mode not in ("strict", "relaxed"):
        raise ConfigError(f"lcp.mode: expected 'strict' or 'relaxed', got {mode!r}")
    R = _get(table, "R", path, float, -1.0)
    Rdot = _get(table, "Rdot", path, float, -1.0)
    return LcpSpec(
        nu=_vector(table, "nu", path),
        s1=_get(table, "s1", path, float),
        s2=_get(table, "s2", path, float),
        mode=mode,
        R=R if R > 0 else None,
        Rdot=Rdot if Rdot >= 0 else None,
        negate=_get(table, "negate", path, bool, False),
    )


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    seed: int
    out: str
    forcing: ForcingSpec | None
    grid: GridSpec | None
    scheme: SchemeParams
    run: RunSpec | None
    obstacle: ObstacleSpec | None = None
    laminar: LaminarSpec | None = None
    discrepancy: DiscrepancySpec | None = None
    lcp: LcpSpec | None = None
    raw: Mapping[str, Any] = field(default_factory=dict)

    def with_overrides(self, *, out: str | None = None, workers: int | None = None) -> RunConfig:
        scheme = self.scheme
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers: must be >= 1")
            scheme = SchemeParams(scheme.cfl_factor, scheme.grad_reg, scheme.max_steps, workers)
        return RunConfig(
            self.scenario,
            self.seed,
            out if out is not None else self.out,
            self.forcing,
            self.grid,
            scheme,
            self.run,
            self.obstacle,
            self.laminar,
            self.discrepancy,
            self.lcp,
            self.raw,
        )


REQUIRED_SECTIONS: Mapping[str, tuple[str, ...]] = {
    "simulate": ("forcing", "grid", "run"),
    "obstacle": ("forcing", "grid", "run", "obstacle"),
    "speeds": ("forcing", "grid", "run"),
    "sweep": ("forcing", "grid", "run"),
    "finger": ("forcing", "grid", "run"),
    "laminar": ("forcing", "laminar"),
    "discrepancy": ("discrepancy",),
    "lcp": ("forcing", "grid", "run", "lcp"),
}


def parse_config(
    data: Mapping[str, Any], *, scenario: str | None = None, base_dir: Path | None = None
) -> RunConfig:
    """Validate a decoded TOML document. `scenario` (the CLI subcommand) wins over the file."""
    declared = _get(data, "scenario", "", str, None)
    if scenario is None:
        if declared is None:
            raise ConfigError("scenario: missing required key")
        scenario = declared
    elif declared is not None and declared != scenario:
        raise ConfigError(f"scenario: config is for {declared!r}, command is {scenario!r}")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {scenario!r}")
    for name in REQUIRED_SECTIONS[scenario]:
        if name not in data:
            raise ConfigError(f"{name}: missing required table for scenario {scenario!r}")
    workers = _get(data, "workers", "", int, 1)
    if workers < 1:
        raise ConfigError("workers: must be >= 1")
    base = base_dir or Path(".")
    sections = {
        "forcing": (_forcing, (base,)),
        "grid": (_grid, ()),
        "run": (_run, ()),
        "obstacle": (_obstacle, ()),
        "laminar": (_laminar, ()),
        "discrepancy": (_discrepancy, ()),
        "lcp": (_lcp, ()),
    }
    parsed: dict[str, Any] = {}
    for name, (fn, extra) in sections.items():
        table = _section(data, name)
        parsed[name] = fn(table, *extra) if table is not None else None
    scheme_table = _section(data, "scheme") or {}
    cfg = RunConfig(
        scenario=scenario,
        seed=_get(data, "seed", "", int, 0),
        out=_get(data, "out", "", str, f"out/{scenario}"),
        forcing=parsed["forcing"],
        grid=parsed["grid"],
        scheme=_scheme(scheme_table, workers),
        run=parsed["run"],
        obstacle=parsed["obstacle"],
        laminar=parsed["laminar"],
        discrepancy=parsed["discrepancy"],
        lcp=parsed["lcp"],
        raw=dict(data),
    )
    if cfg.forcing is not None:
        try:
            cfg.forcing.build()
        except ConfigError:
            raise
        except McfError as e:
            raise ConfigError(f"forcing: {e}") from e
        except (OSError, ValueError) as e:
            raise ConfigError(f"forcing.path: {e}") from e
    return cfg


def load_config(path: str | Path, *, scenario: str | None = None) -> RunConfig:
    p = Path(path)
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {p}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: invalid TOML: {e}") from e
    return parse_config(data, scenario=scenario, base_dir=p.parent)
