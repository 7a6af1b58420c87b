from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from mcfhomog.artifacts import plane_slice, write_csv, write_json, write_manifest, write_pgm
from mcfhomog.config import SCENARIOS, RunConfig, load_config
from mcfhomog.discrepancy import (
    classify,
    discrepancy,
    lattice_point_near_hyperplane,
    modified_discrepancy,
    omega,
    radius_threshold,
)
from mcfhomog.errors import ConfigError, McfError, PreconditionError
from mcfhomog.forcing import CorollaryParams, ForcingField, corollary_field
from mcfhomog.geometry import lateral_distance, unit
from mcfhomog.laminar import evolve_graph_obstacle, graph_dt, graph_front_track, verify_corollary
from mcfhomog.levelset import (
    FrontTracker,
    Grid,
    LevelSetField,
    SnapshotRecorder,
    box_grid,
    cfl_dt,
    cone_data,
    planar_grid,
    solve,
)
from mcfhomog.logging_json import get_logger, log, setup_logging
from mcfhomog.obstacle import (
    ObstacleProblem,
    check_birkhoff,
    check_lcp,
    evolve_sub,
    evolve_super,
    obstacle_grid,
)
from mcfhomog.speeds import (
    circle_directions,
    detect_detachment,
    fingering_metric,
    speed_row,
    sweep_directions,
    track_planar_front,
)

logger = get_logger("cli")

# field arrays held per cell while stepping: u, g, the padded copy and the update
_ARRAYS_PER_CELL = 4


def _default_direction(dim: int) -> tuple[float, ...]:
    return tuple(1.0 if j == dim - 1 else 0.0 for j in range(dim))


def _directions(cfg: RunConfig, dim: int) -> list[tuple[float, ...]]:
    assert cfg.run is not None
    if cfg.run.directions:
        return [tuple(float(v) for v in d) for d in cfg.run.directions]
    return [_default_direction(dim)]


def _forcing(cfg: RunConfig) -> ForcingField:
    assert cfg.forcing is not None
    return cfg.forcing.build()


def _level_set_grid(
    cfg: RunConfig, g: ForcingField, nu: tuple[float, ...], *, dx: float | None = None
) -> Grid:
    spec = cfg.grid
    assert spec is not None
    if spec.kind == "box":
        return box_grid(spec.lo, spec.hi, spec.dx, g.dim)
    return planar_grid(
        nu,
        dx if dx is not None else spec.dx,
        lateral_periods=spec.lateral_periods,
        half_length=spec.half_length * spec.eps,
        eps=spec.eps,
    )


def _grid_plan(grid: Grid, g: ForcingField, T: float, eps: float, cfl: float) -> dict[str, Any]:
    dt = cfl_dt(grid, g.M0, eps, cfl)
    cells = int(np.prod(grid.shape))
    return {
        "shape": list(grid.shape),
        "dx": grid.dx,
        "dt": dt,
        "steps": math.ceil(T / dt - 1e-9),
        "cells": cells,
        "memory_bytes": cells * 8 * _ARRAYS_PER_CELL,
    }


def build_plan(cfg: RunConfig) -> dict[str, Any]:
    """Grid shapes, CFL step, step counts and memory per scenario; computes nothing else."""
    scenario = cfg.scenario
    cfl = cfg.scheme.cfl_factor
    if scenario == "discrepancy":
        spec = cfg.discrepancy
        assert spec is not None
        return {"rows": len(spec.N), "N": list(spec.N), "lattice_search": spec.delta > 0}
    g = _forcing(cfg)
    if scenario == "laminar":
        lam = cfg.laminar
        assert lam is not None
        cells = round(1 / lam.dx) ** g.dim
        dt = graph_dt(lam.dx, g.dim, g.M0, cfl)
        return {
            "shape": [round(1 / lam.dx)] * g.dim,
            "dx": lam.dx,
            "dt": dt,
            "steps": math.ceil(lam.T / dt - 1e-9),
            "cells": cells,
            "memory_bytes": cells * 8 * _ARRAYS_PER_CELL,
        }
    assert cfg.run is not None and cfg.grid is not None
    T = cfg.run.T
    eps = cfg.grid.eps
    if scenario == "obstacle":
        ob = cfg.obstacle
        assert ob is not None
        p = ObstacleProblem.create(ob.nu, ob.R, ob.s, Rdot=ob.Rdot)
        grid, _ = obstacle_grid(p, T, cfg.grid.dx, g.M0)
        return _grid_plan(grid, g, T, eps, cfl)
    if scenario == "lcp":
        lcp = cfg.lcp
        assert lcp is not None
        return {"nu": list(lcp.nu), "mode": lcp.mode, "runs": 2, "T": T, "dx": cfg.grid.dx}
    directions = _sweep_directions(cfg, g.dim) if scenario == "sweep" else _directions(cfg, g.dim)
    # front tracking resolves the rescaled cell eps·dx
    scaled = scenario in ("speeds", "sweep") and cfg.run.method == "front_tracking"
    grid = _level_set_grid(cfg, g, directions[0], dx=cfg.grid.dx * eps if scaled else None)
    plan = _grid_plan(grid, g, T, eps, cfl)
    plan["directions"] = len(directions)
    if scenario in ("speeds", "sweep"):
        plan["method"] = cfg.run.method
    return plan


def _sweep_directions(cfg: RunConfig, dim: int) -> list[tuple[float, ...]]:
    assert cfg.run is not None
    if cfg.run.directions:
        return _directions(cfg, dim)
    if dim != 2:
        raise ConfigError("run.directions: required for sweeps in dimension other than 2")
    return [tuple(d) for d in circle_directions(cfg.run.count)]


def _speed_options(cfg: RunConfig) -> dict[str, Any]:
    run, spec = cfg.run, cfg.grid
    assert run is not None and spec is not None
    opts: dict[str, Any] = {"T": run.T}
    if run.method == "front_tracking":
        opts.update(
            eps=spec.eps,
            dx=spec.dx,
            lateral_periods=spec.lateral_periods,
            half_length=spec.half_length,
            r=run.r,
            record_every=run.record_every,
        )
    else:
        opts.update(dx=spec.dx, iterations=run.iterations)
        if run.r is not None:
            opts["r"] = run.r
    return opts


def _write_snapshots(out: Path, recorder: SnapshotRecorder) -> list[str]:
    paths = []
    for i, frame in enumerate(recorder.frames):
        path = out / "snapshots" / f"u_{i:04d}.pgm"
        write_pgm(path, plane_slice(frame.values), time=frame.time)
        paths.append(str(path))
    return paths


def _slope(times: Any, values: Any) -> float:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    late = (t >= t[-1] / 2) & np.isfinite(v)
    if late.sum() < 2:
        return math.nan
    return float(np.polyfit(t[late], v[late], 1)[0])


def _run_simulate(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None and cfg.grid is not None
    g = _forcing(cfg)
    nu = _directions(cfg, g.dim)[0]
    T = cfg.run.T
    every = cfg.run.record_every if cfg.run.record_every is not None else T / 8
    recorder = SnapshotRecorder(every)
    if cfg.grid.kind == "planar":
        track = track_planar_front(
            nu,
            g,
            cfg.scheme,
            T,
            eps=cfg.grid.eps,
            dx=cfg.grid.dx,
            lateral_periods=cfg.grid.lateral_periods,
            half_length=cfg.grid.half_length,
            r=cfg.run.r,
            record_every=min(every, T / 200),
            callbacks=[recorder],
        )
    else:
        grid = _level_set_grid(cfg, g, nu)
        center = cfg.grid.center or (0.0,) * g.dim
        if len(center) != g.dim:
            raise ConfigError(f"grid.center: expected {g.dim} components")
        tracker = FrontTracker(every=min(every, T / 200), nu=nu)
        state = LevelSetField(grid, cone_data(grid, center, cfg.grid.radius), 0.0, cfg.grid.eps)
        solve(state, g, cfg.scheme, T, callbacks=[tracker, recorder])
        track = tracker.track()
    front = write_csv(
        out / "front.csv",
        ["t", "head", "tail", "spread"],
        [[t, h, tl, h - tl] for t, h, tl in zip(track.times, track.heads, track.tails)],
    )
    outputs = [str(front), *_write_snapshots(out, recorder)]
    return {
        "head_slope": _slope(track.times, track.heads),
        "tail_slope": _slope(track.times, track.tails),
        "samples": len(track.times),
        "outputs": outputs,
    }


def _run_obstacle(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None and cfg.grid is not None and cfg.obstacle is not None
    g = _forcing(cfg)
    ob = cfg.obstacle
    T = cfg.run.T
    p = ObstacleProblem.create(ob.nu, ob.R, ob.s, Rdot=ob.Rdot)
    evolve = evolve_sub if ob.kind == "sub" else evolve_super
    options: dict[str, Any] = {
        "dx": cfg.grid.dx,
        "record_every": cfg.run.record_every,
        "eps": cfg.grid.eps,
    }
    run = evolve(p, g, cfg.scheme, T, **options)
    rows = [[r.t, r.axis_gap, r.max_gap, r.min_gap, r.touching_fraction] for r in run.rows()]
    table = write_csv(
        out / "obstacle.csv",
        ["t", "axis_gap", "max_gap", "min_gap", "touching_fraction"],
        rows,
    )
    outputs = [str(table)]
    for i, t in enumerate(run.times):
        path = out / "snapshots" / f"u_{i:04d}.pgm"
        write_pgm(path, plane_slice(run.frames[i]), time=t)
        outputs.append(str(path))
    summary: dict[str, Any] = {
        "kind": ob.kind,
        "barrier_fallback": run.barrier_fallback,
        "barrier_gap": run.barrier_gap,
        "snapshots": len(run.times),
    }
    if ob.detect_radius <= ob.R:
        report = detect_detachment(run, 0.0, ob.detect_radius)
        summary["detachment"] = report.status
        summary["first_detach_time"] = report.first_detach_time
    if ob.variant:
        other = None
        if ob.variant.startswith("static"):
            shift = np.asarray(ob.dz, dtype=float)
            lat = lateral_distance(shift, unit(ob.nu))
            wider = ObstacleProblem.create(ob.nu, ob.R + max(float(lat), cfg.grid.dx), ob.s)
            other = evolve(wider, g, cfg.scheme, T, **options)
        birkhoff = check_birkhoff(run, ob.dz, ob.dt, ob.variant, other=other)
        summary["birkhoff"] = {
            "variant": birkhoff.variant,
            "ok": birkhoff.ok,
            "max_violation": birkhoff.max_violation,
            "tolerance": birkhoff.tolerance,
        }
        summary["ok"] = birkhoff.ok
    summary["outputs"] = outputs
    return summary


def _run_speeds(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None
    g = _forcing(cfg)
    options = _speed_options(cfg)
    rows = [
        speed_row(nu, g, cfg.scheme, method=cfg.run.method, **options)
        for nu in _directions(cfg, g.dim)
    ]
    dim = g.dim
    header = ["theta", *[f"nu{i + 1}" for i in range(dim)]]
    header += ["s_head", "s_tail", "hw_head", "hw_tail", "method", "ordered", "within_bounds"]
    body = []
    for row in rows:
        hw = max(row.hw_head, row.hw_tail)
        inside = (g.m0 - hw <= row.s_tail) and (row.s_head <= g.M0 + hw)
        body.append(
            [
                row.theta,
                *row.nu,
                row.s_head,
                row.s_tail,
                row.hw_head,
                row.hw_tail,
                row.method,
                row.ordered,
                inside,
            ]
        )
    path = write_csv(out / "speeds.csv", header, body)
    ok = all(r[-1] and r[-2] for r in body)
    return {"directions": len(rows), "ok": ok, "outputs": [str(path)]}


def _run_sweep(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None
    g = _forcing(cfg)
    table = sweep_directions(
        g,
        _sweep_directions(cfg, g.dim),
        cfg.scheme,
        method=cfg.run.method,
        workers=cfg.scheme.workers,
        **_speed_options(cfg),
    )
    header, *rows = table.csv_rows()
    path = write_csv(out / "speeds.csv", [str(h) for h in header], rows)
    return {
        "directions": len(table.rows),
        "ok": table.ordering_ok,
        "ordering_ok": table.ordering_ok,
        "max_variation": table.max_variation,
        "outputs": [str(path)],
    }


def _run_finger(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None and cfg.grid is not None
    g = _forcing(cfg)
    nu = _directions(cfg, g.dim)[0]
    T = cfg.run.T
    track = track_planar_front(
        nu,
        g,
        cfg.scheme,
        T,
        eps=cfg.grid.eps,
        dx=cfg.grid.dx,
        lateral_periods=cfg.grid.lateral_periods,
        half_length=cfg.grid.half_length,
        r=cfg.run.r,
        record_every=cfg.run.record_every,
    )
    report = fingering_metric(track, jitter=2 * cfg.grid.dx)
    path = write_csv(
        out / "front.csv",
        ["t", "head", "tail", "spread"],
        [[t, h, tl, h - tl] for t, h, tl in zip(track.times, track.heads, track.tails)],
    )
    return {
        "rate": report.rate,
        "nondecreasing": report.nondecreasing,
        "max_drop": report.max_drop,
        "outputs": [str(path)],
    }


def _laminar_field(cfg: RunConfig) -> ForcingField:
    assert cfg.forcing is not None
    if cfg.forcing.lift:
        raise ConfigError("forcing.lift: the laminar scenario takes the transverse field g'")
    return _forcing(cfg)


def _run_laminar(cfg: RunConfig, out: Path, *, corollary: bool = False) -> dict[str, Any]:
    lam = cfg.laminar
    assert lam is not None and cfg.forcing is not None
    if corollary:
        if cfg.forcing.kind == "corollary":
            assert cfg.forcing.corollary is not None
            p = cfg.forcing.corollary
            gprime = corollary_field(p, validate=False)
        else:
            p = CorollaryParams()
            gprime = corollary_field(p, validate=False)
        report = verify_corollary(gprime, p, cfg.scheme, dx=lam.dx, T=lam.T, window=lam.window)
        outputs = []
        if report.fingering is not None:
            path = write_csv(
                out / "fingering.csv",
                ["t", "spread"],
                list(zip(report.fingering.times, report.fingering.spreads)),
            )
            outputs.append(str(path))
        payload = {
            "ok": report.ok,
            "hypothesis_ok": report.hypothesis_ok,
            "violations": list(report.violations),
            "min_g_E1": report.min_g_E1,
            "max_g_E2": report.max_g_E2,
            "sbar_lb": report.sbar_lb,
            "sunder_ub": report.sunder_ub,
            "spread_rate": report.spread_rate,
            "required_rate": report.required_rate,
        }
        outputs.append(str(write_json(out / "corollary.json", payload)))
        return {**payload, "corollary": True, "outputs": outputs}
    gprime = _laminar_field(cfg)
    header = ["t", "maxU", "minU", "spread", "gap_to_obstacle"]
    if lam.s is None:
        track = graph_front_track(gprime, cfg.scheme, lam.T, dx=lam.dx)
        rows = [
            [t, h, tl, h - tl, math.nan] for t, h, tl in zip(track.times, track.heads, track.tails)
        ]
        path = write_csv(out / "laminar.csv", header, rows)
        return {
            "head_slope": _slope(track.times, track.heads),
            "tail_slope": _slope(track.times, track.tails),
            "outputs": [str(path)],
        }
    run = evolve_graph_obstacle(
        lam.s,
        gprime,
        cfg.scheme,
        lam.T,
        lam.kind,
        dx=lam.dx,
        record_every=lam.T / 8,
        keep_frames=True,
    )
    rows = [[r.t, r.maxU, r.minU, r.spread, r.gap_to_obstacle] for r in run.rows]
    outputs = [str(write_csv(out / "laminar.csv", header, rows))]
    for i, frame in enumerate(run.frames):
        path = out / "heightmaps" / f"U_{i:04d}.pgm"
        write_pgm(path, plane_slice(frame.U), time=frame.time)
        outputs.append(str(path))
    return {
        "kind": lam.kind,
        "s": lam.s,
        "final_gap": run.rows[-1].gap_to_obstacle if run.rows else math.nan,
        "outputs": outputs,
    }


def _run_discrepancy(cfg: RunConfig, out: Path) -> dict[str, Any]:
    spec = cfg.discrepancy
    assert spec is not None
    direction = classify(spec.nu) if spec.nu else None
    rows = []
    for N in spec.N:
        w = omega(direction, N) if direction is not None and N > 1 else math.nan
        rows.append([N, modified_discrepancy(spec.x, N), discrepancy(spec.x, N), w])
    path = write_csv(out / "discrepancy.csv", ["N", "Dstar", "D", "omega"], rows)
    summary: dict[str, Any] = {"rows": len(rows), "outputs": [str(path)]}
    if direction is not None:
        summary["rationality"] = direction.rationality
    if direction is not None and spec.delta > 0:
        try:
            R0, N0 = radius_threshold(direction, spec.delta)
            x0 = spec.x0 or (0.0,) * len(direction.nu)
            witness = lattice_point_near_hyperplane(
                direction, spec.delta, x0, method=spec.method
            )
        except PreconditionError as e:
            summary["lattice"] = {"applicable": False, "reason": str(e)}
        else:
            summary["lattice"] = {
                "applicable": True,
                "R0": R0,
                "N": N0,
                "k": list(witness.k),
                "along": witness.along,
            }
    return summary


def _run_lcp(cfg: RunConfig, out: Path) -> dict[str, Any]:
    assert cfg.run is not None and cfg.grid is not None and cfg.lcp is not None
    g = _forcing(cfg)
    spec = cfg.lcp
    report = check_lcp(
        spec.nu,
        spec.s1,
        spec.s2,
        g,
        cfg.run.T,
        cfg.scheme,
        dx=cfg.grid.dx,
        mode=spec.mode,
        R=spec.R,
        Rdot=spec.Rdot,
        negate_shift=spec.negate,
        record_every=cfg.run.record_every,
    )
    path = write_csv(out / "lcp.csv", ["t", "margin"], list(zip(report.times, report.margins)))
    return {
        "applicable": report.applicable,
        "ok": report.ok,
        "min_margin": report.min_margin,
        "xi0": list(report.xi0),
        "R": report.R,
        "Rdot": report.Rdot,
        "delta": report.delta,
        "notes": list(report.notes),
        "outputs": [str(path)],
    }


RUNNERS: dict[str, Callable[..., dict[str, Any]]] = {
    "simulate": _run_simulate,
    "obstacle": _run_obstacle,
    "speeds": _run_speeds,
    "sweep": _run_sweep,
    "finger": _run_finger,
    "laminar": _run_laminar,
    "discrepancy": _run_discrepancy,
    "lcp": _run_lcp,
}


def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(_clean(payload), sort_keys=True, separators=(",", ":")))


def _manifest(cfg: RunConfig, plan: dict[str, Any], wall_time_s: float | None) -> Path:
    return write_manifest(
        Path(cfg.out),
        scenario=cfg.scenario,
        config=_clean(cfg.raw),
        plan=_clean(plan),
        seed=cfg.seed,
        wall_time_s=wall_time_s,
    )


def _load(args: argparse.Namespace, scenario: str | None) -> RunConfig:
    cfg = load_config(args.config, scenario=scenario)
    workers = args.workers
    if workers is None:
        env = os.environ.get("MCFHOMOG_WORKERS", "")
        if env:
            try:
                workers = int(env)
            except ValueError as e:
                raise ConfigError(f"MCFHOMOG_WORKERS: expected an int, got {env!r}") from e
    return cfg.with_overrides(out=args.out, workers=workers)


def run(cfg: RunConfig, *, corollary: bool = False) -> dict[str, Any]:
    out = Path(cfg.out)
    plan = build_plan(cfg)
    log(logger, logging.INFO, "scenario_start", scenario=cfg.scenario, out=str(out))
    started = time.perf_counter()
    runner = RUNNERS[cfg.scenario]
    if cfg.scenario == "laminar":
        summary = runner(cfg, out, corollary=corollary)
    else:
        summary = runner(cfg, out)
    wall = time.perf_counter() - started
    manifest = _manifest(cfg, plan, wall)
    summary["outputs"] = [*summary.get("outputs", []), str(manifest)]
    summary.setdefault("ok", True)
    log(logger, logging.INFO, "scenario_done", scenario=cfg.scenario, wall_time_s=wall)
    return {"scenario": cfg.scenario, "out": str(out), **summary}


def explain(cfg: RunConfig) -> dict[str, Any]:
    plan = build_plan(cfg)
    manifest = _manifest(cfg, plan, None)
    return {
        "scenario": cfg.scenario,
        "out": cfg.out,
        "plan": plan,
        "outputs": [str(manifest)],
    }


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML scenario file.")
    p.add_argument("--out", default=None, help="Output directory (overrides the config).")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Worker threads (or set MCFHOMOG_WORKERS).",
    )
    p.add_argument(
        "--log-level",
        default=os.environ.get("MCFHOMOG_LOG_LEVEL", "INFO"),
        help="Log level (INFO, DEBUG, ...).",
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mcfhomog")
    sub = parser.add_subparsers(dest="cmd", required=True)

    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"Run the {name} scenario.")
        _add_common_args(p)
        if name == "laminar":
            p.add_argument(
                "--corollary",
                action="store_true",
                help="Check the fingering corollary instead of a plain graph run.",
            )

    p_explain = sub.add_parser("explain", help="Print the run plan without computing.")
    _add_common_args(p_explain)
    p_explain.add_argument("--scenario", choices=SCENARIOS, default=None)

    args = parser.parse_args(argv)
    try:
        setup_logging(args.log_level)
    except ValueError:
        setup_logging("INFO")
        log(logger, logging.WARNING, "unknown_log_level", requested=args.log_level)

    try:
        if args.cmd == "explain":
            cfg = _load(args, args.scenario)
            _emit(explain(cfg))
            return 0
        cfg = _load(args, args.cmd)
        _emit(run(cfg, corollary=bool(getattr(args, "corollary", False))))
        return 0
    except McfError as e:
        print(json.dumps({"error": e.kind, "reason": str(e)}, sort_keys=True), file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        log(logger, logging.INFO, "shutdown")
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
