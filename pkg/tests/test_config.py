from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import pytest

from mcfhomog.config import SCENARIOS, load_config, parse_config
from mcfhomog.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SIMULATE = """
scenario = "simulate"

[forcing]
kind = "closed_form"
name = "sinprod"
params = { c = 1, a = 0.5 }

[grid]
dx = 1

[run]
T = 2
"""


def _doc(text: str = SIMULATE, **edits: object) -> dict:
    data = tomllib.loads(text)
    for dotted, value in edits.items():
        *parents, key = dotted.split("__")
        table = data
        for name in parents:
            table = table.setdefault(name, {})
        table[key] = value
    return data


@pytest.mark.parametrize("name", SCENARIOS)
def test_shipped_configs_load(name: str) -> None:
    cfg = load_config(CONFIGS / f"{name}.toml")
    assert cfg.scenario == name
    if cfg.forcing is not None:
        cfg.forcing.build()


def test_defaults_and_coercion() -> None:
    cfg = parse_config(_doc())
    assert cfg.seed == 0
    assert cfg.out == "out/simulate"
    assert cfg.grid is not None and cfg.grid.dx == 1.0 and isinstance(cfg.grid.dx, float)
    assert cfg.grid.kind == "planar"
    assert cfg.run is not None
    assert cfg.run.T == 2.0
    assert cfg.run.record_every is None
    assert cfg.run.r is None
    assert cfg.run.directions == ()
    assert cfg.scheme.workers == 1
    assert cfg.forcing is not None and cfg.forcing.params == {"c": 1.0, "a": 0.5}


def test_scenario_resolution() -> None:
    data = _doc()
    assert parse_config(data, scenario="simulate").scenario == "simulate"
    with pytest.raises(ConfigError, match="config is for 'simulate'"):
        parse_config(data, scenario="finger")
    del data["scenario"]
    with pytest.raises(ConfigError, match="scenario: missing"):
        parse_config(data)
    assert parse_config(data, scenario="finger").scenario == "finger"
    with pytest.raises(ConfigError, match="unknown scenario"):
        parse_config(data, scenario="melt")


def test_missing_tables_are_named() -> None:
    with pytest.raises(ConfigError, match="forcing: missing required table"):
        parse_config({"scenario": "simulate"})
    with pytest.raises(ConfigError, match="obstacle: missing required table"):
        parse_config(_doc(scenario="obstacle"))
    with pytest.raises(ConfigError, match="run.T: missing required key"):
        parse_config(_doc(run={}))


@pytest.mark.parametrize(
    ("edits", "message"),
    [
        ({"grid__dx": "fine"}, "grid.dx: expected float, got str"),
        ({"grid__dx": -0.5}, "grid.dx: must be positive"),
        ({"grid__kind": "sphere"}, "grid.kind"),
        ({"seed": True}, "seed: expected int, got bool"),
        ({"workers": 0}, "workers: must be >= 1"),
        ({"run__directions": [1.0]}, r"run.directions\[0\]: expected a list"),
        ({"run__directions": [[1.0, "up"]]}, r"run.directions\[0\]\[1\]"),
        ({"run__method": "guess"}, "run.method"),
        ({"run__T": 0}, "run.T: must be positive"),
        ({"forcing__name": "wavy"}, "forcing.name"),
        ({"forcing__kind": "noise"}, "forcing.kind"),
        ({"forcing__params": {"c": 0.2, "a": 0.5}}, "forcing: sinprod forcing is not positive"),
        ({"scheme__cfl_factor": 2.0}, "scheme: cfl_factor"),
    ],
)
def test_bad_values_name_the_key(edits: dict, message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        parse_config(_doc(**edits))


def test_section_specific_validation() -> None:
    bad_n = {"scenario": "discrepancy", "discrepancy": {"x": 0.5, "N": [4, 0]}}
    with pytest.raises(ConfigError, match=r"discrepancy.N\[1\]"):
        parse_config(bad_n)
    obstacle = _doc(scenario="obstacle", obstacle={"nu": [0, "a"], "R": 2, "s": 1})
    with pytest.raises(ConfigError, match=r"obstacle.nu\[1\]"):
        parse_config(obstacle)
    lcp = _doc(scenario="lcp", lcp={"nu": [0, 1], "s1": 0.6, "s2": 1.4, "mode": "lenient"})
    with pytest.raises(ConfigError, match="lcp.mode"):
        parse_config(lcp)
    lam = {
        "scenario": "laminar",
        "forcing": {"kind": "corollary"},
        "laminar": {"dx": 0.0078125, "T": 0.5, "window": [0.1]},
    }
    with pytest.raises(ConfigError, match="laminar.window"):
        parse_config(lam)


def test_optional_sections_parse() -> None:
    cfg = parse_config(
        _doc(
            scenario="obstacle",
            obstacle={"nu": [0, 1], "R": 2, "s": 1.5, "variant": "expanding_sub",
                      "dz": [0, 0.5], "dt": 0.25},
            lcp={"nu": [0, 1], "s1": 0.6, "s2": 1.4, "R": 3, "Rdot": 0},
        )
    )
    assert cfg.obstacle is not None
    assert cfg.obstacle.nu == (0.0, 1.0)
    assert cfg.obstacle.kind == "sub"
    assert cfg.obstacle.dz == (0.0, 0.5)
    assert cfg.lcp is not None
    assert cfg.lcp.mode == "relaxed"
    assert cfg.lcp.R == 3.0
    assert cfg.lcp.Rdot == 0.0
    assert not cfg.lcp.negate


def test_corollary_validation_happens_at_parse_time() -> None:
    data = {
        "scenario": "laminar",
        "forcing": {"kind": "corollary", "corollary": {"g_low": 1.5}},
        "laminar": {"dx": 0.0078125, "T": 0.5},
    }
    with pytest.raises(ConfigError, match="min"):
        parse_config(data)
    data["forcing"]["validate"] = False
    cfg = parse_config(data)
    assert cfg.forcing is not None
    assert cfg.forcing.corollary is not None
    assert cfg.forcing.corollary.g_low == 1.5
    assert cfg.forcing.dim == 2


def test_grid_forcing_path_is_relative_to_config(tmp_path) -> None:  # noqa: ANN001
    rows = ["x1,x2,g"]
    for i in range(2):
        for j in range(2):
            rows.append(f"{i / 2},{j / 2},{1 + i + j}")
    (tmp_path / "g.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    cfg_path = tmp_path / "sim.toml"
    body = SIMULATE.replace(
        'kind = "closed_form"\nname = "sinprod"\nparams = { c = 1, a = 0.5 }',
        'kind = "grid"\npath = "g.csv"',
    )
    cfg_path.write_text(body, encoding="utf-8")
    cfg = load_config(cfg_path)
    assert cfg.forcing is not None
    assert cfg.forcing.path == str(tmp_path / "g.csv")
    assert cfg.forcing.build().M0 == 3.0

    (tmp_path / "g.csv").unlink()
    with pytest.raises(ConfigError, match="forcing.path"):
        load_config(cfg_path)


def test_load_errors(tmp_path) -> None:  # noqa: ANN001
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("scenario = \n", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(broken)


def test_overrides() -> None:
    cfg = parse_config(_doc(workers=2))
    assert cfg.scheme.workers == 2
    moved = cfg.with_overrides(out="elsewhere", workers=4)
    assert moved.out == "elsewhere"
    assert moved.scheme.workers == 4
    assert moved.scheme.cfl_factor == cfg.scheme.cfl_factor
    assert cfg.with_overrides().out == cfg.out
    with pytest.raises(ConfigError):
        cfg.with_overrides(workers=0)
