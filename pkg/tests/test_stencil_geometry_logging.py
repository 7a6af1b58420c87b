from __future__ import annotations

import io
import json
import logging

import numpy as np
import pytest

from mcfhomog.errors import (
    ConfigError,
    GeometryError,
    McfError,
    NumericBlowup,
    ParameterError,
    ResourceError,
)
from mcfhomog.geometry import Cylinder, lateral_distance, unit
from mcfhomog.logging_json import JsonFormatter, get_logger, log, setup_logging
from mcfhomog.stencil import (
    CLAMPED,
    PERIODIC,
    first_bad_index,
    interpolate,
    map_rows,
    neighbor,
    pad,
    row_blocks,
)


def test_pad_clamped_replicates_edges() -> None:
    u = np.arange(6, dtype=float).reshape(2, 3)
    p = pad(u, (CLAMPED, CLAMPED))
    assert p.shape == (4, 5)
    assert p[0, 0] == u[0, 0]
    assert p[-1, -1] == u[-1, -1]
    assert np.array_equal(p[1:-1, 1:-1], u)


def test_pad_periodic_applies_twist() -> None:
    u = np.array([[0.0, 1.0, 2.0]])
    p = pad(u, (CLAMPED, PERIODIC), twist=(0.0, -3.0))
    # ghost[-1] = u[N-1] - twist, ghost[N] = u[0] + twist
    assert p[1, 0] == pytest.approx(5.0)
    assert p[1, -1] == pytest.approx(-3.0)


def test_row_blocks_cover_rows_without_overlap() -> None:
    blocks = row_blocks(10, 3)
    assert blocks[0][0] == 0 and blocks[-1][1] == 10
    for (a, b), (c, _) in zip(blocks, blocks[1:]):
        assert b == c
    assert row_blocks(2, 8) == [(0, 1), (1, 2)]


def test_map_rows_is_worker_independent() -> None:
    data = np.random.default_rng(1).normal(size=(17, 5))

    def fn(a: int, b: int) -> np.ndarray:
        return np.sin(data[a:b]) * 2.0

    one = map_rows(fn, 17, 1)
    many = map_rows(fn, 17, 4)
    assert np.array_equal(one, many)


def test_first_bad_index_finds_nan() -> None:
    v = np.zeros((3, 3))
    assert first_bad_index(v) is None
    v[1, 2] = np.nan
    assert first_bad_index(v) == (1, 2)


def test_unit_rejects_zero() -> None:
    assert np.allclose(unit([3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(ParameterError):
        unit([0.0, 0.0])


def test_lateral_distance_and_cylinder() -> None:
    nu = np.array([0.0, 1.0])
    x = np.array([[3.0, 10.0], [-1.0, -4.0]])
    assert np.allclose(lateral_distance(x, nu), [3.0, 1.0])
    cyl = Cylinder((0.0, 1.0), (0.0, 0.0), 2.0, Rdot=-0.5)
    assert cyl.radius(2.0) == pytest.approx(1.0)
    assert list(cyl.contains(x, 0.0)) == [False, True]
    with pytest.raises(GeometryError):
        cyl.check_horizon(4.0)
    moved = cyl.shifted(np.array([1.0, 0.0]))
    assert moved.x0 == (1.0, 0.0)


def test_cylinder_requires_positive_radius() -> None:
    with pytest.raises(GeometryError):
        Cylinder((1.0, 0.0), (0.0, 0.0), 0.0)


def test_error_kinds_and_bases() -> None:
    assert issubclass(ConfigError, ValueError)
    assert ConfigError("x").kind == "config"
    err = NumericBlowup("bad", index=(1, 2))
    assert isinstance(err, RuntimeError) and err.index == (1, 2)
    res = ResourceError("big", required=10, available=4)
    assert isinstance(res, McfError) and res.required == 10


def test_json_formatter_includes_fields() -> None:
    formatter = JsonFormatter()
    record = logging.LogRecord(
        name="mcfhomog",
        level=logging.INFO,
        pathname=__file__,
        lineno=1,
        msg="solve_done",
        args=(),
        exc_info=None,
    )
    record.fields = {"steps": np.int64(12), "shape": (np.int64(4), 5)}
    payload = json.loads(formatter.format(record))
    assert payload["message"] == "solve_done"
    assert payload["fields"] == {"steps": 12, "shape": [4, 5]}


def test_setup_logging_writes_json_lines() -> None:
    stream = io.StringIO()
    setup_logging("DEBUG", stream)
    try:
        log(get_logger("levelset"), logging.INFO, "window_shift", cells=1)
        line = stream.getvalue().strip().splitlines()[-1]
        payload = json.loads(line)
        assert payload["logger"] == "mcfhomog.levelset"
        assert payload["fields"]["cells"] == 1
    finally:
        setup_logging("WARNING")


def test_wide_periodic_pad_matches_twisted_extension() -> None:
    u = np.array([[0.0, 1.0, 2.0, 3.0]])
    p = pad(u, (CLAMPED, PERIODIC), twist=(0.0, 4.0), width=3)
    assert p.shape == (7, 10)
    # linear data extends itself across the twisted seam
    assert np.allclose(p[3], np.arange(-3.0, 7.0))
    assert np.array_equal(p[0], p[3])
    assert np.array_equal(neighbor(p, 0, 1, (0, 2), width=3), np.array([[2.0, 3.0, 4.0, 5.0]]))
    with pytest.raises(ParameterError):
        pad(u, (PERIODIC, PERIODIC), width=2)


def test_interpolate_is_exact_on_linear_data() -> None:
    x = np.arange(6, dtype=float)
    u = 2.0 * x[:, None] - 0.5 * x[None, :]
    p = pad(u, (PERIODIC, PERIODIC), twist=(12.0, -3.0), width=2)
    rng = np.random.default_rng(3)
    offset = rng.uniform(-2.0, 2.0, size=(6, 6, 2))
    got = interpolate(p, 0, 6, offset, 2)
    assert np.allclose(got, u + 2.0 * offset[..., 0] - 0.5 * offset[..., 1])
    upper = interpolate(p, 3, 6, offset[3:], 2)
    assert np.array_equal(upper, got[3:])
