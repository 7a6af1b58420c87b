from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy

from mcfhomog import __version__
from mcfhomog.errors import ParameterError
from mcfhomog.logging_json import get_logger, log

logger = get_logger("artifacts")

MANIFEST_NAME = "manifest.json"
PGM_MAX = 65535


def atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    tmp.replace(path)


def atomic_write_bytes(path: Path, content: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(content)
    tmp.replace(path)


def format_cell(value: Any) -> str:
    """Fixed text form for one CSV cell; floats use `.12g` so reruns are byte-identical."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        # -0.0 and 0.0 print the same
        return format(v + 0.0, ".12g")
    if value is None:
        return ""
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParameterError(f"csv row {i} has {len(row)} cells, header has {width}")
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    text = render_csv(header, rows)
    atomic_write(path, text)
    log(logger, logging.INFO, "artifact_written", path=str(path), kind="csv")
    return path


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    log(logger, logging.INFO, "artifact_written", path=str(path), kind="json")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def encode_pgm(values: np.ndarray) -> tuple[bytes, float, float]:
    """Rescale a 2-D array to 16-bit grey (P5, big-endian). Non-finite cells map to 0."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ParameterError(f"pgm needs a 2-D array, got shape {arr.shape}")
    finite = np.isfinite(arr)
    if not finite.any():
        lo = hi = 0.0
    else:
        lo = float(arr[finite].min())
        hi = float(arr[finite].max())
    span = hi - lo
    scaled = np.zeros(arr.shape, dtype=float)
    if span > 0:
        scaled[finite] = (arr[finite] - lo) / span * PGM_MAX
    grey = np.rint(scaled).astype(">u2")
    rows, cols = arr.shape
    header = f"P5\n{cols} {rows}\n{PGM_MAX}\n".encode("ascii")
    return header + grey.tobytes(), lo, hi


def write_pgm(path: Path, values: np.ndarray, *, time: float | None = None) -> Path:
    data, lo, hi = encode_pgm(values)
    atomic_write_bytes(path, data)
    sidecar = path.with_suffix(".json")
    meta = {"min": lo, "max": hi, "time": time, "shape": list(np.shape(values))}
    atomic_write(sidecar, json.dumps(meta, sort_keys=True) + "\n")
    log(logger, logging.INFO, "artifact_written", path=str(path), kind="pgm", time=time)
    return path


def plane_slice(values: np.ndarray) -> np.ndarray:
    """2-D view for snapshots: higher dimensional fields are cut through their middle."""
    arr = np.asarray(values)
    while arr.ndim > 2:
        arr = arr[..., arr.shape[-1] // 2]
    return arr


def versions() -> dict[str, str]:
    return {
        "mcfhomog": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def manifest_payload(
    *,
    scenario: str,
    config: Mapping[str, Any],
    plan: Mapping[str, Any],
    seed: int,
    wall_time_s: float | None,
) -> dict[str, Any]:
    return {
        "scenario": scenario,
        "seed": seed,
        "config": dict(config),
        "plan": dict(plan),
        "versions": versions(),
        "wall_time_s": wall_time_s,
    }


def write_manifest(out_dir: Path, **fields: Any) -> Path:
    return write_json(out_dir / MANIFEST_NAME, manifest_payload(**fields))
