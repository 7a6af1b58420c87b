from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError

CLAMPED = "clamped"
PERIODIC = "periodic"


def pad(
    u: np.ndarray,
    topology: Sequence[str],
    twist: Sequence[float] | None = None,
    width: int = 1,
) -> np.ndarray:
    """Add `width` ghost layers per axis, one axis after another so corners are filled too.

    Periodic axes wrap with a jump: ghost[-k] = u[N-k] - twist, ghost[N-1+k] = u[k-1] + twist.
    Clamped axes replicate the edge value.
    """
    out = u
    twist = tuple(twist) if twist is not None else (0.0,) * u.ndim
    for axis, topo in enumerate(topology):
        n = out.shape[axis]
        if topo == PERIODIC:
            if width > n:
                raise ParameterError(f"pad width {width} exceeds periodic axis {axis} ({n} cells)")
            lo = np.take(out, range(n - width, n), axis=axis) - twist[axis]
            hi = np.take(out, range(width), axis=axis) + twist[axis]
        else:
            lo = np.take(out, [0] * width, axis=axis)
            hi = np.take(out, [n - 1] * width, axis=axis)
        out = np.concatenate([lo, out, hi], axis=axis)
    return out


def neighbor(
    padded: np.ndarray, a: int, b: int, offset: Sequence[int], width: int = 1
) -> np.ndarray:
    """View of the padded array shifted by `offset`, restricted to interior rows [a, b)."""
    index = []
    for axis, o in enumerate(offset):
        if axis == 0:
            index.append(slice(width + a + o, width + b + o))
        else:
            index.append(slice(width + o, padded.shape[axis] - width + o))
    return padded[tuple(index)]


def interpolate(padded: np.ndarray, a: int, b: int, offset: np.ndarray, width: int) -> np.ndarray:
    """Multilinear value at node + offset (in cells) for interior rows [a, b).

    `offset` has shape (rows, ..., dim) and is clipped to [-width, width]; the corner
    weights are nonnegative and sum to one.
    """
    dim = padded.ndim
    offset = np.clip(offset, -width, width)
    base = np.minimum(np.floor(offset), width - 1)
    frac = offset - base
    shape = offset.shape[:-1]
    nodes = np.indices(shape)
    flat = np.ascontiguousarray(padded).reshape(-1)
    out = np.zeros(shape)
    for corner in itertools.product((0, 1), repeat=dim):
        weight = np.ones(shape)
        index = []
        for j, c in enumerate(corner):
            weight = weight * (frac[..., j] if c else 1.0 - frac[..., j])
            start = width + (a if j == 0 else 0)
            index.append(nodes[j] + start + base[..., j].astype(np.intp) + c)
        out += weight * flat[np.ravel_multi_index(tuple(index), padded.shape)]
    return out


def unit_offset(dim: int, axis: int, sign: int) -> tuple[int, ...]:
    return tuple(sign if i == axis else 0 for i in range(dim))


def row_blocks(rows: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), rows))
    bounds = np.linspace(0, rows, workers + 1).round().astype(int)
    pairs = [(int(bounds[i]), int(bounds[i + 1])) for i in range(workers)]
    return [(a, b) for a, b in pairs if b > a]


def map_rows(fn: Callable[[int, int], np.ndarray], rows: int, workers: int = 1) -> np.ndarray:
    """Evaluate `fn` on disjoint row blocks and stack the results along axis 0.

    Every block does the same elementwise arithmetic, so the result does not depend on the
    number of workers.
    """
    blocks = row_blocks(rows, workers)
    if len(blocks) == 1:
        return fn(*blocks[0])
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        parts = list(pool.map(lambda ab: fn(*ab), blocks))
    return np.concatenate(parts, axis=0)


def first_bad_index(values: np.ndarray) -> tuple[int, ...] | None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size == 0:
        return None
    return tuple(int(i) for i in bad[0])
