from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcfhomog.errors import GeometryError, ParameterError


def unit(v: np.ndarray | list[float] | tuple[float, ...]) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise ParameterError("direction must be a nonzero finite vector")
    return arr / norm


def lateral_distance(x: np.ndarray, nu: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """|v − (v·ν)ν| for v = x − x0, over the last axis of `x`."""
    v = np.asarray(x, dtype=float)
    if x0 is not None:
        v = v - np.asarray(x0, dtype=float)
    along = v @ nu
    perp = v - along[..., None] * nu
    return np.sqrt(np.sum(perp * perp, axis=-1))


@dataclass(frozen=True)
class Cylinder:
    """ν-directional cylinder Ω(x0, R + Rdot·t; ν), unbounded along ν."""

    nu: tuple[float, ...]
    x0: tuple[float, ...]
    R: float
    Rdot: float = 0.0

    def __post_init__(self) -> None:
        if len(self.nu) != len(self.x0):
            raise ParameterError("cylinder axis and center must have the same dimension")
        if abs(float(np.linalg.norm(self.nu)) - 1.0) > 1e-9:
            raise ParameterError("cylinder axis must be a unit vector")
        if self.R <= 0:
            raise GeometryError(f"cylinder radius must be positive, got R={self.R}")

    @property
    def axis(self) -> np.ndarray:
        return np.asarray(self.nu, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    def radius(self, t: float = 0.0) -> float:
        return self.R + self.Rdot * t

    def check_horizon(self, T: float) -> None:
        if self.radius(T) <= 0:
            raise GeometryError(
                f"cylinder radius R + Rdot*T = {self.radius(T):.6g} is not positive at T={T:.6g}"
            )

    def lateral(self, x: np.ndarray) -> np.ndarray:
        return lateral_distance(x, self.axis, self.center)

    def contains(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.lateral(x) < self.radius(t)

    def shifted(self, dx0: np.ndarray) -> Cylinder:
        return Cylinder(
            nu=self.nu,
            x0=tuple(float(v) for v in self.center + np.asarray(dx0, dtype=float)),
            R=self.R,
            Rdot=self.Rdot,
        )
