"""Implantation statistics: Poisson yield and grid registration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import minimize_rss

SCALE_BOUNDS = (0.9, 1.1)


@dataclass(frozen=True)
class YieldResult:
    mean: float
    expected_ions: float
    yield_fraction: float
    n_spots: int


def hole_area_cm2(hole_diameter_nm: float) -> float:
    r_cm = 0.5 * hole_diameter_nm * 1e-7
    return math.pi * r_cm ** 2


def analyze_yield(histogram: Sequence[int], dose_cm2: float, hole_diameter_nm: float) -> YieldResult:
    """Poisson mean of defects per spot and the implied creation yield.

    ``histogram[k]`` is the number of spots that show ``k`` defects. The
    maximum-likelihood Poisson mean is the sample mean.
    """
    h = np.asarray(histogram, dtype=float)
    if h.size == 0 or h.sum() <= 0:
        raise ValueError("histogram must contain at least one spot")
    if np.any(h < 0):
        raise ValueError("histogram counts must be non-negative")
    if dose_cm2 <= 0 or hole_diameter_nm <= 0:
        raise ValueError("dose and hole diameter must be positive")
    mean = float(np.dot(np.arange(h.size), h) / h.sum())
    expected = dose_cm2 * hole_area_cm2(hole_diameter_nm)
    return YieldResult(mean, expected, mean / expected, int(h.sum()))


@dataclass(frozen=True)
class GridModel:
    """``r = offset + R(rotation) diag(scale_x, scale_y) (i, j) pitch``; lengths in nm."""

    pitch: float
    rotation: float
    scale_x: float = 1.0
    scale_y: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for s in (self.scale_x, self.scale_y):
            if not SCALE_BOUNDS[0] <= s <= SCALE_BOUNDS[1]:
                raise ValueError(f"scale {s} outside {SCALE_BOUNDS}")

    def _matrix(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]]) @ np.diag([self.scale_x, self.scale_y]) * self.pitch

    def positions(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=float).reshape(-1, 2)
        return idx @ self._matrix().T + np.asarray(self.offset)

    def indices(self, positions) -> np.ndarray:
        """Nearest grid indices of measured positions."""
        pos = np.asarray(positions, dtype=float).reshape(-1, 2) - np.asarray(self.offset)
        return np.rint(np.linalg.solve(self._matrix(), pos.T).T)


@dataclass(frozen=True)
class GridRegistration:
    model: GridModel
    indices: np.ndarray
    residuals: np.ndarray  # (n, 2) nm
    variance: float  # one standard deviation per axis, nm

    @property
    def residual_radii(self) -> np.ndarray:
        return np.hypot(self.residuals[:, 0], self.residuals[:, 1])


def _fit_for_indices(pos, idx, pitch, start: GridModel) -> GridModel:
    def residual(p):
        m = GridModel(pitch, p["rotation"], p["scale_x"], p["scale_y"], (p["x0"], p["y0"]))
        return (m.positions(idx) - pos).ravel()

    init = {"rotation": start.rotation, "scale_x": start.scale_x, "scale_y": start.scale_y,
            "x0": start.offset[0], "y0": start.offset[1]}
    bounds = {"scale_x": SCALE_BOUNDS, "scale_y": SCALE_BOUNDS, "rotation": (-math.pi / 4, math.pi / 4)}
    res = minimize_rss(residual, init, bounds, model="grid")
    p = res.params
    return GridModel(pitch, p["rotation"], p["scale_x"], p["scale_y"], (p["x0"], p["y0"]))


def _affine_start(pos, idx, pitch) -> GridModel:
    design = np.hstack([idx * pitch, np.ones((idx.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, pos, rcond=None)
    lin = coef[:2].T  # maps (i, j) pitch -> position
    rot = math.atan2(lin[1, 0] - lin[0, 1], lin[0, 0] + lin[1, 1])
    c, s = math.cos(rot), math.sin(rot)
    scaled = np.array([[c, s], [-s, c]]) @ lin
    sx = float(np.clip(scaled[0, 0], *SCALE_BOUNDS))
    sy = float(np.clip(scaled[1, 1], *SCALE_BOUNDS))
    return GridModel(pitch, rot, sx, sy, (float(coef[2, 0]), float(coef[2, 1])))


def register_grid(positions, pitch: float, max_rounds: int = 10) -> GridRegistration:
    """Align measured spot positions (nm) to an ideal square grid of ``pitch`` nm.

    Indices are assigned by rounding against the current transform and the
    transform is refitted until the assignment stops changing.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if pos.shape[0] < 4:
        raise ValueError("grid registration needs at least 4 points")
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    model = GridModel(pitch, 0.0, offset=(float(pos[0, 0]), float(pos[0, 1])))
    idx = model.indices(pos)
    for _ in range(max_rounds):
        if np.linalg.matrix_rank(np.hstack([idx, np.ones((idx.shape[0], 1))])) < 3:
            raise ValueError("positions do not span a two-dimensional grid")
        model = _fit_for_indices(pos, idx, pitch, _affine_start(pos, idx, pitch))
        new_idx = model.indices(pos)
        if np.array_equal(new_idx, idx):
            break
        idx = new_idx
    resid = pos - model.positions(idx)
    dof = max(2 * pos.shape[0] - 5, 1)
    variance = float(np.sqrt(np.sum(resid ** 2) / dof))
    return GridRegistration(model, idx, resid, variance)
