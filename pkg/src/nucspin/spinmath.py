"""
Units, conditional nuclear precession and SU(2) rotation algebra.

Unit conventions used throughout the package:

* frequencies are ordinary (cycles) frequencies in kHz,
* magnetic fields are in Gauss,
* times are in microseconds,
* angles are in radians.

A rotation angle accumulated by a precession at ``f`` kHz during ``tau`` us is
``2*pi*f*tau*1e-3`` rad.

Rotations are stored as half-angle quadruples ``(w, v)`` with
``w = cos(theta/2)`` and ``v = sin(theta/2) * n``, i.e. the SU(2) element
``w*1 - i v.sigma``. ``w`` may be a scalar or an array; ``v`` then has shape
``w.shape + (3,)``, so every operation here broadcasts over sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

#: conversion factor for kHz * us -> cycles
KHZ_US = 1e-3

ALLOWED_PROJECTIONS = (-1.5, -0.5, 0.5, 1.5)


class DegeneratePrecessionError(ValueError):
    """Raised when a quantity needs the axis of a zero-frequency precession."""


@dataclass(frozen=True)
class NuclearSpecies:
    name: str
    gamma: float  # kHz / G, signed

    def __post_init__(self):
        if self.gamma == 0:
            raise ValueError(f"gyromagnetic ratio of {self.name!r} must be non-zero")


# 29Si: -8.465 MHz/T, 13C: +10.705 MHz/T
SPECIES = {
    "29Si": NuclearSpecies("29Si", -0.8465),
    "13C": NuclearSpecies("13C", 1.0705),
}


def get_species(name: str) -> NuclearSpecies:
    try:
        return SPECIES[name]
    except KeyError:
        raise KeyError(f"unknown nuclear species {name!r}; known: {sorted(SPECIES)}") from None


@dataclass(frozen=True)
class HyperfineCoupling:
    a_par: float  # kHz
    a_perp: float  # kHz, >= 0 by gauge choice

    def __post_init__(self):
        if self.a_perp < 0:
            raise ValueError(f"a_perp must be non-negative, got {self.a_perp}")


@dataclass(frozen=True)
class NuclearSpin:
    species: NuclearSpecies
    coupling: HyperfineCoupling

    @classmethod
    def from_values(cls, species: str | NuclearSpecies, a_par: float, a_perp: float) -> "NuclearSpin":
        """Convenience constructor, e.g. ``NuclearSpin.from_values("29Si", -23.5, 12.0)``."""
        if isinstance(species, str):
            species = get_species(species)
        return cls(species, HyperfineCoupling(float(a_par), float(a_perp)))


@dataclass(frozen=True)
class ElectronSubspace:
    s0: float = 0.5
    s1: float = 1.5

    def __post_init__(self):
        for s in (self.s0, self.s1):
            if s not in ALLOWED_PROJECTIONS:
                raise ValueError(f"electron projection must be one of {ALLOWED_PROJECTIONS}, got {s}")
        if self.s0 == self.s1:
            raise ValueError("s0 and s1 must differ")


@dataclass(frozen=True)
class FieldConfig:
    b: float  # Gauss

    def __post_init__(self):
        if self.b < 0:
            raise ValueError(f"field magnitude must be non-negative, got {self.b}")


@dataclass(frozen=True)
class ConditionalPrecession:
    freq: float  # kHz, >= 0
    axis: tuple[float, float, float]

    @property
    def degenerate(self) -> bool:
        return self.freq == 0.0

    @property
    def axis_array(self) -> np.ndarray:
        return np.asarray(self.axis, dtype=float)


def larmor_frequency(species: NuclearSpecies, field: FieldConfig) -> float:
    """Bare-field nuclear Larmor frequency ``gamma * B`` in kHz (signed)."""
    return species.gamma * field.b


def conditional_precession(s: float, spin: NuclearSpin, field: FieldConfig) -> ConditionalPrecession:
    """Precession of ``spin`` while the electron sits in projection ``s``.

    The effective field seen by the nucleus is ``(s*A_perp, 0, s*A_par - f_L)``;
    its norm is the precession frequency and its direction the rotation axis.
    A zero effective field returns ``freq = 0`` with the conventional axis ``+z``.
    """
    f_l = larmor_frequency(spin.species, field)
    x = s * spin.coupling.a_perp
    z = s * spin.coupling.a_par - f_l
    freq = float(np.hypot(x, z))
    if freq == 0.0:
        return ConditionalPrecession(0.0, (0.0, 0.0, 1.0))
    return ConditionalPrecession(freq, (x / freq, 0.0, z / freq))


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SU(2) stored as ``(cos(theta/2), sin(theta/2) * axis)``."""

    w: ArrayLike
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if v.shape != w.shape + (3,):
            raise ValueError(f"v must have shape {w.shape + (3,)}, got {v.shape}")
        norm = w * w + np.einsum("...i,...i->...", v, v)
        if not np.all(np.abs(norm - 1.0) < 1e-9):
            raise ValueError("rotation quadruple is not unit-norm")
        object.__setattr__(self, "w", float(w) if w.ndim == 0 else w)
        object.__setattr__(self, "v", v)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(1.0, np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: ArrayLike) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * np.asarray(angle, dtype=float)
        return cls(np.cos(half), np.sin(half)[..., None] * axis)

    @property
    def angle(self) -> ArrayLike:
        """Rotation angle in ``[0, 2*pi]``; ``2*pi`` only for ``w = -1``."""
        ang = 2.0 * np.arctan2(np.linalg.norm(self.v, axis=-1), self.w)
        return float(ang) if np.ndim(ang) == 0 else ang

    @property
    def axis(self) -> np.ndarray:
        """Unit rotation axis (``+z`` for the identity and for ``-1``)."""
        n = np.linalg.norm(self.v, axis=-1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        out = np.where(n > 0, self.v / safe, np.array([0.0, 0.0, 1.0]))
        return out

    def matrix(self) -> np.ndarray:
        """2x2 complex matrix ``w*1 - i v.sigma`` (scalar rotations only)."""
        x, y, z = self.v
        w = self.w
        return np.array([[w - 1j * z, -1j * x - y], [-1j * x + y, w + 1j * z]])

    def __repr__(self):
        return f"Rotation(w={self.w!r}, v={self.v!r})"


def _trusted(w, v) -> Rotation:
    """Build a Rotation from components known to be unit-norm (no validation).

    Used on the hot path of compose/inverse/power, whose outputs are unit-norm
    to rounding whenever their inputs are.
    """
    r = object.__new__(Rotation)
    object.__setattr__(r, "w", float(w) if np.ndim(w) == 0 else w)
    object.__setattr__(r, "v", v)
    return r


def rotation_from_precession(cp: ConditionalPrecession, tau: ArrayLike) -> Rotation:
    """Free evolution for ``tau`` us: rotation by ``2*pi*freq*tau`` about ``cp.axis``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    half = np.pi * cp.freq * tau * KHZ_US
    w = np.cos(half)
    v = np.sin(half)[..., None] * cp.axis_array
    return Rotation(float(w) if w.ndim == 0 else w, v)


def compose(second: Rotation, first: Rotation) -> Rotation:
    """Rotation equivalent to applying ``first`` and then ``second``."""
    w1, v1 = np.asarray(second.w), second.v
    w0, v0 = np.asarray(first.w), first.v
    a1, b1, c1 = v1[..., 0], v1[..., 1], v1[..., 2]
    a0, b0, c0 = v0[..., 0], v0[..., 1], v0[..., 2]
    w = w1 * w0 - (a1 * a0 + b1 * b0 + c1 * c0)
    v = np.stack([
        w1 * a0 + w0 * a1 + (b1 * c0 - c1 * b0),
        w1 * b0 + w0 * b1 + (c1 * a0 - a1 * c0),
        w1 * c0 + w0 * c1 + (a1 * b0 - b1 * a0),
    ], axis=-1)
    return _trusted(w, v)


def inverse(r: Rotation) -> Rotation:
    return _trusted(r.w, -r.v)


def power(r: Rotation, m: int) -> Rotation:
    """``r`` composed with itself ``m`` times (``m >= 0``)."""
    if m < 0:
        raise ValueError("power must be non-negative")
    half = np.arctan2(np.linalg.norm(r.v, axis=-1), r.w)
    axis = r.axis
    w = np.cos(m * half)
    v = np.sin(m * half)[..., None] * axis
    return _trusted(w, v)
