"""
CPMG resonance times: zeroth order, first-order corrected and exact.

At resonance the two electron-conditioned CPMG block rotations have
anti-parallel axes. With ``a = pi f0 tau`` and ``b = pi f1 tau`` (half angles)
the condition is ``tan(a) tan(b) = 1 / (n0.n1)``, solved here in the pole-free
form ``cos(a) cos(b) - (n0.n1) sin(a) sin(b) = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .sequences import SignalTrace
from .spinmath import (
    KHZ_US,
    DegeneratePrecessionError,
    ElectronSubspace,
    FieldConfig,
    NuclearSpin,
    conditional_precession,
)

#: default bound on (n0.n1)^-1 - 1 used for the critical field
DEFAULT_EPSILON_N = 0.1 * math.pi


class SolverError(RuntimeError):
    """The exact resonance could not be bracketed."""


class NoCriticalFieldError(ValueError):
    """The critical-field quadratic has no real root."""

    def __init__(self, discriminant: float):
        super().__init__(f"no real critical field: discriminant = {discriminant:.6g} kHz^2 < 0")
        self.discriminant = discriminant


@dataclass(frozen=True)
class ResonanceQuery:
    spin: NuclearSpin
    subspace: ElectronSubspace
    field: FieldConfig
    k: int = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"resonance order must be a positive integer, got {self.k}")


@dataclass(frozen=True)
class ResonanceResult:
    tau_zero: float
    epsilon_tau: float
    tau_approx: float
    tau_exact: float
    rel_error: float  # signed, (exact - approx) / exact

    def to_record(self, query: ResonanceQuery) -> dict:
        return {
            "species": query.spin.species.name,
            "gamma_khz_per_g": query.spin.species.gamma,
            "a_par_khz": query.spin.coupling.a_par,
            "a_perp_khz": query.spin.coupling.a_perp,
            "field_gauss": query.field.b,
            "subspace": [query.subspace.s0, query.subspace.s1],
            "k": query.k,
            "tau_zero_us": self.tau_zero,
            "epsilon_tau": self.epsilon_tau,
            "tau_approx_us": self.tau_approx,
            "tau_exact_us": self.tau_exact,
            "rel_error": self.rel_error,
        }


def _precessions(query: ResonanceQuery):
    c0 = conditional_precession(query.subspace.s0, query.spin, query.field)
    c1 = conditional_precession(query.subspace.s1, query.spin, query.field)
    if c0.degenerate or c1.degenerate:
        raise DegeneratePrecessionError("resonance undefined for a zero-frequency precession")
    dot = float(np.dot(c0.axis_array, c1.axis_array))
    return c0.freq, c1.freq, dot


def tau_zero(query: ResonanceQuery) -> float:
    """Zeroth-order resonance ``(2k-1) / (2 (f0 + f1))`` in us."""
    f0, f1, _ = _precessions(query)
    return (2 * query.k - 1) / (2.0 * (f0 + f1)) / KHZ_US


def epsilon_tau(query: ResonanceQuery) -> float:
    f0, _, dot = _precessions(query)
    if dot == 1.0:
        return 0.0
    tk = tau_zero(query)
    return math.sin(math.pi * f0 * tk * KHZ_US) * (1.0 / dot - 1.0) / ((2 * query.k - 1) * math.pi)


def tau_approx(query: ResonanceQuery) -> float:
    """First-order resonance time ``tau_zero * (1 + epsilon_tau)`` in us."""
    return tau_zero(query) * (1.0 + epsilon_tau(query))


def anti_parallel_condition(query: ResonanceQuery, tau):
    f0, f1, dot = _precessions(query)
    a = np.pi * f0 * np.asarray(tau, dtype=float) * KHZ_US
    b = np.pi * f1 * np.asarray(tau, dtype=float) * KHZ_US
    return np.cos(a) * np.cos(b) - dot * np.sin(a) * np.sin(b)


def tau_exact(query: ResonanceQuery, rtol: float = 1e-10, n_scan: int = 256) -> float:
    """Root of the anti-parallel condition nearest ``tau_zero``.

    The bracket ``[0.5, 1.5] * tau_zero`` is scanned for sign changes; the
    sub-interval closest to ``tau_zero`` is refined with Brent's method.
    """
    _, _, dot = _precessions(query)
    tk = tau_zero(query)
    if dot == 1.0:
        return tk
    lo, hi = 0.5 * tk, 1.5 * tk
    grid = np.linspace(lo, hi, n_scan + 1)
    g = anti_parallel_condition(query, grid)
    exact_zero = np.flatnonzero(g == 0.0)
    idx = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)
    candidates = [float(grid[i]) for i in exact_zero]
    for i in idx:
        candidates.append(brentq(lambda t: float(anti_parallel_condition(query, t)),
                                 grid[i], grid[i + 1], xtol=rtol * tk, rtol=4 * np.finfo(float).eps))
    if not candidates:
        raise SolverError(f"no sign change of the resonance condition in [{lo:.6g}, {hi:.6g}] us")
    return min(candidates, key=lambda t: abs(t - tk))


def resonance(query: ResonanceQuery) -> ResonanceResult:
    tz = tau_zero(query)
    eps = epsilon_tau(query)
    ta = tz * (1.0 + eps)
    te = tau_exact(query)
    return ResonanceResult(tz, eps, ta, te, (te - ta) / te)


def denominator_factor(epsilon_n: float = DEFAULT_EPSILON_N) -> float:
    """``1 / sqrt((1 + eps_n)^2 - 1)``; about 1.17 at the default."""
    return 1.0 / math.sqrt((1.0 + epsilon_n) ** 2 - 1.0)


def b_crit(spin: NuclearSpin, subspace: ElectronSubspace, epsilon_n: float = DEFAULT_EPSILON_N) -> float:
    """Smallest field (G) above which ``(n0.n1)^-1 - 1 <= epsilon_n`` holds.

    Solves ``f_L^2 + A_sign f_L + s0 s1 (A_perp^2 + A_par^2) = 0`` for the
    Larmor frequency on the branch selected by the sign of ``gamma``. A root at
    a non-positive field means the condition already holds at every field, and
    0 is returned.
    """
    gamma = spin.species.gamma
    sgn = math.copysign(1.0, gamma)
    s0, s1 = subspace.s0, subspace.s1
    a_par, a_perp = spin.coupling.a_par, spin.coupling.a_perp
    a_sign = (s0 + s1) * a_par + sgn * abs(a_perp) * denominator_factor(epsilon_n)
    disc = a_sign ** 2 - 4.0 * s0 * s1 * (a_perp ** 2 + a_par ** 2)
    if disc < 0:
        raise NoCriticalFieldError(disc)
    return max((a_sign + sgn * math.sqrt(disc)) / (2.0 * gamma), 0.0)


def error_sweep(spin: NuclearSpin, subspace: ElectronSubspace, b_grid, k: int = 1) -> SignalTrace:
    """``|tau_exact - tau_approx| / tau_exact`` versus field (G).

    Points where the exact root cannot be found are NaN and listed in
    ``meta["failed"]``.
    """
    b_grid = np.asarray(b_grid, dtype=float)
    if np.any(b_grid <= 0):
        raise ValueError("field grid must be positive")
    values = np.empty_like(b_grid)
    failed = []
    for i, b in enumerate(b_grid):
        q = ResonanceQuery(spin, subspace, FieldConfig(float(b)), k)
        try:
            values[i] = abs(resonance(q).rel_error)
        except (SolverError, DegeneratePrecessionError) as exc:
            values[i] = np.nan
            failed.append((float(b), str(exc)))
    return SignalTrace(b_grid, values, "G", {"k": k, "failed": failed})


def result_json(query: ResonanceQuery, result: ResonanceResult) -> str:
    return json.dumps(result.to_record(query), sort_keys=True)

