"""Hyperfine extraction from Hahn / CPMG traces and coherence-envelope fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import root

from ..sequences import SequenceKind, envelope_factor, hahn_closed_form, nucleus_coherence
from ..spinmath import (
    DegeneratePrecessionError,
    HyperfineCoupling,
    ElectronSubspace,
    FieldConfig,
    NuclearSpin,
    conditional_precession,
    get_species,
)
from .engine import DataSet, FitResult, least_squares

A_LIMIT = 200.0  # kHz, search box for couplings
AMBIGUITY = 0.01


class FitError(RuntimeError):
    pass


def stretched_exponential(t, amplitude, t2, n_stretch, y0):
    return amplitude * envelope_factor(t, t2, n_stretch) + y0


def fit_envelope(data: DataSet) -> FitResult:
    """Fit ``A exp(-(t/t2)^n) + y0`` to a decaying trace."""
    t, y = data.x, data.y
    tail = max(1, len(y) // 10)
    y0 = float(np.mean(y[-tail:]))
    amplitude = float(y[np.argmin(t)] - y0)
    span = float(np.max(t) - np.min(t)) or 1.0
    if abs(amplitude) < 1e-12 * max(1.0, abs(y0)):
        t2 = span
    else:
        below = np.flatnonzero(np.abs(y - y0) < abs(amplitude) / math.e)
        t2 = float(t[below[0]]) if below.size and t[below[0]] > 0 else span
    init = {"amplitude": amplitude, "t2": t2, "n_stretch": 1.0, "y0": y0}
    bounds = {"t2": (1e-6 * span, 1e3 * span), "n_stretch": (0.1, 5.0)}
    res = least_squares(stretched_exponential, data, init, bounds, name="stretched_exponential")
    if abs(res.params["amplitude"]) < 1e-6 * max(1.0, abs(res.params["y0"])):
        res.flags.append("no_decay")
    return res


# ---------------------------------------------------------------------------
# Hahn-echo hyperfine fit
# ---------------------------------------------------------------------------


def _hahn_modulation(t, species, a_par, a_perp, field, subspace):
    spin = NuclearSpin.from_values(species, a_par, max(a_perp, 0.0))
    try:
        return hahn_closed_form(spin, subspace, field, t)
    except DegeneratePrecessionError:
        return np.full_like(np.asarray(t, dtype=float), np.nan)


@dataclass
class HyperfineFit:
    result: FitResult
    species: str
    ambiguous: bool
    per_species: dict[str, FitResult]

    @property
    def spin(self) -> NuclearSpin:
        p = self.result.params
        return NuclearSpin.from_values(self.species, p["a_par"], abs(p["a_perp"]))


def _grid_candidates(data, species, field, subspace, n_keep=2):
    t, y = data.x, data.y
    span = float(np.max(t)) or 1.0
    basis_extra = np.vstack([np.ones_like(t)])
    scores = []
    for a_par in np.linspace(-60.0, 60.0, 49):
        for a_perp in np.linspace(0.5, 60.0, 24):
            m = _hahn_modulation(t, species, a_par, a_perp, field, subspace)
            if not np.all(np.isfinite(m)):
                continue
            # slowly varying amplitude: m, m*t, m*t^2 plus an offset
            design = np.vstack([m, m * t / span, m * (t / span) ** 2, basis_extra]).T
            coef, *_ = np.linalg.lstsq(design, y, rcond=None)
            r = y - design @ coef
            scores.append((float(r @ r), a_par, a_perp))
    scores.sort()
    return scores[:n_keep]


def mirror_couplings(spin: NuclearSpin, field: FieldConfig, subspace: ElectronSubspace) -> NuclearSpin | None:
    """Couplings whose two conditional frequencies are those of ``spin`` swapped.

    The echo is symmetric in ``f0 <-> f1`` and the modulation depth only depends
    on ``f0 f1``, so this partner produces a nearly identical Hahn trace. Returns
    ``None`` when no distinct partner exists.
    """
    f0 = conditional_precession(subspace.s0, spin, field).freq
    f1 = conditional_precession(subspace.s1, spin, field).freq
    if abs(f0 - f1) < 1e-9 * max(f0, f1, 1.0):
        return None

    def mismatch(p):
        trial = NuclearSpin(spin.species, HyperfineCoupling(p[0], abs(p[1])))
        return [conditional_precession(subspace.s0, trial, field).freq - f1,
                conditional_precession(subspace.s1, trial, field).freq - f0]

    start = [spin.coupling.a_par + (f1 - f0) / (subspace.s1 - subspace.s0), spin.coupling.a_perp]
    sol = root(mismatch, start)
    if not sol.success or np.max(np.abs(mismatch(sol.x))) > 1e-6 * max(f0, f1):
        return None
    a_par, a_perp = float(sol.x[0]), abs(float(sol.x[1]))
    if abs(a_par - spin.coupling.a_par) < 1e-6 * max(abs(a_par), 1.0) or abs(a_par) > A_LIMIT or a_perp > A_LIMIT:
        return None
    return NuclearSpin(spin.species, HyperfineCoupling(a_par, a_perp))


def fit_hahn_hyperfine(data: DataSet, field: FieldConfig, subspace: ElectronSubspace = ElectronSubspace(),
                       candidates: Sequence[str] = ("29Si", "13C")) -> HyperfineFit:
    """Identify the nuclear species and couplings behind a Hahn-echo trace.

    Model: ``A exp(-(tau/t2)^n) * S(tau) + y0`` with ``S`` the closed-form
    single-nucleus echo. Each candidate species is fitted from the best points
    of a coarse coupling grid, and once more from the frequency-swapped partner
    of its best solution (see :func:`mirror_couplings`); the lowest residual
    wins. Species whose residuals lie within 1 % of each other are reported as
    ambiguous, and so is a partner solution within 1 % (``mirror_ambiguous``,
    partner stored in ``derived["mirror"]``).
    """
    env = fit_envelope(data)
    span = float(np.max(data.x)) or 1.0
    per_species: dict[str, FitResult] = {}
    for name in candidates:
        get_species(name)

        def model(t, a_par, a_perp, amplitude, t2, n_stretch, y0, _name=name):
            return amplitude * envelope_factor(t, t2, n_stretch) * _hahn_modulation(
                t, _name, a_par, a_perp, field, subspace) + y0

        bounds = {
            "a_par": (-A_LIMIT, A_LIMIT),
            "a_perp": (0.0, A_LIMIT),
            "t2": (1e-3 * span, 1e4 * span),
            "n_stretch": (0.1, 5.0),
        }
        envelope = {
            "amplitude": env.params["amplitude"] + env.params["y0"] if env.params["amplitude"] else 1.0,
            "t2": min(max(env.params["t2"], bounds["t2"][0]), bounds["t2"][1]),
            "n_stretch": min(max(env.params["n_stretch"], 0.1), 5.0),
            "y0": 0.0,
        }
        fits = []
        for _, a_par, a_perp in _grid_candidates(data, name, field, subspace):
            init = dict(envelope, a_par=a_par, a_perp=a_perp)
            fits.append(least_squares(model, data, init, bounds, name=f"hahn_hyperfine[{name}]"))
        if not fits:
            continue
        best = min(fits, key=lambda r: r.rss)
        partner = None
        spread = float(np.sum((data.y - np.mean(data.y)) ** 2))
        exact = best.rss <= 1e-12 * spread
        if best.params["a_perp"] > 0 and not exact:
            twin = mirror_couplings(NuclearSpin.from_values(name, best.params["a_par"], best.params["a_perp"]),
                                    field, subspace)
            if twin is not None:
                init = dict(best.params, a_par=twin.coupling.a_par, a_perp=twin.coupling.a_perp)
                partner = least_squares(model, data, init, bounds, name=f"hahn_hyperfine[{name}]",
                                        n_restarts=0, initial_step=0.005)
                if partner.rss < best.rss:
                    best, partner = partner, best
        if partner is not None and abs(partner.params["a_par"] - best.params["a_par"]) > 1e-3 * max(
                abs(best.params["a_par"]), 1.0):
            best.derived["mirror"] = {"a_par": partner.params["a_par"], "a_perp": partner.params["a_perp"],
                                      "rss": partner.rss}
            if partner.rss <= (1 + AMBIGUITY) * best.rss:
                best.flags.append("mirror_ambiguous")
        per_species[name] = best
    if not any(v.converged for v in per_species.values()):
        raise FitError("no candidate species produced a converged Hahn-echo fit")
    usable = {k: v for k, v in per_species.items() if math.isfinite(v.rss)}
    ranked = sorted(usable.items(), key=lambda kv: kv[1].rss)
    species, result = ranked[0]
    floor = 1e-12 * float(np.sum((data.y - np.mean(data.y)) ** 2))
    ambiguous = len(ranked) > 1 and ranked[1][1].rss <= (1 + AMBIGUITY) * result.rss + floor
    result.derived["species"] = species
    if result.params["a_perp"] < 1e-3:
        result.flags.append("not_identifiable")
    if ambiguous:
        result.flags.append("ambiguous_species")
    return HyperfineFit(result, species, ambiguous, per_species)


# ---------------------------------------------------------------------------
# CPMG multi-spin refinement
# ---------------------------------------------------------------------------


def cpmg_product_model(tau, spins: Sequence[NuclearSpin], field: FieldConfig, subspace: ElectronSubspace,
                       n_pulses: int):
    total = np.ones_like(np.asarray(tau, dtype=float))
    for spin in spins:
        total = total * nucleus_coherence(spin, subspace, field, SequenceKind.CPMG, tau, n_pulses)
    return total


def fit_cpmg_refine(data: DataSet, field: FieldConfig, subspace: ElectronSubspace, init: Sequence[NuclearSpin],
                    n_spins: int | None = None, n_pulses: int = 8, fit_decay: bool = False) -> FitResult:
    """Jointly refine the couplings of ``n_spins`` nuclei against a CPMG tau sweep.

    Model: ``A * prod_i M_i(tau) + y0`` (times a stretched envelope in the total
    evolution time ``2 N tau`` when ``fit_decay``). Parameters are named
    ``a_par_<i>``, ``a_perp_<i>``, ``amplitude``, ``y0`` (and ``t2``, ``n_stretch``).
    """
    n_spins = len(init) if n_spins is None else n_spins
    if n_spins > len(init):
        raise ValueError(f"need initial couplings for {n_spins} spins, got {len(init)}")
    spins0 = list(init[:n_spins])
    species = [s.species for s in spins0]
    p0: dict[str, float] = {}
    bounds: dict[str, tuple[float, float]] = {}
    for i, s in enumerate(spins0):
        p0[f"a_par_{i}"] = s.coupling.a_par
        p0[f"a_perp_{i}"] = s.coupling.a_perp
        bounds[f"a_par_{i}"] = (-A_LIMIT, A_LIMIT)
        bounds[f"a_perp_{i}"] = (0.0, A_LIMIT)
    if n_spins or fit_decay:
        # with no nuclei and no decay the amplitude is degenerate with y0
        p0["amplitude"] = 1.0
    p0["y0"] = 0.0
    if fit_decay:
        total_time = 2 * n_pulses * float(np.max(data.x))
        p0["t2"] = 10.0 * total_time
        p0["n_stretch"] = 1.0
        bounds["t2"] = (1e-3 * total_time, 1e6 * total_time)
        bounds["n_stretch"] = (0.1, 5.0)

    def model(tau, **p):
        spins = [NuclearSpin(species[i], type(spins0[i].coupling)(p[f"a_par_{i}"], max(p[f"a_perp_{i}"], 0.0)))
                 for i in range(n_spins)]
        signal = cpmg_product_model(tau, spins, field, subspace, n_pulses)
        if fit_decay:
            signal = signal * envelope_factor(2 * n_pulses * np.asarray(tau), p["t2"], p["n_stretch"])
        return p.get("amplitude", 0.0) * signal + p["y0"]

    res = least_squares(model, data, p0, bounds, name=f"cpmg_product[{n_spins}]")
    res.derived["n_pulses"] = n_pulses
    res.derived["species"] = [s.name for s in species]
    return res


def spins_from_fit(result: FitResult, species: Sequence[str]) -> list[NuclearSpin]:
    return [
        NuclearSpin.from_values(sp, result.params[f"a_par_{i}"], result.params[f"a_perp_{i}"])
        for i, sp in enumerate(species)
    ]
