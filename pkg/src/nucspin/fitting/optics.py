"""Optical line shapes: PLE double-Lorentzian and g2 antibunching fits."""

from __future__ import annotations

import numpy as np
from scipy.signal import find_peaks

from .engine import DataSet, FitResult, least_squares


def lorentzian(x, center, fwhm, amplitude):
    """Peak-normalised Lorentzian: ``amplitude`` at ``center``, full width ``fwhm``."""
    hw = 0.5 * fwhm
    return amplitude * hw ** 2 / ((np.asarray(x) - center) ** 2 + hw ** 2)


def double_lorentzian(x, c1, c2, w1, w2, a1, a2, bg):
    return lorentzian(x, c1, w1, a1) + lorentzian(x, c2, w2, a2) + bg


def _peak_guesses(x, y, bg):
    step = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    height = y - bg
    peaks, props = find_peaks(height, prominence=0.0)
    if peaks.size == 0:
        return []
    order = np.argsort(props["prominences"])[::-1]
    out = []
    for p in peaks[order][:2]:
        half = height[p] / 2
        left = p
        while left > 0 and height[left] > half:
            left -= 1
        right = p
        while right < y.size - 1 and height[right] > half:
            right += 1
        width = max((right - left) * step, 2 * step)
        out.append((float(x[p]), width, float(max(height[p], 0.0))))
    return out


def fit_double_lorentzian(data: DataSet) -> FitResult:
    """Two Lorentzians on a constant background; ``x`` in GHz.

    Derived quantities: ``separation_ghz`` (``c2 - c1``, ordered so that peak 2
    is the higher-frequency A2 line), ``width1_mhz``/``width2_mhz`` (FWHM),
    ``amplitude_ratio`` (``a2 / a1``), ``snr`` (largest peak over background)
    and ``a2_center_ghz``. Overlapping centres are flagged ``overlapping``.
    """
    x, y = data.x, data.y
    order = np.argsort(x)
    x, y = x[order], y[order]
    bg = float(np.percentile(y, 20))
    span = float(x[-1] - x[0]) or 1.0
    step = span / max(x.size - 1, 1)
    guesses = _peak_guesses(x, y, bg)
    if not guesses:
        mid = float(np.mean(x))
        guesses = [(mid, 10 * step, 0.0)]
    if len(guesses) == 1:
        c, w, a = guesses[0]
        guesses.append((c + w, w, 0.5 * a))
    guesses.sort()
    (c1, w1, a1), (c2, w2, a2) = guesses
    init = {"c1": c1, "c2": c2, "w1": w1, "w2": w2, "a1": a1, "a2": a2, "bg": bg}
    lo, hi = float(x[0]) - span, float(x[-1]) + span
    bounds = {
        "c1": (lo, hi), "c2": (lo, hi),
        "w1": (step / 10, 2 * span), "w2": (step / 10, 2 * span),
        "a1": (0.0, np.inf), "a2": (0.0, np.inf),
    }
    res = least_squares(double_lorentzian, DataSet(x, y, None if data.sigma is None else data.sigma[order]),
                        init, bounds, name="double_lorentzian")
    p = res.params
    if p["c1"] > p["c2"]:
        for a, b in (("c1", "c2"), ("w1", "w2"), ("a1", "a2")):
            p[a], p[b] = p[b], p[a]
    peak = max(p["a1"], p["a2"])
    res.derived.update({
        "separation_ghz": p["c2"] - p["c1"],
        "width1_mhz": 1e3 * p["w1"],
        "width2_mhz": 1e3 * p["w2"],
        "amplitude_ratio": p["a2"] / p["a1"] if p["a1"] > 0 else np.inf,
        "snr": peak / p["bg"] if p["bg"] > 0 else np.inf,
        "a2_center_ghz": p["c2"],
    })
    if p["c2"] - p["c1"] < 0.5 * (p["w1"] + p["w2"]):
        res.flags.append("overlapping")
    return res


def g2_model(tau, n_emitters, a, tau1, tau2):
    """Photon correlation ``(1/N)[1 - a e^(-|t|/t1) + (1 - a) e^(-|t|/t2)] + (N - 1)/N``."""
    t = np.abs(np.asarray(tau, dtype=float))
    core = 1.0 - a * np.exp(-t / tau1) + (1.0 - a) * np.exp(-t / tau2)
    return core / n_emitters + (n_emitters - 1.0) / n_emitters


def fit_g2(data: DataSet) -> FitResult:
    """Fit the antibunching model; delays in any unit (``tau1``/``tau2`` share it)."""
    t = np.abs(data.x)
    span = float(np.max(t)) or 1.0
    dip = float(np.min(data.y))
    n0 = 1.0 / max(1.0 - dip, 0.05)
    init = {"n_emitters": min(max(n0, 1.0), 10.0), "a": 0.9, "tau1": span / 20, "tau2": span / 4}
    bounds = {"n_emitters": (1e-3, 1e3), "a": (0.0, 1.0), "tau1": (1e-6 * span, 10 * span),
              "tau2": (1e-6 * span, 100 * span)}
    res = least_squares(g2_model, data, init, bounds, name="g2")
    res.derived["g2_zero"] = float(g2_model(0.0, **res.params))
    return res
