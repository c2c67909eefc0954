"""
Bounded derivative-free least squares.

Every model in this package is smooth and has at most ~8 parameters, so a
Nelder-Mead simplex on the residual sum of squares is enough. Parameters are
rescaled by their initial magnitude so the simplex and the tolerances are
relative. After the first descent the converged point is perturbed by +-10 %
per parameter (a fixed sign pattern) and the descent is restarted; the best
point over all runs is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize

from ..records import read_columns

Bounds = Mapping[str, tuple[float, float]]

N_RESTARTS = 3
REL_TOL = 1e-10
MAX_ITER = 100_000

_RESTART_SIGNS = (
    lambda i: 1.0 if i % 2 == 0 else -1.0,
    lambda i: -1.0 if i % 2 == 0 else 1.0,
    lambda i: 1.0 if (i // 2) % 2 == 0 else -1.0,
)


@dataclass(frozen=True, eq=False)
class DataSet:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    x_unit: str = ""
    y_unit: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ValueError(f"x and y differ in length ({x.size} vs {y.size})")
        if x.size == 0:
            raise ValueError("empty data set")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float).reshape(-1)
            if s.shape != x.shape or np.any(s <= 0):
                raise ValueError("sigma must be positive and match the data length")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.x.size

    @classmethod
    def from_csv(cls, path: str | Path) -> "DataSet":
        cols, unit, _ = read_columns(path, ("x", "y"), optional=("sigma",))
        return cls(cols[0], cols[1], cols[2] if len(cols) > 2 else None, x_unit=unit)

    def to_csv(self, path: str | Path | None = None) -> str:
        lines = [f"# unit={self.x_unit or 'arb'}"]
        if self.sigma is None:
            lines.append("x,y")
            lines += [f"{a:.12g},{b:.12g}" for a, b in zip(self.x, self.y)]
        else:
            lines.append("x,y,sigma")
            lines += [f"{a:.12g},{b:.12g},{s:.12g}" for a, b, s in zip(self.x, self.y, self.sigma)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    rss: float
    iterations: int
    converged: bool
    derived: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {
            "model": self.model,
            "params": dict(self.params),
            "rss": self.rss,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.derived:
            rec["derived"] = dict(self.derived)
        if self.flags:
            rec["flags"] = list(self.flags)
        return rec


def _scales(init: Mapping[str, float], bounds: Bounds) -> np.ndarray:
    out = []
    for name, value in init.items():
        if value != 0:
            out.append(abs(value))
            continue
        lo, hi = bounds.get(name, (-math.inf, math.inf))
        span = hi - lo
        out.append(0.1 * span if math.isfinite(span) and span > 0 else 1.0)
    return np.array(out, dtype=float)


def minimize_rss(residual: Callable[[dict], np.ndarray], init: Mapping[str, float], bounds: Bounds | None = None,
                 model: str = "custom", n_restarts: int = N_RESTARTS, rel_tol: float = REL_TOL,
                 max_iter: int = MAX_ITER, initial_step: float = 0.05) -> FitResult:
    """Minimise ``sum(residual(params)**2)`` over the parameters of ``init``.

    ``initial_step`` is the relative edge of the starting simplex; a small value
    together with ``n_restarts=0`` keeps the descent inside the starting basin.
    """
    bounds = dict(bounds or {})
    names = list(init)
    for name, value in init.items():
        lo, hi = bounds.get(name, (-math.inf, math.inf))
        if not lo <= value <= hi:
            raise ValueError(f"initial {name}={value} outside bounds [{lo}, {hi}]")
    scale = _scales(init, bounds)
    zb = [
        (bounds.get(n, (-math.inf, math.inf))[0] / s, bounds.get(n, (-math.inf, math.inf))[1] / s)
        for n, s in zip(names, scale)
    ]
    lo = np.array([b[0] for b in zb])
    hi = np.array([b[1] for b in zb])

    def unpack(z):
        return dict(zip(names, (np.asarray(z) * scale).tolist()))

    def objective(z):
        r = np.asarray(residual(unpack(z)), dtype=float)
        val = float(np.dot(r, r))
        return val if math.isfinite(val) else math.inf

    z0 = np.array([init[n] for n in names], dtype=float) / scale
    # convergence is judged on the simplex size in scaled (relative) parameter
    # units only; a function-value tolerance either stops too early on noisy data
    # or never triggers on exact data, whose residual sits at the rounding floor
    opts = {"xatol": rel_tol, "fatol": math.inf, "maxiter": max_iter, "maxfev": max_iter,
            "adaptive": len(names) > 4}
    use_bounds = list(zb) if any(np.isfinite(lo)) or any(np.isfinite(hi)) else None

    simplex = np.vstack([z0] + [z0 + initial_step * np.where(z0 == 0, 1.0, z0) * np.eye(len(names))[i]
                                for i in range(len(names))])
    if use_bounds is not None:
        simplex = np.clip(simplex, lo, hi)
    res = minimize(objective, z0, method="Nelder-Mead", bounds=use_bounds,
                   options=dict(opts, initial_simplex=simplex))
    best_z, best_f, converged = res.x, res.fun, bool(res.success)
    iterations = int(res.nit)
    for r in range(n_restarts):
        if iterations >= max_iter:
            break
        sign = np.array([_RESTART_SIGNS[r % len(_RESTART_SIGNS)](i) for i in range(len(names))])
        start = np.clip(best_z * (1.0 + 0.1 * sign), lo, hi)
        start = np.where(best_z == 0, np.clip(0.1 * sign, lo, hi), start)
        left = max_iter - iterations
        res = minimize(objective, start, method="Nelder-Mead", bounds=use_bounds,
                       options=dict(opts, maxiter=left, maxfev=left))
        iterations += int(res.nit)
        if res.fun < best_f:
            best_z, best_f, converged = res.x, res.fun, bool(res.success)
    params = unpack(best_z)
    return FitResult(model, params, float(best_f), iterations, converged and math.isfinite(best_f))


def least_squares(model: Callable[..., np.ndarray], data: DataSet, init: Mapping[str, float],
                  bounds: Bounds | None = None, name: str | None = None, **kwargs) -> FitResult:
    """Fit ``model(x, **params)`` to ``data`` (weighted by ``sigma`` if present)."""
    if len(data) < len(init):
        raise ValueError(f"{len(data)} data points cannot constrain {len(init)} parameters")
    weight = 1.0 / data.sigma if data.sigma is not None else 1.0

    def residual(p):
        return (data.y - model(data.x, **p)) * weight

    return minimize_rss(residual, init, bounds, model=name or getattr(model, "__name__", "model"), **kwargs)

