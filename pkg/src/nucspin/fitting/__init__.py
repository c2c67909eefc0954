"""Least-squares engine and the model fits built on it."""

from .engine import DataSet, FitResult, least_squares, minimize_rss
from .implant import GridModel, GridRegistration, YieldResult, analyze_yield, register_grid
from .optics import double_lorentzian, fit_double_lorentzian, fit_g2, g2_model, lorentzian
from .spin import (
    FitError,
    HyperfineFit,
    cpmg_product_model,
    fit_cpmg_refine,
    fit_envelope,
    fit_hahn_hyperfine,
    mirror_couplings,
    spins_from_fit,
    stretched_exponential,
)

__all__ = [
    "DataSet",
    "FitError",
    "FitResult",
    "GridModel",
    "GridRegistration",
    "HyperfineFit",
    "YieldResult",
    "analyze_yield",
    "cpmg_product_model",
    "double_lorentzian",
    "fit_cpmg_refine",
    "fit_double_lorentzian",
    "fit_envelope",
    "fit_g2",
    "fit_hahn_hyperfine",
    "g2_model",
    "least_squares",
    "lorentzian",
    "minimize_rss",
    "mirror_couplings",
    "register_grid",
    "spins_from_fit",
    "stretched_exponential",
]
