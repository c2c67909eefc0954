"""Electron-nuclear spin decoupling simulation, resonance analysis, fits and laser refocusing."""

from .spinmath import (
    ElectronSubspace,
    FieldConfig,
    HyperfineCoupling,
    NuclearSpecies,
    NuclearSpin,
    Rotation,
    conditional_precession,
)
from .sequences import SequenceKind, SequenceSpec, SignalTrace, SpinSystem, sequence_coherence

__version__ = "0.1.0"

__all__ = [
    "ElectronSubspace",
    "FieldConfig",
    "HyperfineCoupling",
    "NuclearSpecies",
    "NuclearSpin",
    "Rotation",
    "SequenceKind",
    "SequenceSpec",
    "SignalTrace",
    "SpinSystem",
    "conditional_precession",
    "sequence_coherence",
]
