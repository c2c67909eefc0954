"""
Hahn-echo and CPMG signals of an electron spin coupled to a few nuclei.

The electron coherence after a decoupling sequence is obtained from the
electron-conditioned nuclear operators ``U`` (electron starts in ``s0``) and
``V`` (starts in ``s1``)::

    Hahn:  U = u1 u0,                V = u0 u1
    CPMG:  U = (u0 u1 u1 u0)^(N/2),  V = (u1 u0 u0 u1)^(N/2)

where ``u_i`` is the free precession for ``tau`` with the electron in ``s_i``.
The per-nucleus coherence is ``M = cos(theta/2)`` of ``V^-1 U``, i.e. the
scalar part of that rotation; nuclei are independent, so the total coherence is
the product over nuclei. The probability to read back ``s0`` is ``(1 + M)/2``.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .records import TraceFormatError, read_columns
from .spinmath import (
    KHZ_US,
    DegeneratePrecessionError,
    ElectronSubspace,
    FieldConfig,
    NuclearSpin,
    Rotation,
    compose,
    conditional_precession,
    inverse,
    larmor_frequency,
    power,
    rotation_from_precession,
)


class SequenceKind(str, enum.Enum):
    HAHN = "hahn"
    CPMG = "cpmg"


@dataclass(frozen=True)
class SpinSystem:
    field: FieldConfig
    subspace: ElectronSubspace = ElectronSubspace()
    nuclei: tuple[NuclearSpin, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))

    def with_nuclei(self, nuclei: Sequence[NuclearSpin]) -> "SpinSystem":
        return SpinSystem(self.field, self.subspace, tuple(nuclei))


@dataclass(frozen=True)
class SequenceSpec:
    """``(tau - pi - tau)^N``; ``tau`` in us.

    Hahn is the ``N = 1`` case. CPMG needs an even ``N``; ``N = 0`` is accepted
    as the empty sequence.
    """

    kind: SequenceKind
    tau: float
    n_pulses: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", SequenceKind(self.kind))
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.kind is SequenceKind.HAHN and self.n_pulses != 1:
            raise ValueError("a Hahn echo has exactly one pi pulse")
        if self.kind is SequenceKind.CPMG and (self.n_pulses < 0 or self.n_pulses % 2):
            raise ValueError(f"CPMG needs an even, non-negative number of pulses, got {self.n_pulses}")

    @classmethod
    def hahn(cls, tau: float) -> "SequenceSpec":
        return cls(SequenceKind.HAHN, tau, 1)

    @classmethod
    def cpmg(cls, tau: float, n_pulses: int) -> "SequenceSpec":
        return cls(SequenceKind.CPMG, tau, n_pulses)


@dataclass(frozen=True, eq=False)
class SignalTrace:
    abscissa: np.ndarray
    values: np.ndarray
    unit: str = "us"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float).reshape(-1)
        y = np.asarray(self.values, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ValueError(f"abscissa and values differ in length ({x.size} vs {y.size})")
        if x.size > 1 and not np.all(np.diff(x) > 0):
            raise ValueError("abscissa must be strictly increasing")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "values", y)

    def __len__(self):
        return self.abscissa.size

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(f"# unit={self.unit}\n")
        buf.write("abscissa,value\n")
        for x, y in zip(self.abscissa, self.values):
            buf.write(f"{x:.12g},{y:.12g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "SignalTrace":
        columns, unit, _ = read_columns(path, ("abscissa", "value"))
        return cls(columns[0], columns[1], unit=unit)


@dataclass(frozen=True)
class EnvelopeParams:
    amplitude: float = 1.0
    t2: float = math.inf
    n_stretch: float = 1.0
    y0: float = 0.0

    def __post_init__(self):
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if not self.n_stretch > 0:
            raise ValueError("n_stretch must be positive")


def envelope_factor(t, t2: float, n_stretch: float):
    t = np.asarray(t, dtype=float)
    if math.isinf(t2):
        return np.ones_like(t)
    return np.exp(-np.power(np.abs(t) / t2, n_stretch))


def apply_envelope(trace: SignalTrace, env: EnvelopeParams) -> SignalTrace:
    """``A * exp(-(t/t2)^n) * value + y0`` pointwise along the trace abscissa."""
    values = env.amplitude * envelope_factor(trace.abscissa, env.t2, env.n_stretch) * trace.values + env.y0
    meta = dict(trace.meta, envelope=vars(env).copy())
    return SignalTrace(trace.abscissa, values, trace.unit, meta)


# ---------------------------------------------------------------------------
# operators and coherences
# ---------------------------------------------------------------------------


def nuclear_operators(spin: NuclearSpin, subspace: ElectronSubspace, field: FieldConfig,
                      kind: SequenceKind | str, tau, n_pulses: int) -> tuple[Rotation, Rotation]:
    """Electron-conditioned nuclear rotations ``(U, V)``; ``tau`` may be an array."""
    kind = SequenceKind(kind)
    u0 = rotation_from_precession(conditional_precession(subspace.s0, spin, field), tau)
    u1 = rotation_from_precession(conditional_precession(subspace.s1, spin, field), tau)
    if kind is SequenceKind.HAHN:
        return compose(u1, u0), compose(u0, u1)
    block_u = compose(u0, compose(u1, compose(u1, u0)))
    block_v = compose(u1, compose(u0, compose(u0, u1)))
    m = n_pulses // 2
    return power(block_u, m), power(block_v, m)


def nucleus_coherence(spin: NuclearSpin, subspace: ElectronSubspace, field: FieldConfig,
                      kind: SequenceKind | str, tau, n_pulses: int):
    u, v = nuclear_operators(spin, subspace, field, kind, tau, n_pulses)
    return compose(inverse(v), u).w


@dataclass(frozen=True)
class CoherenceResult:
    total: float
    per_nucleus: tuple[float, ...]

    @property
    def probability(self) -> float:
        """Probability of reading the electron back in ``s0``."""
        return 0.5 * (1.0 + self.total)


def sequence_coherence(system: SpinSystem, spec: SequenceSpec) -> CoherenceResult:
    if spec.kind is SequenceKind.CPMG and spec.n_pulses == 0:
        parts = tuple(1.0 for _ in system.nuclei)
    else:
        parts = tuple(
            float(nucleus_coherence(n, system.subspace, system.field, spec.kind, spec.tau, spec.n_pulses))
            for n in system.nuclei
        )
    total = float(np.prod(parts)) if parts else 1.0
    return CoherenceResult(total, parts)


def hahn_modulation_depth(spin: NuclearSpin, subspace: ElectronSubspace, field: FieldConfig) -> float:
    """ESEEM modulation depth ``k = ((s1 - s0) f_L A_perp / (f0 f1))^2``.

    The ``(s1 - s0)`` factor is 1 for adjacent projections; it keeps the closed
    form exact for wider subspaces such as ``(-3/2, +3/2)``.
    """
    c0 = conditional_precession(subspace.s0, spin, field)
    c1 = conditional_precession(subspace.s1, spin, field)
    if c0.degenerate or c1.degenerate:
        raise DegeneratePrecessionError("modulation depth undefined for a zero-frequency precession")
    f_l = larmor_frequency(spin.species, field)
    return ((subspace.s1 - subspace.s0) * f_l * spin.coupling.a_perp / (c0.freq * c1.freq)) ** 2


def hahn_closed_form(spin: NuclearSpin, subspace: ElectronSubspace, field: FieldConfig, tau):
    """Closed-form Hahn-echo coherence of one nucleus (scalar or array ``tau``)."""
    k = hahn_modulation_depth(spin, subspace, field)
    f0 = conditional_precession(subspace.s0, spin, field).freq
    f1 = conditional_precession(subspace.s1, spin, field).freq
    tau = np.asarray(tau, dtype=float)
    a = 2 * np.pi * f0 * tau * KHZ_US
    b = 2 * np.pi * f1 * tau * KHZ_US
    out = 1.0 - 0.25 * k * (2 - 2 * np.cos(a) - 2 * np.cos(b) + np.cos(a + b) + np.cos(a - b))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _coherence_grid(system: SpinSystem, kind: SequenceKind, tau, n_pulses: int):
    tau = np.asarray(tau, dtype=float)
    parts = [nucleus_coherence(n, system.subspace, system.field, kind, tau, n_pulses) for n in system.nuclei]
    total = np.ones_like(tau)
    for p in parts:
        total = total * p
    return total, parts


def tau_sweep(system: SpinSystem, n_pulses: int, tau_grid) -> SignalTrace:
    """Coherence versus ``tau`` (us) at fixed pulse number (``1`` = Hahn echo)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size > 1 and not np.all(np.diff(tau_grid) > 0):
        raise ValueError("tau grid must be strictly increasing")
    if np.any(tau_grid < 0):
        raise ValueError("tau must be non-negative")
    if n_pulses == 1:
        kind = SequenceKind.HAHN
    else:
        SequenceSpec.cpmg(0.0, n_pulses)  # validates parity
        kind = SequenceKind.CPMG
    if n_pulses == 0:
        total, parts = np.ones_like(tau_grid), [np.ones_like(tau_grid) for _ in system.nuclei]
    else:
        total, parts = _coherence_grid(system, kind, tau_grid, n_pulses)
    meta = {"kind": kind.value, "n_pulses": n_pulses, "per_nucleus": [np.asarray(p) for p in parts]}
    return SignalTrace(tau_grid, total, "us", meta)


def pulse_sweep(system: SpinSystem, tau: float, n_list: Sequence[int]) -> SignalTrace:
    """Coherence versus (even) CPMG pulse number at fixed ``tau``."""
    n_list = [int(n) for n in n_list]
    if any(n % 2 or n < 0 for n in n_list):
        raise ValueError(f"pulse numbers must be even and non-negative, got {n_list}")
    values = [sequence_coherence(system, SequenceSpec.cpmg(tau, n)).total for n in n_list]
    return SignalTrace(np.array(n_list, dtype=float), np.array(values), "pulses",
                       {"kind": "cpmg", "tau_us": tau})
