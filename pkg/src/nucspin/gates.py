"""
State-vector simulation of decoupling sequences and nuclear gate fidelities.

The Hilbert space is the electron two-level manifold ``{|s0>, |s1>}`` times one
qubit per nucleus. Basis index = ``e * 2**n + bits`` with the electron factor
first and nucleus 0 the most significant nuclear bit; ``|up> = 0``.

Free evolution uses the matrix exponential of the block Hamiltonian
``sum_i |s_i><s_i| (x) 2 pi f_i n_i . I`` and does not share code with the
rotation algebra of :mod:`nucspin.spinmath`, which makes it usable as an
independent check of :mod:`nucspin.sequences`.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .sequences import SequenceKind, SequenceSpec, SpinSystem, nuclear_operators
from .spinmath import KHZ_US, Rotation, compose, conditional_precession, inverse

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
PAULI = {"x": SX, "y": SY, "z": SZ}


@dataclass(frozen=True, eq=False)
class BipartiteState:
    amplitudes: np.ndarray
    n_nuclei: int

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != 2 ** (1 + self.n_nuclei):
            raise ValueError(f"expected {2 ** (1 + self.n_nuclei)} amplitudes, got {amp.size}")
        if abs(np.vdot(amp, amp).real - 1.0) > 1e-10:
            raise ValueError("state is not normalised")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def product(cls, electron: int, nuclear: tuple[int, ...] | list[int]) -> "BipartiteState":
        """Basis state ``|s_electron> (x) |nuclear bits>``."""
        n = len(nuclear)
        idx = electron
        for bit in nuclear:
            idx = 2 * idx + bit
        amp = np.zeros(2 ** (1 + n), dtype=complex)
        amp[idx] = 1.0
        return cls(amp, n)

    def overlap(self, other: "BipartiteState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def probability_s0(self) -> float:
        half = self.amplitudes.size // 2
        return float(np.vdot(self.amplitudes[:half], self.amplitudes[:half]).real)

    def reduced_density(self, keep: tuple[int, ...]) -> np.ndarray:
        """Density matrix of the listed subsystems (0 = electron, j+1 = nucleus j)."""
        n_sub = 1 + self.n_nuclei
        psi = self.amplitudes.reshape((2,) * n_sub)
        rest = [i for i in range(n_sub) if i not in keep]
        psi = np.transpose(psi, list(keep) + rest).reshape(2 ** len(keep), -1)
        return psi @ psi.conj().T


@dataclass(frozen=True)
class Frame:
    """Electron pulses wrapped around the ``(tau - pi - tau)^N`` core.

    ``final_half_pi`` is the inverse of the initial one, so that without nuclei
    the electron is returned to ``s0``. ``refocus_odd`` appends one more pi
    pulse for odd ``N`` so that the ``s0`` branch always ends in ``s0``.
    """

    initial_half_pi: bool = False
    final_half_pi: bool = False
    axis: str = "x"
    refocus_odd: bool = True


BARE = Frame()
RAMSEY = Frame(initial_half_pi=True, final_half_pi=True)
BELL_FRAME = Frame(initial_half_pi=True, final_half_pi=True)


def _electron_op(op: np.ndarray, n: int) -> np.ndarray:
    return np.kron(op, np.eye(2 ** n, dtype=complex))


def _half_pi(axis: str, sign: float) -> np.ndarray:
    return np.cos(np.pi / 4) * I2 - 1j * sign * np.sin(np.pi / 4) * PAULI[axis]


PI_PULSE = -1j * SX


def free_propagator(system: SpinSystem, tau: float) -> np.ndarray:
    """``exp(-i H tau)`` on the full space, ``tau`` in us."""
    n = len(system.nuclei)
    dim_n = 2 ** n
    h = np.zeros((2 * dim_n, 2 * dim_n), dtype=complex)
    for e, s in enumerate((system.subspace.s0, system.subspace.s1)):
        block = np.zeros((dim_n, dim_n), dtype=complex)
        for j, spin in enumerate(system.nuclei):
            cp = conditional_precession(s, spin, system.field)
            omega = 2 * np.pi * cp.freq * KHZ_US
            local = 0.5 * omega * sum(a * PAULI[c] for a, c in zip(cp.axis, "xyz"))
            ops = [I2] * n
            ops[j] = local
            term = ops[0]
            for o in ops[1:]:
                term = np.kron(term, o)
            block += term
        h[e * dim_n:(e + 1) * dim_n, e * dim_n:(e + 1) * dim_n] = block
    return expm(-1j * h * tau)


def sequence_unitary(system: SpinSystem, spec: SequenceSpec, frame: Frame = BARE) -> np.ndarray:
    n = len(system.nuclei)
    dim = 2 ** (1 + n)
    total = np.eye(dim, dtype=complex)
    if frame.initial_half_pi:
        total = _electron_op(_half_pi(frame.axis, +1), n) @ total
    if spec.n_pulses > 0:
        free = free_propagator(system, spec.tau)
        flip = _electron_op(PI_PULSE, n)
        block = free @ flip @ free
        for _ in range(spec.n_pulses):
            total = block @ total
        if spec.n_pulses % 2 and frame.refocus_odd:
            total = flip @ total
    if frame.final_half_pi:
        total = _electron_op(_half_pi(frame.axis, -1), n) @ total
    return total


def simulate_sequence(state0: BipartiteState, system: SpinSystem, spec: SequenceSpec,
                      frame: Frame = BARE) -> BipartiteState:
    if state0.n_nuclei != len(system.nuclei):
        raise ValueError("state and system disagree on the number of nuclei")
    out = sequence_unitary(system, spec, frame) @ state0.amplitudes
    return BipartiteState(out, state0.n_nuclei)


def electron_coherence(system: SpinSystem, spec: SequenceSpec) -> float:
    """``2 P(s0) - 1`` after the full Ramsey-framed sequence, nuclei unpolarised."""
    n = len(system.nuclei)
    u = sequence_unitary(system, spec, RAMSEY)
    p = 0.0
    for bits in itertools.product((0, 1), repeat=n):
        psi = BipartiteState.product(0, bits)
        p += BipartiteState(u @ psi.amplitudes, n).probability_s0()
    return 2.0 * p / 2 ** n - 1.0


# ---------------------------------------------------------------------------
# conditional rotations and fidelities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalGate:
    rot_u: Rotation
    rot_v: Rotation

    @property
    def axis_u(self) -> np.ndarray:
        return self.rot_u.axis

    @property
    def axis_v(self) -> np.ndarray:
        return self.rot_v.axis

    @property
    def angle_u(self) -> float:
        return self.rot_u.angle

    @property
    def angle_v(self) -> float:
        return self.rot_v.angle

    @property
    def axes_dot(self) -> float:
        return float(np.dot(self.axis_u, self.axis_v))

    @property
    def coherence(self) -> float:
        return float(compose(inverse(self.rot_v), self.rot_u).w)


def extract_conditional_rotations(system: SpinSystem, index: int, spec: SequenceSpec) -> ConditionalGate:
    if spec.kind is not SequenceKind.CPMG:
        raise ValueError("conditional rotations are extracted for CPMG sequences")
    u, v = nuclear_operators(system.nuclei[index], system.subspace, system.field,
                             spec.kind, spec.tau, spec.n_pulses)
    return ConditionalGate(u, v)


class GateKind(str, enum.Enum):
    BELL_FAMILY = "bell"
    NUCLEAR_X = "x"
    IDENTITY = "identity"


@dataclass(frozen=True)
class GateTarget:
    kind: GateKind
    nucleus: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))


_R2 = 1 / np.sqrt(2)
BELL_STATES = {
    "Phi+": np.array([1, 0, 0, 1], dtype=complex) * _R2,
    "Phi-": np.array([1, 0, 0, -1], dtype=complex) * _R2,
    "Psi+": np.array([0, 1, 1, 0], dtype=complex) * _R2,
    "Psi-": np.array([0, 1, -1, 0], dtype=complex) * _R2,
}


def _pair_density(system, spec, frame, target_idx, electron, target_bit):
    """Electron/target-nucleus density matrix, other nuclei unpolarised."""
    n = len(system.nuclei)
    u = sequence_unitary(system, spec, frame)
    others = [j for j in range(n) if j != target_idx]
    rho = np.zeros((4, 4), dtype=complex)
    configs = list(itertools.product((0, 1), repeat=len(others)))
    for cfg in configs:
        bits = [0] * n
        bits[target_idx] = target_bit
        for j, b in zip(others, cfg):
            bits[j] = b
        psi = BipartiteState(u @ BipartiteState.product(electron, bits).amplitudes, n)
        rho += psi.reduced_density((0, 1 + target_idx))
    return rho / len(configs)


def gate_fidelity(system: SpinSystem, index: int, spec: SequenceSpec, target: GateTarget | GateKind | str) -> float:
    """Overlap ``<target| rho |target>`` of the electron/nucleus pair.

    * Bell family: electron pi/2 (x) at start and inverse at the end, nucleus
      starts in ``|up>``; best of the four standard Bell states.
    * nuclear X / identity: bare sequence, averaged over the four eigenstates
      ``|s_e> (x) |m>``; targets ``|s_e> (x) X|m>`` and ``|s_e> (x) |m>``.
    """
    if not isinstance(target, GateTarget):
        target = GateTarget(GateKind(target), index)
    kind = target.kind
    if kind is GateKind.BELL_FAMILY:
        rho = _pair_density(system, spec, BELL_FRAME, index, 0, 0)
        return float(max(np.vdot(b, rho @ b).real for b in BELL_STATES.values()))
    fids = []
    for e, m in itertools.product((0, 1), (0, 1)):
        rho = _pair_density(system, spec, BARE, index, e, m)
        m_out = 1 - m if kind is GateKind.NUCLEAR_X else m
        t = np.zeros(4, dtype=complex)
        t[2 * e + m_out] = 1.0
        fids.append(np.vdot(t, rho @ t).real)
    return float(np.mean(fids))


def gate_record(system: SpinSystem, index: int, spec: SequenceSpec, target: GateTarget) -> dict:
    gate = extract_conditional_rotations(system, index, spec)
    return {
        "target": GateKind(target.kind).value,
        "n_pulses": spec.n_pulses,
        "tau_us": spec.tau,
        "fidelity": gate_fidelity(system, index, spec, target),
        "axis_u": [float(x) for x in gate.axis_u],
        "axis_v": [float(x) for x in gate.axis_v],
        "angle_u": gate.angle_u,
        "angle_v": gate.angle_v,
    }


def gate_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True)
