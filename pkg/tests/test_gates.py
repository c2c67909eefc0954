import json
import math

import numpy as np
import pytest

from conftest import random_spin, random_subspace
from nucspin.gates import (
    BARE,
    BELL_FRAME,
    RAMSEY,
    BipartiteState,
    GateKind,
    GateTarget,
    electron_coherence,
    extract_conditional_rotations,
    gate_fidelity,
    gate_json,
    gate_record,
    sequence_unitary,
    simulate_sequence,
)
from nucspin.resonance import ResonanceQuery, tau_exact
from nucspin.sequences import SequenceSpec, SpinSystem, sequence_coherence
from nucspin.spinmath import ElectronSubspace, FieldConfig, NuclearSpin

B81 = FieldConfig(81.0)
SUB = ElectronSubspace(0.5, 1.5)
N1 = NuclearSpin.from_values("29Si", -23.5, 12.0)
N2 = NuclearSpin.from_values("29Si", 0.2, 8.5)
N1_CRIT = NuclearSpin.from_values("29Si", -23.6, 12.2)
SPECTATOR = NuclearSpin.from_values("29Si", 0.0, 0.0)


def wrapped(angle):
    """SO(3) rotation angle in [0, pi] of an SU(2) angle in [0, 2 pi]."""
    return min(angle, 2 * math.pi - angle)


# -- states ------------------------------------------------------------------


def test_state_basis_ordering():
    psi = BipartiteState.product(1, (0, 1))
    assert np.flatnonzero(psi.amplitudes).tolist() == [0b101]
    assert psi.probability_s0() == 0.0
    assert BipartiteState.product(0, ()).probability_s0() == 1.0


def test_state_validation():
    with pytest.raises(ValueError):
        BipartiteState(np.array([1.0, 1.0]), 0)
    with pytest.raises(ValueError):
        BipartiteState(np.array([1.0, 0.0, 0.0]), 1)


def test_reduced_density_of_product_state():
    rho = BipartiteState.product(0, (1, 0)).reduced_density((0, 2))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    np.testing.assert_allclose(rho, expected)


# -- simulate_sequence ---------------------------------------------------------


def test_empty_sequences_leave_state_unchanged(two_spin):
    psi = BipartiteState.product(0, (1, 0))
    for spec in (SequenceSpec.cpmg(5.0, 0), SequenceSpec.cpmg(0.0, 0)):
        out = simulate_sequence(psi, two_spin, spec)
        np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)


def test_state_nuclei_count_must_match(two_spin):
    with pytest.raises(ValueError):
        simulate_sequence(BipartiteState.product(0, (0,)), two_spin, SequenceSpec.cpmg(5.0, 2))


def test_unitarity(rng):
    for _ in range(10):
        nuclei = tuple(random_spin(rng) for _ in range(rng.integers(1, 3)))
        system = SpinSystem(FieldConfig(rng.uniform(0, 200)), random_subspace(rng), nuclei)
        spec = SequenceSpec.cpmg(rng.uniform(0, 20), int(rng.choice([2, 4, 8, 16])))
        for frame in (BARE, RAMSEY, BELL_FRAME):
            u = sequence_unitary(system, spec, frame)
            np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-10)
        amp = rng.normal(size=2 ** (1 + len(nuclei))) + 1j * rng.normal(size=2 ** (1 + len(nuclei)))
        psi = BipartiteState(amp / np.linalg.norm(amp), len(nuclei))
        out = simulate_sequence(psi, system, spec, RAMSEY)
        assert abs(np.linalg.norm(out.amplitudes) - 1.0) <= 1e-10


def test_hahn_readout_probability(rng):
    # averaged over nuclear eigenstates, P(s0) after the Ramsey-framed Hahn echo is (1 + M) / 2
    for _ in range(10):
        spin = random_spin(rng)
        system = SpinSystem(FieldConfig(rng.uniform(0, 200)), random_subspace(rng), (spin,))
        spec = SequenceSpec.hahn(rng.uniform(0, 30))
        u = sequence_unitary(system, spec, RAMSEY)
        p = np.mean([BipartiteState(u @ BipartiteState.product(0, (m,)).amplitudes, 1).probability_s0()
                     for m in (0, 1)])
        assert abs(p - sequence_coherence(system, spec).probability) <= 1e-9


def test_factor_consistency(rng):
    for _ in range(20):
        nuclei = tuple(random_spin(rng) for _ in range(rng.integers(0, 3)))
        system = SpinSystem(FieldConfig(rng.uniform(0, 200)), random_subspace(rng), nuclei)
        spec = SequenceSpec.cpmg(rng.uniform(0, 20), int(rng.choice([2, 4, 6, 8])))
        assert abs(electron_coherence(system, spec) - sequence_coherence(system, spec).total) <= 1e-9


def test_identity_returns_initial_state():
    system = SpinSystem(B81, SUB, (N1,))
    psi = BipartiteState.product(0, (0,))
    out = simulate_sequence(psi, system, SequenceSpec.cpmg(5.38, 16))
    assert abs(out.overlap(psi)) ** 2 >= 0.98


# -- conditional rotations -------------------------------------------------------


def test_n1_rotations_at_gate_tau(two_spin):
    gate = extract_conditional_rotations(two_spin, 0, SequenceSpec.cpmg(5.38, 4))
    assert gate.axes_dot <= -0.9995
    for axis in (gate.axis_u, gate.axis_v):
        assert axis[1] == pytest.approx(0.0, abs=1e-12)
        assert axis[0] ** 2 == pytest.approx(0.94, abs=0.015)
        assert axis[2] ** 2 == pytest.approx(0.06, abs=0.015)
    assert gate.angle_u / math.pi == pytest.approx(0.49, abs=0.015)
    assert gate.angle_u == pytest.approx(gate.angle_v, abs=1e-12)


def test_n1_rotations_at_exact_resonance():
    tr = tau_exact(ResonanceQuery(N1_CRIT, SUB, B81, 1))
    gate = extract_conditional_rotations(SpinSystem(B81, SUB, (N1_CRIT,)), 0, SequenceSpec.cpmg(tr, 4))
    assert gate.axes_dot <= -0.999994
    assert gate.angle_u / math.pi == pytest.approx(0.49, abs=0.01)


def test_n2_small_rotation_at_resonance():
    tr = tau_exact(ResonanceQuery(N1, SUB, B81, 1))
    gate = extract_conditional_rotations(SpinSystem(B81, SUB, (N2,)), 0, SequenceSpec.cpmg(tr, 4))
    assert gate.axis_u[2] > 0.95 and gate.axis_v[2] > 0.95
    assert gate.axes_dot > 0.95
    assert wrapped(gate.angle_u) == pytest.approx(0.04, abs=0.005)


def test_angle_accumulates_over_blocks():
    tr = tau_exact(ResonanceQuery(N1, SUB, B81, 1))
    system = SpinSystem(B81, SUB, (N1,))
    block = extract_conditional_rotations(system, 0, SequenceSpec.cpmg(tr, 2)).angle_u
    for n in (4, 6, 8, 12):
        angle = extract_conditional_rotations(system, 0, SequenceSpec.cpmg(tr, n)).angle_u
        expected = (n // 2 * block) % (4 * math.pi)
        assert math.cos(angle / 2) == pytest.approx(math.cos(expected / 2), abs=1e-9)


def test_extract_rejects_hahn(two_spin):
    with pytest.raises(ValueError):
        extract_conditional_rotations(two_spin, 0, SequenceSpec.hahn(5.0))


def test_gate_coherence_matches_sequences(two_spin):
    spec = SequenceSpec.cpmg(7.3, 8)
    gate = extract_conditional_rotations(two_spin, 1, spec)
    assert gate.coherence == pytest.approx(sequence_coherence(two_spin, spec).per_nucleus[1], abs=1e-15)


# -- fidelities ------------------------------------------------------------------


@pytest.mark.parametrize("n,kind,expected", [(4, "bell", 0.97), (8, "x", 0.94), (16, "identity", 0.98)])
def test_reference_fidelities(two_spin, n, kind, expected):
    f = gate_fidelity(two_spin, 0, SequenceSpec.cpmg(5.38, n), GateTarget(kind, 0))
    assert f == pytest.approx(expected, abs=0.01)


def test_fidelity_in_unit_interval(rng, two_spin):
    for _ in range(5):
        spec = SequenceSpec.cpmg(rng.uniform(1, 20), int(rng.choice([2, 4, 8])))
        for kind in GateKind:
            assert 0.0 <= gate_fidelity(two_spin, int(rng.integers(0, 2)), spec, kind) <= 1.0 + 1e-12


def test_spectator_independence():
    base = SpinSystem(B81, SUB, (N1, N2))
    extended = SpinSystem(B81, SUB, (N1, N2, SPECTATOR))
    for n, kind in ((4, "bell"), (8, "x"), (16, "identity")):
        spec = SequenceSpec.cpmg(5.38, n)
        assert abs(gate_fidelity(base, 0, spec, kind) - gate_fidelity(extended, 0, spec, kind)) <= 1e-12


def test_gate_record_schema(two_spin):
    record = gate_record(two_spin, 0, SequenceSpec.cpmg(5.38, 8), GateTarget(GateKind.NUCLEAR_X))
    payload = json.loads(gate_json(record))
    assert set(payload) == {"target", "n_pulses", "tau_us", "fidelity", "axis_u", "axis_v", "angle_u", "angle_v"}
    assert payload["target"] == "x" and payload["n_pulses"] == 8
    assert payload["fidelity"] == pytest.approx(0.94, abs=0.01)
