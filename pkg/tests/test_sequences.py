import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spin, random_subspace
from nucspin.gates import electron_coherence
from nucspin.sequences import (
    EnvelopeParams,
    SequenceKind,
    SequenceSpec,
    SignalTrace,
    SpinSystem,
    apply_envelope,
    envelope_factor,
    hahn_closed_form,
    hahn_modulation_depth,
    nuclear_operators,
    sequence_coherence,
    pulse_sweep,
    tau_sweep,
)
from nucspin.spinmath import (
    DegeneratePrecessionError,
    ElectronSubspace,
    FieldConfig,
    HyperfineCoupling,
    NuclearSpin,
    conditional_precession,
    get_species,
    larmor_frequency,
)
from nucspin.records import TraceFormatError

B81 = FieldConfig(81.0)
B36 = FieldConfig(36.0)

spins = st.builds(
    NuclearSpin.from_values,
    st.sampled_from(["29Si", "13C"]),
    st.floats(-60, 60),
    st.floats(0, 60),
)
fields = st.builds(FieldConfig, st.floats(0.0, 300.0))


# -- specs -------------------------------------------------------------------


def test_spec_validation():
    assert SequenceSpec.hahn(2.0).n_pulses == 1
    assert SequenceSpec.cpmg(2.0, 0).n_pulses == 0
    with pytest.raises(ValueError):
        SequenceSpec(SequenceKind.HAHN, 1.0, 2)
    with pytest.raises(ValueError):
        SequenceSpec.cpmg(1.0, 3)
    with pytest.raises(ValueError):
        SequenceSpec.cpmg(-1.0, 2)


# -- modulation depth and closed form ----------------------------------------


def test_modulation_depth_examples(n1, subspace):
    assert hahn_modulation_depth(NuclearSpin.from_values("29Si", -23.5, 0.0), subspace, B36) == 0.0
    assert hahn_modulation_depth(n1, subspace, FieldConfig(0.0)) == 0.0
    assert conditional_precession(0.5, n1, B36).freq == pytest.approx(19.66, abs=0.01)
    assert conditional_precession(1.5, n1, B36).freq == pytest.approx(18.62, abs=0.01)
    assert hahn_modulation_depth(n1, subspace, B36) == pytest.approx(0.997, abs=0.001)


def test_modulation_depth_degenerate(subspace):
    f_l = larmor_frequency(get_species("29Si"), B36)
    spin = NuclearSpin(get_species("29Si"), HyperfineCoupling(2 * f_l, 0.0))
    with pytest.raises(DegeneratePrecessionError):
        hahn_modulation_depth(spin, subspace, B36)
    with pytest.raises(DegeneratePrecessionError):
        hahn_closed_form(spin, subspace, B36, 1.0)


def test_closed_form_trivial_cases(n1, subspace):
    assert hahn_closed_form(n1, subspace, B36, 0.0) == pytest.approx(1.0, abs=1e-15)
    flat = NuclearSpin.from_values("29Si", -23.5, 0.0)
    np.testing.assert_allclose(hahn_closed_form(flat, subspace, B36, np.linspace(0, 50, 11)), 1.0)


def test_closed_form_equals_operator(rng):
    # the closed form reproduces the coherence M itself, not the probability (1 + M) / 2
    for _ in range(300):
        spin, sub = random_spin(rng), random_subspace(rng)
        field = FieldConfig(rng.uniform(0, 300))
        tau = rng.uniform(0, 60)
        op = sequence_coherence(SpinSystem(field, sub, (spin,)), SequenceSpec.hahn(tau)).total
        assert abs(hahn_closed_form(spin, sub, field, tau) - op) <= 1e-9


def test_closed_form_is_factored_product(n1, subspace):
    # 2 - 2cos a - 2cos b + cos(a+b) + cos(a-b) = 2 (1 - cos a)(1 - cos b)
    tau = np.linspace(0, 40, 101)
    k = hahn_modulation_depth(n1, subspace, B36)
    a = 2 * np.pi * conditional_precession(0.5, n1, B36).freq * tau * 1e-3
    b = 2 * np.pi * conditional_precession(1.5, n1, B36).freq * tau * 1e-3
    np.testing.assert_allclose(hahn_closed_form(n1, subspace, B36, tau),
                               1 - 0.5 * k * (1 - np.cos(a)) * (1 - np.cos(b)), atol=1e-13)


# -- sequence coherence ------------------------------------------------------


def test_zero_tau_and_empty_system(two_spin):
    assert sequence_coherence(two_spin, SequenceSpec.cpmg(0.0, 8)).total == pytest.approx(1.0, abs=1e-15)
    assert sequence_coherence(two_spin, SequenceSpec.hahn(0.0)).total == pytest.approx(1.0, abs=1e-15)
    bare = SpinSystem(B81)
    for spec in (SequenceSpec.hahn(3.0), SequenceSpec.cpmg(4.0, 16)):
        assert sequence_coherence(bare, spec).total == 1.0
    assert np.all(tau_sweep(bare, 8, np.linspace(1, 21, 5)).values == 1.0)


def test_cpmg_zero_pulses_is_empty(two_spin):
    res = sequence_coherence(two_spin, SequenceSpec.cpmg(5.38, 0))
    assert res.total == 1.0 and res.per_nucleus == (1.0, 1.0)
    assert pulse_sweep(two_spin, 5.38, [0]).values[0] == 1.0


def test_probability_is_affine_in_coherence(two_spin):
    res = sequence_coherence(two_spin, SequenceSpec.cpmg(5.38, 8))
    assert res.probability == pytest.approx((1 + res.total) / 2)


def test_two_spin_factorisation_is_bitwise(two_spin, n1, n2):
    for tau in (1.3, 5.38, 11.7):
        spec = SequenceSpec.cpmg(tau, 8)
        total = sequence_coherence(two_spin, spec).total
        single = [sequence_coherence(SpinSystem(B81, two_spin.subspace, (n,)), spec).total for n in (n1, n2)]
        assert total == single[0] * single[1]


def test_cpmg_operators_stay_in_xz_plane(n1, subspace):
    tau = np.linspace(0.5, 20, 40)
    for n in (2, 8, 16):
        u, v = nuclear_operators(n1, subspace, B81, "cpmg", tau, n)
        assert np.max(np.abs(u.v[:, 1])) < 1e-12 and np.max(np.abs(v.v[:, 1])) < 1e-12
    u, v = nuclear_operators(n1, subspace, B81, "hahn", tau, 1)
    np.testing.assert_allclose(u.v[:, 1], -v.v[:, 1], atol=1e-15)
    np.testing.assert_allclose(u.v[:, [0, 2]], v.v[:, [0, 2]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(spin=spins, field=fields, tau=st.floats(0, 40), n=st.sampled_from([1, 2, 4, 8, 16, 32]))
def test_coherence_bounded(spin, field, tau, n):
    spec = SequenceSpec.hahn(tau) if n == 1 else SequenceSpec.cpmg(tau, n)
    m = sequence_coherence(SpinSystem(field, nuclei=(spin,)), spec).total
    assert -1.0 - 1e-12 <= m <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(a_par=st.floats(-60, 60), field=fields, tau=st.floats(0, 40), n=st.sampled_from([2, 4, 8, 16]),
       name=st.sampled_from(["29Si", "13C"]))
def test_pi_pulse_parity(a_par, field, tau, n, name):
    spin = NuclearSpin.from_values(name, a_par, 0.0)
    m = sequence_coherence(SpinSystem(field, nuclei=(spin, spin)), SequenceSpec.cpmg(tau, n)).total
    assert m == pytest.approx(1.0, abs=1e-12)


def test_against_state_vector(rng):
    for _ in range(20):
        nuclei = tuple(random_spin(rng) for _ in range(rng.integers(0, 3)))
        system = SpinSystem(FieldConfig(rng.uniform(0, 200)), random_subspace(rng), nuclei)
        tau = rng.uniform(0, 25)
        n = int(rng.choice([1, 2, 4, 6, 8]))
        spec = SequenceSpec.hahn(tau) if n == 1 else SequenceSpec.cpmg(tau, n)
        assert abs(sequence_coherence(system, spec).total - electron_coherence(system, spec)) <= 1e-9


# -- sweeps ------------------------------------------------------------------


def test_tau_sweep_minimum_and_single_point(two_spin):
    grid = np.linspace(1, 21, 2001)
    trace = tau_sweep(two_spin, 8, grid)
    assert grid[np.argmin(trace.values)] == pytest.approx(5.38, abs=0.05)
    one = tau_sweep(two_spin, 8, [7.25])
    assert len(one) == 1
    assert one.values[0] == pytest.approx(sequence_coherence(two_spin, SequenceSpec.cpmg(7.25, 8)).total, abs=1e-15)
    assert trace.unit == "us"


def test_tau_sweep_rejects_bad_grids(two_spin):
    with pytest.raises(ValueError):
        tau_sweep(two_spin, 8, [2.0, 1.0])
    with pytest.raises(ValueError):
        tau_sweep(two_spin, 3, [1.0, 2.0])


def test_tau_sweep_hahn_matches_closed_form(n1, subspace):
    grid = np.linspace(0.1, 40, 50)
    trace = tau_sweep(SpinSystem(B36, subspace, (n1,)), 1, grid)
    np.testing.assert_allclose(trace.values, hahn_closed_form(n1, subspace, B36, grid), atol=1e-12)


def test_pulse_sweep_gate_values(two_spin):
    trace = pulse_sweep(two_spin, 5.38, [0, 8, 16])
    assert trace.unit == "pulses"
    assert trace.values[0] == 1.0
    assert trace.values[1] <= -0.95
    assert trace.values[2] >= 0.95


def test_pulse_sweep_fringe_period(two_spin):
    n = np.arange(4, 36, 4)
    values = pulse_sweep(two_spin, 5.38, n).values
    # maxima at multiples of 16, minima at odd multiples of 8; contrast fades slowly with N
    assert np.all(values[n % 16 == 0] > 0.8)
    assert np.all(values[n % 16 == 8] < -0.8)
    assert values.max() - values.min() > 1.8


def test_pulse_sweep_rejects_odd(two_spin):
    with pytest.raises(ValueError):
        pulse_sweep(two_spin, 5.38, [2, 3])


# -- envelopes and serialisation ----------------------------------------------


def test_envelope_examples():
    trace = SignalTrace(np.linspace(0, 2000, 5), np.array([1.0, 0.5, -0.2, 0.3, 0.9]))
    same = apply_envelope(trace, EnvelopeParams())
    np.testing.assert_array_equal(same.values, trace.values)
    for n in (0.5, 1.0, 2.7):
        assert envelope_factor(840.0, 840.0, n) == pytest.approx(math.exp(-1))
    decayed = apply_envelope(trace, EnvelopeParams(amplitude=0.8, t2=840.0, n_stretch=1.5, y0=0.1))
    np.testing.assert_allclose(decayed.values,
                               0.8 * np.exp(-(trace.abscissa / 840.0) ** 1.5) * trace.values + 0.1)


def test_envelope_validation():
    with pytest.raises(ValueError):
        EnvelopeParams(t2=0.0)
    with pytest.raises(ValueError):
        EnvelopeParams(n_stretch=-1.0)


def test_trace_csv_round_trip(tmp_path, two_spin):
    trace = tau_sweep(two_spin, 8, np.linspace(1, 21, 101))
    path = tmp_path / "t.csv"
    text = trace.to_csv(path)
    assert text.splitlines()[:2] == ["# unit=us", "abscissa,value"]
    back = SignalTrace.from_csv(path)
    assert back.unit == "us"
    np.testing.assert_allclose(back.values, trace.values, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(back.abscissa, trace.abscissa, rtol=1e-11)


def test_trace_csv_requires_unit(tmp_path):
    path = tmp_path / "nounit.csv"
    path.write_text("abscissa,value\n1,0.5\n")
    with pytest.raises(TraceFormatError, match="nounit.csv"):
        SignalTrace.from_csv(path)


def test_trace_invariants():
    with pytest.raises(ValueError):
        SignalTrace([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        SignalTrace([1.0, 1.0], [1.0, 1.0])
