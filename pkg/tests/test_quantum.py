"""
Tests for the fixed-dimension quantum utilities: states, unitaries, channels,
partial traces and fidelities.
"""

import numpy as np
import pytest

from sivnode.core.errors import DimensionError, InvalidStateError
from sivnode.core.quantum import (
    PAULI_X,
    DensityMatrix,
    KrausChannel,
    UnitaryOperator,
    apply_channel,
    apply_selective,
    bell_overlap,
    bell_state,
    check_amplitude,
    dephasing_channel,
    depolarizing_channel,
    embed_channel,
    partial_trace,
    pauli_channel,
    process_fidelity,
    random_channel,
    random_density_matrix,
    random_unitary,
    tensor_product,
    trace_distance,
)


def test_tensor_of_mixed_qubits_is_mixed():
    """Oracle test: I/2 ⊗ I/2 = I/4"""
    out = tensor_product(DensityMatrix.maximally_mixed(2), DensityMatrix.maximally_mixed(2))
    assert np.allclose(out.entries, np.eye(4) / 4)


def test_tensor_of_basis_states():
    """Oracle test: |0⟩⟨0| ⊗ |1⟩⟨1| = |01⟩⟨01|"""
    out = tensor_product(DensityMatrix.basis(2, 0), DensityMatrix.basis(2, 1))
    assert np.allclose(out.entries, DensityMatrix.basis(4, 1).entries)


def test_tensor_trace_is_multiplicative():
    """Property test: tr(a⊗b) = tr(a)·tr(b) over random pairs"""
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = random_density_matrix(2, rng)
        b = random_density_matrix(3, rng)
        assert tensor_product(a, b).trace() == pytest.approx(a.trace() * b.trace(), abs=1e-12)


def test_tensor_rejects_dimension_overflow():
    """Contract test: products above 64 dimensions are rejected"""
    with pytest.raises(DimensionError):
        tensor_product(DensityMatrix.maximally_mixed(16), DensityMatrix.maximally_mixed(8))


def test_state_constructor_rejects_oversized_matrix():
    """Contract test: a 65-dim matrix is not a valid state"""
    with pytest.raises(DimensionError):
        DensityMatrix(np.eye(65) / 65)


def test_state_invariants_checked():
    """Contract test: non-Hermitian, wrong-trace and negative states are rejected"""
    with pytest.raises(InvalidStateError):
        DensityMatrix(np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(InvalidStateError):
        DensityMatrix(np.eye(2))
    with pytest.raises(InvalidStateError):
        DensityMatrix(np.diag([1.5, -0.5]))
    unnormalized = DensityMatrix(np.diag([0.2, 0.1]), unnormalized=True)
    assert unnormalized.trace() == pytest.approx(0.3)


def test_partial_trace_of_bell_state():
    """Oracle test: keeping one half of |Φ⁺⟩ leaves I/2"""
    reduced = partial_trace(bell_state("phi+"), keep=[0], dims=[2, 2])
    assert np.allclose(reduced.entries, np.eye(2) / 2)


def test_partial_trace_of_product_state():
    """Oracle test: tr_B(a⊗b) = a"""
    rng = np.random.default_rng(2)
    a = random_density_matrix(2, rng)
    b = random_density_matrix(2, rng)
    reduced = partial_trace(tensor_product(a, b), keep=[0], dims=[2, 2])
    assert np.allclose(reduced.entries, a.entries, atol=1e-12)


def test_partial_trace_orders_commute():
    """Property test: tracing {2} then {1} equals tracing {1, 2} at once"""
    rng = np.random.default_rng(3)
    rho = random_density_matrix(8, rng)
    stepwise = partial_trace(partial_trace(rho, keep=[0, 1], dims=[2, 2, 2]), keep=[0], dims=[2, 2])
    direct = partial_trace(rho, keep=[0], dims=[2, 2, 2])
    assert np.allclose(stepwise.entries, direct.entries, atol=1e-12)
    assert direct.trace() == pytest.approx(1.0)


def test_partial_trace_rejects_bad_dims():
    """Contract test: dims must multiply to the state dimension"""
    with pytest.raises(DimensionError):
        partial_trace(DensityMatrix.maximally_mixed(4), keep=[0], dims=[2, 3])


@pytest.mark.parametrize(
    "state, expected",
    [
        (bell_state("phi+"), 1.0),
        (DensityMatrix.maximally_mixed(4), 0.25),
        (bell_state("psi+"), 0.0),
    ],
)
def test_bell_overlap_values(state, expected):
    """Oracle test: Φ⁺ overlap of reference states"""
    assert bell_overlap(state) == pytest.approx(expected, abs=1e-12)


def test_bell_overlap_needs_two_qubits():
    """Contract test: overlap is only defined on 4-dim states"""
    with pytest.raises(DimensionError):
        bell_overlap(DensityMatrix.maximally_mixed(2))


def test_identity_channel_leaves_state():
    """Oracle test: the identity channel is a no-op"""
    rho = random_density_matrix(2, np.random.default_rng(4))
    out = apply_channel(rho, KrausChannel((np.eye(2),)))
    assert np.allclose(out.entries, rho.entries)


def test_full_depolarizing_gives_mixed_state():
    """Oracle test: p = 1 depolarizing maps any qubit state to I/2"""
    rho = random_density_matrix(2, np.random.default_rng(5))
    out = apply_channel(rho, depolarizing_channel(1.0))
    assert np.allclose(out.entries, np.eye(2) / 2, atol=1e-12)


def test_channels_preserve_trace_and_positivity():
    """Property test: random CPTP maps keep states valid"""
    rng = np.random.default_rng(6)
    for _ in range(50):
        rho = random_density_matrix(4, rng)
        channel = random_channel(4, 3, rng)
        out = apply_channel(rho, channel)
        assert out.trace() == pytest.approx(1.0, abs=1e-10)
        assert np.linalg.eigvalsh(out.entries).min() > -1e-8


def test_dephasing_shrinks_coherence():
    """Oracle test: off-diagonals scale by (1 − p)"""
    plus = DensityMatrix.from_ket([1, 1])
    out = apply_channel(plus, dephasing_channel(0.3))
    assert out.entries[0, 1].real == pytest.approx(0.5 * 0.7)


def test_pauli_channel_flip():
    """Oracle test: px = 1 is a bit flip"""
    out = apply_channel(DensityMatrix.basis(2, 0), pauli_channel(1.0, 0.0, 0.0))
    assert np.allclose(out.entries, DensityMatrix.basis(2, 1).entries)
    with pytest.raises(InvalidStateError):
        pauli_channel(0.6, 0.6, 0.0)


def test_channel_dim_mismatch_rejected():
    """Contract test: channel and state dims must agree"""
    with pytest.raises(DimensionError):
        apply_channel(DensityMatrix.maximally_mixed(4), depolarizing_channel(0.1))


def test_non_trace_preserving_channel_rejected():
    """Contract test: Σ K†K ≠ I needs the selective flag"""
    half = np.sqrt(0.5) * np.eye(2)
    with pytest.raises(InvalidStateError):
        KrausChannel((half,))
    KrausChannel((half,), selective=True)


def test_selective_channel_returns_probability():
    """Contract test: heralded branch is unnormalized with its success probability"""
    projector = np.diag([1.0, 0.0]).astype(complex)
    state, prob = apply_selective(DensityMatrix.maximally_mixed(2), KrausChannel((projector,), selective=True))
    assert prob == pytest.approx(0.5)
    assert state.unnormalized
    assert state.trace() == pytest.approx(0.5)


def test_embedded_channel_acts_on_one_factor():
    """Oracle test: flipping factor 1 of |00⟩ gives |01⟩"""
    flip = KrausChannel((PAULI_X,))
    out = apply_channel(DensityMatrix.basis(4, 0), embed_channel(flip, [2, 2], target=1))
    assert np.allclose(out.entries, DensityMatrix.basis(4, 1).entries)


def test_unitary_checks_and_composition():
    """Contract test: non-unitary rejected; then() applies left operand first; apply conjugates"""
    with pytest.raises(InvalidStateError):
        UnitaryOperator(np.array([[1, 1], [0, 1]]))
    rng = np.random.default_rng(7)
    u, v = random_unitary(3, rng), random_unitary(3, rng)
    assert np.allclose(u.then(v).entries, v.entries @ u.entries)
    assert np.allclose(u.then(u.dagger()).entries, np.eye(3), atol=1e-12)
    flipped = UnitaryOperator(PAULI_X).apply(DensityMatrix.basis(2, 0))
    assert np.allclose(flipped.entries, DensityMatrix.basis(2, 1).entries)
    with pytest.raises(DimensionError):
        u.apply(DensityMatrix.basis(2, 0))


def test_process_fidelity_and_trace_distance():
    """Oracle test: identical operators have F = 1; orthogonal states are distance 1"""
    u = random_unitary(4, np.random.default_rng(8)).entries
    assert process_fidelity(u, u) == pytest.approx(1.0)
    assert process_fidelity(np.eye(2), PAULI_X) == pytest.approx(0.0)
    assert trace_distance(DensityMatrix.basis(2, 0), DensityMatrix.basis(2, 1)) == pytest.approx(1.0)


def test_amplitudes_must_be_finite():
    """Contract test: NaN/inf amplitudes never escape"""
    assert check_amplitude(1 + 2j) == 1 + 2j
    with pytest.raises(InvalidStateError):
        check_amplitude(complex(float("nan"), 0))
