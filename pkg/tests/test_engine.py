import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.engine.action import precompute_action
from src.engine.basis import TruncationRule, closed_form_size, enumerate_basis, proximity_triplets
from src.engine.pauli import anticommutes, commutator_sign, multiply, pauli_string
from src.engine.propagate import (
    bloch_violation,
    collective_z,
    evolve,
    evolve_batch,
    polarized_nv_state,
    product_state,
    step,
)
from src.engine.pulses import apply_pulse, laser_reset, pulse_axis
from src.errors import CapacityError, ConfigurationError, QueryError, StepSizeError
from src.geometry.couplings import compute_couplings
from src.geometry.layout import build_chain, build_layer_grid
from src.hamiltonian.builders import build_secular_hamiltonian
from src.hamiltonian.terms import PAULI_MATRICES
from src.oracle import dense

# 高阶小步长，使 Taylor 误差远低于比较容差
PRECISE = {"order": 8, "bound": 0.05}

BLOCH = np.array([
    [1.0, 0.0, 0.0],
    [0.3, -0.2, 0.5],
    [-0.4, 0.1, 0.6],
])


def _matrix(string, n_sites):
    lookup = dict(string)
    op = np.eye(1, dtype=complex)
    for site in range(n_sites):
        op = np.kron(op, PAULI_MATRICES[lookup.get(site, "I")])
    return op


def _two_nucleus_system():
    layout = build_chain(2, 0.2, 1.0)
    hamiltonian = build_secular_hamiltonian(layout, compute_couplings(layout))
    basis = enumerate_basis(2)
    table = precompute_action(hamiltonian, basis)
    return hamiltonian, basis, table


pauli_strings = st.dictionaries(st.integers(0, 2), st.sampled_from("XYZ"), max_size=3).map(
    lambda d: pauli_string(*sorted(d.items()))
)


def test_single_site_products():
    assert multiply(pauli_string("X0"), pauli_string("Y0")) == (1, pauli_string("Z0"))
    assert multiply(pauli_string("Y0"), pauli_string("X0")) == (3, pauli_string("Z0"))
    assert multiply(pauli_string("X0"), pauli_string("X0")) == (0, ())
    assert pauli_string("Z0", "X3") == ((0, "Z"), (3, "X"))


@given(pauli_strings, pauli_strings)
def test_string_product_matches_matrices(left, right):
    power, result = multiply(left, right)
    expected = _matrix(left, 3) @ _matrix(right, 3)
    np.testing.assert_allclose((1j) ** power * _matrix(result, 3), expected, atol=1e-12)


def test_commutator_sign():
    assert commutator_sign(pauli_string("X0"), pauli_string("Y0")) == (1, pauli_string("Z0"))
    assert commutator_sign(pauli_string("Y0"), pauli_string("X0")) == (-1, pauli_string("Z0"))
    # 两处不同轴，整体对易
    assert not anticommutes(pauli_string("X0", "X1"), pauli_string("Z0", "Z1"))
    assert commutator_sign(pauli_string("X0", "X1"), pauli_string("Z0", "Z1")) == (0, ())


def test_malformed_strings_are_rejected():
    with pytest.raises(ConfigurationError):
        pauli_string("X0", "Z0")
    with pytest.raises(ConfigurationError):
        pauli_string("Q1")


@pytest.mark.parametrize("rule", [
    TruncationRule(),
    TruncationRule(nv_triplets=False),
    TruncationRule(nuclear_pairs=False),
])
@pytest.mark.parametrize("n", [1, 2, 3, 6])
def test_enumeration_matches_closed_form(rule, n):
    basis = enumerate_basis(n, rule)
    assert len(basis) == closed_form_size(n, rule)
    assert len(set(basis.strings)) == len(basis)
    assert basis.strings[0] == ()


def test_closed_form_for_one_hundred_nuclei():
    pairs = math.comb(100, 2)
    assert closed_form_size(100) == 1 + 3 * 101 + 9 * pairs + 9 * 100 + 27 * pairs


def test_small_systems_are_complete():
    # 一个或两个核时截断基就是全部 4^(n+1) 个 Pauli 串
    assert len(enumerate_basis(1)) == 16
    assert len(enumerate_basis(2)) == 64


def test_capacity_is_enforced_before_enumeration():
    with pytest.raises(CapacityError) as excinfo:
        enumerate_basis(50, max_size=1000)
    assert excinfo.value.size == closed_form_size(50)
    assert excinfo.value.limit == 1000


def test_basis_needs_a_nucleus():
    with pytest.raises(ConfigurationError):
        enumerate_basis(0)


def test_three_body_nuclear_string_is_not_admitted():
    basis = enumerate_basis(3)
    string = pauli_string("X1", "X2", "X3")
    assert not basis.admits(string)
    with pytest.raises(QueryError):
        basis.index_of(string)


def test_proximity_triplets_extend_the_basis():
    layout = build_layer_grid(2, 2, 0.154, 1.0)
    triplets = proximity_triplets(layout.nuclear_positions, 0.154 * math.sqrt(2) * 1.01)
    assert len(triplets) == 4
    rule = TruncationRule(proximity_triplets=triplets)
    basis = enumerate_basis(4, rule)
    assert len(basis) == closed_form_size(4) + 27 * 4
    assert basis.admits(pauli_string("X1", "Y2", "Z3"))


def test_basis_hash_depends_on_rule():
    assert enumerate_basis(3).content_hash != enumerate_basis(3, TruncationRule(nv_triplets=False)).content_hash


def test_complete_basis_drops_nothing():
    _, _, table = _two_nucleus_system()
    assert table.dropped_fraction == 0.0
    assert table.norm_bound > 0.0


def test_truncation_drops_weight_for_three_nuclei():
    layout = build_chain(3, 0.154, 1.0)
    hamiltonian = build_secular_hamiltonian(layout, compute_couplings(layout))
    table = precompute_action(hamiltonian, enumerate_basis(3))
    assert 0.0 < table.dropped_fraction < 1.0


def test_table_layouts_agree():
    hamiltonian, basis, table = _two_nucleus_system()
    source = precompute_action(hamiltonian, basis, layout="source")
    np.testing.assert_array_equal(source.to_dense(), table.to_dense())
    with pytest.raises(ConfigurationError):
        precompute_action(hamiltonian, basis, layout="diagonal")


def test_hamiltonian_larger_than_basis_is_rejected():
    layout = build_chain(3, 0.154, 1.0)
    hamiltonian = build_secular_hamiltonian(layout, compute_couplings(layout))
    with pytest.raises(ConfigurationError):
        precompute_action(hamiltonian, enumerate_basis(2))


def test_truncated_dynamics_match_dense_oracle():
    hamiltonian, basis, table = _two_nucleus_system()
    t = 5e-6
    truncated = evolve(product_state(basis, BLOCH), table, t, **PRECISE)
    reference = dense.evolve_dense(dense.product_state(BLOCH), hamiltonian, t)
    for string in basis.strings:
        assert truncated[string] == pytest.approx(dense.expectation(reference, string), abs=1e-8)


def test_rescaled_time_equals_rescaled_hamiltonian():
    _, basis, table = _two_nucleus_system()
    state = product_state(basis, BLOCH)
    direct = evolve(state, table, 2e-6, **PRECISE)
    rescaled = evolve(state, table, 4e-6, alpha=0.5, **PRECISE)
    np.testing.assert_allclose(rescaled.coefficients, direct.coefficients, atol=1e-10)


def test_evolution_composes():
    _, basis, table = _two_nucleus_system()
    state = product_state(basis, BLOCH)
    whole = evolve(state, table, 3e-6, **PRECISE)
    split = evolve(evolve(state, table, 1e-6, **PRECISE), table, 2e-6, **PRECISE)
    np.testing.assert_allclose(split.coefficients, whole.coefficients, atol=1e-8)


def test_bloch_vectors_stay_bounded():
    layout = build_chain(4, 0.154, 1.0)
    basis = enumerate_basis(4)
    table = precompute_action(build_secular_hamiltonian(layout, compute_couplings(layout)), basis)
    state = polarized_nv_state(basis, nuclear_polarization=0.5)
    assert state[pauli_string("Z0")] == 1.0
    assert collective_z(state) == pytest.approx(0.5)
    evolved = evolve(state, table, 2e-5)
    assert evolved.basis is basis
    assert bloch_violation(evolved) <= 1e-6


def test_batch_columns_match_single_runs():
    _, basis, table = _two_nucleus_system()
    state = product_state(basis, BLOCH)
    alphas = [0.5, 1.0, -1.0]
    batch = evolve_batch(np.repeat(state.coefficients[:, None], 3, axis=1), table, 1e-6, alphas, **PRECISE)
    for column, alpha in enumerate(alphas):
        if alpha < 0:
            continue
        single = evolve(state, table, 1e-6, alpha=alpha, **PRECISE)
        np.testing.assert_allclose(batch[:, column], single.coefficients, atol=1e-9)


def test_reversed_hamiltonian_undoes_evolution():
    _, basis, table = _two_nucleus_system()
    state = product_state(basis, BLOCH)
    forward = evolve_batch(state.coefficients[:, None], table, 1e-6, [1.0], **PRECISE)
    back = evolve_batch(forward, table, 1e-6, [-1.0], **PRECISE)
    np.testing.assert_allclose(back[:, 0], state.coefficients, atol=1e-9)


def test_oversized_step_is_refused():
    _, basis, table = _two_nucleus_system()
    state = product_state(basis, BLOCH)
    with pytest.raises(StepSizeError):
        step(state, table, 1.0)
    small = 0.05 / table.norm_bound
    assert step(state, table, small).coefficients.shape == state.coefficients.shape
    with pytest.raises(ConfigurationError):
        evolve(state, table, -1e-6)


def test_pulse_axes():
    np.testing.assert_array_equal(pulse_axis("-Y"), [0.0, -1.0, 0.0])
    np.testing.assert_allclose(pulse_axis(math.pi / 2), [0.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(pulse_axis([0.0, 0.0, 2.0]), [0.0, 0.0, 1.0])
    with pytest.raises(ConfigurationError):
        pulse_axis("W")


def test_pulse_rotation_is_right_handed():
    basis = enumerate_basis(2)
    state = polarized_nv_state(basis)
    rotated = apply_pulse(state, [0], "X", math.pi / 2)
    assert rotated[pauli_string("Y0")] == pytest.approx(-1.0)
    assert rotated[pauli_string("Z0")] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("axis, angle", [("X", math.pi), ("Y", 0.3), (0.7, 1.1), ((1.0, 1.0, 1.0), 2.0)])
def test_pulses_match_dense_rotation(axis, angle):
    basis = enumerate_basis(2)
    sites = [0, 2]
    truncated = apply_pulse(product_state(basis, BLOCH), sites, axis, angle)
    reference = dense.apply_rotation(dense.product_state(BLOCH), sites, pulse_axis(axis), angle)
    for string in basis.strings:
        assert truncated[string] == pytest.approx(dense.expectation(reference, string), abs=1e-12)


def test_pulse_and_inverse_cancel():
    basis = enumerate_basis(3, TruncationRule(proximity_triplets=((1, 2, 3),)))
    state = polarized_nv_state(basis, nuclear_polarization=0.3)
    there = apply_pulse(state, [0, 1, 2, 3], (0.2, 0.5, 0.8), 1.3)
    back = apply_pulse(there, [0, 1, 2, 3], (0.2, 0.5, 0.8), -1.3)
    np.testing.assert_allclose(back.coefficients, state.coefficients, atol=1e-12)


def test_laser_reset_matches_dense():
    basis = enumerate_basis(2)
    truncated = laser_reset(product_state(basis, BLOCH))
    reference = dense.laser_reset(dense.product_state(BLOCH))
    assert truncated[pauli_string("Z0")] == 1.0
    assert truncated[pauli_string("X0")] == 0.0
    for string in basis.strings:
        assert truncated[string] == pytest.approx(dense.expectation(reference, string), abs=1e-12)
