import math

import numpy as np
import pytest
from scipy import linalg

from src.errors import CapacityError, ConfigurationError
from src.geometry.couplings import compute_couplings
from src.geometry.layout import build_chain
from src.hamiltonian.builders import build_novel_hamiltonian, build_secular_hamiltonian
from src.hamiltonian.terms import HamiltonianTerms, TermBuilder, to_dense
from src.oracle import dense
from src.oracle.dephasing import DephasingModel, dephasing_average, draw_all, ramsey_envelope

UNIT_BLOCH = [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [0.0, 0.0, -1.0]]


def _novel_terms():
    layout = build_chain(2, 0.154, 1.0)
    couplings = compute_couplings(layout)
    return build_novel_hamiltonian(layout, couplings, couplings.larmor)


def _reference(terms, rho, t):
    u = linalg.expm(-1j * to_dense(terms) * t)
    return u @ rho @ u.conj().T


def test_pure_and_density_modes_agree():
    terms = _novel_terms()
    pure = dense.evolve_dense(dense.product_state(UNIT_BLOCH, mode="pure"), terms, 3e-6)
    mixed = dense.evolve_dense(dense.product_state(UNIT_BLOCH), terms, 3e-6)
    for product in [((0, "Z"),), ((1, "X"),), ((0, "Y"), (2, "Z")), ((1, "Y"), (2, "X"))]:
        assert dense.expectation(pure, product) == pytest.approx(dense.expectation(mixed, product), abs=1e-10)


def test_evolution_matches_matrix_exponential():
    terms = _novel_terms()
    state = dense.product_state(UNIT_BLOCH)
    evolved = dense.evolve_dense(state, terms, 2e-6)
    np.testing.assert_allclose(evolved.data, _reference(terms, state.data, 2e-6), atol=1e-10)


def test_diagonal_hamiltonian_uses_phases():
    builder = TermBuilder(2)
    builder.add([(0, "Z")], 1.0e5)
    builder.add([(0, "Z"), (1, "Z")], 3.0e4)
    terms = builder.build()
    propagator = dense.DensePropagator(terms)
    assert propagator.diagonal
    state = dense.product_state([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(propagator.apply(state, 1e-5).data, _reference(terms, state.data, 1e-5), atol=1e-12)


def test_detuned_batch_matches_individual_runs():
    terms = _novel_terms()
    propagator = dense.DensePropagator(terms)
    state = dense.product_state(UNIT_BLOCH, mode="pure")
    detunings = np.array([[1.0e3, -2.0e3], [5.0e2, 0.0]])
    batch = dense.DenseState(np.repeat(state.data[None, :], 2, axis=0), state.n_sites, "pure")
    evolved = propagator.apply(batch, 4e-6, detunings=detunings, sites=[1, 2])
    for k, row in enumerate(detunings):
        builder = TermBuilder(3)
        for product, coef in terms:
            builder.add(product, coef)
        builder.add([(1, "Z")], row[0])
        builder.add([(2, "Z")], row[1])
        expected = linalg.expm(-1j * to_dense(builder.build()) * 4e-6) @ state.data
        np.testing.assert_allclose(evolved.data[k], expected, atol=1e-10)


def test_rotation_of_nv_only():
    state = dense.apply_rotation(dense.product_state([[0, 0, 1.0], [0, 0, 1.0]]), [0], (0.0, 1.0, 0.0), math.pi / 2)
    # 绕 y 右手转 90°：z → x
    assert dense.expectation(state, ((0, "X"),)) == pytest.approx(1.0)
    assert dense.expectation(state, ((1, "Z"),)) == pytest.approx(1.0)


def test_laser_reset_keeps_nuclear_state():
    state = dense.product_state([[0.0, 1.0, 0.0], [0.6, 0.0, 0.0], [0.0, 0.0, 0.5]])
    reset = dense.laser_reset(state)
    assert dense.expectation(reset, ((0, "Z"),)) == pytest.approx(1.0)
    assert dense.expectation(reset, ((0, "Y"),)) == pytest.approx(0.0)
    assert dense.expectation(reset, ((1, "X"),)) == pytest.approx(0.6)
    assert dense.collective_z(reset, [2]) == pytest.approx(0.5)
    assert np.trace(reset.data) == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        dense.laser_reset(dense.product_state(UNIT_BLOCH, mode="pure"))


def test_partial_trace_of_product_state():
    state = dense.product_state([[0.0, 0.0, 1.0], [0.2, 0.0, 0.0]])
    reduced = dense.partial_trace(state, 0)
    np.testing.assert_allclose(reduced, [[0.5, 0.1], [0.1, 0.5]], atol=1e-14)


def test_thermal_state_polarization():
    state = dense.thermal_product_state(3, [0.1, 0.2, 0.3])
    assert dense.expectation(state, ((0, "Z"),)) == pytest.approx(1.0)
    assert dense.collective_z(state, [1, 2, 3]) == pytest.approx(0.2)
    assert dense.collective_z(state, [1, 3], weights=[1.0, 3.0]) == pytest.approx(0.25)


def test_capacity_limit():
    with pytest.raises(CapacityError) as excinfo:
        dense.check_capacity(5, limit=4)
    assert excinfo.value.size == 32
    dense.check_capacity(4, limit=4)


def test_pure_state_needs_unit_vectors():
    with pytest.raises(ConfigurationError):
        dense.product_state([[0.0, 0.0, 0.5]], mode="pure")


def test_secular_dynamics_conserve_nv_population():
    layout = build_chain(2, 0.154, 1.0)
    terms = build_secular_hamiltonian(layout, compute_couplings(layout))
    state = dense.product_state([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    evolved = dense.evolve_dense(state, terms, 1e-4)
    assert dense.expectation(evolved, ((0, "Z"),)) == pytest.approx(1.0, abs=1e-12)


def test_negative_time_is_rejected():
    state = dense.product_state(UNIT_BLOCH)
    with pytest.raises(ConfigurationError):
        dense.evolve_dense(state, _novel_terms(), -1.0)
    with pytest.raises(ConfigurationError):
        dense.evolve_dense(dense.product_state([[0, 0, 1.0]]), _novel_terms(), 1.0)


def test_draws_are_reproducible():
    model = DephasingModel(t2=1e-4, n_samples=50, seed=7)
    np.testing.assert_array_equal(draw_all(model, 3, 2), draw_all(model, 3, 2))
    other = DephasingModel(t2=1e-4, n_samples=50, seed=8)
    assert not np.array_equal(draw_all(model, 3, 2), draw_all(other, 3, 2))


@pytest.mark.parametrize("law", ["normal", "uniform"])
def test_draw_scale(law):
    model = DephasingModel(t2=1e-4, sampling_law=law, n_samples=4000, seed=1)
    draws = draw_all(model, 1, 1).ravel()
    assert model.scale == pytest.approx(math.sqrt(2) / 1e-4)
    assert draws.std() == pytest.approx(model.scale, rel=0.05)
    if law == "uniform":
        assert np.abs(draws).max() <= math.sqrt(3) * model.scale


def test_common_mode_shares_detuning():
    model = DephasingModel(t2=1e-4, n_samples=10, common_mode=True)
    draws = draw_all(model, 4, 3)
    np.testing.assert_array_equal(draws[..., 0], draws[..., 2])


def test_average_matches_ramsey_envelope():
    model = DephasingModel(t2=1e-4, n_samples=4000, seed=3)
    times = np.linspace(0.0, 2e-4, 21)

    def run_paths(detunings):
        return np.cos(detunings[:, 0, 0][:, None] * times[None, :])

    averaged = dephasing_average(run_paths, model, 1, 1, batch_size=512)
    np.testing.assert_allclose(averaged, ramsey_envelope(model, times), atol=0.05)
    # 正态律在 T2 处衰减到 1/e
    assert ramsey_envelope(model, 1e-4) == pytest.approx(math.exp(-1.0))


def test_infinite_t2_runs_one_path():
    calls = []

    def run_paths(detunings):
        calls.append(len(detunings))
        return np.ones((len(detunings), 4))

    result = dephasing_average(run_paths, DephasingModel(t2=math.inf, n_samples=100), 2, 1)
    assert calls == [1]
    np.testing.assert_array_equal(result, np.ones(4))


@pytest.mark.parametrize("kwargs", [{"t2": 0.0}, {"t2": 1e-4, "n_samples": 0}, {"t2": 1e-4, "sampling_law": "cauchy"}])
def test_invalid_models_are_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        DephasingModel(**kwargs)
