import math

import numpy as np
import pytest

from src.errors import ConfigurationError
from src.geometry.constants import GAMMA_C13, MAGIC_ANGLE
from src.geometry.couplings import CouplingSet, compute_couplings
from src.geometry.layout import SpinLayout, build_chain, build_layer_grid
from src.hamiltonian.builders import (
    HamiltonianOptions,
    build_novel_hamiltonian,
    build_nuclear_dipolar,
    build_nuclear_frame_hamiltonian,
    build_secular_hamiltonian,
    count_secular_terms,
    dipolar_pairs,
)
from src.hamiltonian.terms import (
    TermBuilder,
    canonical_product,
    export_terms,
    import_terms,
    product_operator,
    to_dense,
)

J_CHAIN = 2 * math.pi * 1.4e3


def _system(positions):
    layout = SpinLayout(nv_position=np.zeros(3), nuclear_positions=positions)
    return layout, compute_couplings(layout)


def test_on_axis_nucleus_has_zeeman_and_zz_terms_only():
    layout, couplings = _system([[0.0, 0.0, 1.0]])
    terms = build_secular_hamiltonian(layout, couplings)
    a_zz = couplings.hyperfine[0, 2]
    assert len(terms) == 2
    assert terms.coefficient([(1, "Z")]) == pytest.approx(couplings.larmor - 0.5 * a_zz)
    assert terms.coefficient([(0, "Z"), (1, "Z")]) == pytest.approx(a_zz)
    assert terms.involves_site_axes(0) == {"Z"}


def test_term_count_matches_pair_enumeration():
    layout = build_layer_grid(3, 2, 0.2, 1.0)
    couplings = compute_couplings(layout)
    terms = build_secular_hamiltonian(layout, couplings)
    assert len(terms) == count_secular_terms(layout, couplings)
    n = layout.n_nuclei
    # 每个核至多 3 个单体项和 3 个 NV 两体项
    assert len(terms) <= 6 * n + 3 * math.comb(n, 2)


def test_flip_flop_coefficients_for_uniform_coupling():
    layout = build_chain(2, 0.154, 1.0)
    couplings = compute_couplings(layout)
    terms = build_nuclear_dipolar(layout, couplings, options=HamiltonianOptions(uniform_j=J_CHAIN))
    assert terms.coefficient([(1, "Z"), (2, "Z")]) == pytest.approx(J_CHAIN)
    assert terms.coefficient([(1, "X"), (2, "X")]) == pytest.approx(-0.5 * J_CHAIN)
    assert terms.coefficient([(1, "Y"), (2, "Y")]) == pytest.approx(-0.5 * J_CHAIN)
    assert len(terms) == 3


def test_magic_angle_pair_emits_no_dipolar_terms():
    direction = np.array([math.sin(MAGIC_ANGLE), 0.0, math.cos(MAGIC_ANGLE)])
    layout, couplings = _system([[0.0, 0.0, 1.0], direction * 0.3 + [0.0, 0.0, 1.0]])
    assert len(build_nuclear_dipolar(layout, couplings)) == 0


def test_nearest_neighbor_chain_has_nine_bonds():
    layout = build_chain(10, 0.154, 1.0)
    couplings = compute_couplings(layout)
    options = HamiltonianOptions(uniform_j=J_CHAIN, neighbor_mode="nearest")
    assert len(dipolar_pairs(layout, options)) == 9
    assert len(build_nuclear_dipolar(layout, couplings, options=options)) == 27


def test_full_dipolar_tensor_is_traceless_per_pair():
    layout = build_chain(2, 0.2, 1.0)
    couplings = compute_couplings(layout)
    terms = build_nuclear_dipolar(layout, couplings, mode="full")
    trace = sum(terms.coefficient([(1, a), (2, a)]) for a in "XYZ")
    assert trace == pytest.approx(0.0, abs=1e-9 * terms.max_abs_coefficient())
    # ZZ 分量与长期近似中的 J 一致
    assert terms.coefficient([(1, "Z"), (2, "Z")]) == pytest.approx(couplings.nuclear_dipolar[0, 1])


def test_hartmann_hahn_drive_at_600_gauss():
    layout = build_chain(2, 0.154, 1.0, field_magnitude=0.06)
    couplings = compute_couplings(layout)
    omega = couplings.larmor
    assert omega == pytest.approx(2 * math.pi * 642.5e3, rel=1e-4)
    assert omega == pytest.approx(GAMMA_C13 * 0.06)
    terms = build_novel_hamiltonian(layout, couplings, omega)
    assert terms.coefficient([(0, "Y")]) == pytest.approx(omega)


def test_zero_drive_reproduces_secular_hamiltonian():
    layout = build_chain(3, 0.154, 1.0)
    couplings = compute_couplings(layout)
    assert build_novel_hamiltonian(layout, couplings, 0.0) == build_secular_hamiltonian(layout, couplings)


def test_detuned_drive_differs_by_detuning():
    layout = build_chain(2, 0.154, 1.0)
    couplings = compute_couplings(layout)
    delta = 2 * math.pi * 3.0e3
    matched = build_novel_hamiltonian(layout, couplings, couplings.larmor)
    detuned = build_novel_hamiltonian(layout, couplings, couplings.larmor + delta)
    difference = detuned.coefficient([(0, "Y")]) - matched.coefficient([(0, "Y")])
    assert difference == pytest.approx(delta)


def test_negative_drive_is_rejected():
    layout = build_chain(2, 0.154, 1.0)
    with pytest.raises(ConfigurationError):
        build_novel_hamiltonian(layout, compute_couplings(layout), -1.0)


def test_secular_matrix_is_hermitian_and_commutes_with_nv_z():
    layout = build_layer_grid(2, 1, 0.2, 1.0)
    couplings = compute_couplings(layout)
    terms = build_secular_hamiltonian(layout, couplings)
    h = to_dense(terms)
    np.testing.assert_allclose(h, h.conj().T, atol=0)
    eigenvalues = np.linalg.eigvals(h)
    assert np.max(np.abs(eigenvalues.imag)) <= 1e-10 * np.linalg.norm(h, 2)
    z_nv = product_operator(((0, "Z"),), terms.n_sites).toarray()
    assert np.max(np.abs(h @ z_nv - z_nv @ h)) == 0.0


def test_drive_breaks_nv_z_symmetry():
    layout = build_chain(1, 0.154, 1.0)
    couplings = compute_couplings(layout)
    h = to_dense(build_novel_hamiltonian(layout, couplings, couplings.larmor))
    z_nv = product_operator(((0, "Z"),), 2).toarray()
    assert np.max(np.abs(h @ z_nv - z_nv @ h)) > 0.0


def test_builder_is_deterministic():
    layout = build_layer_grid(2, 2, 0.2, 1.0)
    couplings = compute_couplings(layout)
    first = build_secular_hamiltonian(layout, couplings)
    second = build_secular_hamiltonian(layout, couplings)
    assert first.terms == second.terms
    assert first.content_hash() == second.content_hash()


def test_terms_text_form_round_trips_exactly():
    layout = build_chain(3, 0.154, 1.0)
    terms = build_secular_hamiltonian(layout, compute_couplings(layout))
    text = export_terms(terms)
    assert text.startswith("# layersim-terms v1")
    assert import_terms(text) == terms


def test_mismatched_couplings_are_rejected():
    layout = build_chain(3, 0.154, 1.0)
    couplings = compute_couplings(build_chain(2, 0.154, 1.0))
    with pytest.raises(ConfigurationError):
        build_secular_hamiltonian(layout, couplings)


def test_builder_merges_duplicates_and_drops_zeros():
    builder = TermBuilder(3)
    builder.add([(2, "x"), (1, "z")], 1.0)
    builder.add([(1, "Z"), (2, "X")], 2.0)
    builder.add([(0, "Y")], 0.5)
    builder.add([(0, "Y")], -0.5)
    terms = builder.build()
    assert terms.terms == ((((1, "Z"), (2, "X")), 3.0),)


@pytest.mark.parametrize("factors", [[(0, "X"), (0, "Z")], [(0, "Q")], [(-1, "X")]])
def test_invalid_products_are_rejected(factors):
    with pytest.raises(ConfigurationError):
        canonical_product(factors)


def test_site_outside_system_is_rejected():
    with pytest.raises(ConfigurationError):
        TermBuilder(2).add([(2, "Z")], 1.0)


def test_nuclear_frame_drive_and_offset():
    layout = build_chain(3, 0.154, 1.0)
    couplings = compute_couplings(layout)
    rabi = 2 * math.pi * 37.14e3
    frame = build_nuclear_frame_hamiltonian(layout, couplings, drive=rabi)
    assert frame.n_sites == 3
    assert all(frame.coefficient([(i, "X")]) == pytest.approx(rabi) for i in range(3))
    assert frame.coefficient([(0, "Z"), (1, "Z")]) == pytest.approx(couplings.nuclear_dipolar[0, 1])
    shifted = build_nuclear_frame_hamiltonian(layout, couplings, drive=rabi, offset=1)
    assert shifted.n_sites == 4
    assert shifted.involves_site_axes(0) == set()
    assert shifted.coefficient([(1, "Z"), (2, "Z")]) == pytest.approx(couplings.nuclear_dipolar[0, 1])


def test_detunings_enter_as_single_site_z_terms():
    layout = build_chain(2, 0.154, 1.0)
    couplings = CouplingSet(np.zeros((2, 3)), np.zeros((2, 2)), 0.0)
    options = HamiltonianOptions(detunings=(100.0, -50.0))
    frame = build_nuclear_frame_hamiltonian(layout, couplings, options)
    assert frame.coefficient([(0, "Z")]) == 100.0
    assert frame.coefficient([(1, "Z")]) == -50.0
    with pytest.raises(ConfigurationError):
        build_nuclear_frame_hamiltonian(layout, couplings, HamiltonianOptions(detunings=(1.0,)))
