import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import constants
from scipy.integrate import quad

from src.errors import HyperfineValidityWarning, InvalidGeometryError, SingularityError
from src.geometry.constants import (
    DIAMOND_LATTICE_NM,
    GAMMA_C13,
    GAMMA_ELECTRON,
    LAYER_TILT,
    MAGIC_ANGLE,
    dipolar_prefactor,
)
from src.geometry.couplings import (
    compute_couplings,
    hyperfine_vector,
    mean_abs_coupling,
    nuclear_dipolar,
    pair_distances,
    place_for_hyperfine,
)
from src.geometry.layout import (
    SpinLayout,
    add_nucleus,
    build_chain,
    build_layer_grid,
    export_layout,
    import_layout,
    rotation_about_axis,
)

Z_AXIS = np.array([0.0, 0.0, 1.0])


def _independent_prefactor(gamma_a, gamma_b, r_nm):
    return constants.mu_0 / (4 * math.pi) * gamma_a * gamma_b * constants.hbar / (r_nm * 1e-9) ** 3


def test_grid_has_requested_sites_and_stays_below_the_nv():
    layout = build_layer_grid(10, 10, 0.154, 1.0, tilt=LAYER_TILT)
    assert layout.n_nuclei == 100
    assert layout.n_sites == 101
    distances = np.linalg.norm(layout.relative_positions(), axis=1)
    assert distances.min() >= 1.0 - 1e-12


def test_single_site_grid_is_rotated_about_x():
    tilt = math.radians(30.0)
    layout = build_layer_grid(1, 1, 0.2, 1.5, tilt=tilt)
    expected = [0.0, -1.5 * math.sin(tilt), 1.5 * math.cos(tilt)]
    np.testing.assert_allclose(layout.nuclear_positions[0], expected, atol=1e-14)


def test_stacked_layers_are_offset_along_the_normal():
    layout = build_layer_grid(2, 2, 0.2, 1.0, tilt=0.0, n_layers=2)
    assert layout.n_nuclei == 8
    np.testing.assert_allclose(layout.nuclear_positions[4:, 2] - layout.nuclear_positions[:4, 2], 0.2)


@pytest.mark.parametrize("kwargs", [
    {"spacing": 0.0},
    {"spacing": -0.1},
    {"distance": 0.0},
    {"n_layers": 4},
    {"nx": 0},
])
def test_invalid_grid_parameters_are_rejected(kwargs):
    args = {"nx": 2, "ny": 2, "spacing": 0.154, "distance": 1.0}
    args.update(kwargs)
    with pytest.raises(InvalidGeometryError):
        build_layer_grid(**args)


def test_field_axis_must_be_normalized():
    with pytest.raises(InvalidGeometryError):
        SpinLayout(nv_position=np.zeros(3), nuclear_positions=[[0, 0, 1.0]], field_axis=[0, 0, 2.0])


def test_duplicate_nucleus_is_rejected():
    layout = build_chain(3, 0.154, 1.0)
    with pytest.raises(InvalidGeometryError):
        add_nucleus(layout, layout.nuclear_positions[1])


def test_add_nucleus_appends_last():
    layout = build_chain(3, 0.154, 1.0)
    grown = add_nucleus(layout, [0.5, 0.5, 0.5])
    assert grown.n_nuclei == 4
    np.testing.assert_allclose(grown.nuclear_positions[-1], [0.5, 0.5, 0.5])


def test_magic_angle_coupling_vanishes():
    r_vec = 0.3 * np.array([math.sin(MAGIC_ANGLE), 0.0, math.cos(MAGIC_ANGLE)])
    scale = dipolar_prefactor(GAMMA_C13, GAMMA_C13, 0.3)
    assert abs(nuclear_dipolar(r_vec, GAMMA_C13, Z_AXIS)) <= 1e-12 * scale


def test_perpendicular_pair_at_nearest_neighbor_distance():
    j = nuclear_dipolar([0.154, 0.0, 0.0], GAMMA_C13, Z_AXIS)
    assert j == pytest.approx(_independent_prefactor(GAMMA_C13, GAMMA_C13, 0.154), rel=1e-12)
    assert j == pytest.approx(13071.4, rel=1e-3)


def test_tetrahedral_bond_gives_one_point_four_kilohertz():
    # 金刚石 C–C 键与 NV 轴夹角 cos θ = 1/3，角因子 2/3
    bond = 0.154 * np.array([math.sqrt(8) / 3, 0.0, 1 / 3])
    j_bond = nuclear_dipolar(bond, GAMMA_C13, Z_AXIS)
    j_perpendicular = nuclear_dipolar([0.154, 0.0, 0.0], GAMMA_C13, Z_AXIS)
    assert j_bond == pytest.approx(2 / 3 * j_perpendicular, rel=1e-12)
    assert j_bond / (2 * math.pi) == pytest.approx(1.4e3, rel=0.02)
    assert j_perpendicular / (2 * math.pi) == pytest.approx(2080.0, rel=1e-3)


def test_mean_coupling_of_the_nine_spin_grid():
    grid = mean_abs_coupling(compute_couplings(build_layer_grid(3, 3, 0.26, 1.0)))
    assert grid / (2 * math.pi) == pytest.approx(158.2, rel=1e-2)
    # 172 Hz 对应金刚石 (001) 面内间距 a₀/√2
    diamond = mean_abs_coupling(compute_couplings(build_layer_grid(3, 3, DIAMOND_LATTICE_NM / math.sqrt(2), 1.0)))
    assert diamond / (2 * math.pi) == pytest.approx(172.0, rel=1e-2)


def test_coupling_follows_inverse_cube_law():
    r_vec = np.array([0.1, 0.2, 0.15])
    ratio = nuclear_dipolar(2 * r_vec, GAMMA_C13, Z_AXIS) / nuclear_dipolar(r_vec, GAMMA_C13, Z_AXIS)
    assert ratio == pytest.approx(1 / 8, rel=1e-12)


@given(arrays(float, 3, elements=st.floats(-2.0, 2.0)).filter(lambda v: np.linalg.norm(v) > 0.05))
def test_pair_exchange_symmetry(r_vec):
    assert nuclear_dipolar(r_vec, GAMMA_C13, Z_AXIS) == nuclear_dipolar(-r_vec, GAMMA_C13, Z_AXIS)


def test_angular_average_vanishes():
    def integrand(theta):
        r_vec = [math.sin(theta), 0.0, math.cos(theta)]
        return nuclear_dipolar(r_vec, GAMMA_C13, Z_AXIS) * math.sin(theta)

    value, _ = quad(integrand, 0.0, math.pi)
    assert abs(value) <= 1e-10 * dipolar_prefactor(GAMMA_C13, GAMMA_C13, 1.0)


def test_zero_separation_is_singular():
    with pytest.raises(SingularityError):
        nuclear_dipolar([0.0, 0.0, 0.0], GAMMA_C13, Z_AXIS)
    with pytest.raises(SingularityError):
        hyperfine_vector([0.0, 0.0, 0.0], GAMMA_ELECTRON, GAMMA_C13, Z_AXIS)


def test_on_axis_hyperfine_is_purely_longitudinal():
    a_zx, a_zy, a_zz = hyperfine_vector([0.0, 0.0, 1.0], GAMMA_ELECTRON, GAMMA_C13, Z_AXIS)
    assert a_zx == 0.0
    assert a_zy == 0.0
    # A_zz = D(1 − 3) 与 γ_e < 0 一起给出正值
    assert a_zz == pytest.approx(-2.0 * _independent_prefactor(GAMMA_ELECTRON, GAMMA_C13, 1.0), rel=1e-12)
    assert a_zz > 0


def test_magic_angle_hyperfine_is_transverse():
    r_vec = np.array([math.sin(MAGIC_ANGLE), 0.0, math.cos(MAGIC_ANGLE)])
    a_zx, a_zy, a_zz = hyperfine_vector(r_vec, GAMMA_ELECTRON, GAMMA_C13, Z_AXIS)
    assert a_zz == 0.0
    assert abs(a_zx) > 0.0
    assert a_zy == pytest.approx(0.0, abs=1e-9)


def test_short_distance_hyperfine_warns():
    with pytest.warns(HyperfineValidityWarning):
        hyperfine_vector([0.0, 0.0, 0.5], GAMMA_ELECTRON, GAMMA_C13, Z_AXIS)


def test_rotating_layout_and_field_preserves_couplings():
    layout = build_layer_grid(3, 2, 0.2, 1.0)
    rotation = rotation_about_axis([1.0, 2.0, -0.5], 0.7)
    before = compute_couplings(layout)
    after = compute_couplings(layout.rotated(rotation))
    np.testing.assert_allclose(after.nuclear_dipolar, before.nuclear_dipolar, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(after.hyperfine[:, 2], before.hyperfine[:, 2], rtol=1e-10)
    np.testing.assert_allclose(
        np.hypot(after.hyperfine[:, 0], after.hyperfine[:, 1]),
        np.hypot(before.hyperfine[:, 0], before.hyperfine[:, 1]),
        rtol=1e-10,
    )


def test_coupling_matrix_is_symmetric_with_zero_diagonal():
    couplings = compute_couplings(build_layer_grid(3, 3, 0.26, 1.0))
    np.testing.assert_array_equal(couplings.nuclear_dipolar, couplings.nuclear_dipolar.T)
    np.testing.assert_array_equal(np.diag(couplings.nuclear_dipolar), 0.0)
    assert couplings.larmor == pytest.approx(GAMMA_C13 * 0.06)


def test_mean_abs_coupling_averages_all_pairs():
    layout = build_layer_grid(3, 3, 0.26, 1.0)
    couplings = compute_couplings(layout)
    upper = np.triu_indices(9, k=1)
    assert mean_abs_coupling(couplings) == pytest.approx(np.abs(couplings.nuclear_dipolar[upper]).mean())
    assert pair_distances(layout).shape == (9, 9)


def test_place_for_hyperfine_realizes_requested_pair():
    a_zx, a_zz = 2 * math.pi * 0.5e6, 2 * math.pi * 0.3e6
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HyperfineValidityWarning)
        position = place_for_hyperfine(a_zx, a_zz, GAMMA_ELECTRON, GAMMA_C13)
        realized = hyperfine_vector(position, GAMMA_ELECTRON, GAMMA_C13, Z_AXIS)
    np.testing.assert_allclose(realized, [a_zx, 0.0, a_zz], rtol=1e-6, atol=1e-6 * a_zx)


def test_place_for_hyperfine_rejects_zero_coupling():
    with pytest.raises(InvalidGeometryError):
        place_for_hyperfine(0.0, 0.0, GAMMA_ELECTRON, GAMMA_C13)


def test_layout_text_table_keeps_nv_first():
    layout = build_layer_grid(2, 2, 0.154, 1.0, field_magnitude=0.05)
    text = export_layout(layout)
    rows = [line for line in text.splitlines() if not line.startswith("#")]
    assert rows[0] == "species x_nm y_nm z_nm"
    assert rows[1].startswith("NV ")
    restored = import_layout(text)
    np.testing.assert_array_equal(restored.nuclear_positions, layout.nuclear_positions)
    assert restored.field_magnitude == layout.field_magnitude
    assert restored.grid_spacing == layout.grid_spacing


def test_import_without_nv_row_fails():
    with pytest.raises(InvalidGeometryError):
        import_layout("# layersim-layout v1\nspecies x_nm y_nm z_nm\n13C 0 0 1\n")


@settings(max_examples=25)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0.1, 0.5), st.floats(0.5, 2.0))
def test_grid_is_centered_before_tilt(nx, ny, spacing, distance):
    layout = build_layer_grid(nx, ny, spacing, distance, tilt=0.0)
    np.testing.assert_allclose(layout.nuclear_positions[:, :2].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(layout.nuclear_positions[:, 2], distance)
