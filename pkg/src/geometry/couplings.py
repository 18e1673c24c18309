"""偶极-偶极耦合常数（超精细与核-核）。"""
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from src.errors import HyperfineValidityWarning, InvalidGeometryError, SingularityError
from src.geometry.constants import DIAMOND_LATTICE_NM, dipolar_prefactor
from src.geometry.layout import SpinLayout

logger = logging.getLogger(__name__)

ANGULAR_ZERO = 1e-12


@dataclass(frozen=True)
class CouplingSet:
    # 每个核的 (A_zx, A_zy, A_zz)，rad/s
    hyperfine: np.ndarray
    # 对称矩阵 J_ij，对角为 0，rad/s
    nuclear_dipolar: np.ndarray
    # γ_N·B_z，rad/s
    larmor: float

    @property
    def n_nuclei(self) -> int:
        return len(self.hyperfine)


def field_frame(field_axis) -> np.ndarray:
    """以磁场方向为 z 的正交标架，行向量依次为 e_x, e_y, e_z"""
    e_z = np.asarray(field_axis, dtype=float)
    e_z = e_z / np.linalg.norm(e_z)
    reference = np.array([1.0, 0.0, 0.0])
    if abs(reference @ e_z) > 0.9:
        reference = np.array([0.0, 1.0, 0.0])
    e_x = reference - (reference @ e_z) * e_z
    e_x /= np.linalg.norm(e_x)
    e_y = np.cross(e_z, e_x)
    return np.vstack([e_x, e_y, e_z])


def _angular(cos_theta: float) -> float:
    """1 − 3cos²θ；魔角附近的舍入残差置零"""
    value = 1.0 - 3.0 * cos_theta**2
    return 0.0 if abs(value) < ANGULAR_ZERO else value


def nuclear_dipolar(r_vec, gamma_n: float, field_axis) -> float:
    """J_ij = (μ₀/4π)·γ_N²·ħ·(1 − 3cos²θ)/r³

    哈密顿量里按 J_ij·(I_z I_z − ½(I_x I_x + I_y I_y)) 使用，I = σ/2。
    垂直于磁场、相距 0.154 nm 的一对给出 2π·2080 Hz；常说的 1.4 kHz
    是金刚石 C–C 键（cos θ = 1/3，角因子 2/3）的值。

    Args:
        r_vec: 两核之间的位移 (nm)
        gamma_n: 核旋磁比 (rad·s⁻¹·T⁻¹)
        field_axis: 磁场单位矢量

    Returns:
        J_ij (rad/s)

    Raises:
        SingularityError: r_vec 长度为 0
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise SingularityError("nuclear_dipolar is singular for a zero-length separation")
    cos_theta = float(r_vec @ np.asarray(field_axis, dtype=float)) / r
    return dipolar_prefactor(gamma_n, gamma_n, r) * _angular(cos_theta)


def hyperfine_vector(r_vec, gamma_e: float, gamma_n: float, field_axis) -> tuple[float, float, float]:
    """点偶极超精细张量中与 S_z 耦合的一行 (A_zx, A_zy, A_zz)。

    H/ħ = D·[S·I − 3(S·n)(I·n)]，D = (μ₀/4π)γ_eγ_Nħ/r³，
    所以 A_za = D·(δ_za − 3 n_z n_a)，分量取在磁场标架中。
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise SingularityError("hyperfine_vector is singular for a zero-length separation")
    if r < 2 * DIAMOND_LATTICE_NM:
        warnings.warn(
            f"|r| = {r:.3f} nm is below 2a0 = {2 * DIAMOND_LATTICE_NM:.3f} nm; "
            "the point-dipole hyperfine model underestimates the coupling there",
            HyperfineValidityWarning,
            stacklevel=2,
        )
    n = field_frame(field_axis) @ (r_vec / r)
    d = dipolar_prefactor(gamma_e, gamma_n, r)
    return (
        float(-3.0 * d * n[2] * n[0]),
        float(-3.0 * d * n[2] * n[1]),
        float(d * _angular(n[2])),
    )


def compute_couplings(layout: SpinLayout) -> CouplingSet:
    """计算排布中的全部超精细与核-核耦合"""
    rel = layout.relative_positions()
    hyperfine = np.zeros((layout.n_nuclei, 3))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HyperfineValidityWarning)
        for i, r_vec in enumerate(rel):
            hyperfine[i] = hyperfine_vector(
                r_vec,
                layout.electron_gyromagnetic_ratio,
                layout.nuclear_gyromagnetic_ratio,
                layout.field_axis,
            )
    if caught:
        logger.warning(f"{len(caught)} 个核距 NV 小于 2a₀，点偶极超精细近似可能偏小")
        warnings.warn(
            f"{len(caught)} nuclei closer than 2a0 to the NV",
            HyperfineValidityWarning,
            stacklevel=2,
        )

    n = layout.n_nuclei
    dipolar = np.zeros((n, n))
    positions = layout.nuclear_positions
    for i in range(n):
        for j in range(i + 1, n):
            value = nuclear_dipolar(
                positions[j] - positions[i], layout.nuclear_gyromagnetic_ratio, layout.field_axis
            )
            dipolar[i, j] = dipolar[j, i] = value
    return CouplingSet(hyperfine=hyperfine, nuclear_dipolar=dipolar, larmor=layout.larmor)


def pair_distances(layout: SpinLayout) -> np.ndarray:
    positions = layout.nuclear_positions
    return np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)


def mean_abs_coupling(couplings: CouplingSet) -> float:
    """所有核对 |J_ij| 的平均值 (rad/s)

    3×3、间距 0.26 nm、魔角倾斜的网格约为 2π·158 Hz；2π·172 Hz 对应
    金刚石 (001) 面内间距 a₀/√2 ≈ 0.252 nm。
    """
    n = couplings.n_nuclei
    if n < 2:
        return 0.0
    upper = np.triu_indices(n, k=1)
    return float(np.mean(np.abs(couplings.nuclear_dipolar[upper])))


def place_for_hyperfine(
        a_zx: float,
        a_zz: float,
        gamma_e: float,
        gamma_n: float,
        field_axis=(0.0, 0.0, 1.0),
) -> np.ndarray:
    """求一个核位置，使点偶极超精细给出指定的 (A_zx, A_zz)，且 A_zy = 0。

    Returns:
        相对 NV 的位置 (nm)

    Raises:
        InvalidGeometryError: 点偶极形式无法实现该组合时
    """
    if a_zx == 0.0 and a_zz == 0.0:
        raise InvalidGeometryError("cannot place a nucleus with vanishing hyperfine coupling")
    # 单位距离下的偶极强度，A ∝ 1/r³
    k1 = dipolar_prefactor(gamma_e, gamma_n, 1.0)

    def mismatch(theta):
        c, s = math.cos(theta), math.sin(theta)
        return (-3.0 * c * s) * a_zz - (1.0 - 3.0 * c * c) * a_zx

    grid = np.linspace(1e-6, math.pi - 1e-6, 721)
    values = [mismatch(t) for t in grid]
    for lo, hi, f_lo, f_hi in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if f_lo == 0.0 or f_lo * f_hi < 0:
            theta = brentq(mismatch, lo, hi) if f_lo != 0.0 else lo
            c, s = math.cos(theta), math.sin(theta)
            angular = (1.0 - 3.0 * c * c) if abs(a_zz) >= abs(a_zx) else (-3.0 * c * s)
            target = a_zz if abs(a_zz) >= abs(a_zx) else a_zx
            ratio = k1 * angular / target
            if ratio > 0:
                r = ratio ** (1.0 / 3.0)
                frame = field_frame(field_axis)
                return r * (s * frame[0] + c * frame[2])
    raise InvalidGeometryError(f"no point-dipole position realizes A_zx={a_zx}, A_zz={a_zz}")
