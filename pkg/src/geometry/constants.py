"""物理常数表。

内部一律使用角频率 (rad/s)，只在输入输出边界换算成 Hz。
"""
import math

from scipy import constants as const

MU0_OVER_4PI = const.mu_0 / (4 * math.pi)
HBAR = const.hbar

# 旋磁比 (rad·s⁻¹·T⁻¹)
GAMMA_C13 = 2 * math.pi * 10.7084e6
GAMMA_ELECTRON = -2 * math.pi * 28.024e9

# 室温金刚石晶格常数 (nm)，点偶极近似要求 |r| ≳ 2a₀
DIAMOND_LATTICE_NM = 0.357

# 金刚石最近邻距离 (nm)
NEAREST_NEIGHBOR_NM = 0.154

MAGIC_ANGLE = math.acos(1 / math.sqrt(3))
LAYER_TILT = math.radians(54.7)

NM = 1e-9


def hz_to_rad(value_hz: float) -> float:
    return 2 * math.pi * value_hz


def rad_to_hz(value_rad: float) -> float:
    return value_rad / (2 * math.pi)


def dipolar_prefactor(gamma_a: float, gamma_b: float, distance_nm: float) -> float:
    """(μ₀/4π)·γ_a·γ_b·ħ/r³，单位 rad/s"""
    r = distance_nm * NM
    return MU0_OVER_4PI * gamma_a * gamma_b * HBAR / r**3
