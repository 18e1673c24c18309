"""理想脉冲与激光重置（截断态）。

脉冲绕单位轴 n 转 θ，作用 exp(−iθ n·σ/2)，Bloch 矢量绕 n 右手旋转 θ。
单体 Pauli 只会变成同一位点 Pauli 的线性组合，所以截断基在脉冲下封闭。
"""
import logging
import math
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from src.engine.basis import NV_SITE, TruncatedBasis
from src.engine.propagate import TruncatedState
from src.errors import ConfigurationError
from src.geometry.layout import rotation_about_axis

logger = logging.getLogger(__name__)

_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}
_NAMED_AXES = {
    "X": (1.0, 0.0, 0.0),
    "Y": (0.0, 1.0, 0.0),
    "Z": (0.0, 0.0, 1.0),
}


def pulse_axis(axis) -> np.ndarray:
    """轴可以是 "X"/"-Y" 这样的名字、相位 φ（面内轴 (cosφ, sinφ, 0)）或三维矢量"""
    if isinstance(axis, str):
        name = axis.strip().upper()
        sign = -1.0 if name.startswith("-") else 1.0
        name = name.lstrip("+-")
        if name not in _NAMED_AXES:
            raise ConfigurationError(f"unknown pulse axis {axis!r}")
        return sign * np.array(_NAMED_AXES[name])
    if np.isscalar(axis):
        return np.array([math.cos(axis), math.sin(axis), 0.0])
    vector = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(vector)
    if vector.shape != (3,) or norm == 0.0:
        raise ConfigurationError(f"pulse axis must be a non-zero 3-vector, got {axis!r}")
    return vector / norm


def _cache_key(sites, axis: np.ndarray, angle: float):
    return (tuple(sorted(sites)), tuple(np.round(axis, 14)), round(float(angle), 14))


def pulse_matrix(basis: TruncatedBasis, sites: Iterable[int], axis, angle: float) -> sp.csr_matrix:
    """系数空间中的脉冲矩阵 P[target, source]，按 (位点, 轴, 角度) 缓存在基上"""
    sites = frozenset(int(s) for s in sites)
    axis = pulse_axis(axis)
    key = _cache_key(sites, axis, angle)
    cached = basis.pulse_cache.get(key)
    if cached is not None:
        return cached

    rotation = rotation_about_axis(axis, angle)
    rows, cols, values = [], [], []
    for source, string in enumerate(basis.strings):
        # 逐个位点展开：每个被脉冲作用的因子变成三个轴的组合
        expansions = [((), 1.0)]
        for site, axis_name in string:
            if site in sites:
                column = _AXIS_INDEX[axis_name]
                expansions = [
                    (prefix + ((site, target_axis),), weight * rotation[_AXIS_INDEX[target_axis], column])
                    for prefix, weight in expansions
                    for target_axis in ("X", "Y", "Z")
                    if abs(rotation[_AXIS_INDEX[target_axis], column]) > 1e-15
                ]
            else:
                expansions = [(prefix + ((site, axis_name),), weight) for prefix, weight in expansions]
        for target_string, weight in expansions:
            rows.append(basis.index[target_string])
            cols.append(source)
            values.append(weight)
    matrix = sp.csr_matrix((values, (rows, cols)), shape=(len(basis), len(basis)))
    basis.pulse_cache[key] = matrix
    return matrix


def apply_pulse(state: TruncatedState, sites: Iterable[int], axis, angle: float) -> TruncatedState:
    """对所选位点施加同一个理想脉冲，没有截断误差"""
    matrix = pulse_matrix(state.basis, sites, axis, angle)
    return TruncatedState(state.basis, matrix @ state.coefficients)


def laser_reset(state: TruncatedState) -> TruncatedState:
    """ρ → |0⟩⟨0|_NV ⊗ Tr_NV ρ：NV 因子为 I 的串保留，Z 取对应 I 串的值，X/Y 清零"""
    basis = state.basis
    codes = basis.nv_codes
    coefficients = state.coefficients.copy()
    stripped = basis.nv_stripped
    coefficients[codes == 1] = 0.0
    coefficients[codes == 2] = 0.0
    z_mask = codes == 3
    coefficients[z_mask] = state.coefficients[stripped[z_mask]]
    return TruncatedState(basis, coefficients)


def nv_site_set() -> tuple[int]:
    return (NV_SITE,)


def nuclear_site_set(basis: TruncatedBasis) -> tuple[int, ...]:
    return tuple(range(1, basis.n_sites))
