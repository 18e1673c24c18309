"""截断态的时间演化：多阶 Euler-forward (Taylor) 步进。"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.config.config import get_config_section
from src.engine.action import ActionTable
from src.engine.basis import NV_SITE, TruncatedBasis
from src.engine.pauli import PauliString
from src.errors import ConfigurationError, StepSizeError

logger = logging.getLogger(__name__)

# 单体串超出 |c| ≤ 1 这么多时认为步长失败
BLOCH_TOLERANCE = 1e-6


@dataclass
class TruncatedState:
    basis: TruncatedBasis
    # c_P = ⟨P⟩，编号与 basis.strings 一致
    coefficients: np.ndarray

    def copy(self) -> "TruncatedState":
        return TruncatedState(self.basis, self.coefficients.copy())

    def __getitem__(self, string: PauliString):
        # 批量态 (basis_size, runs) 返回每个运行的值
        value = self.coefficients[self.basis.index_of(string)]
        return float(value) if np.ndim(value) == 0 else value


def engine_settings() -> tuple[int, float]:
    order = int(get_config_section(["engine", "taylor_order"]) or 4)
    bound = float(get_config_section(["engine", "stability_bound"]) or 0.1)
    return order, bound


def product_state(basis: TruncatedBasis, bloch_vectors) -> TruncatedState:
    """直积态 ⊗ ½(𝟙 + r·σ)：每个串的期望值是各位点 Bloch 分量之积。

    Args:
        basis: 截断基
        bloch_vectors: (n_sites, 3) 数组，第 0 行为 NV
    """
    bloch = np.asarray(bloch_vectors, dtype=float)
    if bloch.shape != (basis.n_sites, 3):
        raise ConfigurationError(f"expected bloch vectors of shape ({basis.n_sites}, 3), got {bloch.shape}")
    axis_index = {"X": 0, "Y": 1, "Z": 2}
    coefficients = np.ones(len(basis))
    for k, string in enumerate(basis.strings):
        for site, axis in string:
            coefficients[k] *= bloch[site, axis_index[axis]]
    return TruncatedState(basis, coefficients)


def polarized_nv_state(basis: TruncatedBasis, nuclear_polarization=0.0) -> TruncatedState:
    """NV 处于 m_s = 0 (⟨σ_z⟩ = 1)，核沿 z 的极化为给定值（默认完全未极化）"""
    bloch = np.zeros((basis.n_sites, 3))
    bloch[NV_SITE, 2] = 1.0
    bloch[1:, 2] = np.broadcast_to(np.asarray(nuclear_polarization, dtype=float), (basis.n_nuclei,))
    return product_state(basis, bloch)


def _check_step(dt: float, table: ActionTable, bound: float, alpha: float = 1.0):
    if dt < 0:
        raise StepSizeError(f"negative time step {dt}")
    lam = table.norm_bound * abs(alpha)
    if dt * lam > bound * (1 + 1e-12):
        raise StepSizeError(
            f"dt*Lambda = {dt * lam:.3e} exceeds the stability bound {bound}; subdivide the step"
        )


def _taylor(vectors: np.ndarray, table: ActionTable, dt: float, order: int, scale=1.0) -> np.ndarray:
    result = vectors.copy()
    term = vectors
    for k in range(1, order + 1):
        term = (dt / k) * (table.apply(term) * scale)
        result += term
    return result


def step(
        state: TruncatedState,
        table: ActionTable,
        dt: float,
        order: Optional[int] = None,
        bound: Optional[float] = None,
) -> TruncatedState:
    """c ← Σ_{k=0..K} (dt·M)^k/k! · c

    Raises:
        StepSizeError: dt·Λ 超过稳定性上限
    """
    default_order, default_bound = engine_settings()
    order = order or default_order
    bound = bound or default_bound
    _check_step(dt, table, bound)
    if dt == 0.0:
        return state.copy()
    return TruncatedState(state.basis, _taylor(state.coefficients, table, dt, order))


def step_count(t: float, table: ActionTable, bound: float, alpha: float = 1.0) -> int:
    lam = table.norm_bound * abs(alpha)
    if t == 0.0 or lam == 0.0:
        return 0
    return max(1, math.ceil(t * lam / bound))


def evolve(
        state: TruncatedState,
        table: ActionTable,
        t: float,
        alpha: float = 1.0,
        order: Optional[int] = None,
        bound: Optional[float] = None,
) -> TruncatedState:
    """演化时间 t，自动细分步长。alpha 缩放哈密顿量：evolve(t, αH) = evolve(αt, H)。"""
    if t < 0:
        raise ConfigurationError(f"evolution time must be non-negative, got {t}")
    default_order, default_bound = engine_settings()
    order = order or default_order
    bound = bound or default_bound
    n_steps = step_count(t, table, bound, alpha)
    if n_steps == 0:
        return state.copy()
    dt = t / n_steps
    coefficients = state.coefficients
    for _ in range(n_steps):
        coefficients = _taylor(coefficients, table, dt, order, scale=alpha)
    return TruncatedState(state.basis, coefficients)


def evolve_batch(
        states: np.ndarray,
        table: ActionTable,
        t0: float,
        alphas,
        order: Optional[int] = None,
        bound: Optional[float] = None,
) -> np.ndarray:
    """并行演化多个运行：第 k 列演化 α_k·t0，所有列共用同一步数。

    Args:
        states: (basis_size, runs) 系数矩阵
        table: 作用表
        t0: 基准时间 (s)
        alphas: 每列的缩放因子

    Returns:
        演化后的 (basis_size, runs) 矩阵
    """
    default_order, default_bound = engine_settings()
    order = order or default_order
    bound = bound or default_bound
    alphas = np.asarray(alphas, dtype=float)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != len(alphas):
        raise ConfigurationError("states must be (basis_size, runs) with one alpha per run")
    n_steps = step_count(t0, table, bound, float(np.max(np.abs(alphas), initial=0.0)))
    if n_steps == 0:
        return states.copy()
    dt = t0 / n_steps
    result = states
    for _ in range(n_steps):
        result = _taylor(result, table, dt, order, scale=alphas[None, :])
    return result


def expectation(state: TruncatedState, observable: PauliString) -> float:
    """c_P；observable 未被基收录时抛 QueryError"""
    return state[observable]


def collective_z(state: TruncatedState, sites=None, weights=None) -> float:
    """所选核 ⟨σ_z⟩ 的（加权）平均，默认全部核"""
    sites = list(range(1, state.basis.n_sites)) if sites is None else list(sites)
    values = np.array([state[((site, "Z"),)] for site in sites])
    # 批量态时 values 形如 (sites, runs)
    if weights is None:
        return values.mean(axis=0) if values.ndim > 1 else float(values.mean())
    weights = np.asarray(weights, dtype=float)
    weighted = np.tensordot(weights, values, axes=1) / np.sum(weights)
    return weighted if np.ndim(weighted) else float(weighted)


def bloch_violation(state: TruncatedState) -> float:
    """单体串中 |c_P| − 1 的最大值，> BLOCH_TOLERANCE 表示步长不够小"""
    worst = 0.0
    for site in range(state.basis.n_sites):
        for index in state.basis.single_site_indices(site).values():
            worst = max(worst, float(np.max(np.abs(state.coefficients[index]))) - 1.0)
    return worst
