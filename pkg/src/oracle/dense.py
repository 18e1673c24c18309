"""稠密态模拟器：小系统的精确参照，也承担 NOVEL 与 DTC 模拟。

位点 0 对应张量积的最高位；|0⟩ 是 σ_z = +1 的本征态。
纯态模式允许在最前面加一个批维度 (batch, dim)，用于并行的去相位样本路径。
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import linalg

from src.config.config import get_config_section
from src.errors import CapacityError, ConfigurationError
from src.hamiltonian.terms import PAULI_MATRICES, HamiltonianTerms, to_dense

logger = logging.getLogger(__name__)


@dataclass
class DenseState:
    # 纯态 (dim,) / (batch, dim)，或密度矩阵 (dim, dim)
    data: np.ndarray
    n_sites: int
    mode: str = "density"

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    @property
    def batched(self) -> bool:
        return self.mode == "pure" and self.data.ndim == 2

    def copy(self) -> "DenseState":
        return DenseState(self.data.copy(), self.n_sites, self.mode)


def max_dense_spins() -> int:
    return int(get_config_section(["oracle", "max_dense_spins"]) or 12)


def check_capacity(n_sites: int, limit: Optional[int] = None):
    limit = limit or max_dense_spins()
    if n_sites > limit:
        raise CapacityError(
            f"dense oracle limited to {limit} spins, system has {n_sites} "
            f"(dimension {2**n_sites}); use the truncated engine instead",
            size=2**n_sites,
            limit=2**limit,
        )


def single_site_operator(axis, angle: Optional[float] = None) -> np.ndarray:
    """angle 为 None 时返回 Pauli 矩阵；否则返回 exp(−iθ n·σ/2)"""
    if angle is None:
        return PAULI_MATRICES[axis]
    n = np.asarray(axis, dtype=float)
    generator = n[0] * PAULI_MATRICES["X"] + n[1] * PAULI_MATRICES["Y"] + n[2] * PAULI_MATRICES["Z"]
    return math.cos(angle / 2) * np.eye(2) - 1j * math.sin(angle / 2) * generator


def _apply_left(data: np.ndarray, op: np.ndarray, site: int, n: int, lead: int) -> np.ndarray:
    """在第 site 个张量因子上左乘 op；lead 为前置维度数"""
    shape = data.shape
    tensor = data.reshape(shape[:lead] + (2,) * n + shape[lead + 1:])
    axis = lead + site
    tensor = np.moveaxis(np.tensordot(op, tensor, axes=([1], [axis])), 0, axis)
    return tensor.reshape(shape)


def apply_site_operator(state: DenseState, op: np.ndarray, site: int) -> DenseState:
    """ρ → OρO†（密度）或 ψ → Oψ（纯态）"""
    n = state.n_sites
    if state.mode == "pure":
        lead = state.data.ndim - 1
        return DenseState(_apply_left(state.data, op, site, n, lead), n, "pure")
    rho = _apply_left(state.data, op, site, n, 0)
    # 右乘 O† 等价于对列指标左乘 O*
    rho = np.swapaxes(_apply_left(np.swapaxes(rho, 0, 1).copy(), op.conj(), site, n, 0), 0, 1)
    return DenseState(rho, n, "density")


def apply_rotation(state: DenseState, sites, axis, angle: float) -> DenseState:
    """理想脉冲：对每个所选位点作用 exp(−iθ n·σ/2)"""
    op = single_site_operator(axis, angle)
    for site in sites:
        state = apply_site_operator(state, op, site)
    return state


def z_signs(n_sites: int) -> np.ndarray:
    """(n_sites, dim) 数组，第 i 行为各计算基态上 σ_z^i 的本征值"""
    dim = 2**n_sites
    index = np.arange(dim)
    bits = np.array([(index >> (n_sites - 1 - site)) & 1 for site in range(n_sites)])
    return 1 - 2 * bits


def populations(state: DenseState) -> np.ndarray:
    if state.mode == "pure":
        return np.abs(state.data) ** 2
    return np.real(np.diag(state.data))


def product_state(bloch_vectors, mode: str = "density") -> DenseState:
    """直积态 ⊗ ½(𝟙 + r·σ)；纯态模式要求每个 |r| = 1"""
    bloch = np.asarray(bloch_vectors, dtype=float).reshape(-1, 3)
    n = len(bloch)
    check_capacity(n)
    if mode == "pure":
        psi = np.ones(1, dtype=complex)
        for r in bloch:
            norm = np.linalg.norm(r)
            if abs(norm - 1.0) > 1e-9:
                raise ConfigurationError(f"pure product state needs unit Bloch vectors, got |r| = {norm}")
            theta = math.acos(max(-1.0, min(1.0, r[2])))
            phi = math.atan2(r[1], r[0])
            psi = np.kron(psi, np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)]))
        return DenseState(psi, n, "pure")
    if mode != "density":
        raise ConfigurationError(f"unknown dense mode {mode!r}")
    rho = np.ones((1, 1), dtype=complex)
    for r in bloch:
        single = 0.5 * (PAULI_MATRICES["I"] + r[0] * PAULI_MATRICES["X"]
                        + r[1] * PAULI_MATRICES["Y"] + r[2] * PAULI_MATRICES["Z"])
        rho = np.kron(rho, single)
    return DenseState(rho, n, "density")


def thermal_product_state(n_nuclei: int, polarization, nv_polarization: Optional[float] = 1.0) -> DenseState:
    """ρ = ½(𝟙 + p σ_z) 的直积；nv_polarization 为 None 时不含 NV"""
    p = np.broadcast_to(np.asarray(polarization, dtype=float), (n_nuclei,))
    bloch = [(0.0, 0.0, float(v)) for v in p]
    if nv_polarization is not None:
        bloch.insert(0, (0.0, 0.0, float(nv_polarization)))
    return product_state(bloch, mode="density")


def to_density(state: DenseState) -> DenseState:
    if state.mode == "density":
        return state
    if state.batched:
        raise ConfigurationError("cannot convert a batched pure state to one density matrix")
    return DenseState(np.outer(state.data, state.data.conj()), state.n_sites, "density")


class DensePropagator:
    """缓存 H 的本征分解；H 只含 Z 型项时直接使用对角元"""

    def __init__(self, terms: HamiltonianTerms, n_sites: Optional[int] = None):
        self.n_sites = n_sites or terms.n_sites
        check_capacity(self.n_sites)
        self.terms = terms
        padded = HamiltonianTerms(terms.terms, self.n_sites)
        self.diagonal = all(axis == "Z" for product, _ in terms.terms for _, axis in product)
        matrix = to_dense(padded, sparse=True)
        if self.diagonal:
            self.energies = np.real(matrix.diagonal())
            self.vectors = None
        else:
            self.energies, self.vectors = linalg.eigh(matrix.toarray())
        self._z = None

    def _zsigns(self):
        if self._z is None:
            self._z = z_signs(self.n_sites)
        return self._z

    def _base_matrix(self) -> np.ndarray:
        if getattr(self, "_base", None) is None:
            self._base = to_dense(HamiltonianTerms(self.terms.terms, self.n_sites))
        return self._base

    def detuned_energies(self, detunings: np.ndarray, sites) -> np.ndarray:
        """附加 Σ Δ_i I_z^i 后的对角能量，detunings 形如 (batch, len(sites))"""
        z = self._zsigns()[list(sites)]
        return self.energies[None, :] + 0.5 * np.asarray(detunings) @ z

    def apply(self, state: DenseState, t: float, detunings=None, sites=None) -> DenseState:
        if t == 0.0:
            return state.copy()
        if detunings is not None and not self.diagonal:
            return self._apply_detuned_general(state, t, np.atleast_2d(detunings), sites)
        if self.diagonal:
            if detunings is not None:
                energies = self.detuned_energies(np.atleast_2d(detunings), sites)
            else:
                energies = self.energies[None, :]
            phases = np.exp(-1j * energies * t)
            if state.mode == "pure":
                data = state.data * (phases if state.batched else phases[0])
                return DenseState(data, state.n_sites, "pure")
            if len(phases) != 1:
                raise ConfigurationError("density mode takes one detuning draw at a time")
            p = phases[0]
            return DenseState(p[:, None] * state.data * p.conj()[None, :], state.n_sites, "density")

        phases = np.exp(-1j * self.energies * t)
        v = self.vectors
        if state.mode == "pure":
            coeffs = state.data @ v.conj()
            return DenseState((coeffs * phases) @ v.T, state.n_sites, "pure")
        unitary = (v * phases) @ v.conj().T
        return DenseState(unitary @ state.data @ unitary.conj().T, state.n_sites, "density")

    def _apply_detuned_general(self, state, t, detunings, sites):
        base = self._base_matrix()
        z = self._zsigns()[list(sites)]
        if state.mode == "density" or not state.batched:
            if len(detunings) != 1:
                raise ConfigurationError("unbatched state takes one detuning draw at a time")
            energies, vectors = linalg.eigh(base + np.diag(0.5 * detunings[0] @ z))
            unitary = (vectors * np.exp(-1j * energies * t)) @ vectors.conj().T
            if state.mode == "pure":
                return DenseState(unitary @ state.data, state.n_sites, "pure")
            return DenseState(unitary @ state.data @ unitary.conj().T, state.n_sites, "density")
        out = np.empty_like(state.data)
        for k, row in enumerate(detunings):
            energies, vectors = linalg.eigh(base + np.diag(0.5 * row @ z))
            out[k] = vectors @ (np.exp(-1j * energies * t) * (vectors.conj().T @ state.data[k]))
        return DenseState(out, state.n_sites, "pure")


@lru_cache(maxsize=32)
def propagator_for(terms: HamiltonianTerms, n_sites: int) -> DensePropagator:
    return DensePropagator(terms, n_sites)


def evolve_dense(state: DenseState, terms: HamiltonianTerms, t: float) -> DenseState:
    """state 在 exp(−iHt) 下演化"""
    if t < 0:
        raise ConfigurationError(f"evolution time must be non-negative, got {t}")
    if terms.n_sites > state.n_sites:
        raise ConfigurationError("Hamiltonian acts on more sites than the state has")
    return propagator_for(terms, state.n_sites).apply(state, t)


def laser_reset(state: DenseState, nv_site: int = 0) -> DenseState:
    """ρ → |0⟩⟨0|_NV ⊗ Tr_NV ρ"""
    if state.mode != "density":
        raise ConfigurationError("laser_reset requires density mode")
    n = state.n_sites
    tensor = state.data.reshape((2,) * (2 * n))
    reduced = np.trace(tensor, axis1=nv_site, axis2=n + nv_site)
    out = np.zeros_like(tensor)
    index = [slice(None)] * (2 * n)
    index[nv_site] = 0
    index[n + nv_site] = 0
    out[tuple(index)] = reduced
    return DenseState(out.reshape(state.data.shape), n, "density")


def partial_trace(state: DenseState, site: int) -> np.ndarray:
    """对一个位点求偏迹，返回其余位点的密度矩阵"""
    rho = to_density(state)
    n = rho.n_sites
    reduced = np.trace(rho.data.reshape((2,) * (2 * n)), axis1=site, axis2=n + site)
    dim = 2 ** (n - 1)
    return reduced.reshape(dim, dim)


def expectation(state: DenseState, product) -> np.ndarray | float:
    """⟨P⟩，P 为 Pauli 串 ((site, axis), ...)；批量纯态返回数组"""
    if all(axis == "Z" for _, axis in product):
        signs = np.prod(z_signs(state.n_sites)[[site for site, _ in product]], axis=0) if product else 1
        values = populations(state) @ np.broadcast_to(signs, (state.dim,))
        return values if state.batched else float(values)
    if state.mode == "pure":
        lead = state.data.ndim - 1
        phi = state.data
        for site, axis in product:
            phi = _apply_left(phi, PAULI_MATRICES[axis], site, state.n_sites, lead)
        values = np.real(np.sum(state.data.conj() * phi, axis=-1))
        return values if state.batched else float(values)
    rho = state.data
    for site, axis in product:
        rho = _apply_left(rho, PAULI_MATRICES[axis], site, state.n_sites, 0)
    return float(np.real(np.trace(rho)))


def collective_z(state: DenseState, sites, weights=None):
    """所选位点 ⟨σ_z⟩ 的（加权）平均"""
    z = z_signs(state.n_sites)[list(sites)]
    per_site = populations(state) @ z.T
    if weights is None:
        values = per_site.mean(axis=-1)
    else:
        weights = np.asarray(weights, dtype=float)
        values = per_site @ weights / weights.sum()
    return values if state.batched else float(values)
