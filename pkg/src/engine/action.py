"""对易子作用表：dc/dt = M·c。

c_P = ⟨P⟩，d⟨P⟩/dt = −i⟨[P, H]⟩。对 H 中每个与 P 反对易的 Pauli 项 η·Q，
PQ = i·s·R，于是 M[P, R] += 2·s·η。截断外的 R 直接丢弃。
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from src.config.config import get_config_section
from src.engine.basis import TruncatedBasis
from src.engine.pauli import anticommutes, multiply
from src.errors import ConfigurationError
from src.hamiltonian.terms import HamiltonianTerms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActionTable:
    # M[target, source]，CSR（target 布局）或 CSC（source 布局）
    matrix: sp.spmatrix
    basis_hash: str
    hamiltonian_hash: str
    layout: str
    # 被截断丢弃的贡献占全部贡献的比例（按 |系数| 计）
    dropped_fraction: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def norm_bound(self) -> float:
        """Λ：任一串所受系数绝对值之和的最大值"""
        if self.matrix.nnz == 0:
            return 0.0
        return float(np.abs(self.matrix).sum(axis=1).max())

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ vector

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(source, target, coefficient) 三个数组"""
        coo = self.matrix.tocoo()
        return coo.col.astype(np.int64), coo.row.astype(np.int64), coo.data.astype(float)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _terms_by_site(pauli_terms) -> dict[int, list[int]]:
    by_site: dict[int, list[int]] = {}
    for k, (product, _) in enumerate(pauli_terms):
        for site, _axis in product:
            by_site.setdefault(site, []).append(k)
    return by_site


def action_rows(
        hamiltonian: HamiltonianTerms,
        basis: TruncatedBasis,
        targets: Iterable[int],
) -> tuple[list[int], list[int], list[float], float, float]:
    """计算一组目标串的作用表行。

    Returns:
        (rows, cols, values, kept_weight, dropped_weight)
    """
    pauli_terms = hamiltonian.pauli_terms()
    by_site = _terms_by_site(pauli_terms)
    rows, cols, values = [], [], []
    kept = dropped = 0.0
    for target in targets:
        string = basis.strings[target]
        candidates = sorted({k for site, _ in string for k in by_site.get(site, ())})
        for k in candidates:
            product, eta = pauli_terms[k]
            if not anticommutes(string, product):
                continue
            power, result = multiply(string, product)
            coef = 2.0 * eta * (1.0 if power == 1 else -1.0)
            source = basis.index.get(result)
            if source is None:
                dropped += abs(coef)
                continue
            kept += abs(coef)
            rows.append(target)
            cols.append(source)
            values.append(coef)
    return rows, cols, values, kept, dropped


def assemble(
        rows, cols, values, size: int, layout: str
) -> sp.spmatrix:
    matrix = sp.coo_matrix((values, (rows, cols)), shape=(size, size), dtype=float)
    if layout == "target":
        return matrix.tocsr()
    if layout == "source":
        return matrix.tocsc()
    raise ConfigurationError(f"table_layout must be 'target' or 'source', got {layout!r}")


def precompute_action(
        hamiltonian: HamiltonianTerms,
        basis: TruncatedBasis,
        layout: Optional[str] = None,
        chunk_size: Optional[int] = None,
        progress: bool = False,
) -> ActionTable:
    """对基中每个串计算 −i[P, H] 在截断基上的展开。

    Args:
        hamiltonian: 哈密顿量，位点数不超过基的位点数
        basis: 截断基
        layout: target (CSR) 或 source (CSC)，默认取 engine.table_layout
        chunk_size: 分块大小，只影响进度显示
        progress: 是否显示 tqdm 进度条

    Returns:
        ActionTable
    """
    if hamiltonian.n_sites > basis.n_sites:
        raise ConfigurationError(
            f"Hamiltonian acts on {hamiltonian.n_sites} sites, basis covers {basis.n_sites}"
        )
    layout = layout or get_config_section(["engine", "table_layout"]) or "target"
    chunk_size = chunk_size or int(get_config_section(["engine", "chunk_size"]) or 20_000)
    size = len(basis)
    rows, cols, values = [], [], []
    kept = dropped = 0.0
    n_chunks = math.ceil(size / chunk_size)
    for chunk in tqdm(range(n_chunks), desc="action table", disable=not progress, unit="chunk"):
        start = chunk * chunk_size
        r, c, v, k, d = action_rows(hamiltonian, basis, range(start, min(size, start + chunk_size)))
        rows.extend(r)
        cols.extend(c)
        values.extend(v)
        kept += k
        dropped += d
    return finish_table(rows, cols, values, kept, dropped, hamiltonian, basis, layout)


def finish_table(rows, cols, values, kept, dropped, hamiltonian, basis, layout) -> ActionTable:
    total = kept + dropped
    table = ActionTable(
        matrix=assemble(rows, cols, values, len(basis), layout),
        basis_hash=basis.content_hash,
        hamiltonian_hash=hamiltonian.content_hash(),
        layout=layout,
        dropped_fraction=dropped / total if total > 0 else 0.0,
    )
    logger.info(
        f"作用表: {len(basis)} 个串, {table.nnz} 个非零元, 截断丢弃比例 {table.dropped_fraction:.3e}"
    )
    return table
