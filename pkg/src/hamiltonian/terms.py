"""Pauli 乘积形式的哈密顿量。

约定：系数 (rad/s) 乘以各位点自旋-½ 算符 σ/2 的乘积。
转换到 Pauli 串 σ 的乘积时需要乘 2^(−w)，w 为乘积中算符个数。
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import orjson
import scipy.sparse as sp
import xxhash

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

AXES = ("X", "Y", "Z")

# 单个位点的 Pauli 矩阵
PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

Product = tuple[tuple[int, str], ...]


def canonical_product(factors: Iterable[tuple[int, str]]) -> Product:
    """按位点排序；同一位点出现两次视为配置错误"""
    product = tuple(sorted((int(site), str(axis).upper()) for site, axis in factors))
    sites = [site for site, _ in product]
    if len(set(sites)) != len(sites):
        raise ConfigurationError(f"site listed twice in product {product}")
    for site, axis in product:
        if axis not in AXES:
            raise ConfigurationError(f"unknown axis {axis!r} on site {site}")
        if site < 0:
            raise ConfigurationError(f"negative site index {site}")
    return product


def _sort_key(item):
    product, _ = item
    return len(product), product


@dataclass(frozen=True)
class HamiltonianTerms:
    terms: tuple[tuple[Product, float], ...]
    n_sites: int

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def coefficient(self, factors) -> float:
        """查询某个乘积的系数，不存在时为 0"""
        key = canonical_product(factors)
        for product, coef in self.terms:
            if product == key:
                return coef
        return 0.0

    def pauli_terms(self) -> list[tuple[Product, float]]:
        """换算到 Pauli 串 σ 乘积的系数 (coef·2^(−w))"""
        return [(product, coef * 2.0 ** (-len(product))) for product, coef in self.terms]

    def scaled(self, alpha: float) -> "HamiltonianTerms":
        return HamiltonianTerms(
            terms=tuple((product, coef * alpha) for product, coef in self.terms),
            n_sites=self.n_sites,
        )

    def merged_with(self, other: "HamiltonianTerms") -> "HamiltonianTerms":
        builder = TermBuilder(max(self.n_sites, other.n_sites))
        for product, coef in self.terms + other.terms:
            builder.add(product, coef)
        return builder.build()

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for _, c in self.terms), default=0.0)

    def involves_site_axes(self, site: int) -> set[str]:
        return {axis for product, _ in self.terms for s, axis in product if s == site}

    def content_hash(self) -> str:
        """用于作用表缓存键的稳定哈希"""
        payload = orjson.dumps(
            {
                "n_sites": self.n_sites,
                "terms": [[[list(f) for f in p], float(c).hex()] for p, c in self.terms],
            }
        )
        return xxhash.xxh3_128_hexdigest(payload)


class TermBuilder:
    """累加同类项，零系数项在 build 时丢弃"""

    def __init__(self, n_sites: int):
        self.n_sites = n_sites
        self._terms: dict[Product, float] = {}

    def add(self, factors, coefficient: float):
        product = canonical_product(factors)
        if not product:
            # 恒等项只贡献全局相位
            return self
        for site, _ in product:
            if site >= self.n_sites:
                raise ConfigurationError(
                    f"site {site} outside the {self.n_sites}-site system"
                )
        coefficient = float(coefficient)
        if not np.isfinite(coefficient):
            raise ConfigurationError(f"non-finite coefficient for {product}")
        self._terms[product] = self._terms.get(product, 0.0) + coefficient
        return self

    def build(self) -> HamiltonianTerms:
        items = [(p, c) for p, c in self._terms.items() if c != 0.0]
        items.sort(key=_sort_key)
        return HamiltonianTerms(terms=tuple(items), n_sites=self.n_sites)


def format_term(product: Product, coef: float) -> str:
    sites = ",".join(str(site) for site, _ in product)
    axes = "".join(axis for _, axis in product)
    return f"{sites} {axes} {coef!r}"


def export_terms(terms: HamiltonianTerms, path: str | Path | None = None) -> str:
    """每行一项：sites axes coefficient_rad_per_s，按规范顺序排列"""
    lines = [f"# layersim-terms v1 n_sites={terms.n_sites}"]
    lines.extend(format_term(product, float(coef)) for product, coef in terms.terms)
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def import_terms(text_or_path: str | Path) -> HamiltonianTerms:
    candidate = Path(text_or_path) if not str(text_or_path).startswith("#") else None
    text = candidate.read_text(encoding="utf-8") if candidate is not None else str(text_or_path)
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# layersim-terms"):
        raise ConfigurationError("not a layersim term table")
    n_sites = int(lines[0].split("n_sites=")[1])
    builder = TermBuilder(n_sites)
    for line in lines[1:]:
        if not line.strip():
            continue
        sites, axes, coef = line.split()
        builder.add(zip((int(s) for s in sites.split(",")), axes), float(coef))
    return builder.build()


def product_operator(product: Product, n_sites: int) -> sp.csr_matrix:
    """Pauli 串 σ 乘积的稀疏矩阵，位点 0 为最高位"""
    lookup = dict(product)
    op = sp.identity(1, dtype=complex, format="csr")
    for site in range(n_sites):
        op = sp.kron(op, sp.csr_matrix(PAULI_MATRICES[lookup.get(site, "I")]), format="csr")
    return op


def to_dense(terms: HamiltonianTerms, sparse: bool = False):
    """重建 2^n 维矩阵 (rad/s)，仅适用于小系统"""
    dim = 2**terms.n_sites
    matrix = sp.csr_matrix((dim, dim), dtype=complex)
    for product, coef in terms.pauli_terms():
        matrix = matrix + coef * product_operator(product, terms.n_sites)
    return matrix if sparse else matrix.toarray()
