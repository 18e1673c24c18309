"""截断 Pauli 基。

准入规则：核位点上的权重 ≤ 2；NV 因子可以是 I/X/Y/Z 中任意一个，
因此含 NV 的串总权重最多为 3。可选扩展：几何邻近的核三体关联（仅 NV = I）。
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import orjson
import xxhash

from src.config.config import get_config_section
from src.engine.pauli import IDENTITY, PauliString, label
from src.errors import CapacityError, ConfigurationError, QueryError

logger = logging.getLogger(__name__)

NV_SITE = 0
AXES = ("X", "Y", "Z")
NV_FACTORS = (None, "X", "Y", "Z")


@dataclass(frozen=True)
class TruncationRule:
    # 是否保留核-核两体关联（含或不含 NV 因子）
    nuclear_pairs: bool = True
    # 是否保留 NV-核-核三体关联
    nv_triplets: bool = True
    # 额外准入的核三体 (i, j, k)，核编号从 1 开始，仅在 NV 因子为 I 时生效
    proximity_triplets: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "nuclear_pairs": self.nuclear_pairs,
            "nv_triplets": self.nv_triplets,
            "proximity_triplets": [list(t) for t in self.proximity_triplets],
        }


def closed_form_size(n_nuclei: int, rule: Optional[TruncationRule] = None) -> int:
    """1 + 3(n+1) + 9·C(n,2) + 9n + 27·C(n,2)，按规则开关修正"""
    rule = rule or TruncationRule()
    pairs = math.comb(n_nuclei, 2)
    size = 1 + 3 * (n_nuclei + 1) + 9 * n_nuclei
    if rule.nuclear_pairs:
        size += 9 * pairs
        if rule.nv_triplets:
            size += 27 * pairs
    size += 27 * len(rule.proximity_triplets)
    return size


def proximity_triplets(positions: np.ndarray, radius_nm: float) -> tuple[tuple[int, int, int], ...]:
    """两两距离都不超过 radius_nm 的核三元组（核编号从 1 开始）"""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    triplets = []
    for i, j, k in itertools.combinations(range(n), 3):
        if dist[i, j] <= radius_nm and dist[i, k] <= radius_nm and dist[j, k] <= radius_nm:
            triplets.append((i + 1, j + 1, k + 1))
    return tuple(triplets)


def _nuclear_parts(n_nuclei: int, rule: TruncationRule):
    """按 恒等 → 单体 → 两体 的顺序产生核部分"""
    yield IDENTITY, False
    for site in range(1, n_nuclei + 1):
        for axis in AXES:
            yield ((site, axis),), False
    if rule.nuclear_pairs:
        for i, j in itertools.combinations(range(1, n_nuclei + 1), 2):
            for a, b in itertools.product(AXES, AXES):
                yield ((i, a), (j, b)), True


class TruncatedBasis:
    """截断基：字符串列表与 字符串 → 编号 的映射，构建后不可修改"""

    def __init__(self, n_nuclei: int, strings: list[PauliString], rule: TruncationRule):
        self.n_nuclei = n_nuclei
        self.n_sites = n_nuclei + 1
        self.rule = rule
        self.strings = tuple(strings)
        self.index = {s: k for k, s in enumerate(self.strings)}
        # 作用表与脉冲矩阵的进程内缓存
        self.pulse_cache: dict = {}

    def __len__(self):
        return len(self.strings)

    def __contains__(self, string):
        return string in self.index

    def index_of(self, string: PauliString) -> int:
        try:
            return self.index[string]
        except KeyError:
            raise QueryError(f"Pauli string {label(string)} is not admitted by the basis") from None

    def admits(self, string: PauliString) -> bool:
        return string in self.index

    @cached_property
    def nv_codes(self) -> np.ndarray:
        """每个串在 NV 位点上的因子编码，0 = I, 1 = X, 2 = Y, 3 = Z"""
        codes = np.zeros(len(self), dtype=np.int8)
        for k, string in enumerate(self.strings):
            if string and string[0][0] == NV_SITE:
                codes[k] = "IXYZ".index(string[0][1])
        return codes

    @cached_property
    def nv_stripped(self) -> np.ndarray:
        """去掉 NV 因子后的串的编号"""
        partner = np.arange(len(self), dtype=np.int64)
        for k, string in enumerate(self.strings):
            if string and string[0][0] == NV_SITE:
                partner[k] = self.index[string[1:]]
        return partner

    @cached_property
    def content_hash(self) -> str:
        payload = orjson.dumps({"n_nuclei": self.n_nuclei, "rule": self.rule.as_dict(), "size": len(self)})
        return xxhash.xxh3_128_hexdigest(payload)

    def single_site_indices(self, site: int) -> dict[str, int]:
        return {axis: self.index[((site, axis),)] for axis in AXES}


def enumerate_basis(
        n_nuclei: int,
        rule: Optional[TruncationRule] = None,
        max_size: Optional[int] = None,
) -> TruncatedBasis:
    """按准入规则枚举截断基，顺序确定：核部分在外层，NV 因子 I/X/Y/Z 在内层。

    Args:
        n_nuclei: 核自旋数 (≥ 1)
        rule: 截断规则，默认两体截断
        max_size: 基大小上限，默认取 engine.max_basis_size

    Returns:
        TruncatedBasis，编号 0 为恒等串

    Raises:
        ConfigurationError: n_nuclei < 1
        CapacityError: 基大小超过上限
    """
    if n_nuclei < 1:
        raise ConfigurationError(f"n_nuclei must be at least 1, got {n_nuclei}")
    rule = rule or TruncationRule()
    if max_size is None:
        max_size = int(get_config_section(["engine", "max_basis_size"]))
    size = closed_form_size(n_nuclei, rule)
    if size > max_size:
        raise CapacityError(
            f"truncated basis for {n_nuclei} nuclei has {size} strings, limit is {max_size}; "
            "raise engine.max_basis_size or disable nv_triplets",
            size=size,
            limit=max_size,
        )

    strings = []
    for part, is_pair in _nuclear_parts(n_nuclei, rule):
        for nv in NV_FACTORS:
            if nv is not None and is_pair and not rule.nv_triplets:
                continue
            strings.append((((NV_SITE, nv),) if nv else ()) + part)
    for triplet in rule.proximity_triplets:
        if len(set(triplet)) != 3 or min(triplet) < 1 or max(triplet) > n_nuclei:
            raise ConfigurationError(f"invalid nuclear triplet {triplet}")
        sites = sorted(triplet)
        for axes in itertools.product(AXES, AXES, AXES):
            strings.append(tuple(zip(sites, axes)))
    logger.debug(f"截断基: {n_nuclei} 个核, {len(strings)} 个串")
    return TruncatedBasis(n_nuclei, strings, rule)
