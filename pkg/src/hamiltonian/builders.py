"""各实验参考系下的哈密顿量构建。

位点 0 为 NV（二能级约定 S_z = (σ_z − 𝟙)/2），位点 1..n 为 ¹³C。
核坐标系哈密顿量不含 NV，核按 0..n−1 编号。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from src.errors import ConfigurationError
from src.geometry.constants import dipolar_prefactor
from src.geometry.couplings import CouplingSet, field_frame, pair_distances
from src.geometry.layout import SpinLayout
from src.hamiltonian.terms import AXES, HamiltonianTerms, TermBuilder

logger = logging.getLogger(__name__)

NV_SITE = 0

# 超过该自旋数时默认启用 3·spacing 的偶极截断
DEFAULT_CUTOFF_SPIN_LIMIT = 25


@dataclass(frozen=True)
class HamiltonianOptions:
    dipolar_mode: Literal["secular_flip_flop", "full"] = "secular_flip_flop"
    # nm；None 表示按规模自动选择，math.inf 表示不截断
    cutoff_nm: Optional[float] = None
    neighbor_mode: Literal["all", "nearest"] = "all"
    # 非 None 时所有入选核对使用同一个 J (rad/s)
    uniform_j: Optional[float] = None
    include_nuclear_dipolar: bool = True
    # 各核的静态失谐 (rad/s)，长度为 n_nuclei
    detunings: tuple = field(default_factory=tuple)


def resolve_cutoff(layout: SpinLayout, options: HamiltonianOptions) -> float:
    if options.cutoff_nm is not None:
        if options.cutoff_nm <= 0:
            raise ConfigurationError(f"cutoff_nm must be positive, got {options.cutoff_nm}")
        return float(options.cutoff_nm)
    if layout.n_sites <= DEFAULT_CUTOFF_SPIN_LIMIT or layout.grid_spacing is None:
        return math.inf
    return 3.0 * layout.grid_spacing


def dipolar_pairs(layout: SpinLayout, options: HamiltonianOptions) -> list[tuple[int, int]]:
    """按截断半径与近邻模式选出参与偶极耦合的核对 (i < j，核编号从 0 开始)"""
    n = layout.n_nuclei
    if n < 2:
        return []
    distances = pair_distances(layout)
    cutoff = resolve_cutoff(layout, options)
    upper = np.triu_indices(n, k=1)
    if options.neighbor_mode == "nearest":
        nearest = float(distances[upper].min())
        limit = min(cutoff, nearest * (1 + 1e-6))
    elif options.neighbor_mode == "all":
        limit = cutoff
    else:
        raise ConfigurationError(f"unknown neighbor_mode {options.neighbor_mode!r}")
    pairs = [
        (int(i), int(j)) for i, j in zip(*upper) if distances[i, j] <= limit
    ]
    if len(pairs) < len(upper[0]):
        logger.debug(f"偶极截断 {limit:.3f} nm: 保留 {len(pairs)}/{len(upper[0])} 对")
    return pairs


def _check_sizes(layout: SpinLayout, couplings: CouplingSet):
    if couplings.n_nuclei != layout.n_nuclei:
        raise ConfigurationError(
            f"couplings describe {couplings.n_nuclei} nuclei but layout has {layout.n_nuclei}"
        )
    if couplings.nuclear_dipolar.shape != (layout.n_nuclei, layout.n_nuclei):
        raise ConfigurationError("nuclear_dipolar matrix does not match the layout")


def _add_dipolar(
        builder: TermBuilder,
        layout: SpinLayout,
        couplings: CouplingSet,
        options: HamiltonianOptions,
        offset: int,
        mode: str,
):
    frame = field_frame(layout.field_axis)
    positions = layout.nuclear_positions
    for i, j in dipolar_pairs(layout, options):
        a, b = i + offset, j + offset
        if mode == "secular_flip_flop":
            coupling = couplings.nuclear_dipolar[i, j] if options.uniform_j is None else options.uniform_j
            if coupling == 0.0:
                continue
            builder.add(((a, "Z"), (b, "Z")), coupling)
            builder.add(((a, "X"), (b, "X")), -0.5 * coupling)
            builder.add(((a, "Y"), (b, "Y")), -0.5 * coupling)
        elif mode == "full":
            # D·[I·I − 3(I·n)(I·n)]，分量取在磁场标架中
            r_vec = positions[j] - positions[i]
            r = float(np.linalg.norm(r_vec))
            unit = frame @ (r_vec / r)
            d = dipolar_prefactor(layout.nuclear_gyromagnetic_ratio, layout.nuclear_gyromagnetic_ratio, r)
            if options.uniform_j is not None:
                # 保持角度结构，用 uniform_j 替换 J = D(1 − 3n_z²)
                angular = 1.0 - 3.0 * unit[2] ** 2
                d = options.uniform_j / angular if abs(angular) > 1e-12 else 0.0
            for p, axis_p in enumerate(AXES):
                for q, axis_q in enumerate(AXES):
                    tensor = d * ((p == q) - 3.0 * unit[p] * unit[q])
                    if abs(tensor) > 0.0:
                        builder.add(((a, axis_p), (b, axis_q)), tensor)
        else:
            raise ConfigurationError(f"unknown dipolar mode {mode!r}")


def build_nuclear_dipolar(
        layout: SpinLayout,
        couplings: CouplingSet,
        mode: str = "secular_flip_flop",
        options: Optional[HamiltonianOptions] = None,
        offset: int = 1,
) -> HamiltonianTerms:
    """核-核偶极项。

    Args:
        layout: 自旋排布
        couplings: 耦合常数
        mode: secular_flip_flop 给出 J(ZZ − ½XX − ½YY)；full 给出完整偶极张量
        options: 截断与近邻选项
        offset: 第一个核的位点编号（含 NV 的系统为 1，核坐标系为 0）

    Returns:
        HamiltonianTerms
    """
    options = options or HamiltonianOptions()
    _check_sizes(layout, couplings)
    builder = TermBuilder(layout.n_nuclei + offset)
    _add_dipolar(builder, layout, couplings, options, offset, mode)
    return builder.build()


def build_secular_hamiltonian(
        layout: SpinLayout,
        couplings: CouplingSet,
        options: Optional[HamiltonianOptions] = None,
) -> HamiltonianTerms:
    """实验室系长期近似哈密顿量：γ_N B Σ I_z + S_z Σ A·I + H_nn

    S_z = (σ_z − 𝟙)/2 中的常数部分并入各核的单体项。
    """
    options = options or HamiltonianOptions()
    _check_sizes(layout, couplings)
    n = layout.n_nuclei
    builder = TermBuilder(n + 1)
    for i in range(n):
        site = i + 1
        builder.add(((site, "Z"),), couplings.larmor)
        for axis, a in zip(AXES, couplings.hyperfine[i]):
            if a == 0.0:
                continue
            builder.add(((NV_SITE, "Z"), (site, axis)), a)
            builder.add(((site, axis),), -0.5 * a)
    _add_detunings(builder, options, n, offset=1)
    if options.include_nuclear_dipolar:
        _add_dipolar(builder, layout, couplings, options, 1, options.dipolar_mode)
    terms = builder.build()
    logger.debug(f"长期近似哈密顿量: {n + 1} 个位点, {len(terms)} 项")
    return terms


def build_novel_hamiltonian(
        layout: SpinLayout,
        couplings: CouplingSet,
        omega: float,
        options: Optional[HamiltonianOptions] = None,
) -> HamiltonianTerms:
    """自旋锁定参考系：长期近似哈密顿量加上 NV 上的 Ω·S_y 驱动"""
    if omega < 0:
        raise ConfigurationError(f"spin-lock amplitude must be non-negative, got {omega}")
    secular = build_secular_hamiltonian(layout, couplings, options)
    if omega == 0.0:
        return secular
    builder = TermBuilder(secular.n_sites)
    for product, coef in secular.terms:
        builder.add(product, coef)
    builder.add(((NV_SITE, "Y"),), omega)
    return builder.build()


def build_nuclear_frame_hamiltonian(
        layout: SpinLayout,
        couplings: CouplingSet,
        options: Optional[HamiltonianOptions] = None,
        drive: float = 0.0,
        drive_phase: float = 0.0,
        offset: int = 0,
) -> HamiltonianTerms:
    """核旋转坐标系：H_nn + Σ δ_i I_z + Ω_R Σ (cosφ I_x + sinφ I_y)，不含 NV。

    Ramsey、Hahn、WAHUHA 与 DTC 都在这个参考系中运行。offset=1 时保留一个空闲的
    NV 位点，供截断引擎使用。
    """
    options = options or HamiltonianOptions()
    _check_sizes(layout, couplings)
    n = layout.n_nuclei
    builder = TermBuilder(n + offset)
    _add_detunings(builder, options, n, offset=offset)
    if options.include_nuclear_dipolar:
        _add_dipolar(builder, layout, couplings, options, offset, options.dipolar_mode)
    if drive != 0.0:
        for i in range(offset, n + offset):
            builder.add(((i, "X"),), drive * math.cos(drive_phase))
            builder.add(((i, "Y"),), drive * math.sin(drive_phase))
    return builder.build()


def detuning_terms(detunings, n_sites: int, offset: int) -> HamiltonianTerms:
    """逐样本的失谐项 Σ Δ_i I_z，由序列执行器叠加到哈密顿量上"""
    builder = TermBuilder(n_sites)
    for i, delta in enumerate(detunings):
        if delta != 0.0:
            builder.add(((i + offset, "Z"),), delta)
    return builder.build()


def _add_detunings(builder: TermBuilder, options: HamiltonianOptions, n: int, offset: int):
    if not options.detunings:
        return
    if len(options.detunings) != n:
        raise ConfigurationError(
            f"expected {n} detunings, got {len(options.detunings)}"
        )
    for i, delta in enumerate(options.detunings):
        if delta != 0.0:
            builder.add(((i + offset, "Z"),), float(delta))


def count_secular_terms(layout: SpinLayout, couplings: CouplingSet, options: Optional[HamiltonianOptions] = None) -> int:
    """不构建哈密顿量，直接按核对枚举统计项数（用于交叉检查）"""
    options = options or HamiltonianOptions()
    count = 0
    for i in range(layout.n_nuclei):
        nuclear_axes = {"Z"} if couplings.larmor != 0.0 else set()
        for axis, a in zip(AXES, couplings.hyperfine[i]):
            if a != 0.0:
                count += 1
                nuclear_axes.add(axis)
        if couplings.larmor - 0.5 * couplings.hyperfine[i][2] == 0.0:
            nuclear_axes.discard("Z")
        count += len(nuclear_axes)
    if options.include_nuclear_dipolar and options.dipolar_mode == "secular_flip_flop":
        for i, j in dipolar_pairs(layout, options):
            coupling = couplings.nuclear_dipolar[i, j] if options.uniform_j is None else options.uniform_j
            if coupling != 0.0:
                count += 3
    return count
