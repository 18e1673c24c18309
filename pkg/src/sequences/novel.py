"""NOVEL 极化序列、读出公式与读出标定扫描。"""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from src.analysis.decay import CosineFit, fit_cosine
from src.errors import ConfigurationError, ReadoutError
from src.geometry.couplings import CouplingSet
from src.geometry.layout import SpinLayout
from src.hamiltonian.builders import (
    NV_SITE,
    HamiltonianOptions,
    build_novel_hamiltonian,
    build_secular_hamiltonian,
)
from src.sequences.executor import DenseBackend, TruncatedBackend, execute
from src.sequences.schedule import PulseSchedule, ScheduleBuilder

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NovelParams:
    tau_sl: float = 5.0e-6
    t_wait: float = 3.0e-6
    repetitions: int = 100
    # "+"：π/2_X 把 NV 转到 −y，核被抽向 ↓；"-" 反之
    sign: Literal["+", "-"] = "+"
    # 自旋锁定幅度 (rad/s)；None 表示 Hartmann-Hahn 匹配 Ω = γ_N·B
    omega: Optional[float] = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError(f"repetitions must be at least 1, got {self.repetitions}")
        if self.tau_sl <= 0:
            raise ConfigurationError(f"spin-lock duration must be positive, got {self.tau_sl}")
        if self.t_wait < 0:
            raise ConfigurationError(f"waiting time must be non-negative, got {self.t_wait}")
        if self.sign not in ("+", "-"):
            raise ConfigurationError(f"sign must be '+' or '-', got {self.sign!r}")


@dataclass
class PolarizationCurve:
    sign: str
    # p(m) = (1 − ⟨Z_NV⟩)/2，m = 1..M
    flip_probability: np.ndarray
    # 每次重置与等待之后核的平均 ⟨σ_z⟩
    layer_polarization: np.ndarray


@dataclass
class NovelResult:
    down: PolarizationCurve
    up: PolarizationCurve
    meta: dict = field(default_factory=dict)


def novel_schedule(params: NovelParams, n_sites: int, layer_sites: Optional[Sequence[int]] = None) -> PulseSchedule:
    """每次重复：±π/2_X → 自旋锁定 τ_sl → ∓π/2_X → 测 Z_NV → 激光重置 → 等待 t_w → 测核极化"""
    layer_sites = tuple(range(1, n_sites)) if layer_sites is None else tuple(layer_sites)
    first, second = ("X", "-X") if params.sign == "+" else ("-X", "X")
    builder = ScheduleBuilder()
    for _ in range(params.repetitions):
        builder.pulse((NV_SITE,), first, math.pi / 2)
        builder.drive(params.tau_sl, "lock")
        builder.pulse((NV_SITE,), second, math.pi / 2)
        builder.measure("nv_z", ("pauli", ((NV_SITE, "Z"),)))
        builder.reset()
        builder.free(params.t_wait, "wait", dephased=False)
        builder.measure("layer", ("collective_z", layer_sites))
    return builder.build({"sign": params.sign, "repetitions": params.repetitions})


def make_novel_backend(
        layout: SpinLayout,
        couplings: CouplingSet,
        params: NovelParams,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        build_options: Optional[dict] = None,
):
    """build_options 传给截断引擎的 TruncatedBackend.build（截断规则、缓存）"""
    omega = couplings.larmor if params.omega is None else params.omega
    hamiltonians = {
        "lock": build_novel_hamiltonian(layout, couplings, omega, options),
        # 等待期间 NV 不受驱动，只剩长期近似哈密顿量
        "wait": build_secular_hamiltonian(layout, couplings, options),
    }
    if engine == "dense":
        return DenseBackend(hamiltonians, layout.n_sites, mode="density")
    if engine == "truncated":
        return TruncatedBackend.build(hamiltonians, layout.n_sites, **(build_options or {}))
    raise ConfigurationError(f"unknown engine {engine!r}")


def run_novel_sequence(
        backend,
        params: NovelParams,
        nuclear_polarization=0.0,
        layer_sites: Optional[Sequence[int]] = None,
) -> PolarizationCurve:
    """单一符号的 NOVEL 曲线"""
    n_sites = backend.n_sites
    bloch = np.zeros((n_sites, 3))
    bloch[NV_SITE, 2] = 1.0
    bloch[1:, 2] = np.broadcast_to(np.asarray(nuclear_polarization, dtype=float), (n_sites - 1,))
    schedule = novel_schedule(params, n_sites, layer_sites)
    result = execute(schedule, backend, backend.initial(bloch))
    z = result.values("nv_z").astype(float)
    return PolarizationCurve(
        sign=params.sign,
        flip_probability=(1.0 - z) / 2.0,
        layer_polarization=result.values("layer").astype(float),
    )


def run_novel(
        layout: SpinLayout,
        couplings: CouplingSet,
        params: NovelParams,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        nuclear_polarization=0.0,
        layer_sites: Optional[Sequence[int]] = None,
        backend=None,
) -> NovelResult:
    """两个符号各跑一遍，返回 (p↓(m), p↑(m))"""
    backend = backend or make_novel_backend(layout, couplings, params, engine, options)
    down = run_novel_sequence(backend, _with_sign(params, "+"), nuclear_polarization, layer_sites)
    up = run_novel_sequence(backend, _with_sign(params, "-"), nuclear_polarization, layer_sites)
    logger.info(
        f"NOVEL 完成: M = {params.repetitions}, 末次核极化 ↓ {down.layer_polarization[-1]:+.4f} "
        f"↑ {up.layer_polarization[-1]:+.4f}"
    )
    return NovelResult(down=down, up=up, meta={"engine": engine, "omega": params.omega})


def _with_sign(params: NovelParams, sign: str) -> NovelParams:
    return NovelParams(params.tau_sl, params.t_wait, params.repetitions, sign, params.omega)


def novel_readout(curve_down, curve_up, rabi_amplitude: float, rabi_offset: float) -> float:
    """R_n = Σp↓/Σp↑，⟨I_z⟩ = (R_n − (R⁰ − A))/(2A) − ½

    Raises:
        ReadoutError: Σp↑ = 0 或 A ≤ 0
    """
    down = np.asarray(getattr(curve_down, "flip_probability", curve_down), dtype=float)
    up = np.asarray(getattr(curve_up, "flip_probability", curve_up), dtype=float)
    denominator = float(np.sum(up))
    if denominator == 0.0:
        raise ReadoutError("sum of p_up is zero; readout ratio undefined")
    if rabi_amplitude <= 0:
        raise ReadoutError(f"Rabi amplitude must be positive, got {rabi_amplitude}")
    ratio = float(np.sum(down)) / denominator
    return readout_from_ratio(ratio, rabi_amplitude, rabi_offset)


def readout_from_ratio(ratio: float, rabi_amplitude: float, rabi_offset: float) -> float:
    return (ratio - (rabi_offset - rabi_amplitude)) / (2.0 * rabi_amplitude) - 0.5


@dataclass
class ReadoutScan:
    thetas: np.ndarray
    ratios: np.ndarray
    fit: CosineFit


def run_readout_scan(
        layout: SpinLayout,
        couplings: CouplingSet,
        thetas: Sequence[float],
        params: NovelParams,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        backend=None,
) -> ReadoutScan:
    """核初态 ρ_n = ½(𝟙 + cosθ σ_z)，对每个 θ 做双符号 NOVEL 读出并拟合 a·cosθ + b"""
    backend = backend or make_novel_backend(layout, couplings, params, engine, options)
    thetas = np.asarray(thetas, dtype=float)
    ratios = np.empty(len(thetas))
    for k, theta in enumerate(thetas):
        polarization = math.cos(theta)
        down = run_novel_sequence(backend, _with_sign(params, "+"), polarization)
        up = run_novel_sequence(backend, _with_sign(params, "-"), polarization)
        total_up = float(np.sum(up.flip_probability))
        if total_up == 0.0:
            raise ReadoutError(f"sum of p_up vanishes at theta = {theta}")
        ratios[k] = float(np.sum(down.flip_probability)) / total_up
    return ReadoutScan(thetas=thetas, ratios=ratios, fit=fit_cosine(thetas, ratios))
