"""AXY-8 动态解耦序列与 NV 谱。

复合块长度 τ = 1/(2ν)，调制函数周期 T = 2τ。每块 5 个 π 脉冲，
对称拟设：x_j = 2π t_j/T，x3 = π/2，x4 = π − x2，x5 = π − x1。
奇次谐波 f_k = 4/(πk)·[2 sin(k x1) − 2 sin(k x2) + sin(kπ/2)]，偶次谐波恒为 0。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import root
from tqdm import tqdm

from src.engine.propagate import BLOCH_TOLERANCE, bloch_violation
from src.errors import ConfigurationError, InfeasibleCoefficientsError
from src.geometry.couplings import CouplingSet
from src.geometry.layout import SpinLayout
from src.hamiltonian.builders import HamiltonianOptions, NV_SITE, build_secular_hamiltonian
from src.sequences.executor import DenseBackend, TruncatedBackend, execute
from src.sequences.schedule import PulseSchedule, ScheduleBuilder

logger = logging.getLogger(__name__)

# Knill 复合 π 脉冲的相对相位
KNILL_PHASES = tuple(math.radians(p) for p in (30.0, 0.0, 90.0, 0.0, 30.0))
# XY-8 各块的基准相位
XY8_PHASES = tuple(math.radians(p) for p in (0, 90, 0, 90, 90, 0, 90, 0))

ROOT_TOLERANCE = 1e-10


def fourier_coefficient(k: int, x1: float, x2: float) -> float:
    if k % 2 == 0:
        return 0.0
    return 4.0 / (math.pi * k) * (2 * math.sin(k * x1) - 2 * math.sin(k * x2) + math.sin(k * math.pi / 2))


@dataclass(frozen=True)
class AxyTiming:
    x1: float
    x2: float

    @property
    def block_fractions(self) -> tuple[float, ...]:
        """5 个脉冲在复合块内的位置（以块长为单位）"""
        return (
            self.x1 / math.pi,
            self.x2 / math.pi,
            0.5,
            1.0 - self.x2 / math.pi,
            1.0 - self.x1 / math.pi,
        )


def solve_axy_timing(coefficients: Sequence[float]) -> AxyTiming:
    """求解给定 (f1, f2, f3, f4) 的脉冲位置

    Raises:
        InfeasibleCoefficientsError: 偶次谐波非零、f1 超出 (0, 4/π) 或找不到根
    """
    f = list(coefficients) + [0.0] * (4 - len(coefficients))
    f1, f2, f3, f4 = f[:4]
    if f2 != 0.0 or f4 != 0.0:
        raise InfeasibleCoefficientsError("even harmonics vanish for symmetric AXY blocks; f2 and f4 must be 0")
    if not 0.0 < f1 < 4.0 / math.pi:
        raise InfeasibleCoefficientsError(f"f1 must lie in (0, 4/pi), got {f1}")

    def residual(x):
        return [fourier_coefficient(1, *x) - f1, fourier_coefficient(3, *x) - f3]

    # 多起点，按固定顺序取第一个满足 0 < x1 < x2 < π/2 的根
    starts = [(a, b) for a in np.linspace(0.05, 1.4, 10) for b in np.linspace(0.1, 1.5, 10) if a < b]
    for start in starts:
        solution = root(residual, start, method="hybr", options={"xtol": 1e-14})
        x1, x2 = solution.x
        if not solution.success or max(abs(r) for r in residual(solution.x)) > ROOT_TOLERANCE:
            continue
        if 0.0 < x1 < x2 < math.pi / 2:
            logger.debug(f"AXY 根: x1 = {x1:.6f}, x2 = {x2:.6f}, 起点 {start}")
            return AxyTiming(float(x1), float(x2))
    raise InfeasibleCoefficientsError(f"no AXY pulse timing realizes f1={f1}, f3={f3}")


def axy_schedule(
        coefficients: Sequence[float],
        frequency_hz: float,
        n_blocks: int,
        nv_site: int = NV_SITE,
        readout: bool = True,
) -> PulseSchedule:
    """AXY-8 序列；readout=True 时前后加 ±π/2_X 并测量 ⟨Z_NV⟩。

    Args:
        coefficients: (f1, f2, f3, f4)
        frequency_hz: 目标频率 ν，块长 τ = 1/(2ν)
        n_blocks: 复合块数，必须是 8 的倍数
    """
    if frequency_hz <= 0:
        raise ConfigurationError(f"frequency must be positive, got {frequency_hz}")
    if n_blocks < 8 or n_blocks % 8:
        raise ConfigurationError(f"n_blocks must be a positive multiple of 8, got {n_blocks}")
    timing = solve_axy_timing(coefficients)
    tau = 1.0 / (2.0 * frequency_hz)
    fractions = timing.block_fractions
    builder = ScheduleBuilder()
    if readout:
        builder.pulse((nv_site,), "X", math.pi / 2)
    for block in range(n_blocks):
        start = block * tau
        base = XY8_PHASES[block % 8]
        for fraction, knill in zip(fractions, KNILL_PHASES):
            builder.free(max(0.0, start + fraction * tau - builder.time))
            builder.pulse((nv_site,), base + knill, math.pi)
    builder.free(max(0.0, n_blocks * tau - builder.time))
    if readout:
        builder.pulse((nv_site,), "-X", math.pi / 2)
        builder.measure("nv_z", ("pauli", ((nv_site, "Z"),)))
    return builder.build({"frequency_hz": frequency_hz, "n_blocks": n_blocks, "tau_s": tau})


@dataclass
class Spectrum:
    frequencies_hz: np.ndarray
    signal: np.ndarray
    engine: str
    meta: dict = field(default_factory=dict)

    @property
    def tau_s(self) -> np.ndarray:
        """脉冲间隔轴 τ = 1/(2ν)"""
        return 1.0 / (2.0 * self.frequencies_hz)


def _initial_bloch(n_sites: int) -> np.ndarray:
    # NV 处于 m_s = 0，核完全未极化
    bloch = np.zeros((n_sites, 3))
    bloch[NV_SITE, 2] = 1.0
    return bloch


def run_axy_spectrum(
        layout: SpinLayout,
        couplings: CouplingSet,
        frequencies_hz: Sequence[float],
        n_reps: int = 30,
        engine: str = "truncated",
        coefficients: Sequence[float] = (0.1, 0.0, 0.0, 0.0),
        options: Optional[HamiltonianOptions] = None,
        batch: bool = True,
        backend=None,
        progress: bool = False,
) -> Spectrum:
    """对每个频率运行 π/2 → AXY-8×n_reps → −π/2，记录 ⟨Z_NV⟩。

    截断引擎在 batch=True 时按 f(αt, H) = f(t, αH) 把所有频率作为缩放系数的并行运行：
    序列以第一个频率为基准，第 k 个运行使用 α_k = ν_0/ν_k。
    """
    frequencies = np.asarray(frequencies_hz, dtype=float)
    if frequencies.ndim != 1 or len(frequencies) == 0:
        raise ConfigurationError("frequency grid must be a non-empty 1-D sequence")
    n_blocks = 8 * n_reps
    n_sites = layout.n_sites
    if backend is None:
        hamiltonian = build_secular_hamiltonian(layout, couplings, options)
        if engine == "truncated":
            backend = TruncatedBackend.build({"main": hamiltonian}, n_sites)
        elif engine == "dense":
            backend = DenseBackend({"main": hamiltonian}, n_sites, mode="density")
        else:
            raise ConfigurationError(f"unknown engine {engine!r}")
    bloch = _initial_bloch(n_sites)

    if backend.name == "truncated" and batch:
        reference = float(frequencies[0])
        alphas = reference / frequencies
        schedule = axy_schedule(coefficients, reference, n_blocks)
        state = backend.initial(bloch, batch=len(frequencies))
        result = execute(schedule, backend, state, alphas=alphas)
        signal = np.asarray(result.values("nv_z")[0], dtype=float)
        finals = [result.state]
    else:
        signal = np.empty(len(frequencies))
        finals = []
        for k, frequency in enumerate(tqdm(frequencies, desc="AXY", disable=not progress)):
            schedule = axy_schedule(coefficients, float(frequency), n_blocks)
            result = execute(schedule, backend, backend.initial(bloch))
            signal[k] = result.values("nv_z")[0]
            finals.append(result.state)
    meta = {"n_reps": n_reps, "coefficients": list(coefficients)}
    if backend.name == "truncated":
        violation = max(bloch_violation(s) for s in finals)
        meta["bloch_violation"] = violation
        if violation > BLOCH_TOLERANCE:
            logger.warning(f"单体 Bloch 矢量越界 {violation:.2e}，Taylor 步长可能过大")
    logger.info(f"AXY 谱完成: {len(frequencies)} 个频率, 引擎 {backend.name}")
    return Spectrum(frequencies_hz=frequencies, signal=signal, engine=backend.name, meta=meta)
