"""离散时间晶体的 Floquet 驱动与 (τ, θ) 扫描。

每个周期：U(τ) → R_x(θ) → U(τ) → 记录集体 ⟨σ_z⟩。核初态全部沿 +z。
有限脉冲模式在 H_nn + Ω_R Σ I_x 下演化 θ/Ω_R，并把时间轴平移脉冲长度。
"""
import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.analysis.decay import baseline_correct, fit_decay
from src.analysis.spectral import crystalline_fraction, psd
from src.errors import ConfigurationError, FitError, UndefinedFractionError
from src.geometry.couplings import CouplingSet
from src.geometry.layout import SpinLayout
from src.hamiltonian.builders import HamiltonianOptions
from src.oracle.dephasing import DephasingModel, dephasing_average
from src.sequences.executor import execute
from src.sequences.nuclear import NuclearFrame, nuclear_frame
from src.sequences.schedule import PulseSchedule, ScheduleBuilder
from src.sequences.trace import TimeTrace

logger = logging.getLogger(__name__)

DEFAULT_RABI = 2.0 * math.pi * 37.14e3


@dataclass(frozen=True)
class DtcParams:
    theta: float = 1.03 * math.pi
    # s
    tau: float = 125e-6
    n_cycles: int = 40
    # rad/s
    rabi_frequency: float = DEFAULT_RABI
    finite_pulse: bool = True
    # True 时集体观测量按横向超精细强度加权
    weighted: bool = False

    def __post_init__(self):
        if self.n_cycles < 1:
            raise ConfigurationError(f"n_cycles must be at least 1, got {self.n_cycles}")
        if self.tau < 0:
            raise ConfigurationError(f"tau must be non-negative, got {self.tau}")
        if self.finite_pulse and self.rabi_frequency <= 0:
            raise ConfigurationError(f"Rabi frequency must be positive, got {self.rabi_frequency}")
        if self.finite_pulse and self.theta < 0:
            raise ConfigurationError("finite pulses need a non-negative rotation angle")

    @property
    def pulse_length(self) -> float:
        return abs(self.theta) / self.rabi_frequency if self.finite_pulse else 0.0

    @property
    def cycle_length(self) -> float:
        return 2.0 * self.tau + self.pulse_length


def readout_weights(couplings: CouplingSet) -> np.ndarray:
    """读出保真度的近似权重 √(A_zx² + A_zy²)"""
    weights = np.hypot(couplings.hyperfine[:, 0], couplings.hyperfine[:, 1])
    if not np.any(weights > 0):
        raise ConfigurationError("hyperfine-weighted readout needs non-zero transverse couplings")
    return weights


def dtc_schedule(params: DtcParams, sites: Sequence[int], weights=None) -> PulseSchedule:
    observable = ("collective_z", tuple(sites)) if weights is None else ("collective_z", tuple(sites), tuple(weights))
    builder = ScheduleBuilder()
    for _ in range(params.n_cycles):
        builder.free(params.tau)
        if params.finite_pulse:
            # 有限脉冲不参与去相位抽样
            builder.drive(params.pulse_length, "drive")
        else:
            builder.pulse(sites, "X", params.theta)
        builder.free(params.tau)
        builder.measure("z", observable)
    return builder.build({"theta": params.theta, "tau_s": params.tau, "n_cycles": params.n_cycles})


def dtc_frame(layout, couplings, params: DtcParams, engine="dense", options=None, build_options=None) -> NuclearFrame:
    drive = params.rabi_frequency if params.finite_pulse else 0.0
    return nuclear_frame(layout, couplings, engine, options, drive=drive, build_options=build_options)


def run_dtc(
        layout: SpinLayout,
        couplings: CouplingSet,
        params: DtcParams,
        dephasing: Optional[DephasingModel] = None,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        frame: Optional[NuclearFrame] = None,
        batch_size: Optional[int] = None,
) -> TimeTrace:
    """Floquet 周期上的集体 ⟨σ_z⟩ 序列"""
    frame = frame or dtc_frame(layout, couplings, params, engine, options)
    weights = readout_weights(couplings) if params.weighted else None
    schedule = dtc_schedule(params, frame.sites, weights)
    bloch = frame.initial_bloch()
    if dephasing is None or dephasing.scale == 0.0:
        result = execute(schedule, frame.backend, frame.backend.initial(bloch))
        values = result.values("z").astype(float)
    else:
        if frame.backend.name != "dense":
            raise ConfigurationError("Markov dephasing is only available on the dense engine")

        def run_paths(detunings):
            state = frame.backend.initial(bloch, batch=len(detunings))
            result = execute(schedule, frame.backend, state, detunings=detunings, detuning_sites=frame.sites)
            return result.values("z").T

        values = dephasing_average(
            run_paths, dephasing, schedule.n_dephased_segments, len(frame.sites), batch_size=batch_size,
        )
    cycles = np.arange(1, params.n_cycles + 1, dtype=float)
    return TimeTrace(
        axis=cycles,
        values=np.asarray(values, dtype=float),
        axis_unit="cycles",
        observable="collective_z_weighted" if weights is not None else "collective_z",
        extra_axes={"time_s": cycles * params.cycle_length},
        meta={
            "protocol": "dtc",
            "theta_rad": params.theta,
            "tau_s": params.tau,
            "finite_pulse": params.finite_pulse,
            "pulse_length_s": params.pulse_length,
            "engine": frame.backend.name,
            "dephasing": dephasing.as_dict() if dephasing else None,
        },
    )


@dataclass
class DtcPoint:
    tau: float
    theta: float
    crystalline_fraction: float
    gamma: float
    stretch: float
    r_squared: float
    form: str = ""
    trace: Optional[TimeTrace] = field(default=None, repr=False)

    def as_row(self) -> dict:
        return {
            "tau_s": self.tau,
            "theta_rad": self.theta,
            "C": self.crystalline_fraction,
            "gamma": self.gamma,
            "n": self.stretch,
            "r_squared": self.r_squared,
            "form": self.form,
        }


def analyze_dtc_trace(trace: TimeTrace, theta: float, tau: float = math.nan) -> DtcPoint:
    """拟合衰减、减去基线、计算晶体分数；拟合失败时用未校正的序列计算 C"""
    try:
        fit = fit_decay(trace, theta)
        corrected = baseline_correct(trace, fit)
        spectrum = psd(corrected, baseline_corrected=True)
        gamma, stretch, score, form = fit.gamma, fit.stretch, fit.r_squared, fit.form
    except FitError:
        logger.warning(f"τ = {tau:.3g} s, θ = {theta:.4f} 的衰减拟合失败，C 按未校正序列计算")
        spectrum = psd(trace)
        gamma = stretch = score = math.nan
        form = ""
    try:
        fraction = crystalline_fraction(spectrum)
    except UndefinedFractionError:
        fraction = math.nan
    return DtcPoint(tau, theta, fraction, gamma, stretch, score, form, trace)


def _sweep_point(task) -> DtcPoint:
    layout, couplings, params, dephasing, options, engine, build_options = task
    frame = dtc_frame(layout, couplings, params, engine, options, build_options)
    trace = run_dtc(layout, couplings, params, dephasing, frame=frame)
    return analyze_dtc_trace(trace, params.theta, params.tau)


def dtc_sweep(
        layout: SpinLayout,
        couplings: CouplingSet,
        taus: Sequence[float],
        thetas: Sequence[float],
        base: DtcParams = DtcParams(),
        dephasing: Optional[DephasingModel] = None,
        options: Optional[HamiltonianOptions] = None,
        workers: int = 1,
        progress: bool = False,
        engine: str = "dense",
        build_options: Optional[dict] = None,
) -> list[DtcPoint]:
    """在 τ × θ 网格上运行 DTC；输出顺序与网格顺序一致，与完成顺序无关

    build_options 传给截断引擎（截断规则、缓存目录）
    """
    tasks = [
        (layout, couplings, DtcParams(float(theta), float(tau), base.n_cycles, base.rabi_frequency,
                                      base.finite_pulse, base.weighted), dephasing, options, engine,
         build_options)
        for tau in taus for theta in thetas
    ]
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=workers) as pool:
            points = list(tqdm(pool.imap(_sweep_point, tasks), total=len(tasks), desc="DTC", disable=not progress))
    else:
        points = [_sweep_point(task) for task in tqdm(tasks, desc="DTC", disable=not progress)]
    logger.info(f"DTC 扫描完成: {len(taus)} 个 τ × {len(thetas)} 个 θ")
    return points
