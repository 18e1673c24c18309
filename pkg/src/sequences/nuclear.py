"""核坐标系中的 Ramsey、Hahn 回波与 WAHUHA 序列。

核初态沿 +z。默认读出约定为 +π/2_Y，此时无演化的 Ramsey 基线为 −1，
Hahn 回波基线为 +1；readout_sign="-" 时两者都取反。
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from src.errors import ConfigurationError
from src.geometry.couplings import CouplingSet
from src.geometry.layout import SpinLayout
from src.hamiltonian.builders import HamiltonianOptions, build_nuclear_frame_hamiltonian
from src.oracle.dephasing import DephasingModel, dephasing_average
from src.sequences.executor import DenseBackend, TruncatedBackend, execute
from src.sequences.schedule import PulseSchedule, ScheduleBuilder
from src.sequences.trace import TimeTrace

logger = logging.getLogger(__name__)

WAHUHA_SCALING = 1.0 / math.sqrt(3.0)


@dataclass
class NuclearFrame:
    """核坐标系运行环境：后端与核位点"""
    backend: object
    sites: tuple[int, ...]

    @property
    def n_sites(self) -> int:
        return self.backend.n_sites

    def initial_bloch(self, direction=(0.0, 0.0, 1.0)) -> np.ndarray:
        bloch = np.zeros((self.n_sites, 3))
        bloch[list(self.sites)] = direction
        return bloch


def nuclear_frame(
        layout: SpinLayout,
        couplings: CouplingSet,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        drive: float = 0.0,
        build_options: Optional[dict] = None,
) -> NuclearFrame:
    """构建核坐标系后端；截断引擎保留一个空闲 NV 位点（编号 0）"""
    offset = {"dense": 0, "truncated": 1}.get(engine)
    if offset is None:
        raise ConfigurationError(f"unknown engine {engine!r}")
    hamiltonians = {"main": build_nuclear_frame_hamiltonian(layout, couplings, options, offset=offset)}
    if drive:
        hamiltonians["drive"] = build_nuclear_frame_hamiltonian(layout, couplings, options, drive=drive, offset=offset)
    n_sites = layout.n_nuclei + offset
    if engine == "dense":
        backend = DenseBackend(hamiltonians, n_sites, mode="pure")
    else:
        backend = TruncatedBackend.build(hamiltonians, n_sites, **(build_options or {}))
    return NuclearFrame(backend, tuple(range(offset, n_sites)))


def _readout_axis(sign: str) -> str:
    if sign not in ("+", "-"):
        raise ConfigurationError(f"readout sign must be '+' or '-', got {sign!r}")
    return "Y" if sign == "+" else "-Y"


def _run(frame: NuclearFrame, schedule: PulseSchedule, dephasing: Optional[DephasingModel]) -> np.ndarray:
    """执行一个序列，返回 "signal" 测量值；有去相位模型时对样本路径平均"""
    bloch = frame.initial_bloch()
    if dephasing is None or dephasing.scale == 0.0:
        result = execute(schedule, frame.backend, frame.backend.initial(bloch))
        return result.values("signal").astype(float)
    if frame.backend.name != "dense":
        raise ConfigurationError("Markov dephasing is only available on the dense engine")

    def run_paths(detunings):
        state = frame.backend.initial(bloch, batch=len(detunings))
        result = execute(schedule, frame.backend, state, detunings=detunings, detuning_sites=frame.sites)
        return result.values("signal").T

    return dephasing_average(run_paths, dephasing, schedule.n_dephased_segments, len(frame.sites))


def ramsey_schedule(t: float, sites, readout_sign: str = "+") -> PulseSchedule:
    builder = ScheduleBuilder()
    builder.pulse(sites, "Y", math.pi / 2)
    builder.free(t)
    builder.pulse(sites, _readout_axis(readout_sign), math.pi / 2)
    builder.measure("signal", ("collective_z", tuple(sites)))
    return builder.build({"protocol": "ramsey", "t_s": t})


def hahn_schedule(t: float, sites, readout_sign: str = "+") -> PulseSchedule:
    """π/2_Y → t/2 → π_Y → t/2 → 读出"""
    builder = ScheduleBuilder()
    builder.pulse(sites, "Y", math.pi / 2)
    builder.free(t / 2)
    builder.pulse(sites, "Y", math.pi)
    builder.free(t / 2)
    builder.pulse(sites, _readout_axis(readout_sign), math.pi / 2)
    builder.measure("signal", ("collective_z", tuple(sites)))
    return builder.build({"protocol": "hahn", "t_s": t})


def wahuha_schedule(tau: float, n_cycles: int, sites, readout_sign: str = "+") -> PulseSchedule:
    """每个周期 τ →(−X)→ τ →(Y)→ 2τ →(−Y)→ τ →(X)→ τ，周期长 6τ。

    每个周期末读出后立即施加逆脉冲，脉冲幺正，读出不改变后续演化。
    """
    if tau <= 0:
        raise ConfigurationError(f"WAHUHA pulse spacing must be positive, got {tau}")
    if n_cycles < 1:
        raise ConfigurationError(f"n_cycles must be at least 1, got {n_cycles}")
    readout = _readout_axis(readout_sign)
    undo = "-Y" if readout == "Y" else "Y"
    builder = ScheduleBuilder()
    builder.pulse(sites, "Y", math.pi / 2)
    for _ in range(n_cycles):
        builder.free(tau)
        builder.pulse(sites, "-X", math.pi / 2)
        builder.free(tau)
        builder.pulse(sites, "Y", math.pi / 2)
        builder.free(2 * tau)
        builder.pulse(sites, "-Y", math.pi / 2)
        builder.free(tau)
        builder.pulse(sites, "X", math.pi / 2)
        builder.free(tau)
        builder.pulse(sites, readout, math.pi / 2)
        builder.measure("signal", ("collective_z", tuple(sites)))
        builder.pulse(sites, undo, math.pi / 2)
    return builder.build({"protocol": "wahuha", "tau_s": tau, "n_cycles": n_cycles})


def _point_trace(kind, schedule_for, frame, times, dephasing, readout_sign) -> TimeTrace:
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ConfigurationError("evolution times must be non-negative")
    values = np.array([
        _run(frame, schedule_for(float(t), frame.sites, readout_sign), dephasing)[0] for t in times
    ])
    logger.info(f"{kind} 完成: {len(times)} 个时间点, 引擎 {frame.backend.name}")
    return TimeTrace(
        axis=times,
        values=values,
        meta={
            "protocol": kind,
            "readout_sign": readout_sign,
            "engine": frame.backend.name,
            "dephasing": dephasing.as_dict() if dephasing else None,
        },
    )


def run_ramsey(
        layout: SpinLayout,
        couplings: CouplingSet,
        times: Sequence[float],
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        dephasing: Optional[DephasingModel] = None,
        readout_sign: Literal["+", "-"] = "+",
        frame: Optional[NuclearFrame] = None,
) -> TimeTrace:
    """各时间点的 Ramsey 信号 π/2_Y → t → ±π/2_Y"""
    frame = frame or nuclear_frame(layout, couplings, engine, options)
    return _point_trace("ramsey", ramsey_schedule, frame, times, dephasing, readout_sign)


def run_hahn(
        layout: SpinLayout,
        couplings: CouplingSet,
        times: Sequence[float],
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        dephasing: Optional[DephasingModel] = None,
        readout_sign: Literal["+", "-"] = "+",
        frame: Optional[NuclearFrame] = None,
) -> TimeTrace:
    frame = frame or nuclear_frame(layout, couplings, engine, options)
    return _point_trace("hahn", hahn_schedule, frame, times, dephasing, readout_sign)


def run_wahuha(
        layout: SpinLayout,
        couplings: CouplingSet,
        tau: float,
        n_cycles: int,
        engine: str = "dense",
        options: Optional[HamiltonianOptions] = None,
        dephasing: Optional[DephasingModel] = None,
        readout_sign: Literal["+", "-"] = "+",
        frame: Optional[NuclearFrame] = None,
) -> TimeTrace:
    """每个 WAHUHA 周期末的信号；附带按 1/√3 缩放的等效时间轴"""
    frame = frame or nuclear_frame(layout, couplings, engine, options)
    schedule = wahuha_schedule(tau, n_cycles, frame.sites, readout_sign)
    values = _run(frame, schedule, dephasing)
    times = 6.0 * tau * np.arange(1, n_cycles + 1)
    logger.info(f"WAHUHA 完成: τ = {tau * 1e6:.2f} µs, {n_cycles} 个周期")
    return TimeTrace(
        axis=times,
        values=values,
        extra_axes={"scaled_time_s": times * WAHUHA_SCALING},
        meta={
            "protocol": "wahuha",
            "tau_s": tau,
            "readout_sign": readout_sign,
            "engine": frame.backend.name,
            "dephasing": dephasing.as_dict() if dephasing else None,
        },
    )


def coherence(trace: TimeTrace) -> np.ndarray:
    """把信号换算成相对无演化基线的相干度（两种读出约定下基线都映射为 +1）"""
    baseline = -1.0 if trace.meta.get("readout_sign", "+") == "+" else 1.0
    if trace.meta.get("protocol") == "hahn":
        baseline = -baseline
    return np.asarray(trace.values) / baseline


def one_over_e_time(times, coherence_values) -> float:
    """相干度首次降到 1/e 的时间（线性插值）；始终高于 1/e 时返回 inf"""
    times = np.asarray(times, dtype=float)
    values = np.asarray(coherence_values, dtype=float)
    below = np.nonzero(values < math.exp(-1.0))[0]
    if len(below) == 0:
        return math.inf
    k = int(below[0])
    if k == 0:
        return float(times[0])
    t0, t1 = times[k - 1], times[k]
    v0, v1 = values[k - 1], values[k]
    return float(t0 + (v0 - math.exp(-1.0)) * (t1 - t0) / (v0 - v1))
