"""根据实验描述搭建体系并分派到各协议。

每个协议返回 RunOutput：待写出的 CSV 表、JSON 报告和一份摘要，
由 run_experiment 统一原子写出并附上运行清单。
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from src.analysis.decay import fit_stretched_exponential
from src.analysis.distance import distance_from_variance
from src.analysis.generalized_normal import fit_generalized_normal
from src.analysis.spectral import psd
from src.analysis.tables import reproduce_distance_tables
from src.config.config import worker_count
from src.config.experiment import ExperimentConfig, expand_grid, load_experiment
from src.engine.basis import TruncationRule, proximity_triplets
from src.engine.cache import atomic_write, cache_key
from src.errors import ConfigurationError, DomainError, FitError
from src.geometry.couplings import CouplingSet, compute_couplings, place_for_hyperfine
from src.geometry.layout import SpinLayout, add_nucleus, build_chain, build_layer_grid, import_layout
from src.hamiltonian.builders import HamiltonianOptions, build_secular_hamiltonian
from src.oracle.dephasing import DephasingModel
from src.report.load_template import render_run_summary
from src.sequences.axy import Spectrum, run_axy_spectrum
from src.sequences.dtc import DtcParams, analyze_dtc_trace, dtc_frame, dtc_sweep, run_dtc
from src.sequences.executor import TruncatedBackend
from src.sequences.novel import NovelParams, make_novel_backend, novel_readout, run_novel, run_readout_scan
from src.sequences.nuclear import coherence, nuclear_frame, one_over_e_time, run_hahn, run_ramsey, run_wahuha
from src.sequences.trace import TimeTrace
from src.cli.io import build_manifest, columns_to_rows, dump_trajectory, write_csv, write_json, write_manifest

logger = logging.getLogger(__name__)


@dataclass
class System:
    layout: SpinLayout
    couplings: CouplingSet
    options: HamiltonianOptions
    # TruncatedBackend.build 的参数：截断规则与缓存
    build_options: dict = field(default_factory=dict)


@dataclass
class RunOutput:
    # 文件名 → (CSV 类型, 行)
    tables: dict = field(default_factory=dict)
    # 文件名 → JSON 数据
    reports: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    cache_hashes: list = field(default_factory=list)


def build_layout(config: ExperimentConfig) -> SpinLayout:
    geometry = config.geometry
    if geometry.kind == "file":
        layout = import_layout(Path(geometry.layout_file))
    elif geometry.kind == "chain":
        layout = build_chain(geometry.nx, geometry.spacing, geometry.distance, geometry.tilt, geometry.field)
    else:
        layout = build_layer_grid(
            geometry.nx, geometry.ny, geometry.spacing, geometry.distance,
            tilt=geometry.tilt,
            n_layers=geometry.n_layers,
            field_magnitude=geometry.field,
            lateral_offset=tuple(geometry.lateral_offset),
        )
    strong = geometry.strong_nucleus
    if strong is not None:
        offset = place_for_hyperfine(
            strong.a_zx, strong.a_zz,
            layout.electron_gyromagnetic_ratio,
            layout.nuclear_gyromagnetic_ratio,
            layout.field_axis,
        )
        layout = add_nucleus(layout, np.asarray(layout.nv_position) + offset)
        logger.info(f"追加强耦合核，距 NV {np.linalg.norm(offset):.3f} nm")
    return layout


def build_system(config: ExperimentConfig) -> System:
    layout = build_layout(config)
    couplings = compute_couplings(layout)
    h = config.hamiltonian
    options = HamiltonianOptions(
        dipolar_mode=h.dipolar_mode,
        cutoff_nm=h.cutoff,
        neighbor_mode=h.neighbor_mode,
        uniform_j=h.uniform_j,
        include_nuclear_dipolar=h.include_nuclear_dipolar,
        detunings=tuple(h.detunings),
    )
    t = config.truncation
    triplets = proximity_triplets(layout.nuclear_positions, t.proximity_radius) if t.proximity_radius else ()
    rule = TruncationRule(nuclear_pairs=t.nuclear_pairs, nv_triplets=t.nv_triplets, proximity_triplets=triplets)
    build_options = {"rule": rule, "use_cache": t.use_cache, "cache_dir": t.cache_dir}
    logger.info(f"体系: {layout.n_nuclei} 个核, 磁场 {layout.field_magnitude * 1e4:.1f} G")
    return System(layout, couplings, options, build_options)


def dephasing_model(config: ExperimentConfig) -> Optional[DephasingModel]:
    d = config.dephasing
    if d is None:
        return None
    return DephasingModel(t2=d.t2, sampling_law=d.sampling_law, n_samples=d.n_samples,
                          seed=config.seed, common_mode=d.common_mode)


def _table_hashes(backend) -> list[str]:
    tables = getattr(backend, "tables", None) or {}
    return [cache_key(t.basis_hash, t.hamiltonian_hash, t.layout) for t in tables.values()]


def _spectrum_rows(spectrum: Spectrum) -> list[dict]:
    return columns_to_rows({
        "frequency_Hz": spectrum.frequencies_hz,
        "tau_ns": spectrum.tau_s * 1e9,
        "signal": spectrum.signal,
    })


def _axy_backend(system: System, config: ExperimentConfig, options: HamiltonianOptions):
    if config.engine != "truncated":
        return None
    hamiltonian = build_secular_hamiltonian(system.layout, system.couplings, options)
    return TruncatedBackend.build({"main": hamiltonian}, system.layout.n_sites, **system.build_options)


def _fit_report(spectrum: Spectrum, axy) -> dict:
    window = tuple(w * 1e9 for w in axy.tau_window) if axy.tau_window else None
    fit = fit_generalized_normal(spectrum, axy.n_peaks, window)
    report = fit.as_dict()
    distances = []
    for peak in fit.peaks:
        try:
            estimate = distance_from_variance(peak.variance, peak.variance_error)
            distances.append(asdict(estimate))
        except DomainError as e:
            logger.warning(f"方差 {peak.variance:.3g} ns² 超出转换函数的定义域: {e}")
            distances.append({"variance": peak.variance, "in_range": False})
    report["distances"] = distances
    return report


def run_axy(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    axy = config.axy
    frequencies = expand_grid(axy.frequencies)
    output = RunOutput()
    backend = _axy_backend(system, config, system.options)
    spectrum = run_axy_spectrum(
        system.layout, system.couplings, frequencies, axy.n_reps, config.engine,
        axy.coefficients, system.options, axy.batch, backend=backend, progress=progress,
    )
    output.cache_hashes = _table_hashes(backend)
    output.tables["spectrum.csv"] = ("axy-spectrum", _spectrum_rows(spectrum))
    if axy.fit:
        report = _fit_report(spectrum, axy)
        output.reports["fit.json"] = report
        output.summary["variances_ns2"] = [p["variance"] for p in report["peaks"]]
        output.summary["r_squared"] = report["r_squared"]
    for cutoff in axy.cutoff_scan or []:
        options = replace(system.options, cutoff_nm=cutoff)
        backend = _axy_backend(system, config, options)
        scanned = run_axy_spectrum(
            system.layout, system.couplings, frequencies, axy.n_reps, config.engine,
            axy.coefficients, options, axy.batch, backend=backend, progress=progress,
        )
        output.cache_hashes += _table_hashes(backend)
        output.tables[f"spectrum_cutoff_{cutoff:.3f}nm.csv"] = ("axy-spectrum", _spectrum_rows(scanned))
    output.summary["n_frequencies"] = len(frequencies)
    return output


def _novel_params(config: ExperimentConfig) -> NovelParams:
    n = config.novel
    return NovelParams(tau_sl=n.tau_sl, t_wait=n.t_wait, repetitions=n.repetitions, omega=n.omega)


def run_novel_protocol(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    params = _novel_params(config)
    backend = make_novel_backend(system.layout, system.couplings, params, config.engine,
                                 system.options, system.build_options)
    result = run_novel(system.layout, system.couplings, params,
                       nuclear_polarization=config.novel.nuclear_polarization, backend=backend)
    output = RunOutput(cache_hashes=_table_hashes(backend))
    output.tables["novel.csv"] = ("novel", columns_to_rows({
        "repetition": np.arange(1, params.repetitions + 1),
        "p_down": result.down.flip_probability,
        "p_up": result.up.flip_probability,
        "layer_z_down": result.down.layer_polarization,
        "layer_z_up": result.up.layer_polarization,
    }))
    output.summary["final_layer_z_down"] = float(result.down.layer_polarization[-1])
    output.summary["final_layer_z_up"] = float(result.up.layer_polarization[-1])
    novel = config.novel
    if novel.rabi_amplitude is not None and novel.rabi_offset is not None:
        output.summary["readout_Iz"] = novel_readout(result.down, result.up, novel.rabi_amplitude, novel.rabi_offset)
    return output


def run_readout_protocol(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    params = _novel_params(config)
    backend = make_novel_backend(system.layout, system.couplings, params, config.engine,
                                 system.options, system.build_options)
    thetas = expand_grid(config.readout_scan.thetas)
    scan = run_readout_scan(system.layout, system.couplings, thetas, params, backend=backend)
    output = RunOutput(cache_hashes=_table_hashes(backend))
    output.tables["readout_scan.csv"] = ("readout-scan", columns_to_rows({
        "theta_rad": scan.thetas,
        "cos_theta": np.cos(scan.thetas),
        "ratio": scan.ratios,
    }))
    output.reports["cosine_fit.json"] = asdict(scan.fit)
    output.summary.update(asdict(scan.fit))
    return output


def _coherence_output(trace: TimeTrace, axis_name: str, name: str) -> RunOutput:
    output = RunOutput(trajectories=[trace])
    values = coherence(trace)
    axis = np.asarray(trace.extra_axes.get(axis_name, trace.axis))
    columns = dict(trace.columns())
    columns["coherence"] = values
    output.tables[f"{name}.csv"] = (name, columns_to_rows(columns))
    output.summary["one_over_e_time_s"] = one_over_e_time(axis, values)
    try:
        fit = fit_stretched_exponential(axis, values)
        output.reports["coherence_fit.json"] = {**asdict(fit), "axis": axis_name}
        output.summary["t2_s"] = fit.t2
        output.summary["stretch"] = fit.stretch
    except FitError as e:
        logger.warning(f"{name} 相干度拟合失败: {e}")
    return output


def _frame(config: ExperimentConfig, system: System):
    return nuclear_frame(system.layout, system.couplings, config.engine, system.options,
                         build_options=system.build_options)


def run_nuclear_protocol(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    nuclear = config.nuclear
    frame = _frame(config, system)
    dephasing = dephasing_model(config)
    if config.protocol == "wahuha":
        trace = run_wahuha(system.layout, system.couplings, nuclear.tau, nuclear.n_cycles,
                           dephasing=dephasing, readout_sign=nuclear.readout_sign, frame=frame)
        output = _coherence_output(trace, "scaled_time_s", "wahuha")
    else:
        runner = run_ramsey if config.protocol == "ramsey" else run_hahn
        trace = runner(system.layout, system.couplings, expand_grid(nuclear.times),
                       dephasing=dephasing, readout_sign=nuclear.readout_sign, frame=frame)
        output = _coherence_output(trace, "time_s", config.protocol)
    output.cache_hashes = _table_hashes(frame.backend)
    return output


def _dtc_params(config: ExperimentConfig, theta=None, tau=None) -> DtcParams:
    d = config.dtc
    return DtcParams(
        theta=d.theta if theta is None else theta,
        tau=d.tau if tau is None else tau,
        n_cycles=d.n_cycles,
        rabi_frequency=d.rabi_frequency,
        finite_pulse=d.finite_pulse,
        weighted=d.weighted,
    )


def run_dtc_protocol(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    params = _dtc_params(config)
    frame = dtc_frame(system.layout, system.couplings, params, config.engine, system.options, system.build_options)
    dephasing = dephasing_model(config)
    batch_size = config.dephasing.batch_size if config.dephasing else None
    trace = run_dtc(system.layout, system.couplings, params, dephasing, frame=frame, batch_size=batch_size)
    point = analyze_dtc_trace(trace, params.theta, params.tau)
    spectrum = psd(trace)
    output = RunOutput(trajectories=[trace], cache_hashes=_table_hashes(frame.backend))
    output.tables["dtc.csv"] = ("dtc-trace", columns_to_rows(trace.columns()))
    output.tables["dtc_psd.csv"] = ("dtc-psd", columns_to_rows({
        "frequency_per_cycle": spectrum.frequencies,
        "power": spectrum.power,
    }))
    output.reports["dtc_fit.json"] = point.as_row()
    output.summary.update(point.as_row())
    return output


def run_dtc_sweep_protocol(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    d = config.dtc
    taus = expand_grid(d.taus) if d.taus is not None else np.array([d.tau])
    thetas = expand_grid(d.thetas) if d.thetas is not None else np.array([d.theta])
    points = dtc_sweep(
        system.layout, system.couplings, taus, thetas, _dtc_params(config),
        dephasing_model(config), system.options, workers=workers, progress=progress, engine=config.engine,
        build_options=system.build_options,
    )
    output = RunOutput(trajectories=[p.trace for p in points if p.trace is not None])
    output.tables["dtc_sweep.csv"] = ("dtc-sweep", [p.as_row() for p in points])
    fractions = np.array([p.crystalline_fraction for p in points])
    output.summary["n_points"] = len(points)
    output.summary["max_C"] = float(np.nanmax(fractions)) if np.any(np.isfinite(fractions)) else math.nan
    return output


def run_distance_table(config: ExperimentConfig, system: Optional[System], workers: int, progress: bool) -> RunOutput:
    rows = reproduce_distance_tables()
    output = RunOutput()
    output.tables["distance_table.csv"] = ("distance-table", [r.as_dict() for r in rows])
    output.summary["rows"] = len(rows)
    output.summary["matching"] = sum(r.matches for r in rows)
    output.summary["explained"] = sum(r.explained for r in rows)
    return output


def _relative_l2(reference: np.ndarray, candidate: np.ndarray) -> float:
    norm = float(np.linalg.norm(reference))
    return float(np.linalg.norm(candidate - reference)) / norm if norm else float(np.linalg.norm(candidate))


def run_validate(config: ExperimentConfig, system: System, workers: int, progress: bool) -> RunOutput:
    """截断引擎与稠密参照在同一 AXY 序列上的比较"""
    v = config.validate_
    if system.layout.n_sites > v.max_spins:
        raise ConfigurationError(f"validate runs at most {v.max_spins} spins, layout has {system.layout.n_sites}")
    if v.n_blocks % 8:
        raise ConfigurationError(f"n_blocks must be a multiple of 8, got {v.n_blocks}")
    frequencies = expand_grid(v.frequencies)
    n_reps = v.n_blocks // 8
    coefficients = config.axy.coefficients if config.axy else (0.1, 0.0, 0.0, 0.0)
    hamiltonian = build_secular_hamiltonian(system.layout, system.couplings, system.options)
    backend = TruncatedBackend.build({"main": hamiltonian}, system.layout.n_sites, **system.build_options)
    truncated = run_axy_spectrum(system.layout, system.couplings, frequencies, n_reps, "truncated",
                                 coefficients, system.options, backend=backend, progress=progress)
    dense = run_axy_spectrum(system.layout, system.couplings, frequencies, n_reps, "dense",
                             coefficients, system.options, progress=progress)
    deviation = np.abs(truncated.signal - dense.signal)
    output = RunOutput(cache_hashes=_table_hashes(backend))
    output.tables["validate.csv"] = ("validate", columns_to_rows({
        "frequency_Hz": frequencies,
        "signal_truncated": truncated.signal,
        "signal_dense": dense.signal,
        "abs_deviation": deviation,
    }))
    report = {
        "protocol": "axy_spectrum",
        "n_spins": system.layout.n_sites,
        "n_blocks": v.n_blocks,
        "max_abs_deviation": float(deviation.max()),
        "relative_l2": _relative_l2(dense.signal, truncated.signal),
        "bloch_violation": truncated.meta["bloch_violation"],
    }
    try:
        fits = [fit_generalized_normal(s) for s in (truncated, dense)]
        report["variance_truncated_ns2"] = fits[0].peaks[0].variance
        report["variance_dense_ns2"] = fits[1].peaks[0].variance
        report["variance_relative_deviation"] = abs(fits[0].peaks[0].variance / fits[1].peaks[0].variance - 1.0)
    except FitError as e:
        logger.warning(f"比较谱的拟合失败，只报告逐点偏差: {e}")
    output.reports["validate.json"] = report
    output.summary.update(report)
    return output


PROTOCOL_RUNNERS: dict[str, Callable[..., RunOutput]] = {
    "axy_spectrum": run_axy,
    "novel": run_novel_protocol,
    "readout_scan": run_readout_protocol,
    "ramsey": run_nuclear_protocol,
    "hahn": run_nuclear_protocol,
    "wahuha": run_nuclear_protocol,
    "dtc": run_dtc_protocol,
    "dtc_sweep": run_dtc_sweep_protocol,
    "distance_table": run_distance_table,
    "validate": run_validate,
}


@dataclass
class RunRecord:
    config: ExperimentConfig
    output: RunOutput
    files: list
    manifest_path: Path
    wall_time_s: float


def run_experiment(path: str | Path, output_dir: Optional[str | Path] = None, progress: bool = True) -> RunRecord:
    """载入实验、运行协议、写出结果与清单"""
    start = time.perf_counter()
    config, raw = load_experiment(path)
    workers = config.workers or worker_count()
    system = None if config.protocol == "distance_table" else build_system(config)
    output = PROTOCOL_RUNNERS[config.protocol](config, system, workers, progress)

    directory = Path(output_dir or config.output.directory)
    name = config.run_name
    files = []
    for filename, (kind, rows) in output.tables.items():
        files.append(write_csv(directory / f"{name}_{filename}", kind, rows))
    for filename, data in output.reports.items():
        files.append(write_json(directory / f"{name}_{filename}", data))
    if config.output.trajectories and output.trajectories:
        files.append(dump_trajectory(output.trajectories, directory / f"{name}_trajectory.csv"))

    wall_time = time.perf_counter() - start
    manifest = build_manifest(raw, files, wall_time, output.cache_hashes, {"summary": output.summary})
    manifest_path = write_manifest(directory, name, manifest)
    summary_path = directory / f"{name}.summary.md"
    atomic_write(summary_path, render_run_summary(config, output.summary, files, wall_time).encode("utf-8"))
    logger.info(f"{config.protocol} 完成，用时 {wall_time:.1f} s，结果在 {directory}")
    return RunRecord(config, output, files, manifest_path, wall_time)
