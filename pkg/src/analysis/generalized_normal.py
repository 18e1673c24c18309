"""谱线的广义正态分布拟合。

拟合在脉冲间隔 τ = 1/(2ν) 的时间域中进行（单位 ns），模型为
    y(τ) = (baseline − Σ_k A_k·exp(−(|τ − µ_k|/α_k)^β_k))·exp(−decay·τ)
各峰的方差 v = α²Γ(3/β)/Γ(1/β)，误差按一阶传播。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import find_peaks, peak_widths
from scipy.special import digamma, gamma

from src.analysis.fitting import CurveFit, multistart_curve_fit
from src.errors import ConfigurationError, FitError

logger = logging.getLogger(__name__)

# 每个峰 4 个参数 (A, µ, α, β)，前面是 baseline 与 decay
_PEAK_PARAMS = 4
_SHAPE_STARTS = (2.0, 1.5, 3.0, 1.0)
_WIDTH_FACTORS = (1.0, 0.5, 2.0)


def variance(scale: float, shape: float) -> float:
    """α²Γ(3/β)/Γ(1/β)；β = 2 时为 α²/2"""
    if scale <= 0 or shape <= 0:
        raise ConfigurationError(f"scale and shape must be positive, got {scale}, {shape}")
    return scale**2 * gamma(3.0 / shape) / gamma(1.0 / shape)


def variance_gradient(scale: float, shape: float) -> tuple[float, float]:
    """(∂v/∂α, ∂v/∂β)"""
    v = variance(scale, shape)
    d_scale = 2.0 * v / scale
    d_shape = v * (digamma(1.0 / shape) - 3.0 * digamma(3.0 / shape)) / shape**2
    return d_scale, d_shape


def kernel(x, location, scale, shape):
    return np.exp(-(np.abs(x - location) / abs(scale)) ** abs(shape))


def spectrum_model(x, baseline, decay, *peaks):
    dips = np.zeros_like(x, dtype=float)
    for k in range(0, len(peaks), _PEAK_PARAMS):
        amplitude, location, scale, shape = peaks[k:k + _PEAK_PARAMS]
        dips = dips + amplitude * kernel(x, location, scale, shape)
    return (baseline - dips) * np.exp(-decay * x)


@dataclass
class GenNormalPeak:
    location: float
    scale: float
    shape: float
    amplitude: float
    variance: float
    variance_error: float


@dataclass
class GenNormalFit:
    peaks: list[GenNormalPeak]
    baseline: float
    decay: float
    covariance: np.ndarray
    r_squared: float
    residual_norm: float
    starts: list = field(default_factory=list)
    # 拟合幅度相对数据起伏过小，结果不可信
    flat: bool = False

    @property
    def variances(self) -> list[float]:
        return [p.variance for p in self.peaks]

    def as_dict(self) -> dict:
        return {
            "peaks": [p.__dict__ for p in self.peaks],
            "baseline": self.baseline,
            "decay": self.decay,
            "covariance": self.covariance.tolist(),
            "r_squared": self.r_squared,
            "residual_norm": self.residual_norm,
            "starts": self.starts,
            "flat": self.flat,
        }


def _initial_guesses(x: np.ndarray, y: np.ndarray, n_peaks: int) -> list[list[float]]:
    baseline = float(np.max(y))
    depth = baseline - y
    found, props = find_peaks(depth, prominence=0.0)
    if len(found) >= n_peaks:
        order = np.argsort(props["prominences"])[::-1][:n_peaks]
        centers = np.sort(found[order])
    else:
        centers = np.argsort(y)[:n_peaks]
    widths = []
    for center in centers:
        try:
            width_samples = float(peak_widths(depth, [center], rel_height=0.5)[0][0])
        except ValueError:
            width_samples = 1.0
        step = float(np.median(np.diff(x)))
        widths.append(max(width_samples, 1.0) * step)
    starts = []
    for shape in _SHAPE_STARTS:
        for factor in _WIDTH_FACTORS:
            start = [baseline, 0.0]
            for center, fwhm in zip(centers, widths):
                # FWHM = 2α(ln 2)^(1/β)
                scale = factor * fwhm / (2.0 * math.log(2.0) ** (1.0 / shape))
                start += [float(depth[center]), float(x[center]), scale, shape]
            starts.append(start)
    return starts


def fit_generalized_normal_xy(x, y, n_peaks: int = 1, flat_threshold: float = 1e-9) -> GenNormalFit:
    """对 (τ, 信号) 数据做单峰或双峰拟合。

    Args:
        x: 单调的 τ 轴 (ns)
        y: 信号
        n_peaks: 1 或 2
        flat_threshold: 数据起伏低于该值时视为平坦谱

    Raises:
        FitError: 平坦谱或所有起点都不收敛
    """
    if n_peaks not in (1, 2):
        raise ConfigurationError(f"n_peaks must be 1 or 2, got {n_peaks}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 4 * n_peaks + 2:
        raise ConfigurationError("not enough samples for the requested number of peaks")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if np.ptp(y) < flat_threshold:
        raise FitError("spectrum is flat; no resonance to fit", best_residual=0.0)

    def accept(params):
        peaks = params[2:]
        return all(peaks[k + 2] != 0 and peaks[k + 3] > 0 for k in range(0, len(peaks), _PEAK_PARAMS))

    starts = _initial_guesses(x, y, n_peaks)
    result: CurveFit = multistart_curve_fit(spectrum_model, x, y, starts, method="lm", accept=accept)
    return _assemble(result, np.ptp(y))


def _assemble(result: CurveFit, spread: float) -> GenNormalFit:
    params = result.params
    covariance = result.covariance
    peaks = []
    for k in range(2, len(params), _PEAK_PARAMS):
        amplitude, location, scale, shape = params[k:k + _PEAK_PARAMS]
        scale, shape = abs(scale), abs(shape)
        v = variance(scale, shape)
        grad = np.zeros(len(params))
        grad[k + 2], grad[k + 3] = variance_gradient(scale, shape)
        var_v = float(grad @ covariance @ grad) if np.all(np.isfinite(covariance)) else math.inf
        peaks.append(GenNormalPeak(float(location), float(scale), float(shape), float(amplitude), float(v),
                                   math.sqrt(max(var_v, 0.0))))
    peaks.sort(key=lambda p: p.location)
    flat = all(abs(p.amplitude) < 1e-3 * spread for p in peaks)
    if flat:
        logger.warning("拟合峰幅度接近 0，结果标记为 flat")
    logger.info(f"广义正态拟合: 方差 {[round(p.variance, 3) for p in peaks]} ns², R² = {result.r_squared:.5f}")
    return GenNormalFit(
        peaks=peaks,
        baseline=float(params[0]),
        decay=float(params[1]),
        covariance=covariance,
        r_squared=result.r_squared,
        residual_norm=result.residual_norm,
        starts=result.starts,
        flat=flat,
    )


def fit_generalized_normal(spectrum, n_peaks: int = 1, tau_window_ns: Optional[tuple[float, float]] = None) -> GenNormalFit:
    """对 Spectrum 在 τ 轴 (ns) 上拟合"""
    x = np.asarray(spectrum.tau_s, dtype=float) * 1e9
    y = np.asarray(spectrum.signal, dtype=float)
    if tau_window_ns is not None:
        mask = (x >= tau_window_ns[0]) & (x <= tau_window_ns[1])
        x, y = x[mask], y[mask]
    return fit_generalized_normal_xy(x, y, n_peaks)
