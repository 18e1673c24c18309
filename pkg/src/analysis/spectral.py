"""Floquet 时间序列的功率谱与晶体分数。"""
import logging
from dataclasses import dataclass

import numpy as np

from src.errors import InsufficientDataError, UndefinedFractionError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 4


@dataclass
class PowerSpectrum:
    # 单位：每个 Floquet 周期，取值 0 … 1/2
    frequencies: np.ndarray
    power: np.ndarray
    # 输入已减去拟合基线，此时计算晶体分数不计 ν = 0
    baseline_corrected: bool = False
    n_samples: int = 0

    @property
    def total_power(self) -> float:
        return float(np.sum(self.power))


def _values(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "values", trace), dtype=float)


def psd(trace, baseline_corrected: bool = False) -> PowerSpectrum:
    """单边功率谱，按 Parseval 归一化：Σ P(ν) = Σ_N x_N²。

    奇数长度时丢弃最后一个样本，使 ν = 1/2 恰好是一个频点。

    Raises:
        InsufficientDataError: 样本数少于 4
    """
    values = _values(trace)
    if len(values) < MIN_SAMPLES:
        raise InsufficientDataError(f"power spectrum needs at least {MIN_SAMPLES} samples, got {len(values)}")
    if len(values) % 2:
        values = values[:-1]
    n = len(values)
    spectrum = np.fft.rfft(values)
    power = np.abs(spectrum) ** 2 / n
    power[1:-1] *= 2.0
    frequencies = np.fft.rfftfreq(n)
    return PowerSpectrum(frequencies, power, baseline_corrected, n)


def crystalline_fraction(spectrum: PowerSpectrum, exclude_dc=None) -> float:
    """C = P(ν = 1/2) / Σ_ν P(ν)

    Raises:
        UndefinedFractionError: 总功率为 0
    """
    exclude_dc = spectrum.baseline_corrected if exclude_dc is None else exclude_dc
    power = spectrum.power[1:] if exclude_dc else spectrum.power
    total = float(np.sum(power))
    if total <= 0.0:
        raise UndefinedFractionError("total spectral power is zero; crystalline fraction undefined")
    fraction = float(spectrum.power[-1]) / total
    return min(max(fraction, 0.0), 1.0)


def dominant_frequency(spectrum: PowerSpectrum) -> float:
    """功率最大的非零频点"""
    if len(spectrum.power) < 2:
        raise InsufficientDataError("spectrum has no non-DC bins")
    return float(spectrum.frequencies[1 + int(np.argmax(spectrum.power[1:]))])
