"""衰减率拟合、基线校正以及读出标定用到的简单拟合。"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from src.analysis.fitting import multistart_curve_fit, r_squared
from src.errors import FitError, InsufficientDataError

logger = logging.getLogger(__name__)

MIN_CYCLES = 10
DEFAULT_WINDOW = 40
STRETCH_BOUNDS = (0.1, 5.0)
_GAMMA_STARTS = (0.01, 0.05, 0.2, 0.002)
_STRETCH_STARTS = (1.0, 2.0)


def decay_model(theta: float):
    """a·cos(θN)·exp(−(ΓN)^n) + b"""
    def model(n_cycles, amplitude, rate, stretch, baseline):
        return amplitude * np.cos(theta * n_cycles) * np.exp(-(rate * n_cycles) ** stretch) + baseline
    return model


@dataclass
class DecayFit:
    form: str
    theta: float
    amplitude: float
    gamma: float
    stretch: float
    baseline: float
    r_squared: float
    # 两种候选形式各自的 R²，未收敛的为 nan
    candidates: dict = field(default_factory=dict)

    def evaluate(self, n_cycles) -> np.ndarray:
        theta = self.theta if self.form == "cos_theta" else math.pi
        n_cycles = np.asarray(n_cycles, dtype=float)
        return decay_model(theta)(n_cycles, self.amplitude, self.gamma, self.stretch, self.baseline)

    def as_dict(self) -> dict:
        return {
            "form": self.form,
            "theta_rad": self.theta,
            "amplitude": self.amplitude,
            "gamma": self.gamma,
            "stretch": self.stretch,
            "baseline": self.baseline,
            "r_squared": self.r_squared,
            "candidates": self.candidates,
        }


def _cycle_axis(trace, values) -> np.ndarray:
    axis = getattr(trace, "axis", None)
    if axis is not None and getattr(trace, "axis_unit", "") == "cycles":
        return np.asarray(axis, dtype=float)
    return np.arange(1, len(values) + 1, dtype=float)


def fit_decay(trace, theta: float, window: Optional[int] = DEFAULT_WINDOW, fixed_stretch: Optional[float] = None) -> DecayFit:
    """分别拟合 cos(θN) 与 cos(πN) 两种形式，返回 R² 较高者。

    Args:
        trace: TimeTrace（周期轴）或按周期排列的观测值
        theta: 旋转角 (rad)
        window: 只拟合前 window 个周期，None 表示全部
        fixed_stretch: 给定时固定伸展指数 n

    Raises:
        InsufficientDataError: 周期数少于 10
        FitError: 两种形式都不收敛
    """
    values = np.asarray(getattr(trace, "values", trace), dtype=float)
    cycles = _cycle_axis(trace, values)
    if window is not None:
        values, cycles = values[:window], cycles[:window]
    if len(values) < MIN_CYCLES:
        raise InsufficientDataError(f"decay fit needs at least {MIN_CYCLES} cycles, got {len(values)}")

    results = {}
    best_residual = math.inf
    for form, angle in (("cos_theta", theta), ("cos_pi", math.pi)):
        try:
            results[form] = _fit_form(cycles, values, angle, fixed_stretch)
        except FitError as e:
            best_residual = min(best_residual, e.best_residual)
            logger.debug(f"{form} 形式未收敛")
    if not results:
        raise FitError("neither decay form converged", best_residual=best_residual)
    candidates = {form: results[form][4] if form in results else math.nan for form in ("cos_theta", "cos_pi")}
    form = max(results, key=lambda f: results[f][4])
    amplitude, rate, stretch, baseline, score = results[form]
    logger.debug(f"衰减拟合: {form}, Γ = {rate:.4g}, n = {stretch:.3g}, R² = {score:.5f}")
    return DecayFit(form, theta, amplitude, rate, stretch, baseline, score, candidates)


def _fit_form(cycles, values, angle, fixed_stretch):
    base_model = decay_model(angle)
    first = float(np.cos(angle * cycles[0]))
    amplitude0 = values[0] / first if abs(first) > 0.1 else 1.0
    if fixed_stretch is not None:
        def model(n_cycles, amplitude, rate, baseline):
            return base_model(n_cycles, amplitude, rate, fixed_stretch, baseline)
        starts = [[amplitude0, g, 0.0] for g in _GAMMA_STARTS]
        bounds = ([-np.inf, 0.0, -np.inf], [np.inf, np.inf, np.inf])
    else:
        model = base_model
        starts = [[amplitude0, g, s, 0.0] for s in _STRETCH_STARTS for g in _GAMMA_STARTS]
        bounds = ([-np.inf, 0.0, STRETCH_BOUNDS[0], -np.inf], [np.inf, np.inf, STRETCH_BOUNDS[1], np.inf])
    result = multistart_curve_fit(model, cycles, values, starts, bounds=bounds, method="trf")
    if fixed_stretch is not None:
        amplitude, rate, baseline = result.params
        stretch = fixed_stretch
    else:
        amplitude, rate, stretch, baseline = result.params
    return float(amplitude), float(rate), float(stretch), float(baseline), result.r_squared


def baseline_correct(trace, fit: DecayFit):
    """逐点减去拟合基线 b；TimeTrace 输入返回新的 TimeTrace"""
    values = np.asarray(getattr(trace, "values", trace), dtype=float) - fit.baseline
    if hasattr(trace, "values"):
        return replace(trace, values=values, meta={**trace.meta, "baseline_subtracted": fit.baseline})
    return values


@dataclass
class PolynomialFit:
    coefficients: np.ndarray
    r_squared: float

    def evaluate(self, x):
        return np.polyval(self.coefficients, x)


def fit_quadratic(x, y) -> PolynomialFit:
    """y ≈ c₂x² + c₁x + c₀，系数按降幂排列"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise InsufficientDataError("quadratic fit needs at least 3 points")
    coefficients = np.polyfit(x, y, 2)
    return PolynomialFit(coefficients, r_squared(y, np.polyval(coefficients, x)))


@dataclass
class CosineFit:
    amplitude: float
    offset: float
    r_squared: float


def fit_cosine(theta, y) -> CosineFit:
    """y ≈ a·cosθ + b（线性最小二乘）"""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(theta) < 3:
        raise InsufficientDataError("cosine fit needs at least 3 points")
    design = np.column_stack([np.cos(theta), np.ones_like(theta)])
    (amplitude, offset), *_ = np.linalg.lstsq(design, y, rcond=None)
    return CosineFit(float(amplitude), float(offset), r_squared(y, design @ [amplitude, offset]))


@dataclass
class CoherenceFit:
    amplitude: float
    # s
    t2: float
    stretch: float
    r_squared: float


def fit_stretched_exponential(times, values) -> CoherenceFit:
    """A·exp(−(t/T₂)^n)，用于 Ramsey、Hahn 与 WAHUHA 相干度曲线"""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 4:
        raise InsufficientDataError("coherence fit needs at least 4 points")
    span = float(np.max(times)) or 1.0

    def model(t, amplitude, t2, stretch):
        return amplitude * np.exp(-(t / t2) ** stretch)

    starts = [[values[0] or 1.0, span * f, s] for s in (1.0, 2.0) for f in (0.5, 0.1, 2.0)]
    bounds = ([-np.inf, 1e-12 * span, STRETCH_BOUNDS[0]], [np.inf, np.inf, STRETCH_BOUNDS[1]])
    result = multistart_curve_fit(model, times, values, starts, bounds=bounds, method="trf")
    amplitude, t2, stretch = result.params
    return CoherenceFit(float(amplitude), float(t2), float(stretch), result.r_squared)
