"""最小二乘拟合的公共部分：多起点重试与拟合优度。"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from src.errors import FitError

logger = logging.getLogger(__name__)


def r_squared(y, model_values) -> float:
    y = np.asarray(y, dtype=float)
    residual = float(np.sum((y - model_values) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    if total == 0.0:
        return 1.0 if residual == 0.0 else 0.0
    return 1.0 - residual / total


@dataclass
class CurveFit:
    params: np.ndarray
    covariance: np.ndarray
    r_squared: float
    residual_norm: float
    # 实际使用的起点与成功的起点编号
    starts: list = field(default_factory=list)
    start_index: int = 0

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


class _StartFailed(Exception):
    pass


def multistart_curve_fit(
        model: Callable,
        x,
        y,
        starts: Sequence[Sequence[float]],
        bounds=(-np.inf, np.inf),
        method: Optional[str] = None,
        accept: Optional[Callable[[np.ndarray], bool]] = None,
        max_nfev: int = 20000,
) -> CurveFit:
    """按顺序尝试各个起点，返回第一个收敛且通过 accept 检查的结果。

    Raises:
        FitError: 全部起点都失败，携带最小残差
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    starts = [list(map(float, s)) for s in starts]
    if not starts:
        raise FitError("no starting points supplied", best_residual=float("inf"))
    best = {"residual": float("inf")}

    lower, upper = (np.broadcast_to(b, (len(starts[0]),)) for b in bounds)
    if method is None:
        method = "lm" if np.all(np.isinf(lower)) and np.all(np.isinf(upper)) else "trf"
    # leastsq 与 least_squares 的迭代上限参数名不同
    budget = {"maxfev": max_nfev} if method == "lm" else {"max_nfev": max_nfev}

    def attempt_fit(index: int) -> CurveFit:
        p0 = starts[index]
        try:
            params, covariance = curve_fit(model, x, y, p0=p0, bounds=bounds, method=method, **budget)
        except (RuntimeError, ValueError, OptimizeWarning) as e:
            logger.debug(f"起点 {index} 未收敛: {e}")
            raise _StartFailed(str(e)) from e
        values = model(x, *params)
        residual = float(np.linalg.norm(y - values))
        best["residual"] = min(best["residual"], residual)
        if not np.all(np.isfinite(params)) or (accept is not None and not accept(params)):
            raise _StartFailed(f"start {index} gave rejected parameters {params}")
        covariance = np.where(np.isfinite(covariance), covariance, np.inf)
        return CurveFit(params, covariance, r_squared(y, values), residual, starts, index)

    try:
        for attempt in Retrying(
                stop=stop_after_attempt(len(starts)),
                retry=retry_if_exception_type(_StartFailed),
        ):
            with attempt:
                return attempt_fit(attempt.retry_state.attempt_number - 1)
    except RetryError:
        pass
    raise FitError(
        f"fit did not converge from {len(starts)} starting points",
        best_residual=best["residual"],
    )
