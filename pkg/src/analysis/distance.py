"""谱线方差到 NV-层距离的转换函数 d(v) = a(v − v₀)^(−b) + d₀。"""
import logging
import math
from dataclasses import dataclass

from src.errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransferFunction:
    a: float = 2.222
    b: float = 0.221
    # ns²
    v0: float = 14.87
    # nm
    d0: float = 0.0950
    # 常数自身的标准差，参与误差传播
    sigma_a: float = 0.017
    sigma_b: float = 0.005
    sigma_v0: float = 0.25
    sigma_d0: float = 0.0127
    # 1.5 nm 截止对应的方差下限 (ns²)
    cutoff_variance: float = 22.82

    def evaluate(self, v: float) -> float:
        """直接求值，不做截止判断"""
        if v <= self.v0:
            raise DomainError(f"variance {v} ns^2 is not above v0 = {self.v0} ns^2")
        return self.a * (v - self.v0) ** (-self.b) + self.d0

    def cutoff_distance(self) -> float:
        return self.evaluate(self.cutoff_variance)


DEFAULT_TRANSFER = TransferFunction()


@dataclass(frozen=True)
class DistanceEstimate:
    variance: float
    variance_error: float
    # nm；超出估计范围时为 nan
    distance: float
    distance_error: float
    in_range: bool


def distance_from_variance(
        v: float,
        dv: float = 0.0,
        tf: TransferFunction = DEFAULT_TRANSFER,
        include_constant_errors: bool = True,
) -> DistanceEstimate:
    """方差 → 距离，一阶误差传播。

    v ≤ cutoff_variance 时返回 in_range=False 的结果（表中的 “−”）。

    Raises:
        DomainError: v ≤ v₀
    """
    if v <= tf.v0:
        raise DomainError(f"variance {v} ns^2 is not above v0 = {tf.v0} ns^2")
    if v <= tf.cutoff_variance:
        return DistanceEstimate(v, dv, math.nan, math.nan, False)
    x = v - tf.v0
    power = x ** (-tf.b)
    distance = tf.a * power + tf.d0
    # ∂d/∂v = −a·b·x^(−b−1)，∂d/∂v₀ 与之反号
    slope = tf.a * tf.b * power / x
    variance = (slope * dv) ** 2
    if include_constant_errors:
        variance += (power * tf.sigma_a) ** 2
        variance += (tf.a * math.log(x) * power * tf.sigma_b) ** 2
        variance += (slope * tf.sigma_v0) ** 2
        variance += tf.sigma_d0**2
    return DistanceEstimate(v, dv, distance, math.sqrt(variance), True)
