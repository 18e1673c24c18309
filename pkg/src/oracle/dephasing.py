"""Markov 去相位：每段自由演化随机抽取失谐 Δ，尺度 √2/T2，对样本路径取平均。"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DephasingModel:
    # 秒；math.inf 表示无去相位
    t2: float
    sampling_law: Literal["normal", "uniform"] = "normal"
    n_samples: int = 2000
    seed: int = 0
    # True 时所有位点共用同一个失谐
    common_mode: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be at least 1, got {self.n_samples}")
        if self.t2 <= 0:
            raise ConfigurationError(f"T2 must be positive, got {self.t2}")
        if self.sampling_law not in ("normal", "uniform"):
            raise ConfigurationError(f"unknown sampling law {self.sampling_law!r}")

    @property
    def scale(self) -> float:
        """Δ 的标准差 √2/T2 (rad/s)"""
        return 0.0 if math.isinf(self.t2) else math.sqrt(2.0) / self.t2

    def as_dict(self) -> dict:
        return {
            "t2_s": self.t2,
            "sampling_law": self.sampling_law,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "common_mode": self.common_mode,
        }


def path_generators(model: DephasingModel) -> list[np.random.Generator]:
    """每条样本路径一个独立随机流，由 (seed, 路径编号) 确定"""
    children = np.random.SeedSequence(model.seed).spawn(model.n_samples)
    return [np.random.default_rng(child) for child in children]


def draw_path(model: DephasingModel, rng: np.random.Generator, n_segments: int, n_sites: int) -> np.ndarray:
    """一条路径上所有自由段的失谐，形如 (n_segments, n_sites)"""
    columns = 1 if model.common_mode else n_sites
    if model.scale == 0.0:
        draws = np.zeros((n_segments, columns))
    elif model.sampling_law == "normal":
        draws = rng.normal(0.0, model.scale, size=(n_segments, columns))
    else:
        # 均匀分布取与正态相同的标准差：半宽 √3·σ
        half_width = math.sqrt(3.0) * model.scale
        draws = rng.uniform(-half_width, half_width, size=(n_segments, columns))
    return np.broadcast_to(draws, (n_segments, n_sites)).copy()


def draw_all(model: DephasingModel, n_segments: int, n_sites: int) -> np.ndarray:
    """(n_samples, n_segments, n_sites)，路径顺序固定"""
    return np.stack([draw_path(model, rng, n_segments, n_sites) for rng in path_generators(model)])


def dephasing_average(
        run_paths: Callable[[np.ndarray], np.ndarray],
        model: DephasingModel,
        n_segments: int,
        n_sites: int,
        batch_size: Optional[int] = None,
) -> np.ndarray:
    """对样本路径平均。

    Args:
        run_paths: 接收 (batch, n_segments, n_sites) 失谐、返回 (batch, n_records) 观测值的函数
        model: 去相位模型
        n_segments: 序列中的自由演化段数
        n_sites: 受失谐作用的位点数
        batch_size: 每批路径数，默认一次全部

    Returns:
        平均后的观测序列 (n_records,)。测量线性，先平均态再测量与先测量再平均相同。
    """
    detunings = draw_all(model, n_segments, n_sites)
    if model.scale == 0.0:
        return np.asarray(run_paths(detunings[:1]))[0]
    batch_size = batch_size or model.n_samples
    total = None
    for start in range(0, model.n_samples, batch_size):
        values = np.asarray(run_paths(detunings[start:start + batch_size]))
        partial = values.sum(axis=0)
        total = partial if total is None else total + partial
    logger.debug(f"去相位平均: {model.n_samples} 条路径, {n_segments} 段")
    return total / model.n_samples


def ramsey_envelope(model: DephasingModel, t) -> np.ndarray:
    """单自旋 Ramsey 相干的解析包络：正态为 exp(−σ²t²/2)，均匀为 sinc"""
    t = np.asarray(t, dtype=float)
    if model.sampling_law == "normal":
        return np.exp(-0.5 * (model.scale * t) ** 2)
    half_width = math.sqrt(3.0) * model.scale
    return np.sinc(half_width * t / math.pi)
