"""实验描述文件：YAML + include 合并 + pydantic 校验。

所有物理量必须带单位后缀（spacing_nm、tau_us、field_G、theta_pi …），
载入时统一换算为 nm、s、Hz（频率轴）、rad/s（角频率）、T、rad。
"""
import logging
import math
import os
from pathlib import Path
from typing import Any, ClassVar, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.config.config import _merge
from src.errors import ConfigurationError
from src.geometry.constants import LAYER_TILT

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

UNITS = {
    "length": {"nm": 1.0, "A": 0.1, "um": 1e3},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    # 频率轴（AXY 扫描）保持 Hz
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6},
    # 角频率：(2π)·Hz → rad/s
    "angular": {"Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6, "rad_s": 1.0},
    "field": {"T": 1.0, "mT": 1e-3, "G": 1e-4},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0, "pi": math.pi},
}


def _scale(value, factor: float):
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError("expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return value * factor
    if isinstance(value, list):
        return [_scale(v, factor) for v in value]
    if isinstance(value, dict):
        # 网格 {start, stop, num}：只换算端点
        return {k: (_scale(v, factor) if k in ("start", "stop") else v) for k, v in value.items()}
    raise ValueError(f"expected a number, list or grid, got {type(value).__name__}")


class UnitModel(BaseModel):
    """带单位后缀的配置块；quantities 声明字段的量纲"""

    model_config = ConfigDict(extra="forbid")
    quantities: ClassVar[dict[str, str]] = {}

    @model_validator(mode="before")
    @classmethod
    def convert_units(cls, data: Any):
        if not isinstance(data, dict) or not cls.quantities:
            return data
        names = sorted(cls.quantities, key=len, reverse=True)
        converted = {}
        for key, value in data.items():
            if key in cls.quantities:
                units = ", ".join(f"{key}_{u}" for u in UNITS[cls.quantities[key]])
                raise ValueError(f"'{key}' needs an explicit unit suffix ({units})")
            for name in names:
                suffix = key[len(name) + 1:] if key.startswith(name + "_") else None
                if suffix is not None and suffix in UNITS[cls.quantities[name]]:
                    if name in converted:
                        raise ValueError(f"'{name}' given more than once")
                    converted[name] = _scale(value, UNITS[cls.quantities[name]][suffix])
                    break
            else:
                converted[key] = value
        return converted


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    start: float
    stop: float
    num: int = Field(ge=1)


Grid = Union[float, list[float], GridSpec]


def expand_grid(grid: Optional[Grid]) -> np.ndarray:
    if grid is None:
        return np.array([])
    if isinstance(grid, GridSpec):
        return np.linspace(grid.start, grid.stop, grid.num)
    return np.atleast_1d(np.asarray(grid, dtype=float))


class StrongNucleus(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"a_zx": "angular", "a_zz": "angular"}
    a_zx: float
    a_zz: float


class GeometryConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {
        "spacing": "length",
        "distance": "length",
        "tilt": "angle",
        "field": "field",
        "lateral_offset": "length",
    }
    kind: Literal["grid", "chain", "file"] = "grid"
    nx: int = Field(default=1, ge=1)
    ny: int = Field(default=1, ge=1)
    n_layers: int = Field(default=1, ge=1, le=3)
    spacing: float = 0.154
    distance: float = 1.0
    tilt: float = LAYER_TILT
    field: float = 0.06
    lateral_offset: list[float] = Field(default_factory=lambda: [0.0, 0.0], min_length=2, max_length=2)
    layout_file: Optional[str] = None
    strong_nucleus: Optional[StrongNucleus] = None

    @model_validator(mode="after")
    def check_file(self):
        if self.kind == "file" and not self.layout_file:
            raise ValueError("kind 'file' needs layout_file")
        return self


class HamiltonianConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"cutoff": "length", "uniform_j": "angular", "detunings": "angular"}
    dipolar_mode: Literal["secular_flip_flop", "full"] = "secular_flip_flop"
    cutoff: Optional[float] = None
    neighbor_mode: Literal["all", "nearest"] = "all"
    uniform_j: Optional[float] = None
    include_nuclear_dipolar: bool = True
    detunings: list[float] = Field(default_factory=list)


class TruncationConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"proximity_radius": "length"}
    nuclear_pairs: bool = True
    nv_triplets: bool = True
    proximity_radius: Optional[float] = None
    use_cache: bool = False
    cache_dir: Optional[str] = None


class AxyConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"frequencies": "frequency", "tau_window": "time", "cutoff_scan": "length"}
    coefficients: list[float] = Field(default_factory=lambda: [0.1, 0.0, 0.0, 0.0], min_length=1, max_length=4)
    frequencies: Grid
    n_reps: int = Field(default=30, ge=1)
    n_peaks: Literal[1, 2] = 1
    batch: bool = True
    fit: bool = True
    tau_window: Optional[list[float]] = None
    # 偶极截断半径扫描
    cutoff_scan: Optional[list[float]] = None


class NovelConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"tau_sl": "time", "t_wait": "time", "omega": "angular"}
    tau_sl: float = 5.0e-6
    t_wait: float = 3.0e-6
    repetitions: int = Field(default=100, ge=1)
    omega: Optional[float] = None
    nuclear_polarization: float = Field(default=0.0, ge=-1.0, le=1.0)
    rabi_amplitude: Optional[float] = None
    rabi_offset: Optional[float] = None


class ReadoutScanConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"thetas": "angle"}
    thetas: Grid


class NuclearConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"times": "time", "tau": "time"}
    times: Optional[Grid] = None
    tau: Optional[float] = None
    n_cycles: int = Field(default=20, ge=1)
    readout_sign: Literal["+", "-"] = "+"


class DephasingConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"t2": "time"}
    t2: float
    sampling_law: Literal["normal", "uniform"] = "normal"
    n_samples: int = Field(default=2000, ge=1)
    common_mode: bool = False
    batch_size: Optional[int] = Field(default=None, ge=1)


class DtcConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"theta": "angle", "tau": "time", "thetas": "angle", "taus": "time", "rabi_frequency": "angular"}
    theta: float = 1.03 * math.pi
    tau: float = 125e-6
    thetas: Optional[Grid] = None
    taus: Optional[Grid] = None
    n_cycles: int = Field(default=40, ge=1)
    rabi_frequency: float = TWO_PI * 37.14e3
    finite_pulse: bool = True
    weighted: bool = False


class ValidateConfig(UnitModel):
    quantities: ClassVar[dict[str, str]] = {"frequencies": "frequency"}
    frequencies: Grid
    n_blocks: int = Field(default=8, ge=8)
    max_spins: int = Field(default=8, ge=2)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    directory: str = "results"
    name: Optional[str] = None
    trajectories: bool = True


PROTOCOLS = (
    "axy_spectrum", "novel", "readout_scan", "ramsey", "hahn", "wahuha",
    "dtc", "dtc_sweep", "distance_table", "validate",
)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    protocol: Literal[PROTOCOLS]
    engine: Literal["truncated", "dense"] = "dense"
    seed: int = 0
    workers: Optional[int] = Field(default=None, ge=1)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    hamiltonian: HamiltonianConfig = Field(default_factory=HamiltonianConfig)
    truncation: TruncationConfig = Field(default_factory=TruncationConfig)
    axy: Optional[AxyConfig] = None
    novel: NovelConfig = Field(default_factory=NovelConfig)
    readout_scan: Optional[ReadoutScanConfig] = None
    nuclear: NuclearConfig = Field(default_factory=NuclearConfig)
    dephasing: Optional[DephasingConfig] = None
    dtc: DtcConfig = Field(default_factory=DtcConfig)
    validate_: Optional[ValidateConfig] = Field(default=None, alias="validate")
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def check_protocol_blocks(self):
        required = {"axy_spectrum": "axy", "readout_scan": "readout_scan", "validate": "validate_"}
        block = required.get(self.protocol)
        if block and getattr(self, block) is None:
            raise ValueError(f"protocol '{self.protocol}' needs a '{block}' block")
        if self.protocol in ("ramsey", "hahn") and self.nuclear.times is None:
            raise ValueError(f"protocol '{self.protocol}' needs nuclear.times_<unit>")
        if self.protocol == "wahuha" and self.nuclear.tau is None:
            raise ValueError("protocol 'wahuha' needs nuclear.tau_<unit>")
        return self

    @property
    def run_name(self) -> str:
        return self.output.name or self.protocol


def _read_yaml(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: experiment file must be a mapping")
    return data


def resolve_includes(path: str | os.PathLike, _seen: Optional[set] = None) -> dict:
    """按深度优先合并 include 列表，后出现的键覆盖先出现的"""
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigurationError(f"include cycle through {path}")
    seen = seen | {path}
    data = _read_yaml(path)
    includes = data.pop("include", []) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for item in includes:
        merged = _merge(merged, resolve_includes(path.parent / item, seen))
    return _merge(merged, data)


def load_experiment(path: str | os.PathLike) -> tuple[ExperimentConfig, dict]:
    """返回 (校验后的配置, 合并后的原始字典)

    Raises:
        ConfigurationError: 文件缺失或 include 成环
        pydantic.ValidationError: 字段校验失败（含字段路径）
        yaml.YAMLError: YAML 语法错误
    """
    if not Path(path).exists():
        raise ConfigurationError(f"experiment file {path} not found")
    raw = resolve_includes(path)
    config = ExperimentConfig.model_validate(raw)
    logger.info(f"载入实验 {path}: protocol = {config.protocol}, engine = {config.engine}")
    return config, raw
