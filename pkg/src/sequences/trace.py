"""带坐标轴信息的观测序列。"""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TimeTrace:
    # 时间 (s) 或 Floquet 周期数
    axis: np.ndarray
    values: np.ndarray
    axis_unit: str = "s"
    observable: str = "collective_z"
    # 其他等价坐标轴，例如 WAHUHA 的缩放时间
    extra_axes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)

    def columns(self) -> dict[str, np.ndarray]:
        """CSV 列：主轴、附加轴与观测值"""
        columns = {self.axis_name: np.asarray(self.axis)}
        columns.update({name: np.asarray(values) for name, values in self.extra_axes.items()})
        columns[self.observable] = np.asarray(self.values)
        return columns

    @property
    def axis_name(self) -> str:
        return "time_s" if self.axis_unit == "s" else self.axis_unit
