"""声明式脉冲序列。"""
from dataclasses import dataclass
from typing import Optional, Union

from src.errors import ConfigurationError


@dataclass(frozen=True)
class Pulse:
    sites: tuple[int, ...]
    # "X"、"-Y"、面内相位 (rad) 或三维矢量
    axis: Union[str, float, tuple]
    angle: float


@dataclass(frozen=True)
class Free:
    duration: float
    hamiltonian: str = "main"
    # 是否参与 Markov 去相位抽样
    dephased: bool = True


@dataclass(frozen=True)
class Drive:
    """有限长度脉冲：在带驱动的哈密顿量下演化"""
    duration: float
    hamiltonian: str = "drive"


@dataclass(frozen=True)
class LaserReset:
    pass


@dataclass(frozen=True)
class Measure:
    label: str
    # ("pauli", product)、("collective_z", sites, weights) 或 ("collective", sites, axis)
    observable: tuple


Event = Union[Pulse, Free, Drive, LaserReset, Measure]


@dataclass(frozen=True)
class PulseSchedule:
    events: tuple[tuple[float, Event], ...]
    meta: tuple = ()

    @property
    def duration(self) -> float:
        if not self.events:
            return 0.0
        offset, event = self.events[-1]
        return offset + getattr(event, "duration", 0.0)

    @property
    def pulse_count(self) -> int:
        return sum(1 for _, e in self.events if isinstance(e, Pulse))

    @property
    def n_dephased_segments(self) -> int:
        return sum(1 for _, e in self.events if isinstance(e, Free) and e.dephased)

    def pulses(self) -> list[tuple[float, Pulse]]:
        return [(t, e) for t, e in self.events if isinstance(e, Pulse)]

    def measurement_labels(self) -> list[str]:
        return [e.label for _, e in self.events if isinstance(e, Measure)]

    def describe(self) -> list[dict]:
        rows = []
        for offset, event in self.events:
            row = {"t_s": offset, "kind": type(event).__name__.lower()}
            row.update({k: v for k, v in event.__dict__.items() if k != "observable"})
            rows.append(row)
        return rows


class ScheduleBuilder:
    """按时间顺序追加事件，偏移量自动累加"""

    def __init__(self):
        self._events: list[tuple[float, Event]] = []
        self._time = 0.0

    @property
    def time(self) -> float:
        return self._time

    def pulse(self, sites, axis, angle: float):
        self._events.append((self._time, Pulse(tuple(sites), axis, float(angle))))
        return self

    def free(self, duration: float, hamiltonian: str = "main", dephased: bool = True):
        if duration < 0:
            raise ConfigurationError(f"free evolution duration must be non-negative, got {duration}")
        if duration > 0:
            self._events.append((self._time, Free(float(duration), hamiltonian, dephased)))
            self._time += duration
        return self

    def drive(self, duration: float, hamiltonian: str = "drive"):
        if duration < 0:
            raise ConfigurationError(f"drive duration must be non-negative, got {duration}")
        if duration > 0:
            self._events.append((self._time, Drive(float(duration), hamiltonian)))
            self._time += duration
        return self

    def reset(self):
        self._events.append((self._time, LaserReset()))
        return self

    def measure(self, label: str, observable: tuple):
        self._events.append((self._time, Measure(label, observable)))
        return self

    def build(self, meta: Optional[dict] = None) -> PulseSchedule:
        return PulseSchedule(tuple(self._events), tuple(sorted((meta or {}).items())))
