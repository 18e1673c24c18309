"""在截断引擎或稠密参照上执行脉冲序列。"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from src.engine import pulses as engine_pulses
from src.engine.basis import TruncatedBasis, TruncationRule, enumerate_basis
from src.engine.cache import load_or_build
from src.engine.action import ActionTable
from src.engine.propagate import TruncatedState, collective_z, evolve, evolve_batch, product_state
from src.errors import ConfigurationError
from src.hamiltonian.terms import HamiltonianTerms
from src.oracle import dense
from src.sequences.schedule import Drive, Free, LaserReset, Measure, Pulse, PulseSchedule

logger = logging.getLogger(__name__)


class Backend(Protocol):
    n_sites: int

    def initial(self, bloch_vectors, batch: Optional[int] = None): ...

    def free(self, state, label: str, duration: float, detunings=None, sites=None, alphas=None): ...

    def pulse(self, state, sites, axis, angle: float): ...

    def reset(self, state): ...

    def measure(self, state, observable: tuple): ...


class TruncatedBackend:
    """截断 Pauli 引擎；每个哈密顿量标签对应一张作用表"""

    name = "truncated"

    def __init__(self, basis: TruncatedBasis, tables: dict[str, ActionTable],
                 order: Optional[int] = None, bound: Optional[float] = None):
        self.basis = basis
        self.tables = tables
        self.n_sites = basis.n_sites
        self.order = order
        self.bound = bound

    @classmethod
    def build(cls, hamiltonians: dict[str, HamiltonianTerms], n_sites: int,
              rule: Optional[TruncationRule] = None, use_cache: bool = False,
              cache_dir=None, progress: bool = False, **kwargs) -> "TruncatedBackend":
        basis = enumerate_basis(n_sites - 1, rule)
        tables = {
            label: load_or_build(h, basis, directory=cache_dir, use_cache=use_cache, progress=progress)
            for label, h in hamiltonians.items()
        }
        return cls(basis, tables, **kwargs)

    def initial(self, bloch_vectors, batch: Optional[int] = None) -> TruncatedState:
        state = product_state(self.basis, bloch_vectors)
        if batch is not None:
            state = TruncatedState(self.basis, np.repeat(state.coefficients[:, None], batch, axis=1))
        return state

    def free(self, state, label, duration, detunings=None, sites=None, alphas=None):
        if detunings is not None:
            raise ConfigurationError("Markov dephasing is only available on the dense engine")
        table = self._table(label)
        if state.coefficients.ndim == 2:
            alphas = np.ones(state.coefficients.shape[1]) if alphas is None else alphas
            coefficients = evolve_batch(state.coefficients, table, duration, alphas, self.order, self.bound)
            return TruncatedState(self.basis, coefficients)
        return evolve(state, table, duration, order=self.order, bound=self.bound)

    def _table(self, label):
        try:
            return self.tables[label]
        except KeyError:
            raise ConfigurationError(f"schedule refers to unknown Hamiltonian {label!r}") from None

    def pulse(self, state, sites, axis, angle):
        return engine_pulses.apply_pulse(state, sites, axis, angle)

    def reset(self, state):
        return engine_pulses.laser_reset(state)

    def measure(self, state, observable):
        kind = observable[0]
        if kind == "pauli":
            return state[observable[1]]
        if kind == "collective_z":
            return collective_z(state, observable[1], observable[2] if len(observable) > 2 else None)
        if kind == "collective":
            # 任意轴的平均单体期望值 ("collective", sites, axis)
            values = np.array([state[((site, observable[2]),)] for site in observable[1]])
            return values.mean(axis=0) if values.ndim > 1 else float(values.mean())
        raise ConfigurationError(f"unknown observable kind {kind!r}")


class DenseBackend:
    """稠密参照；纯态模式可带批维度"""

    name = "dense"

    def __init__(self, hamiltonians: dict[str, HamiltonianTerms], n_sites: int, mode: str = "density"):
        dense.check_capacity(n_sites)
        self.hamiltonians = hamiltonians
        self.n_sites = n_sites
        self.mode = mode

    def initial(self, bloch_vectors, batch: Optional[int] = None):
        state = dense.product_state(bloch_vectors, mode=self.mode)
        if batch is not None:
            if self.mode != "pure":
                raise ConfigurationError("batched runs need pure-state mode")
            state = dense.DenseState(np.repeat(state.data[None, :], batch, axis=0), self.n_sites, "pure")
        return state

    def free(self, state, label, duration, detunings=None, sites=None, alphas=None):
        if alphas is not None:
            raise ConfigurationError("coefficient rescaling is a truncated-engine feature")
        try:
            terms = self.hamiltonians[label]
        except KeyError:
            raise ConfigurationError(f"schedule refers to unknown Hamiltonian {label!r}") from None
        propagator = dense.propagator_for(terms, self.n_sites)
        return propagator.apply(state, duration, detunings=detunings, sites=sites)

    def pulse(self, state, sites, axis, angle):
        return dense.apply_rotation(state, sites, engine_pulses.pulse_axis(axis), angle)

    def reset(self, state):
        return dense.laser_reset(state, 0)

    def measure(self, state, observable):
        kind = observable[0]
        if kind == "pauli":
            return dense.expectation(state, observable[1])
        if kind == "collective_z":
            return dense.collective_z(state, observable[1], observable[2] if len(observable) > 2 else None)
        if kind == "collective":
            values = np.array([dense.expectation(state, ((site, observable[2]),)) for site in observable[1]])
            return values.mean(axis=0) if values.ndim > 1 else float(values.mean())
        raise ConfigurationError(f"unknown observable kind {kind!r}")


@dataclass
class ExecutionResult:
    state: object
    # (时间, 标签, 值)
    records: list = field(default_factory=list)

    def values(self, label: str) -> np.ndarray:
        return np.array([v for _, name, v in self.records if name == label])

    def times(self, label: str) -> np.ndarray:
        return np.array([t for t, name, _ in self.records if name == label])


def execute(
        schedule: PulseSchedule,
        backend: Backend,
        state,
        detunings: Optional[np.ndarray] = None,
        detuning_sites=None,
        alphas=None,
) -> ExecutionResult:
    """按顺序执行事件。

    Args:
        schedule: 脉冲序列
        backend: TruncatedBackend 或 DenseBackend
        state: 初始态
        detunings: (batch, n_segments, n_sites) 每段自由演化的失谐，None 表示无去相位
        detuning_sites: 失谐作用的位点
        alphas: 截断引擎批量运行的时间缩放因子

    Returns:
        ExecutionResult，包含末态与全部测量记录
    """
    if detunings is not None and detunings.shape[1] != schedule.n_dephased_segments:
        raise ConfigurationError(
            f"expected detunings for {schedule.n_dephased_segments} segments, got {detunings.shape[1]}"
        )
    result = ExecutionResult(state)
    segment = 0
    for offset, event in schedule.events:
        if isinstance(event, Pulse):
            state = backend.pulse(state, event.sites, event.axis, event.angle)
        elif isinstance(event, Free):
            draw = None
            if detunings is not None and event.dephased:
                draw = detunings[:, segment, :]
            if event.dephased:
                segment += 1
            state = backend.free(state, event.hamiltonian, event.duration, draw, detuning_sites, alphas)
        elif isinstance(event, Drive):
            state = backend.free(state, event.hamiltonian, event.duration, alphas=alphas)
        elif isinstance(event, LaserReset):
            state = backend.reset(state)
        elif isinstance(event, Measure):
            result.records.append((offset, event.label, backend.measure(state, event.observable)))
    result.state = state
    return result
