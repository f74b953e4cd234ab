from dataclasses import dataclass
from typing import List

import numpy as np

from src.core.entities.model import NEG_INF, _frozen
from src.core.entities.reports import SolverDiagnostics
from src.core.errors import ErrorCode, ValidationFailure

GRID_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes t_k = k*dt, k = 0..K, with K*dt = t_max."""
    t_max: float
    dt: float

    def __post_init__(self):
        if not (self.t_max > 0 and self.dt > 0):
            raise ValidationFailure(ErrorCode.INVALID_GRID, "t_max and dt must be positive",
                                    {"t_max": self.t_max, "dt": self.dt})
        K = round(self.t_max / self.dt)
        if K < 1 or abs(K * self.dt - self.t_max) > GRID_TOL * max(1.0, self.t_max):
            raise ValidationFailure(ErrorCode.INVALID_GRID, "dt must divide t_max",
                                    {"t_max": self.t_max, "dt": self.dt})

    @classmethod
    def covering(cls, t_max: float, dt: float) -> "TimeGrid":
        """Smallest grid with step dt reaching at least t_max."""
        K = max(1, int(np.ceil(t_max / dt - 1e-9)))
        return cls(t_max=K * dt, dt=dt)

    @property
    def K(self) -> int:
        return round(self.t_max / self.dt)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.K + 1)

    def node_index(self, t) -> np.ndarray:
        """Index of the last node <= t, clipped to the grid."""
        k = np.floor(np.asarray(t, dtype=float) / self.dt + 1e-9).astype(int)
        return np.clip(k, 0, self.K)

    def covers(self, t) -> np.ndarray:
        return np.asarray(t) <= self.t_max + 1e-9 * self.dt


@dataclass(frozen=True, eq=False)
class ValueField:
    """V(t_k, i) on the grid, shape (m, K+1); NEG_INF marks nodes outside the domain."""
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape[1] != self.grid.K + 1:
            raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH, "value field does not match its grid")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def at(self, states, t) -> np.ndarray:
        """Linear interpolation in t; NEG_INF if either neighbour is NEG_INF. Clips to t_max."""
        states = np.asarray(states, dtype=int)
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.grid.t_max)
        pos = t / self.grid.dt
        a = np.clip(np.floor(pos + 1e-9).astype(int), 0, self.grid.K)
        b = np.minimum(a + 1, self.grid.K)
        frac = np.clip(pos - a, 0.0, 1.0)
        va = self.values[states, a]
        vb = self.values[states, b]
        on_node = frac < 1e-9
        dead = np.isneginf(va) | (np.isneginf(vb) & ~on_node)
        with np.errstate(invalid="ignore"):
            out = np.where(on_node, va, (1.0 - frac) * va + frac * vb)
        return np.where(dead, NEG_INF, out)

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True, eq=False)
class MarkovStoppingRule:
    """
    Waiting function h(t_k, i) in [0, inf]: at elapsed time t in state i wait
    h more time units unless a jump comes first. inf means never stop there.

    Off-grid lookups use the consistency property h(t, i) = max(u*(i) - t, 0)
    from the last node at or before t, never interpolation of h itself.
    """
    grid: TimeGrid
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", _frozen(self.h))
        if self.h.shape[1] != self.grid.K + 1:
            raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH, "rule does not match its grid")
        if np.any(np.isnan(self.h)) or np.any(self.h < 0):
            raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH, "waiting times must lie in [0, inf]")

    @property
    def m(self) -> int:
        return self.h.shape[0]

    def wait(self, states, t) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        t = np.asarray(t, dtype=float)
        k = self.grid.node_index(t)
        hk = self.h[states, k]
        u_star = k * self.grid.dt + hk
        with np.errstate(invalid="ignore"):
            rest = np.maximum(u_star - t, 0.0)
        return np.where(np.isinf(hk), np.inf, rest)

    def stop_time(self, state: int, t_index: int) -> float:
        """Absolute stop time u*(i) = t_k + h(t_k, i)."""
        return t_index * self.grid.dt + float(self.h[state, t_index])

    @classmethod
    def constant(cls, grid: TimeGrid, m: int, value: float = 0.0) -> "MarkovStoppingRule":
        return cls(grid=grid, h=np.full((m, grid.K + 1), value))


@dataclass(frozen=True, eq=False)
class FiniteSolution:
    """V_0..V_n and h*_0..h*_{n-1}; rules[k] maximizes T V_k."""
    values: List[ValueField]
    rules: List[MarkovStoppingRule]
    diagnostics: SolverDiagnostics

    @property
    def horizon(self) -> int:
        return len(self.rules)

    def decision_rules(self) -> List[MarkovStoppingRule]:
        """The horizon-n optimal policy in the order decisions are taken: (h*_{n-1}, ..., h*_0)."""
        return list(reversed(self.rules))


@dataclass(frozen=True, eq=False)
class InfiniteSolution:
    value: ValueField
    rule: MarkovStoppingRule
    iterations: int
    residual: float
    diagnostics: SolverDiagnostics
