from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from src.core.entities.utility import UtilitySpec
from src.core.errors import ErrorCode, ValidationFailure

# Extended-real sentinel for "outside the utility's domain". Never a large finite number.
NEG_INF = float("-inf")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CtmcModel:
    """
    Finite conservative CTMC with stopping reward g and running cost rate c.

    Build through `validate_model`; the constructor itself does not check the
    generator invariants.
    """
    states: Tuple[str, ...]
    Q: np.ndarray
    g: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "Q", _frozen(self.Q))
        object.__setattr__(self, "g", _frozen(self.g))
        object.__setattr__(self, "c", float(self.c))

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def q(self) -> np.ndarray:
        """Exit rates q_i = -q_ii."""
        return -np.diag(self.Q)

    @property
    def rates(self) -> np.ndarray:
        """Off-diagonal part of Q (zero diagonal)."""
        r = np.array(self.Q)
        np.fill_diagonal(r, 0.0)
        return r

    def index(self, state) -> int:
        if isinstance(state, (int, np.integer)):
            if not 0 <= state < self.m:
                raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"state index {state} out of range 0..{self.m - 1}",
                                        {"state": int(state), "m": self.m})
            return int(state)
        name = str(state)
        if name not in self.states:
            raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"unknown state {name!r}",
                                    {"state": name, "states": list(self.states)})
        return self.states.index(name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CtmcModel):
            return NotImplemented
        return (self.states == other.states and self.c == other.c
                and np.array_equal(self.Q, other.Q) and np.array_equal(self.g, other.g))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"states": list(self.states), "Q": self.Q.tolist(), "g": self.g.tolist(), "c": self.c}


@dataclass(frozen=True, eq=False)
class StoppingProblem:
    """sup over Markovian tau of E_i[U(g(X_tau) - c(t0 + tau))]. Build through `build_problem`."""
    model: CtmcModel
    utility: UtilitySpec
    t0: float = 0.0
    caps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.caps is None:
            if self.utility.restricted:
                caps = (self.model.g - self.utility.d) / self.model.c
            else:
                caps = np.full(self.model.m, np.inf)
            object.__setattr__(self, "caps", _frozen(caps))

    @property
    def restricted(self) -> bool:
        return self.utility.restricted
