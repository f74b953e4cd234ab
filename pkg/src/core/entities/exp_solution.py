from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.core.entities.model import _frozen

F_STOP = 0.0
F_CONTINUE = float("inf")


@dataclass(frozen=True, eq=False)
class ExpSolution:
    """
    Exponential-utility solution: W(i) with V(t, i) = exp(c*gamma*t) * W(i).

    `horizon` is the jump horizon n, or None for the infinite-horizon fixed point.
    """
    gamma: float
    W: np.ndarray
    stop_set: Tuple[int, ...]
    horizon: Optional[int] = None
    iterations: int = 0
    residual: float = 0.0
    polished: bool = False
    candidates: List[Tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "W", _frozen(self.W))
        object.__setattr__(self, "stop_set", tuple(sorted(int(i) for i in self.stop_set)))

    @property
    def m(self) -> int:
        return len(self.W)

    @property
    def f_star(self) -> np.ndarray:
        """0 on the stop set, inf elsewhere."""
        f = np.full(self.m, F_CONTINUE)
        f[list(self.stop_set)] = F_STOP
        return f

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "W": self.W.tolist(),
            "stop_set": list(self.stop_set),
            "horizon": self.horizon if self.horizon is not None else "infinite",
            "iterations": self.iterations,
            "residual": self.residual,
            "polished": self.polished,
            "candidates": [list(c) for c in self.candidates],
        }
