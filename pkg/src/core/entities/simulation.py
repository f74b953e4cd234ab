from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One path: jump times S_0=0 < S_1 < ... < S_K and embedded states Z_0..Z_K."""
    times: np.ndarray
    states: np.ndarray
    seed: int
    stream: int

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True, eq=False)
class PathBatch:
    """
    A block of paths sampled together, arrays of shape (n_paths, n_jumps + 1).

    `holding[:, k]` is S_{k+1} - S_k; the last column of `times` is S_K.
    """
    times: np.ndarray
    states: np.ndarray
    seed: int
    first_stream: int

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    @property
    def n_jumps(self) -> int:
        return self.times.shape[1] - 1

    @property
    def holding(self) -> np.ndarray:
        return np.diff(self.times, axis=1)

    def path(self, index: int) -> Trajectory:
        return Trajectory(times=self.times[index], states=self.states[index],
                          seed=self.seed, stream=self.first_stream + index)


@dataclass(frozen=True, eq=False)
class StopOutcome:
    """Result of applying a rule to a batch, one entry per path."""
    tau: np.ndarray
    state: np.ndarray
    stopped: np.ndarray

    @property
    def unstopped_fraction(self) -> float:
        return float(np.mean(~self.stopped)) if len(self.stopped) else 0.0


class McEstimate(BaseModel):
    estimand: str
    mean: float
    se: float
    n: int
    seed: int
    ce: Optional[float] = None
    ce_se: Optional[float] = None
    unstopped_fraction: float = 0.0
    verdict: Optional[str] = None  # PASS or FAIL against a reference value, when there is one


class TailVerdict(str, Enum):
    PASS = "PASS"
    INCONCLUSIVE = "INCONCLUSIVE"


class TailTerm(BaseModel):
    n: int
    mean: float
    se: float
    survival: float
    truncated_fraction: float = 0.0


class TailDiagnostic(BaseModel):
    estimand: str
    seed: int
    n_paths: int
    terms: List[TailTerm]
    verdict: TailVerdict
