from dataclasses import dataclass

import numpy as np

from src.core.entities.model import CtmcModel, _frozen


@dataclass(frozen=True, eq=False)
class HouseModel:
    """
    Offer chain: offers 1..m arrive at rates alpha_j, the state is the current
    offer and g(i) = i. Equivalently offers are i.i.d. with P(Z = j) = alpha_j / alpha
    at total rate alpha, self-offers included.
    """
    alpha: np.ndarray
    c: float
    model: CtmcModel

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))

    @property
    def m(self) -> int:
        return len(self.alpha)

    @property
    def total_rate(self) -> float:
        return float(self.alpha.sum())

    @property
    def offer_distribution(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()
