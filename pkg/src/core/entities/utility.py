from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, model_validator


class UtilityFamily(str, Enum):
    EXPONENTIAL = "exponential"
    LOGARITHMIC = "logarithmic"
    POWER = "power"
    LINEAR = "linear"


class DomainKind(str, Enum):
    ALL_REALS = "all_reals"
    CLOSED_LEFT = "closed_left"  # [d, inf)
    OPEN_LEFT = "open_left"      # (d, inf)


_DOMAIN_BY_FAMILY = {
    UtilityFamily.EXPONENTIAL: DomainKind.ALL_REALS,
    UtilityFamily.LINEAR: DomainKind.ALL_REALS,
    UtilityFamily.LOGARITHMIC: DomainKind.OPEN_LEFT,
    UtilityFamily.POWER: DomainKind.CLOSED_LEFT,
}


class UtilitySpec(BaseModel):
    """
    A utility function from the closed family enumeration.

    exponential: U(x) = -exp(-gamma x)      dom = R
    logarithmic: U(x) = ln(x - d)           dom = (d, inf)
    power:       U(x) = (x - d)^p           dom = [d, inf), 0 < p < 1
    linear:      U(x) = x                   dom = R, risk neutral

    Arbitrary callables are not accepted: closed forms keep derivatives and
    inverses exact. A callable family would need finite-difference fallbacks
    in use_cases/utility.py.
    """
    model_config = ConfigDict(frozen=True)

    family: UtilityFamily
    gamma: Optional[float] = None
    p: Optional[float] = None
    d: float = 0.0

    @model_validator(mode="after")
    def _check_parameters(self) -> "UtilitySpec":
        if self.family == UtilityFamily.EXPONENTIAL:
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("exponential utility needs gamma > 0")
        if self.family == UtilityFamily.POWER:
            if self.p is None or not 0 < self.p < 1:
                raise ValueError("power utility needs exponent p in (0, 1)")
        return self

    @property
    def domain_kind(self) -> DomainKind:
        return _DOMAIN_BY_FAMILY[self.family]

    @property
    def restricted(self) -> bool:
        return self.domain_kind != DomainKind.ALL_REALS

    @property
    def risk_neutral(self) -> bool:
        return self.family == UtilityFamily.LINEAR

    def label(self) -> str:
        if self.family == UtilityFamily.EXPONENTIAL:
            return f"exponential(gamma={self.gamma:g})"
        if self.family == UtilityFamily.POWER:
            return f"power(p={self.p:g}, d={self.d:g})"
        if self.family == UtilityFamily.LOGARITHMIC:
            return f"logarithmic(d={self.d:g})"
        return "linear"

    @classmethod
    def exponential(cls, gamma: float) -> "UtilitySpec":
        return cls(family=UtilityFamily.EXPONENTIAL, gamma=gamma)

    @classmethod
    def logarithmic(cls, d: float = 0.0) -> "UtilitySpec":
        return cls(family=UtilityFamily.LOGARITHMIC, d=d)

    @classmethod
    def power(cls, p: float, d: float = 0.0) -> "UtilitySpec":
        return cls(family=UtilityFamily.POWER, p=p, d=d)

    @classmethod
    def linear(cls) -> "UtilitySpec":
        return cls(family=UtilityFamily.LINEAR)
