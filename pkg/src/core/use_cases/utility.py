"""
Closed-form utility functionals: value, derivatives, inverse, Arrow-Pratt
coefficient and certainty equivalents.

All functions accept scalars or numpy arrays; scalars come back as floats.
Off-domain evaluation gives -inf rather than raising.
"""
import logging
from typing import Sequence

import numpy as np

from src.core.entities.model import NEG_INF
from src.core.entities.utility import DomainKind, UtilityFamily, UtilitySpec
from src.core.errors import ErrorCode, ValidationFailure

logger = logging.getLogger(__name__)


def _out(x, arr):
    return float(arr) if np.ndim(x) == 0 else arr


def in_domain(u: UtilitySpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    kind = u.domain_kind
    if kind == DomainKind.ALL_REALS:
        return np.isfinite(x) | (x == np.inf)
    if kind == DomainKind.CLOSED_LEFT:
        return x >= u.d
    return x > u.d


def in_interior(u: UtilitySpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if u.domain_kind == DomainKind.ALL_REALS:
        return np.isfinite(x)
    return np.isfinite(x) & (x > u.d)


def _require_interior(u: UtilitySpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    bad = ~in_interior(u, x)
    if np.any(bad):
        witness = float(np.atleast_1d(x)[np.atleast_1d(bad)][0])
        raise ValidationFailure(ErrorCode.OUT_OF_DOMAIN, f"{u.label()} is not differentiable at x={witness}",
                                {"x": witness, "d": u.d})
    return x


def eval_utility(u: UtilitySpec, x):
    x_arr = np.asarray(x, dtype=float)
    fam = u.family
    if fam == UtilityFamily.EXPONENTIAL:
        out = -np.exp(-u.gamma * x_arr)
    elif fam == UtilityFamily.LINEAR:
        out = x_arr.copy()
    else:
        ok = in_domain(u, x_arr)
        shifted = np.where(ok, x_arr - u.d, 1.0)
        with np.errstate(divide="ignore"):
            core = np.log(shifted) if fam == UtilityFamily.LOGARITHMIC else np.power(shifted, u.p)
        out = np.where(ok, core, NEG_INF)
    return _out(x, out)


def deriv_utility(u: UtilitySpec, x):
    x_arr = _require_interior(u, x)
    fam = u.family
    if fam == UtilityFamily.EXPONENTIAL:
        out = u.gamma * np.exp(-u.gamma * x_arr)
    elif fam == UtilityFamily.LINEAR:
        out = np.ones_like(x_arr)
    elif fam == UtilityFamily.LOGARITHMIC:
        out = 1.0 / (x_arr - u.d)
    else:
        out = u.p * np.power(x_arr - u.d, u.p - 1.0)
    return _out(x, out)


def second_deriv_utility(u: UtilitySpec, x):
    x_arr = _require_interior(u, x)
    fam = u.family
    if fam == UtilityFamily.EXPONENTIAL:
        out = -u.gamma ** 2 * np.exp(-u.gamma * x_arr)
    elif fam == UtilityFamily.LINEAR:
        out = np.zeros_like(x_arr)
    elif fam == UtilityFamily.LOGARITHMIC:
        out = -1.0 / (x_arr - u.d) ** 2
    else:
        out = u.p * (u.p - 1.0) * np.power(x_arr - u.d, u.p - 2.0)
    return _out(x, out)


def inverse_utility(u: UtilitySpec, y):
    """U^{-1} on the closure of U's range (endpoints map to the domain's endpoints)."""
    y_arr = np.asarray(y, dtype=float)
    fam = u.family
    if np.any(np.isnan(y_arr)):
        raise ValidationFailure(ErrorCode.INVERSE_OUT_OF_RANGE, "cannot invert NaN")
    if fam == UtilityFamily.EXPONENTIAL:
        if np.any(y_arr > 0):
            raise ValidationFailure(ErrorCode.INVERSE_OUT_OF_RANGE,
                                    f"{u.label()} has range (-inf, 0), got {float(np.max(y_arr))}")
        with np.errstate(divide="ignore"):
            out = -np.log(-y_arr) / u.gamma
    elif fam == UtilityFamily.LINEAR:
        out = y_arr.copy()
    elif fam == UtilityFamily.LOGARITHMIC:
        out = u.d + np.exp(y_arr)
    else:
        if np.any(y_arr < 0):
            raise ValidationFailure(ErrorCode.INVERSE_OUT_OF_RANGE,
                                    f"{u.label()} has range [0, inf), got {float(np.min(y_arr))}")
        out = u.d + np.power(y_arr, 1.0 / u.p)
    return _out(y, out)


def arrow_pratt(u: UtilitySpec, x):
    """Absolute risk aversion -U''(x) / U'(x)."""
    x_arr = _require_interior(u, x)
    fam = u.family
    if fam == UtilityFamily.EXPONENTIAL:
        out = np.full_like(x_arr, u.gamma)
    elif fam == UtilityFamily.LINEAR:
        out = np.zeros_like(x_arr)
    elif fam == UtilityFamily.LOGARITHMIC:
        out = 1.0 / (x_arr - u.d)
    else:
        out = (1.0 - u.p) / (x_arr - u.d)
    return _out(x, out)


def certainty_equiv_approx(u: UtilitySpec, mean: float, variance: float) -> float:
    """Second-order certainty equivalent: mean - l_U(mean) * variance / 2."""
    if not variance >= 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"variance must be >= 0, got {variance}")
    return float(mean - 0.5 * arrow_pratt(u, mean) * variance)


def exact_certainty_equivalent(u: UtilitySpec, values: Sequence[float], probs: Sequence[float]) -> float:
    """U^{-1}(E[U(X)]) for a finite distribution."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "probs must be a distribution over values")
    utils = eval_utility(u, values)
    expected = float(np.sum(np.where(probs > 0, probs * utils, 0.0)))
    return float(inverse_utility(u, expected))
