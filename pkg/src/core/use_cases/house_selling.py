"""
House selling: offers 1..m arrive at rates alpha_j; holding the current best
offer costs c per unit time.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from src.core.entities.exp_solution import ExpSolution
from src.core.entities.grid import MarkovStoppingRule, ValueField
from src.core.entities.house import HouseModel
from src.core.entities.reports import MonotonicityReport
from src.core.entities.utility import UtilitySpec
from src.core.errors import ErrorCode, PropertyViolation, ValidationFailure
from src.core.use_cases.model_core import validate_model
from src.core.use_cases.simulator import UniformizedSampler
from src.core.use_cases.utility import eval_utility

logger = logging.getLogger(__name__)

MAX_SAMPLES = 20


def build_house_model(alpha: Sequence[float], c: float, offers: Optional[Sequence[float]] = None) -> HouseModel:
    """
    q_ij = alpha_j for j != i. Offers default to g(i) = i for i = 1..m; pass
    `offers` to relabel them.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or len(alpha) < 2:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "need at least 2 offer levels")
    if np.any(~(alpha > 0)):
        k = int(np.argmax(~(alpha > 0)))
        raise ValidationFailure(ErrorCode.NONPOSITIVE_INTENSITY, f"alpha[{k}] = {alpha[k]} is not positive",
                                {"index": k, "value": float(alpha[k])})
    m = len(alpha)
    Q = np.tile(alpha, (m, 1))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    g = np.arange(1, m + 1, dtype=float) if offers is None else np.asarray(offers, dtype=float)
    model = validate_model(Q, g, c, [f"{v:g}" for v in g])
    return HouseModel(alpha=alpha, c=float(c), model=model)


def house_sampler(house: HouseModel) -> UniformizedSampler:
    """I.i.d. offers at total rate alpha; an offer equal to the current one is a non-event."""
    return UniformizedSampler(house.model, rate=house.total_rate)


def check_offer_monotonicity(house: HouseModel, utility: UtilitySpec, value: ValueField,
                             rule: MarkovStoppingRule, raise_on_violation: bool = True) -> MonotonicityReport:
    """
    Larger offers stop no later: h(t, better) <= h(t, worse) + dt at nodes where
    both values are finite. Also the best offer stops at once and
    U(min g - c t) <= V(t, i) <= U(max g - c t).
    """
    grid = value.grid
    t = grid.nodes
    dt = grid.dt
    g = house.model.g
    order = np.argsort(g, kind="stable")
    h = rule.h
    V = value.values
    finite = np.isfinite(V)
    violations = []

    for lo, hi in zip(order[:-1], order[1:]):
        both = finite[lo] & finite[hi]
        with np.errstate(invalid="ignore"):
            bad = both & (h[hi] > h[lo] + dt)
        for k in np.nonzero(bad)[0]:
            violations.append({"kind": "order", "t": float(t[k]), "better": int(hi), "worse": int(lo),
                               "h_better": float(h[hi, k]), "h_worse": float(h[lo, k])})

    top = order[-1]
    top_ok = bool(np.all(h[top][finite[top]] == 0))
    if not top_ok:
        for k in np.nonzero(finite[top] & (h[top] != 0))[0]:
            violations.append({"kind": "top", "t": float(t[k]), "h": float(h[top, k])})

    lower = np.asarray(eval_utility(utility, g.min() - house.c * t))
    upper = np.asarray(eval_utility(utility, g.max() - house.c * t))
    scale = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(upper), upper, 0.0)))
    with np.errstate(invalid="ignore"):
        sandwich_bad = (V < lower[None, :] - scale) | (V > upper[None, :] + scale)
    sandwich_bad &= finite
    for i, k in np.argwhere(sandwich_bad):
        violations.append({"kind": "sandwich", "t": float(t[k]), "state": int(i), "value": float(V[i, k])})

    n_order = sum(1 for v in violations if v["kind"] == "order")
    report = MonotonicityReport(monotone=n_order == 0, top_offer_stops=top_ok,
                                value_sandwich=not bool(sandwich_bad.any()),
                                violation_count=len(violations), violations=violations[:MAX_SAMPLES])
    logger.info(f"offer monotonicity: {report.violation_count} violation(s)")
    if raise_on_violation and violations:
        raise PropertyViolation(ErrorCode.MONOTONICITY_VIOLATION,
                                f"{len(violations)} violation(s) of the offer-ordering properties",
                                report.model_dump())
    return report


def exp_stop_set_upward_closed(house: HouseModel, solution: ExpSolution) -> bool:
    """With exponential utility the stop set is {i : g_i >= threshold}."""
    order = np.argsort(house.model.g, kind="stable")
    in_set = np.isin(order, solution.stop_set)
    return bool(np.all(np.diff(in_set.astype(int)) >= 0))
