"""
Model validation and construction of stopping problems.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from src.core.entities.model import CtmcModel, StoppingProblem
from src.core.entities.utility import UtilitySpec
from src.core.errors import ErrorCode, ValidationFailure

logger = logging.getLogger(__name__)

ROW_SUM_RTOL = 1e-12


def _defect(code: ErrorCode, row: Optional[int] = None, col: Optional[int] = None, magnitude: float = 0.0) -> dict:
    return {"code": code.value, "row": row, "col": col, "magnitude": float(magnitude)}


def validate_model(Q, g, c: float, states: Optional[Sequence[str]] = None) -> CtmcModel:
    """
    Check a generator, rewards and cost rate; every defect is collected before
    raising so one run reports all of them.
    """
    Q = np.asarray(Q, dtype=float)
    g = np.asarray(g, dtype=float)
    defects: List[dict] = []

    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"Q must be square, got shape {Q.shape}")
    m = Q.shape[0]
    if m < 2:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "need at least 2 states")
    if g.shape != (m,):
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"g must have {m} entries, got shape {g.shape}")
    if states is None:
        states = [str(i) for i in range(m)]
    states = [str(s) for s in states]
    if len(states) != m or len(set(states)) != m:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"states must be {m} distinct identifiers")
    if not np.all(np.isfinite(Q)):
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "Q has non-finite entries")
    if not np.all(np.isfinite(g)):
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "g has non-finite entries")

    off = ~np.eye(m, dtype=bool)
    for i, j in zip(*np.nonzero((Q < 0) & off)):
        defects.append(_defect(ErrorCode.NEGATIVE_OFFDIAGONAL, int(i), int(j), Q[i, j]))

    scale = float(np.max(np.abs(Q[off]))) if m > 1 else 0.0
    row_sums = Q.sum(axis=1)
    for i in np.nonzero(np.abs(row_sums) > ROW_SUM_RTOL * max(scale, np.finfo(float).tiny))[0]:
        defects.append(_defect(ErrorCode.ROW_SUM_NONZERO, int(i), None, row_sums[i]))

    q = -np.diag(Q)
    for i in np.nonzero(q <= 0)[0]:
        defects.append(_defect(ErrorCode.ABSORBING_STATE, int(i), None, q[i]))

    if not (np.isfinite(c) and c > 0):
        defects.append(_defect(ErrorCode.NONPOSITIVE_COST, magnitude=c if np.isfinite(c) else 0.0))

    if defects:
        first = ErrorCode(defects[0]["code"])
        logger.info(f"Model rejected with {len(defects)} defect(s), first {first.value}")
        raise ValidationFailure(first, f"model has {len(defects)} defect(s)", {"defects": defects})

    return CtmcModel(states=tuple(states), Q=Q, g=g, c=c)


def revalidate(model: CtmcModel) -> CtmcModel:
    return validate_model(model.Q, model.g, model.c, model.states)


def embedded_transition(model: CtmcModel, i) -> np.ndarray:
    """Jump distribution q_ij / q_i of the embedded chain from state i (zero self-mass)."""
    i = model.index(i)
    p = model.rates[i] / model.q[i]
    return p


def embedded_matrix(model: CtmcModel) -> np.ndarray:
    return model.rates / model.q[:, None]


def build_problem(model: CtmcModel, utility: UtilitySpec, t0: float = 0.0) -> StoppingProblem:
    if not t0 >= 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"initial time offset must be >= 0, got {t0}")
    if utility.restricted and not utility.d < float(model.g.min()):
        raise ValidationFailure(
            ErrorCode.VALIDATION_ERROR,
            f"domain boundary d={utility.d} must lie below min g={float(model.g.min())}",
            {"d": utility.d, "min_g": float(model.g.min())},
        )
    return StoppingProblem(model=model, utility=utility, t0=float(t0))
