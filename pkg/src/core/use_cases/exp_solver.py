"""
Exponential utility U(x) = -exp(-gamma x): the value separates as
V(t, i) = exp(c gamma t) W(i) and W solves

    W(i) = max{ -exp(-gamma g_i), sum_j q_ij / (q_i - c gamma) W(j) }

for states with q_i > c gamma; states with q_i <= c gamma stop at once.
"""
import itertools
import logging
from typing import List, Optional

import numpy as np

from src.core.entities.exp_solution import ExpSolution
from src.core.entities.grid import MarkovStoppingRule, TimeGrid, ValueField
from src.core.entities.model import CtmcModel
from src.core.errors import ConvergenceFailure, ErrorCode, ValidationFailure

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_ORACLE_CAP = 15


def _check_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"gamma must be positive, got {gamma}")


def check_drift(model: CtmcModel, gamma: float) -> np.ndarray:
    """True where q_i <= c gamma: waiting only loses, stop immediately."""
    _check_gamma(gamma)
    return model.q <= model.c * gamma


def stop_reward(model: CtmcModel, gamma: float) -> np.ndarray:
    return -np.exp(-gamma * model.g)


def continuation_matrix(model: CtmcModel, gamma: float, flagged: np.ndarray) -> np.ndarray:
    """Rows q_ij / (q_i - c gamma) for unflagged states, zero rows for flagged ones."""
    denom = model.q - model.c * gamma
    A = np.zeros((model.m, model.m))
    live = ~flagged
    A[live] = model.rates[live] / denom[live, None]
    return A


def _step(W: np.ndarray, W0: np.ndarray, A: np.ndarray, flagged: np.ndarray, tol: float):
    cont = A @ W
    stop = (W0 >= cont - tol) | flagged
    return np.where(stop, W0, cont), stop


def solve_exp_finite(model: CtmcModel, gamma: float, n: int) -> List[ExpSolution]:
    """W_0..W_n of the jump-horizon recursion; stop sets record the maximizing branch."""
    _check_gamma(gamma)
    if n < 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"jump horizon must be >= 0, got {n}")
    flagged = check_drift(model, gamma)
    W0 = stop_reward(model, gamma)
    A = continuation_matrix(model, gamma, flagged)
    out = [ExpSolution(gamma=gamma, W=W0, stop_set=tuple(range(model.m)), horizon=0)]
    W = W0
    for k in range(1, n + 1):
        W, stop = _step(W, W0, A, flagged, 0.0)
        out.append(ExpSolution(gamma=gamma, W=W, stop_set=tuple(np.nonzero(stop)[0]), horizon=k, iterations=k))
    return out


def _policy_solve(model: CtmcModel, gamma: float, stop_mask: np.ndarray, flagged: np.ndarray) -> Optional[np.ndarray]:
    """W = stop reward on the set, W = A W off it; None if the system is singular."""
    W0 = stop_reward(model, gamma)
    A = continuation_matrix(model, gamma, flagged)
    stop_mask = stop_mask | flagged
    M = np.eye(model.m)
    M[~stop_mask] -= A[~stop_mask]
    rhs = np.where(stop_mask, W0, 0.0)
    try:
        W = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(W)):
        return None
    return W


def _max_consistent(model: CtmcModel, gamma: float, W: np.ndarray, stop_mask: np.ndarray,
                    flagged: np.ndarray, tol: float) -> bool:
    W0 = stop_reward(model, gamma)
    A = continuation_matrix(model, gamma, flagged)
    cont = A @ W
    scale = tol * max(1.0, float(np.max(np.abs(W))))
    on = stop_mask & ~flagged
    off = ~stop_mask & ~flagged
    if np.any(W > scale):
        return False
    return bool(np.all(W0[on] >= cont[on] - scale) and np.all(cont[off] > W0[off] - scale)
                and np.all(np.abs(W[flagged] - W0[flagged]) <= scale))


def solve_exp_infinite(model: CtmcModel, gamma: float, tol: float = DEFAULT_TOL, max_iter: int = 100000,
                       polish: bool = True) -> ExpSolution:
    """
    Value iteration from W_0 until the sup-norm change drops below tol, then
    one policy-evaluation solve on the identified stop set, kept if it is
    max-consistent.
    """
    _check_gamma(gamma)
    if not tol > 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"tol must be positive, got {tol}")
    flagged = check_drift(model, gamma)
    W0 = stop_reward(model, gamma)
    A = continuation_matrix(model, gamma, flagged)
    W = W0
    residual = float("inf")
    for it in range(1, max_iter + 1):
        nxt, stop = _step(W, W0, A, flagged, 0.0)
        residual = float(np.max(np.abs(nxt - W)))
        W = nxt
        if residual < tol:
            break
    else:
        logger.warning(f"exponential recursion did not converge (residual {residual:.3e})")
        raise ConvergenceFailure(ErrorCode.NO_CONVERGENCE, f"no convergence after {max_iter} iterations",
                                 {"iterations": max_iter, "residual": residual, "tol": tol})

    _, stop = _step(W, W0, A, flagged, tol)
    polished = False
    if polish:
        exact = _policy_solve(model, gamma, stop, flagged)
        if exact is not None and _max_consistent(model, gamma, exact, stop, flagged, 1e-9) \
                and np.max(np.abs(exact - W)) <= max(1e3 * tol, 1e-9):
            W = np.where(stop | flagged, W0, exact)
            polished = True
    logger.info(f"exponential recursion converged after {it} iterations, stop set {np.nonzero(stop)[0].tolist()}")
    return ExpSolution(gamma=gamma, W=W, stop_set=tuple(np.nonzero(stop)[0]), horizon=None,
                       iterations=it, residual=residual, polished=polished)


def exp_stop_set_oracle(model: CtmcModel, gamma: float, cap: int = DEFAULT_ORACLE_CAP,
                        tol: float = 1e-10) -> ExpSolution:
    """
    Exact solution by enumerating candidate stop sets of the unflagged states.
    Every max-consistent candidate is kept in `candidates`; W is the pointwise
    smallest one, which is what value iteration from W_0 reaches.
    """
    _check_gamma(gamma)
    flagged = check_drift(model, gamma)
    free = np.nonzero(~flagged)[0]
    W0 = stop_reward(model, gamma)
    if len(free) == 0:
        return ExpSolution(gamma=gamma, W=W0, stop_set=tuple(range(model.m)), horizon=None)
    if len(free) > cap:
        raise ValidationFailure(ErrorCode.STATE_SPACE_TOO_LARGE,
                                f"{len(free)} free states exceed the oracle cap of {cap}",
                                {"free_states": int(len(free)), "cap": cap})

    found = []
    for r in range(len(free) + 1):
        for subset in itertools.combinations(free, r):
            mask = flagged.copy()
            mask[list(subset)] = True
            W = _policy_solve(model, gamma, mask, flagged)
            if W is None or not _max_consistent(model, gamma, W, mask, flagged, tol):
                continue
            found.append((W, mask))
    if not found:
        raise ConvergenceFailure(ErrorCode.NO_CONVERGENCE, "no max-consistent stop set found")

    # equal W up to rounding: prefer the larger stop set, as ties resolve to STOP
    order = sorted(range(len(found)), key=lambda k: (round(float(np.sum(found[k][0])), 9), -int(found[k][1].sum())))
    W_best, mask_best = found[order[0]]
    if len(found) > 1:
        logger.info(f"stop-set oracle found {len(found)} consistent candidates")
    return ExpSolution(
        gamma=gamma, W=np.where(mask_best, W0, W_best), stop_set=tuple(np.nonzero(mask_best)[0]), horizon=None,
        candidates=[tuple(np.nonzero(found[k][1])[0]) for k in order],
    )


def exp_value_field(solution: ExpSolution, grid: TimeGrid, c: float) -> ValueField:
    """V(t, i) = exp(c gamma t) W(i) on the grid."""
    growth = np.exp(c * solution.gamma * grid.nodes)
    return ValueField(grid=grid, values=np.outer(solution.W, growth))


def exp_solution_rule(solution: ExpSolution, grid: TimeGrid) -> MarkovStoppingRule:
    """h = 0 on the stop set, inf elsewhere, at every node."""
    return MarkovStoppingRule(grid=grid, h=np.repeat(solution.f_star[:, None], grid.K + 1, axis=1))
