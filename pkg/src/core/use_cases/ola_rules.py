"""
One-step look-ahead sets.

State i is in the immediate-stop set at time t when, for every later time s,
stopping at the next jump is no better in expectation than stopping now:

    sum_j (q_ij / q_i) U(g_j - c s) <= U(g_i - c s) + (c / q_i) U'(g_i - c s)    for all s >= t.

The never-stop set uses the strict reverse inequality. Only utilities on the
whole real line are covered.
"""
import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from src.core.entities.model import CtmcModel, StoppingProblem
from src.core.entities.reports import (Certificate, ClosureResult, ClosureViolation, ExpOlaSet,
                                       MembershipResult, OlaReport)
from src.core.entities.utility import UtilityFamily
from src.core.errors import ErrorCode, ValidationFailure
from src.core.use_cases.exp_solver import solve_exp_infinite
from src.core.use_cases.model_core import embedded_transition, validate_model
from src.core.use_cases.utility import deriv_utility, eval_utility

logger = logging.getLogger(__name__)

DT_OLA = 1e-3
HORIZON_FACTOR = 50.0
REL_TOL = 1e-12


def _require_real_line(problem: StoppingProblem) -> None:
    if problem.restricted:
        raise ValidationFailure(ErrorCode.UNSUPPORTED_DOMAIN,
                                f"look-ahead sets need a utility defined on all reals, got {problem.utility.label()}")


def _margin_asymptotic(problem: StoppingProblem, i: int) -> float:
    """
    Sign-carrying, time-free form of RHS - LHS. Exponential: sum_j q_ij e^{-gamma (g_j - g_i)} - (q_i - c gamma)
    (after dividing by a positive factor); linear: g_i + c/q_i - sum_j p_ij g_j.
    """
    model = problem.model
    u = problem.utility
    if u.family == UtilityFamily.EXPONENTIAL:
        gap = np.exp(-u.gamma * (model.g - model.g[i]))
        return float(model.rates[i] @ gap - (model.q[i] - model.c * u.gamma))
    p = embedded_transition(model, i)
    return float(model.g[i] + model.c / model.q[i] - p @ model.g)


def _margin_on_grid(problem: StoppingProblem, i: int, theta: np.ndarray):
    """RHS - LHS on a grid of times, with the magnitude used for the tie tolerance."""
    model = problem.model
    u = problem.utility
    p = embedded_transition(model, i)
    x_i = model.g[i] - model.c * theta
    lhs = sum(p[j] * eval_utility(u, model.g[j] - model.c * theta) for j in np.nonzero(p > 0)[0])
    rhs = eval_utility(u, x_i) + model.c / model.q[i] * deriv_utility(u, x_i)
    return rhs - lhs, np.abs(lhs) + np.abs(rhs)


def _membership(problem: StoppingProblem, i, t: float, strict: bool, method: str,
                dt_ola: float, theta_max: Optional[float]) -> MembershipResult:
    _require_real_line(problem)
    i = problem.model.index(i)
    margin = _margin_asymptotic(problem, i)
    slack = REL_TOL * max(1.0, float(problem.model.q[i]))
    asymptotic_ok = margin < -slack if strict else margin >= -slack
    if method == "analytic":
        return MembershipResult(state=i, member=bool(asymptotic_ok), method="analytic")

    if theta_max is None:
        theta_max = t + HORIZON_FACTOR / float(problem.model.q.min())
    theta = np.arange(t, theta_max + 0.5 * dt_ola, dt_ola)
    diff, scale = _margin_on_grid(problem, i, theta)
    if strict:
        bad = diff >= -REL_TOL * scale
    else:
        bad = diff < -REL_TOL * scale
    if np.any(bad):
        return MembershipResult(state=i, member=False, method="grid", rejected_at=float(theta[np.argmax(bad)]))
    if not asymptotic_ok:
        return MembershipResult(state=i, member=False, method="grid+tail", rejected_at=float("inf"))
    return MembershipResult(state=i, member=True, method="grid+tail")


def s0_membership(problem: StoppingProblem, i, t: float, method: str = "analytic",
                  dt_ola: float = DT_OLA, theta_max: Optional[float] = None) -> MembershipResult:
    """
    `method="analytic"` uses the time-free reduction available for the exponential
    and linear families; `method="grid"` checks a dense grid of times up to
    theta_max (default t + 50/min q) plus the asymptotic sign of the margin.
    """
    return _membership(problem, i, t, False, method, dt_ola, theta_max)


def s_inf_membership(problem: StoppingProblem, i, t: float, method: str = "analytic",
                     dt_ola: float = DT_OLA, theta_max: Optional[float] = None) -> MembershipResult:
    return _membership(problem, i, t, True, method, dt_ola, theta_max)


def check_closure(model: Union[CtmcModel, StoppingProblem], s0: Iterable[int]) -> ClosureResult:
    """Every positive-rate edge leaving a member must land in the set."""
    model = getattr(model, "model", model)
    members = set(int(i) for i in s0)
    violations: List[ClosureViolation] = []
    rates = model.rates
    for i in sorted(members):
        for j in np.nonzero(rates[i] > 0)[0]:
            if int(j) not in members:
                violations.append(ClosureViolation(i=i, j=int(j), rate=float(rates[i, j])))
    return ClosureResult(closed=not violations, violations=violations)


def certify_immediate_stop(problem: StoppingProblem, t: float, method: str = "analytic",
                           exclude: Sequence[int] = ()) -> OlaReport:
    """
    Label every state. States in `exclude` (a truncation boundary, say) keep
    UNDECIDED whatever the sets say.
    """
    _require_real_line(problem)
    model = problem.model
    s0_results = [s0_membership(problem, i, t, method) for i in range(model.m)]
    s0 = [r.state for r in s0_results if r.member]
    s_inf = [i for i in range(model.m)
             if i not in s0 and s_inf_membership(problem, i, t, method).member]
    closure = check_closure(model, s0)
    methods = sorted(set(r.method for r in s0_results))

    stop_certified = set()
    if closure.closed:
        stop_certified = set(s0)
    elif problem.utility.family == UtilityFamily.EXPONENTIAL:
        exact = solve_exp_infinite(model, problem.utility.gamma)
        stop_certified = set(s0) & set(exact.stop_set)
        methods.append("exp-specialization")
    stop_certified -= set(exclude)

    certified = set(stop_certified)
    never_certified = set()
    changed = True
    while changed:
        changed = False
        for i in s_inf:
            if i in never_certified or i in exclude:
                continue
            successors = set(np.nonzero(model.rates[i] > 0)[0].tolist())
            if successors <= certified:
                never_certified.add(i)
                certified.add(i)
                changed = True

    certificate: Dict[int, Certificate] = {}
    for i in range(model.m):
        if i in stop_certified:
            certificate[i] = Certificate.CERTIFIED_STOP
        elif i in never_certified:
            certificate[i] = Certificate.CERTIFIED_NEVER_STOP
        elif i in s_inf and i not in exclude:
            certificate[i] = Certificate.NEVER_STOP_LOCAL
        else:
            certificate[i] = Certificate.UNDECIDED
    logger.info(f"OLA at t={t}: s0={s0}, s_inf={s_inf}, closed={closure.closed}")
    return OlaReport(t=t, s0=s0, s_inf=s_inf, closed=closure.closed, certificate=certificate,
                     method="+".join(methods), violations=closure.violations)


def exp_ola_set(model: CtmcModel, gamma: float) -> ExpOlaSet:
    """Direct evaluation of the exponential look-ahead set and its closure."""
    if not gamma > 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"gamma must be positive, got {gamma}")
    members = []
    for i in range(model.m):
        drift = model.q[i] <= model.c * gamma
        gap = np.exp(-gamma * (model.g - model.g[i]))
        if drift or model.rates[i] @ gap >= (model.q[i] - model.c * gamma) * (1 - REL_TOL):
            members.append(i)
    closure = check_closure(model, members)
    return ExpOlaSet(members=members, closed=closure.closed, violations=closure.violations)


def _values(g: Union[Sequence[float], Callable[[int], float]], n: int) -> np.ndarray:
    if callable(g):
        return np.array([float(g(i)) for i in range(n)])
    g = np.asarray(g, dtype=float)
    if len(g) < n:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"need g on 0..{n - 1}, got {len(g)} values")
    return g[:n]


def poisson_threshold(lam: float, c: float, gamma: float, g, i_max: int) -> Optional[int]:
    """
    Smallest i <= i_max with g(i+1) - g(i) <= ln(lam / (lam - c gamma)) / gamma for a
    Poisson counting chain; 0 when lam <= c gamma; None if no such i.
    """
    if not lam > 0:
        raise ValidationFailure(ErrorCode.NONPOSITIVE_INTENSITY, f"lambda must be positive, got {lam}")
    if lam <= c * gamma:
        return 0
    values = _values(g, i_max + 2)
    inc = np.diff(values)
    if np.any(np.diff(inc) > 1e-12 * max(1.0, float(np.max(np.abs(inc))))):
        k = int(np.argmax(np.diff(inc) > 0))
        raise ValidationFailure(ErrorCode.G_NOT_CONCAVE, f"increments of g rise at i={k + 1}",
                                {"i": k + 1, "increments": inc[k:k + 2].tolist()})
    bound = np.log(lam / (lam - c * gamma)) / gamma
    ok = np.nonzero(inc[:i_max + 1] <= bound + 1e-12)[0]
    return int(ok[0]) if len(ok) else None


def poisson_chain(lam: float, g, i_max: int, c: float) -> CtmcModel:
    """
    Poisson counting chain on 0..i_max. The top state jumps back to i_max - 1
    at rate lam so no state is absorbing; treat it as a boundary, not a result.
    """
    if not lam > 0:
        raise ValidationFailure(ErrorCode.NONPOSITIVE_INTENSITY, f"lambda must be positive, got {lam}")
    if i_max < 1:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "i_max must be at least 1")
    n = i_max + 1
    Q = np.zeros((n, n))
    for i in range(i_max):
        Q[i, i + 1] = lam
    Q[i_max, i_max - 1] = lam
    np.fill_diagonal(Q, -lam)
    return validate_model(Q, _values(g, n), c, [str(i) for i in range(n)])
