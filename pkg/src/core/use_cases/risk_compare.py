"""
Comparative statics in risk aversion: a utility with a pointwise larger
Arrow-Pratt coefficient never stops later.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from src.core.entities.grid import InfiniteSolution, MarkovStoppingRule, TimeGrid
from src.core.entities.model import CtmcModel
from src.core.entities.reports import (ContainmentReport, ExpContainmentReport, NodeViolation,
                                       RiskAversionResult, StochasticOrderReport)
from src.core.entities.utility import UtilityFamily, UtilitySpec
from src.core.errors import ErrorCode, PropertyViolation, ValidationFailure
from src.core.use_cases.exp_solver import solve_exp_infinite
from src.core.use_cases.grid_solver import solve_infinite
from src.core.use_cases.model_core import build_problem
from src.core.use_cases.simulator import apply_rule, sample_paths
from src.core.use_cases.utility import arrow_pratt, in_interior

logger = logging.getLogger(__name__)

AP_TOL = 1e-12
DEFAULT_X_STEP = 1e-2
MAX_SAMPLES = 20


def _constant_coefficient(u: UtilitySpec) -> Optional[float]:
    if u.family == UtilityFamily.EXPONENTIAL:
        return u.gamma
    if u.family == UtilityFamily.LINEAR:
        return 0.0
    return None


def _hyperbolic_coefficient(u: UtilitySpec) -> Optional[float]:
    """a in l(x) = a / (x - d)."""
    if u.family == UtilityFamily.LOGARITHMIC:
        return 1.0
    if u.family == UtilityFamily.POWER:
        return 1.0 - u.p
    return None


def more_risk_averse(u: UtilitySpec, w: UtilitySpec, x_lo: float, x_hi: float,
                     step: float = DEFAULT_X_STEP) -> RiskAversionResult:
    """Is l_u(x) >= l_w(x) on [x_lo, x_hi]? Closed form where the pair allows it, else a grid check."""
    if not x_hi > x_lo:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"empty comparison interval [{x_lo}, {x_hi}]")
    ends = np.array([x_lo, x_hi])
    for spec in (u, w):
        if not np.all(in_interior(spec, ends)):
            raise ValidationFailure(ErrorCode.DOMAIN_MISMATCH,
                                    f"[{x_lo}, {x_hi}] leaves the domain of {spec.label()}",
                                    {"x_lo": x_lo, "x_hi": x_hi, "utility": spec.label()})

    cu, cw = _constant_coefficient(u), _constant_coefficient(w)
    if cu is not None and cw is not None:
        ok = cu >= cw - AP_TOL
        return RiskAversionResult(more_risk_averse=ok, method="closed-form", witness=None if ok else x_lo)
    hu, hw = _hyperbolic_coefficient(u), _hyperbolic_coefficient(w)
    if hu is not None and hw is not None and u.d == w.d:
        ok = hu >= hw - AP_TOL
        return RiskAversionResult(more_risk_averse=ok, method="closed-form", witness=None if ok else x_lo)

    x = np.append(np.arange(x_lo, x_hi, step), x_hi)
    gap = np.asarray(arrow_pratt(u, x)) - np.asarray(arrow_pratt(w, x))
    bad = gap < -AP_TOL
    if np.any(bad):
        return RiskAversionResult(more_risk_averse=False, method="grid", witness=float(x[np.argmax(bad)]))
    return RiskAversionResult(more_risk_averse=True, method="grid")


def wealth_range(model: CtmcModel, grid: TimeGrid, *utilities: UtilitySpec,
                 step: float = DEFAULT_X_STEP) -> Tuple[float, float]:
    """Arguments g - c t met on the grid, clipped to the restricted domains."""
    lo = float(model.g.min() - model.c * grid.t_max)
    hi = float(model.g.max())
    for spec in utilities:
        if spec.restricted:
            lo = max(lo, spec.d + step)
    return lo, hi


def _guard_band(h: np.ndarray) -> np.ndarray:
    """Nodes within one step of a switch between h = 0 and h > 0."""
    zero = h == 0
    switch = np.zeros_like(zero)
    flip = zero[:, 1:] != zero[:, :-1]
    switch[:, 1:] |= flip
    switch[:, :-1] |= flip
    return switch


def containment(sol_u: InfiniteSolution, sol_w: InfiniteSolution) -> ContainmentReport:
    """
    Where the less risk-averse rule stops (h_W = 0) the more risk-averse one must
    stop too, and h_U <= h_W + dt everywhere, off the guard band.
    """
    grid = sol_u.rule.grid
    h_u, h_w = sol_u.rule.h, sol_w.rule.h
    both = np.isfinite(sol_u.value.values) & np.isfinite(sol_w.value.values)
    guard = _guard_band(h_u) | _guard_band(h_w)
    checked = both & ~guard
    with np.errstate(invalid="ignore"):
        bad_stop = (h_w == 0) & (h_u > 0)
        bad_order = h_u > h_w + grid.dt
    bad = checked & (bad_stop | bad_order)
    nodes = np.argwhere(bad)
    t = grid.nodes
    samples = [NodeViolation(t=float(t[k]), state=int(i), h_u=float(h_u[i, k]), h_w=float(h_w[i, k]))
               for i, k in nodes[:MAX_SAMPLES]]
    return ContainmentReport(
        contained=len(nodes) == 0,
        stop_nodes_w=int(np.sum(both & (h_w == 0))),
        checked_nodes=int(checked.sum()),
        guarded_nodes=int(np.sum(both & guard)),
        violation_count=int(len(nodes)),
        violations=samples,
    )


def require_ordered(model: CtmcModel, grid: TimeGrid, u: UtilitySpec, w: UtilitySpec) -> RiskAversionResult:
    """NOT_COMPARABLE unless u is more risk averse than w on the wealth range of the grid."""
    lo, hi = wealth_range(model, grid, u, w)
    order = more_risk_averse(u, w, lo, hi)
    if not order.more_risk_averse:
        raise ValidationFailure(ErrorCode.NOT_COMPARABLE,
                                f"{u.label()} is not more risk averse than {w.label()} on [{lo:g}, {hi:g}]",
                                {"witness": order.witness})
    return order


def compare_stop_regions(model: CtmcModel, u: UtilitySpec, w: UtilitySpec, grid: TimeGrid,
                         tol: float = 1e-9, max_iter: int = 1000, threads: Optional[int] = None,
                         raise_on_violation: bool = True,
                         solutions: Optional[Tuple[InfiniteSolution, InfiniteSolution]] = None) -> ContainmentReport:
    """`solutions` skips the two solves when the caller already has them on `grid`."""
    require_ordered(model, grid, u, w)
    if solutions is None:
        sol_u = solve_infinite(build_problem(model, u), grid, tol, max_iter, threads=threads)
        sol_w = solve_infinite(build_problem(model, w), grid, tol, max_iter, threads=threads)
    else:
        sol_u, sol_w = solutions
    report = containment(sol_u, sol_w)
    logger.info(f"containment {u.label()} vs {w.label()}: {report.violation_count} violation(s) "
                f"over {report.checked_nodes} checked nodes")
    if raise_on_violation and not report.contained:
        raise PropertyViolation(ErrorCode.CONTAINMENT_VIOLATION,
                                f"{report.violation_count} node(s) where the more risk-averse rule stops later",
                                report.model_dump())
    return report


def compare_exp_stop_sets(model: CtmcModel, gamma_u: float, gamma_w: float,
                          raise_on_violation: bool = True) -> ExpContainmentReport:
    """Exact stop sets: gamma_u >= gamma_w must give stop_set(gamma_w) inside stop_set(gamma_u)."""
    if gamma_u < gamma_w:
        raise ValidationFailure(ErrorCode.NOT_COMPARABLE, f"gamma_u={gamma_u} < gamma_w={gamma_w}")
    su = solve_exp_infinite(model, gamma_u)
    sw = solve_exp_infinite(model, gamma_w)
    report = ExpContainmentReport(gamma_u=gamma_u, gamma_w=gamma_w, stop_set_u=list(su.stop_set),
                                  stop_set_w=list(sw.stop_set),
                                  contained=set(sw.stop_set) <= set(su.stop_set))
    if raise_on_violation and not report.contained:
        raise PropertyViolation(ErrorCode.CONTAINMENT_VIOLATION, "exponential stop sets are not nested",
                                report.model_dump())
    return report


def stochastic_order_check(model: CtmcModel, rule_u: MarkovStoppingRule, rule_w: MarkovStoppingRule,
                           i0, n_paths: int, seed: int, t_offset: float = 0.0, n_jumps: Optional[int] = None,
                           s_points: int = 50, raise_on_violation: bool = True) -> StochasticOrderReport:
    """
    Apply both rules to the same sampled paths. tau_U <= tau_W (+ dt) must hold
    on every path; survival functions are reported on a grid of s.
    """
    batch = sample_paths(model, i0, n_paths, seed, n_jumps=n_jumps)
    out_u = apply_rule(batch, rule_u, t_offset)
    out_w = apply_rule(batch, rule_w, t_offset)
    slack = max(rule_u.grid.dt, rule_w.grid.dt) + 1e-12
    bad = np.nonzero(out_u.tau > out_w.tau + slack)[0]
    top = float(np.quantile(out_w.tau, 0.99)) if n_paths > 1 else float(out_w.tau.max())
    s_grid = np.linspace(0.0, max(top, slack), s_points)
    surv_u = [float(np.mean(out_u.tau > s)) for s in s_grid]
    surv_w = [float(np.mean(out_w.tau > s)) for s in s_grid]
    report = StochasticOrderReport(n_paths=n_paths, seed=seed, s_grid=s_grid.tolist(), survival_u=surv_u,
                                   survival_w=surv_w, pathwise_violations=int(len(bad)),
                                   violating_streams=[int(batch.first_stream + k) for k in bad[:MAX_SAMPLES]])
    if raise_on_violation and len(bad):
        raise PropertyViolation(ErrorCode.PATHWISE_VIOLATION, f"{len(bad)} coupled path(s) with tau_U > tau_W",
                                {"seed": seed, "streams": report.violating_streams})
    return report
