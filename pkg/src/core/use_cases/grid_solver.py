"""
Grid dynamic programming for general utilities.

For state i and a continuation field v the one-jump operator is

    (Tv)(t, i) = sup_{u >= t} [ U(g_i - c u) e^{-q_i (u - t)} + int_t^u e^{-q_i (s - t)} f_i(s) ds ]

with f_i(s) = sum_j q_ij v(s, j). Writing B(t) for the discounted integral of f
from t to the end of the usable grid, the bracket equals B(t) + e^{-q_i (u - t)} D(u)
with D = U(g_i - c u) - B(u), so every node's sup is one discounted suffix maximum
of D. B comes from a backward linear recursion (scipy.signal.lfilter), which keeps
the result free of the cancellation that e^{q t} (I(u) - I(t)) suffers at large q t.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import root_scalar
from scipy.signal import lfilter

from src.core.entities.grid import (FiniteSolution, InfiniteSolution, MarkovStoppingRule,
                                    TimeGrid, ValueField)
from src.core.entities.model import NEG_INF, StoppingProblem
from src.core.entities.reports import SolverDiagnostics, SolverWarning, WarningCode
from src.core.entities.utility import UtilityFamily
from src.core.errors import ConvergenceFailure, ErrorCode, ValidationFailure
from src.core.use_cases.utility import eval_utility

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-13
# Longest stretch (in units of 1/q) handled with a single exponential anchor.
MAX_ANCHOR_SPAN = 500.0
DEFAULT_NODES = 2000


@dataclass
class _StatePass:
    values: np.ndarray
    h: np.ndarray
    truncated: bool = False
    never_by_truncation: bool = False


def stop_payoff(problem: StoppingProblem, i: int, t: np.ndarray) -> np.ndarray:
    """U(g_i - c t); -inf past the state's domain cap."""
    return np.asarray(eval_utility(problem.utility, problem.model.g[i] - problem.model.c * t), dtype=float)


def initial_field(problem: StoppingProblem, grid: TimeGrid) -> ValueField:
    t = grid.nodes
    rows = [stop_payoff(problem, i, t) for i in range(problem.model.m)]
    return ValueField(grid=grid, values=np.vstack(rows))


def default_grid(problem: StoppingProblem, dt: Optional[float] = None, t_max: Optional[float] = None) -> TimeGrid:
    """
    Resolve missing grid parameters. Restricted utilities default to the largest
    domain cap; otherwise 2 max|g| / c, or 50 / min q when rewards are all zero.
    """
    model = problem.model
    if t_max is not None and dt is not None:
        return TimeGrid(t_max=float(t_max), dt=float(dt))
    if t_max is None:
        if problem.restricted:
            t_max = float(np.max(problem.caps))
        else:
            scale = float(np.max(np.abs(model.g)))
            t_max = 2.0 * scale / model.c if scale > 0 else 50.0 / float(model.q.min())
    if dt is None:
        dt = t_max / DEFAULT_NODES
    return TimeGrid.covering(t_max, dt)


def _flow(problem: StoppingProblem, i: int, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    r = problem.model.rates[i]
    targets = np.nonzero(r > 0)[0]
    f = np.zeros(v.shape[1])
    for j in targets:
        f = f + r[j] * v[j]
    return f, targets


def _live_end(f: np.ndarray) -> int:
    """Last node before the flow first hits -inf (waiting past it is worth -inf)."""
    dead = np.nonzero(np.isneginf(f))[0]
    return int(dead[0]) - 1 if len(dead) else len(f) - 1


def _discounted_remainder(f: np.ndarray, E: int, q: float, dt: float) -> np.ndarray:
    """B_k = int_{t_k}^{t_E} e^{-q (s - t_k)} f(s) ds by the trapezoid rule, k = 0..E."""
    if E < 0:
        return np.zeros(0)
    a = np.exp(-q * dt)
    trap = 0.5 * dt * (f[:E] + a * f[1:E + 1])
    x = np.append(trap, 0.0)
    return lfilter([1.0], [1.0, -a], x[::-1])[::-1]


def _tail_value(problem: StoppingProblem, i: int, v: np.ndarray, targets: np.ndarray, dt: float) -> Optional[float]:
    """
    Value at t_K of never stopping in i, when every target's field grows
    geometrically over the last grid step and the growth is slower than q_i.
    Only used for the exponential family, where the extrapolation is exact.
    """
    if problem.utility.family != UtilityFamily.EXPONENTIAL:
        return None
    q = problem.model.q[i]
    r = problem.model.rates[i]
    total = 0.0
    for j in targets:
        prev, last = v[j, -2], v[j, -1]
        if not (np.isfinite(prev) and np.isfinite(last) and prev * last > 0):
            return None
        kappa = np.log(last / prev) / dt
        if not q - kappa > 1e-9 * q:
            return None
        total += r[j] * last / (q - kappa)
    return float(total)


def _suffix_argmax(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Running max of w[k:] and the smallest index attaining it (ties within TIE_RTOL go left)."""
    n = len(w)
    run = np.maximum.accumulate(w[::-1])[::-1]
    nxt = np.append(run[1:], NEG_INF)
    with np.errstate(invalid="ignore"):
        record = w >= nxt - TIE_RTOL * np.abs(nxt)
    record[-1] = True
    pos = np.where(record, np.arange(n), n)
    first = np.minimum.accumulate(pos[::-1])[::-1]
    return run, first


def _discounted_suffix_max(D: np.ndarray, q: float, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    M_k = sup_{u >= k} e^{-q (t_u - t_k)} D_u and its earliest argmax, processed in
    pieces short enough that e^{-q (t_u - t_start)} never underflows.
    """
    n = len(D)
    M = np.empty(n)
    idx = np.empty(n, dtype=int)
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    span = max(1, int(MAX_ANCHOR_SPAN / max(q * dt, 1e-300)))
    carry_val, carry_idx = NEG_INF, -1
    for start in reversed(range(0, n, span)):
        stop = min(start + span, n)
        tt = t[start:stop] - t[start]
        w = np.exp(-q * tt) * D[start:stop]
        if stop < n:
            ext = np.append(w, np.exp(-q * (t[stop] - t[start])) * carry_val)
        else:
            ext = np.append(w, NEG_INF)
        run, first = _suffix_argmax(ext)
        local_idx = np.where(first[:-1] < stop - start, first[:-1] + start, carry_idx)
        if stop == n:
            local_idx = first[:-1] + start
        M[start:stop] = np.exp(q * tt) * run[:-1]
        idx[start:stop] = local_idx
        carry_val, carry_idx = M[start], idx[start]
    return M, idx


def _refine(idx: np.ndarray, D: np.ndarray, q: float, t: np.ndarray, E: int, h: np.ndarray) -> None:
    """Three-point parabolic sharpening of interior stop times, in place."""
    dt = t[1] - t[0]
    k_all = np.arange(len(idx))
    for r in np.unique(idx):
        if r <= 0 or r >= E:
            continue
        y_m, y_0, y_p = np.exp(q * dt) * D[r - 1], D[r], np.exp(-q * dt) * D[r + 1]
        if not (np.isfinite(y_m) and np.isfinite(y_0) and np.isfinite(y_p)):
            continue
        curv = y_m - 2.0 * y_0 + y_p
        if curv >= 0:
            continue
        delta = float(np.clip(0.5 * dt * (y_m - y_p) / curv, -dt, dt))
        sel = (idx == r) & (k_all < r)
        h[sel] = np.maximum(t[r] + delta - t[sel], 0.0)


def _state_pass(problem: StoppingProblem, i: int, v: np.ndarray, grid: TimeGrid, refine: bool) -> _StatePass:
    t = grid.nodes
    K = grid.K
    dt = grid.dt
    q = float(problem.model.q[i])

    P = stop_payoff(problem, i, t)
    if np.all(np.isneginf(P)):
        raise ValidationFailure(ErrorCode.EMPTY_DOMAIN, f"state {i} has no grid node inside its domain",
                                {"state": i, "cap": float(problem.caps[i])})
    f, targets = _flow(problem, i, v)
    E = _live_end(f)

    values = P.copy()
    h = np.zeros(K + 1)
    if E < 0:
        return _StatePass(values=values, h=h)

    B = _discounted_remainder(f, E, q, dt)
    D = P[:E + 1] - B
    never = False
    if E == K:
        tail = _tail_value(problem, i, v, targets, dt)
        if tail is not None and tail > P[K] + TIE_RTOL * abs(P[K]):
            D[K] = tail
            never = True

    M, idx = _discounted_suffix_max(D, q, t[:E + 1])
    live = np.arange(E + 1)
    stop_here = idx == live
    if never:
        stop_here[K] = False
    with np.errstate(invalid="ignore"):
        cont = B + M
    values[:E + 1] = np.where(stop_here, P[:E + 1], np.maximum(cont, P[:E + 1]))
    h[:E + 1] = t[idx] - t[:E + 1]
    if never:
        h[:E + 1][idx == K] = np.inf

    result = _StatePass(values=values, h=h)
    if E == K and not never and K >= 1:
        at_end = idx[:K] == K
        if np.any(at_end) and np.isfinite(P[K]):
            if not problem.restricted:
                rising = np.exp(-q * dt) * D[K] > D[K - 1]
                if rising:
                    h[:K][at_end] = np.inf
                    h[K] = np.inf
                    result.never_by_truncation = True
                result.truncated = True
            elif problem.caps[i] > grid.t_max * (1 + 1e-12):
                result.truncated = True

    if refine:
        _refine(idx, D, q, t[:E + 1], E, h[:E + 1])
    return result


def _sweep(problem: StoppingProblem, v: ValueField, refine: bool, threads: Optional[int]) -> List[_StatePass]:
    m = problem.model.m
    if threads and threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=min(threads, m)) as pool:
            return list(pool.map(lambda i: _state_pass(problem, i, v.values, v.grid, refine), range(m)))
    return [_state_pass(problem, i, v.values, v.grid, refine) for i in range(m)]


def _check_field(problem: StoppingProblem, v: ValueField) -> None:
    if v.m != problem.model.m:
        raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH,
                                f"value field has {v.m} states, model has {problem.model.m}")


def apply_T(v: ValueField, problem: StoppingProblem, *, refine: bool = False, threads: Optional[int] = None,
            warnings: Optional[List[SolverWarning]] = None) -> Tuple[ValueField, MarkovStoppingRule]:
    """One Bellman step: (Tv, argmax rule). Truncation warnings go into `warnings` when given."""
    _check_field(problem, v)
    passes = _sweep(problem, v, refine, threads)
    truncated = [i for i, p in enumerate(passes) if p.truncated]
    if truncated and warnings is not None:
        warnings.append(SolverWarning(
            code=WarningCode.TRUNCATION_WARNING,
            message="optimal stop time reaches the end of the grid; increase t_max",
            details={"states": truncated,
                     "never_stop_by_truncation": [i for i, p in enumerate(passes) if p.never_by_truncation]},
        ))
    Tv = ValueField(grid=v.grid, values=np.vstack([p.values for p in passes]))
    rule = MarkovStoppingRule(grid=v.grid, h=np.vstack([p.h for p in passes]))
    return Tv, rule


def _merge_warnings(collected: List[SolverWarning]) -> List[SolverWarning]:
    merged = {}
    for w in collected:
        if w.code not in merged:
            merged[w.code] = w
        else:
            old = merged[w.code]
            states = sorted(set(old.details.get("states", [])) | set(w.details.get("states", [])))
            merged[w.code] = SolverWarning(code=w.code, message=w.message, details={**w.details, "states": states})
    return list(merged.values())


def solve_finite(problem: StoppingProblem, n: int, grid: TimeGrid, *, refine: bool = False,
                 threads: Optional[int] = None) -> FiniteSolution:
    if n < 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"jump horizon must be >= 0, got {n}")
    warnings: List[SolverWarning] = []
    values = [initial_field(problem, grid)]
    rules: List[MarkovStoppingRule] = []
    for k in range(n):
        nxt, rule = apply_T(values[-1], problem, refine=refine, threads=threads, warnings=warnings)
        values.append(nxt)
        rules.append(rule)
        logger.debug(f"solve_finite stage {k + 1}/{n} done")
    return FiniteSolution(values=values, rules=rules,
                          diagnostics=SolverDiagnostics(iterations=n, warnings=_merge_warnings(warnings)))


def field_residual(a: ValueField, b: ValueField) -> float:
    """Sup-norm difference over nodes finite in both; inf if the -inf pattern differs."""
    fa, fb = np.isfinite(a.values), np.isfinite(b.values)
    if not np.array_equal(fa, fb):
        return float("inf")
    if not fa.any():
        return 0.0
    return float(np.max(np.abs(a.values[fa] - b.values[fb])))


def solve_infinite(problem: StoppingProblem, grid: TimeGrid, tol: float = 1e-9, max_iter: int = 1000, *,
                   refine: bool = False, threads: Optional[int] = None) -> InfiniteSolution:
    if not tol > 0:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"tol must be positive, got {tol}")
    v = initial_field(problem, grid)
    residual = float("inf")
    rule = MarkovStoppingRule.constant(grid, problem.model.m)
    warnings: List[SolverWarning] = []
    for it in range(1, max_iter + 1):
        step_warnings: List[SolverWarning] = []
        nxt, rule = apply_T(v, problem, refine=refine, threads=threads, warnings=step_warnings)
        residual = field_residual(nxt, v)
        v = nxt
        logger.debug(f"solve_infinite iteration {it}: residual {residual:.3e}")
        if residual < tol:
            warnings = step_warnings
            logger.info(f"solve_infinite converged after {it} iterations (residual {residual:.3e})")
            return InfiniteSolution(value=v, rule=rule, iterations=it, residual=residual,
                                    diagnostics=SolverDiagnostics(iterations=it, residual=residual,
                                                                  warnings=_merge_warnings(warnings)))
    logger.warning(f"solve_infinite did not converge in {max_iter} iterations (residual {residual:.3e})")
    raise ConvergenceFailure(ErrorCode.NO_CONVERGENCE, f"no convergence after {max_iter} iterations",
                             {"iterations": max_iter, "residual": residual, "tol": tol})


def _policy_state(problem: StoppingProblem, i: int, h: np.ndarray, v: np.ndarray, grid: TimeGrid) -> np.ndarray:
    t = grid.nodes
    K, dt = grid.K, grid.dt
    q = float(problem.model.q[i])
    P = stop_payoff(problem, i, t)
    f, targets = _flow(problem, i, v)
    E = _live_end(f)
    out = np.full(K + 1, NEG_INF)

    now = h == 0
    out[now] = P[now]
    if E < 0:
        return out
    B = _discounted_remainder(f, E, q, dt)
    live = np.arange(K + 1) <= E

    never = np.isinf(h) & live
    if np.any(never) and E == K:
        tail = _tail_value(problem, i, v, targets, dt)
        end_value = tail if tail is not None else P[K]
        ks = np.nonzero(never)[0]
        out[ks] = B[ks] + np.exp(-q * (t[K] - t[ks])) * end_value

    wait = ~now & np.isfinite(h) & live
    if not np.any(wait):
        return out
    ks = np.nonzero(wait)[0]
    u = np.minimum(t[ks] + h[ks], t[K])
    reachable = u <= t[E] + 1e-12 * max(1.0, t[E])
    ks, u = ks[reachable], np.minimum(u[reachable], t[E])
    if E == 0 or len(ks) == 0:
        return out
    j = np.clip(np.floor(u / dt).astype(int), 0, E - 1)
    s = np.clip(u - t[j], 0.0, dt)
    rem = dt - s
    f_u = f[j] + (f[j + 1] - f[j]) * s / dt
    b_u = 0.5 * rem * (f_u + np.exp(-q * rem) * f[j + 1]) + np.exp(-q * rem) * B[j + 1]
    p_u = stop_payoff(problem, i, u)
    with np.errstate(invalid="ignore"):
        val = B[ks] + np.exp(-q * (u - t[ks])) * (p_u - b_u)
    out[ks] = np.where(np.isneginf(p_u), NEG_INF, val)
    return out


RuleArg = Union[MarkovStoppingRule, Sequence[MarkovStoppingRule]]


def policy_value(problem: StoppingProblem, rule: RuleArg, n: int, grid: TimeGrid, *,
                 threads: Optional[int] = None) -> ValueField:
    """
    V_n(., ., tau) of a Markovian rule by the reward iteration. `rule` is one
    stationary rule or the n rules (h_0, ..., h_{n-1}) in the order decisions are taken.
    """
    if isinstance(rule, MarkovStoppingRule):
        rules = [rule] * n
    else:
        rules = list(rule)
        if len(rules) != n:
            raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH, f"expected {n} rules, got {len(rules)}")
    for r in rules:
        if r.grid != grid or r.m != problem.model.m:
            raise ValidationFailure(ErrorCode.RULE_GRID_MISMATCH, "rule grid or state count differs from the problem's",
                                    {"rule_grid": [r.grid.t_max, r.grid.dt], "grid": [grid.t_max, grid.dt]})
    v = initial_field(problem, grid)
    m = problem.model.m
    for stage in reversed(rules):
        h = stage.h
        if threads and threads > 1 and m > 1:
            with ThreadPoolExecutor(max_workers=min(threads, m)) as pool:
                rows = list(pool.map(lambda i: _policy_state(problem, i, h[i], v.values, grid), range(m)))
        else:
            rows = [_policy_state(problem, i, h[i], v.values, grid) for i in range(m)]
        v = ValueField(grid=grid, values=np.vstack(rows))
    return v


def threshold_root(g0: float, g1: float, alpha: float, c: float, t: float = 0.0, xtol: float = 1e-12) -> float:
    """
    Waiting time in the low state of a two-state logarithmic problem whose high
    state stops at once. The stop time u solves
        alpha (g0/c - u) ln(1 + (g1 - g0) / (g0 - c u)) = 1
    by bisection; returns max(u - t, 0).
    """
    cap = g0 / c

    def gap(u: float) -> float:
        return alpha * (cap - u) * np.log1p((g1 - g0) / (g0 - c * u)) - 1.0

    if t >= cap or gap(t) <= 0:
        return 0.0
    hi = cap * (1 - 1e-15) if cap > 0 else cap - 1e-15
    while gap(hi) > 0:
        hi = 0.5 * (hi + cap)
        if cap - hi < 1e-300:
            return cap - t
    sol = root_scalar(gap, bracket=[t, hi], method="bisect", xtol=xtol)
    return float(sol.root) - t
