"""
Monte Carlo engine: CTMC path sampling, rule application, expected utility,
certainty equivalents and the tail diagnostic.

Paths are drawn in fixed-size blocks; block b uses Philox seeded by
SeedSequence([seed, b]), so results depend on (seed, block_size) only and never
on the number of worker threads.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Union

import numpy as np

from src.core.entities.exp_solution import ExpSolution
from src.core.entities.grid import MarkovStoppingRule, ValueField
from src.core.entities.model import CtmcModel, StoppingProblem
from src.core.entities.reports import CalibrationReport
from src.core.entities.simulation import (McEstimate, PathBatch, StopOutcome, TailDiagnostic, TailTerm,
                                          TailVerdict)
from src.core.errors import ConvergenceFailure, ErrorCode, ValidationFailure
from src.core.interfaces.sampler import IPathSampler
from src.core.use_cases.model_core import embedded_matrix
from src.core.use_cases.utility import deriv_utility, eval_utility, in_interior, inverse_utility

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 4096
MAX_UNSTOPPED_FRACTION = 1e-3
JUMPS_PER_STATE = 50


def _cumulative_rows(P: np.ndarray) -> np.ndarray:
    """Row-wise CDFs, pinned to 1.0 from each row's last positive entry on."""
    cum = np.cumsum(P, axis=1)
    for i, row in enumerate(P):
        last = np.nonzero(row > 0)[0]
        if len(last):
            cum[i, last[-1]:] = 1.0
    return cum


def _draw(cum: np.ndarray, current: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.sum(cum[current] <= u[:, None], axis=1)


class EmbeddedChainSampler(IPathSampler):
    """Exponential holding time with rate q_i, then a jump drawn from the embedded chain."""

    def __init__(self, model: CtmcModel):
        self.model = model
        self._cum = _cumulative_rows(embedded_matrix(model))

    @property
    def name(self) -> str:
        return "embedded"

    def sample_block(self, i0: int, n_paths: int, n_jumps: int, seed: int, block: int) -> PathBatch:
        rng = self.block_rng(seed, block)
        q = self.model.q
        states = np.empty((n_paths, n_jumps + 1), dtype=int)
        times = np.zeros((n_paths, n_jumps + 1))
        states[:, 0] = i0
        for k in range(n_jumps):
            cur = states[:, k]
            times[:, k + 1] = times[:, k] + rng.standard_exponential(n_paths) / q[cur]
            states[:, k + 1] = _draw(self._cum, cur, rng.random(n_paths))
        return PathBatch(times=times, states=states, seed=seed, first_stream=block * n_paths)


class UniformizedSampler(IPathSampler):
    """
    Poisson clock at rate `rate` >= max q_i; each tick moves to j with
    probability q_ij / rate and otherwise stays. Self-ticks are folded into the
    holding time, so the recorded path has only real jumps.
    """

    def __init__(self, model: CtmcModel, rate: Optional[float] = None):
        self.model = model
        self.rate = float(rate) if rate is not None else float(model.q.max())
        if self.rate < float(model.q.max()) * (1 - 1e-12):
            raise ValidationFailure(ErrorCode.VALIDATION_ERROR,
                                    f"uniformization rate {self.rate} is below max exit rate {float(model.q.max())}")
        P = model.rates / self.rate
        np.fill_diagonal(P, np.clip(1.0 - model.q / self.rate, 0.0, 1.0))
        self._cum = _cumulative_rows(P)

    @property
    def name(self) -> str:
        return "uniformized"

    def sample_block(self, i0: int, n_paths: int, n_jumps: int, seed: int, block: int) -> PathBatch:
        rng = self.block_rng(seed, block)
        states = np.empty((n_paths, n_jumps + 1), dtype=int)
        times = np.zeros((n_paths, n_jumps + 1))
        states[:, 0] = i0
        for k in range(n_jumps):
            cur = states[:, k].copy()
            clock = times[:, k].copy()
            nxt = cur.copy()
            pending = np.ones(n_paths, dtype=bool)
            while pending.any():
                idx = np.nonzero(pending)[0]
                clock[idx] += rng.standard_exponential(len(idx)) / self.rate
                target = _draw(self._cum, cur[idx], rng.random(len(idx)))
                moved = target != cur[idx]
                nxt[idx[moved]] = target[moved]
                pending[idx[moved]] = False
            times[:, k + 1] = clock
            states[:, k + 1] = nxt
        return PathBatch(times=times, states=states, seed=seed, first_stream=block * n_paths)


def make_sampler(model: CtmcModel, kind: str = "embedded", rate: Optional[float] = None) -> IPathSampler:
    if kind == "embedded":
        return EmbeddedChainSampler(model)
    if kind == "uniformized":
        return UniformizedSampler(model, rate)
    raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"unknown sampler '{kind}'")


def default_jumps(model: CtmcModel) -> int:
    return JUMPS_PER_STATE * model.m


def _concat(batches: List[PathBatch], seed: int) -> PathBatch:
    width = max(b.times.shape[1] for b in batches)

    # shorter blocks are padded with their last jump repeated: no further jumps
    def pad(a: np.ndarray) -> np.ndarray:
        if a.shape[1] == width:
            return a
        return np.hstack([a, np.repeat(a[:, -1:], width - a.shape[1], axis=1)])

    return PathBatch(times=np.vstack([pad(b.times) for b in batches]),
                     states=np.vstack([pad(b.states) for b in batches]), seed=seed, first_stream=0)


def sample_paths(model: CtmcModel, i0, n_paths: int, seed: int, n_jumps: Optional[int] = None,
                 t_horizon: Optional[float] = None, sampler: Optional[IPathSampler] = None,
                 block_size: int = DEFAULT_BLOCK_SIZE, threads: Optional[int] = None) -> PathBatch:
    """
    Sample `n_paths` independent paths from state i0. The horizon is a number of
    jumps, or a time: then each block keeps adding jumps until every path has
    passed t_horizon.
    """
    if n_paths < 1:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, f"n_paths must be >= 1, got {n_paths}")
    i0 = model.index(i0)
    sampler = sampler or EmbeddedChainSampler(model)
    if n_jumps is None and t_horizon is None:
        n_jumps = default_jumps(model)

    def run_block(b: int) -> PathBatch:
        size = min(block_size, n_paths - b * block_size)
        if t_horizon is None:
            return sampler.sample_block(i0, size, n_jumps, seed, b)
        jumps = max(1, int(np.ceil(t_horizon * float(model.q.max()))))
        while True:
            batch = sampler.sample_block(i0, size, jumps, seed, b)
            if batch.times[:, -1].min() > t_horizon:
                return batch
            jumps *= 2

    n_blocks = -(-n_paths // block_size)
    if threads and threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(run_block, range(n_blocks)))
    else:
        batches = [run_block(b) for b in range(n_blocks)]
    if len(batches) == 1:
        return batches[0]
    return _concat(batches, seed)


def apply_rule(batch: PathBatch, rule: MarkovStoppingRule, t_offset: float = 0.0) -> StopOutcome:
    """
    Walk the jumps: in Z_k at S_k wait w = h(t_offset + S_k, Z_k); stop at S_k + w
    if the next jump comes later. In the last sampled state only w = 0 stops;
    paths still running there are marked unstopped and cut at S_K.
    """
    n, K = batch.n_paths, batch.n_jumps
    tau = np.empty(n)
    where = np.empty(n, dtype=int)
    done = np.zeros(n, dtype=bool)
    for k in range(K + 1):
        act = np.nonzero(~done)[0]
        if len(act) == 0:
            break
        s_k = batch.times[act, k]
        z_k = batch.states[act, k]
        w = rule.wait(z_k, t_offset + s_k)
        if k < K:
            stop = batch.times[act, k + 1] - s_k > w
        else:
            stop = w == 0
        hit = act[stop]
        tau[hit] = s_k[stop] + w[stop]
        where[hit] = z_k[stop]
        done[hit] = True
    left = np.nonzero(~done)[0]
    tau[left] = batch.times[left, K]
    where[left] = batch.states[left, K]
    return StopOutcome(tau=tau, state=where, stopped=done)


def _estimate(sample: np.ndarray, estimand: str, seed: int) -> McEstimate:
    n = len(sample)
    if n < 2:
        raise ValidationFailure(ErrorCode.VALIDATION_ERROR, "need at least 2 paths for a standard error")
    if np.any(np.isneginf(sample)):
        return McEstimate(estimand=estimand, mean=float("-inf"), se=float("inf"), n=n, seed=seed)
    mean = float(np.mean(sample))
    se = float(np.std(sample, ddof=1) / np.sqrt(n))
    return McEstimate(estimand=estimand, mean=mean, se=se, n=n, seed=seed)


def mc_expected_utility(problem: StoppingProblem, rule: MarkovStoppingRule, i0, n_paths: int, seed: int,
                        n_jumps: Optional[int] = None, sampler: Optional[IPathSampler] = None,
                        block_size: int = DEFAULT_BLOCK_SIZE, threads: Optional[int] = None,
                        max_unstopped: float = MAX_UNSTOPPED_FRACTION) -> McEstimate:
    """E_i0[U(g(X_tau) - c(t0 + tau))] with a delta-method error bar on the certainty equivalent."""
    model = problem.model
    i0 = model.index(i0)
    batch = sample_paths(model, i0, n_paths, seed, n_jumps=n_jumps, sampler=sampler,
                         block_size=block_size, threads=threads)
    outcome = apply_rule(batch, rule, problem.t0)
    frac = outcome.unstopped_fraction
    if frac > max_unstopped:
        logger.warning(f"{frac:.2%} of paths ran out of jumps before stopping")
        raise ConvergenceFailure(ErrorCode.HORIZON_EXHAUSTED_FRACTION,
                                 f"{frac:.4%} of paths unstopped after {batch.n_jumps} jumps",
                                 {"unstopped_fraction": frac, "n_jumps": batch.n_jumps, "threshold": max_unstopped})
    payoff = np.asarray(eval_utility(problem.utility, model.g[outcome.state] - model.c * (problem.t0 + outcome.tau)))
    est = _estimate(payoff, f"E[U(g(X_tau) - c tau)] from {model.states[i0]}", seed)
    est.unstopped_fraction = frac
    if np.isfinite(est.mean):
        est.ce = float(inverse_utility(problem.utility, est.mean))
        if in_interior(problem.utility, est.ce):
            est.ce_se = float(est.se / deriv_utility(problem.utility, est.ce))
    return est


def _value_at(value: Union[ValueField, ExpSolution], states: np.ndarray, times: np.ndarray, c: float):
    if isinstance(value, ExpSolution):
        return np.exp(c * value.gamma * times) * value.W[states], np.zeros(len(times), dtype=bool)
    return value.at(states, times), ~value.grid.covers(times)


def tail_diagnostic(problem: StoppingProblem, rule: MarkovStoppingRule, value: Union[ValueField, ExpSolution],
                    i0, n_list: Sequence[int], n_paths: int, seed: int,
                    sampler: Optional[IPathSampler] = None, block_size: int = DEFAULT_BLOCK_SIZE,
                    threads: Optional[int] = None) -> TailDiagnostic:
    """
    Estimates of E_i0[V(t0 + S_n, Z_n) 1{tau >= S_n}] for each n. PASS when the
    magnitudes do not grow beyond their standard errors and the last one is
    within 3 SE of zero. A heuristic, not a proof of optimality.
    """
    model = problem.model
    i0 = model.index(i0)
    n_list = sorted(int(n) for n in n_list)
    batch = sample_paths(model, i0, n_paths, seed, n_jumps=max(n_list), sampler=sampler,
                         block_size=block_size, threads=threads)
    outcome = apply_rule(batch, rule, problem.t0)
    terms: List[TailTerm] = []
    for n in n_list:
        s_n = batch.times[:, n]
        alive = (outcome.tau >= s_n) | ~outcome.stopped
        v, outside = _value_at(value, batch.states[:, n], problem.t0 + s_n, model.c)
        with np.errstate(invalid="ignore"):
            sample = np.where(alive, v, 0.0)
        est = _estimate(sample, f"tail n={n}", seed)
        terms.append(TailTerm(n=n, mean=est.mean, se=est.se, survival=float(np.mean(alive)),
                              truncated_fraction=float(np.mean(alive & outside))))

    verdict = TailVerdict.PASS
    for prev, cur in zip(terms, terms[1:]):
        if abs(cur.mean) > abs(prev.mean) + 2.0 * max(prev.se, cur.se):
            verdict = TailVerdict.INCONCLUSIVE
    last = terms[-1]
    if not abs(last.mean) <= 3.0 * last.se:
        verdict = TailVerdict.INCONCLUSIVE
    logger.info(f"tail diagnostic from {model.states[i0]}: {verdict.value}")
    return TailDiagnostic(estimand="E[V(S_n, Z_n) 1{tau >= S_n}]", seed=seed, n_paths=n_paths,
                          terms=terms, verdict=verdict)


def calibrate_estimator(problem: StoppingProblem, rule: MarkovStoppingRule, i0, reference: float,
                        repeats: int, n_paths: int, seed: int, n_jumps: Optional[int] = None,
                        sampler: Optional[IPathSampler] = None) -> CalibrationReport:
    """Fraction of independent repeats whose estimate lies within 3 SE of `reference`."""
    seeds = np.random.SeedSequence(seed).generate_state(repeats)
    covered = 0
    for s in seeds:
        est = mc_expected_utility(problem, rule, i0, n_paths, int(s), n_jumps=n_jumps, sampler=sampler)
        if abs(est.mean - reference) <= 3.0 * est.se:
            covered += 1
    return CalibrationReport(reference=reference, repeats=repeats, n_paths=n_paths, covered=covered,
                             coverage=covered / repeats)
