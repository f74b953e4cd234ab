"""
Tests for path sampling, rule application and Monte Carlo estimates.
"""
import math

import numpy as np
import pytest

from src.core.entities.grid import MarkovStoppingRule, TimeGrid
from src.core.entities.simulation import TailVerdict
from src.core.entities.utility import UtilitySpec
from src.core.errors import ConvergenceFailure, ErrorCode, ValidationFailure
from src.core.use_cases.exp_solver import exp_solution_rule, solve_exp_infinite
from src.core.use_cases.grid_solver import solve_infinite
from src.core.use_cases.house_selling import house_sampler
from src.core.use_cases.model_core import build_problem, embedded_matrix, embedded_transition
from src.core.use_cases.ola_rules import poisson_chain
from src.core.use_cases.simulator import (UniformizedSampler, apply_rule, calibrate_estimator, default_jumps,
                                          make_sampler, mc_expected_utility, sample_paths, tail_diagnostic)

W0_EXP3 = -1.5 / math.e
GRID = TimeGrid(t_max=2.0, dt=1e-2)


@pytest.fixture
def exp3_problem(exp3_model):
    return build_problem(exp3_model, UtilitySpec.exponential(1.0))


@pytest.fixture
def exp3_optimal(exp3_model):
    sol = solve_exp_infinite(exp3_model, 1.0)
    return sol, exp_solution_rule(sol, GRID)


def test_same_seed_same_paths_for_any_thread_count(exp3_model):
    """Test paths depend on the seed, not the thread count."""
    a = sample_paths(exp3_model, 0, 5000, seed=3, n_jumps=6, block_size=1000, threads=1)
    b = sample_paths(exp3_model, 0, 5000, seed=3, n_jumps=6, block_size=1000, threads=4)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.states, b.states)
    c = sample_paths(exp3_model, 0, 5000, seed=4, n_jumps=6, block_size=1000)
    assert not np.array_equal(a.times, c.times)


def test_paths_start_in_i0_and_never_self_jump(random_model):
    """Test paths start in i0 and never jump in place."""
    model = random_model(4, seed=11)
    batch = sample_paths(model, 2, 3000, seed=1, n_jumps=10, block_size=512)
    assert batch.n_paths == 3000 and batch.n_jumps == 10
    assert np.all(batch.states[:, 0] == 2)
    assert np.all(batch.states[:, 1:] != batch.states[:, :-1])
    assert np.all(batch.holding > 0)
    assert batch.path(7).stream == 7


def test_time_horizon_extends_jumps(exp3_model):
    """Test a time horizon extends the jump count."""
    batch = sample_paths(exp3_model, 0, 2000, seed=5, t_horizon=3.0)
    assert np.all(batch.times[:, -1] > 3.0)


def test_default_jumps_scale_with_states(log_model):
    """Test the default jump budget."""
    assert default_jumps(log_model) == 100


def test_bad_inputs(exp3_model):
    """Test bad sampling inputs are rejected."""
    with pytest.raises(ValidationFailure):
        sample_paths(exp3_model, 0, 0, seed=1)
    with pytest.raises(ValidationFailure):
        make_sampler(exp3_model, "gillespie")
    with pytest.raises(ValidationFailure) as exc:
        UniformizedSampler(exp3_model, rate=2.0)
    assert exc.value.code == ErrorCode.VALIDATION_ERROR


def test_uniformized_sampler(exp3_model):
    """Test the uniformized sampler keeps the holding-time law."""
    sampler = make_sampler(exp3_model, "uniformized", rate=5.0)
    assert sampler.name == "uniformized"
    batch = sample_paths(exp3_model, 0, 20000, seed=2, n_jumps=3, sampler=sampler)
    assert np.all(batch.states[:, 1:] != batch.states[:, :-1])
    assert float(np.mean(batch.holding[:, 0])) == pytest.approx(1.0 / 3.0, abs=0.02)


def test_apply_immediate_and_never_stop(exp3_model):
    """Test applying stop-now and never-stop rules."""
    batch = sample_paths(exp3_model, 0, 100, seed=9, n_jumps=4)
    now = apply_rule(batch, MarkovStoppingRule.constant(GRID, 2, 0.0))
    assert np.all(now.tau == 0.0)
    assert np.all(now.state == 0)
    assert now.unstopped_fraction == 0.0
    never = apply_rule(batch, MarkovStoppingRule.constant(GRID, 2, np.inf))
    assert not never.stopped.any()
    assert np.array_equal(never.tau, batch.times[:, -1])
    assert never.unstopped_fraction == 1.0


def test_optimal_rule_stops_at_first_jump(exp3_model, exp3_optimal):
    """Test the optimal rule stops at the first jump."""
    _, rule = exp3_optimal
    batch = sample_paths(exp3_model, 0, 500, seed=4, n_jumps=5)
    outcome = apply_rule(batch, rule)
    assert outcome.stopped.all()
    assert np.array_equal(outcome.tau, batch.times[:, 1])
    assert np.all(outcome.state == 1)


def test_mc_matches_exponential_value(exp3_problem, exp3_optimal):
    """Test Monte Carlo agrees with the exponential value."""
    _, rule = exp3_optimal
    est = mc_expected_utility(exp3_problem, rule, 0, 100000, seed=12345)
    assert abs(est.mean - W0_EXP3) <= 3.0 * est.se
    assert est.ce == pytest.approx(-math.log(-est.mean))
    assert est.ce_se > 0
    assert est.n == 100000 and est.seed == 12345


def test_mc_matches_grid_value_for_log_model(log_problem, log_grid):
    """Test Monte Carlo agrees with the grid value of the log model."""
    sol = solve_infinite(log_problem, log_grid)
    est = mc_expected_utility(log_problem, sol.rule, 0, 100000, seed=7)
    # grid discretisation error is comparable to the standard error here
    assert abs(est.mean - sol.value.values[0, 0]) <= 3.0 * est.se + 1e-4


def test_never_stopping_exhausts_horizon(exp3_problem):
    """Test never stopping exhausts the jump budget."""
    rule = MarkovStoppingRule.constant(GRID, 2, np.inf)
    with pytest.raises(ConvergenceFailure) as exc:
        mc_expected_utility(exp3_problem, rule, 0, 1000, seed=1, n_jumps=5)
    assert exc.value.code == ErrorCode.HORIZON_EXHAUSTED_FRACTION
    assert exc.value.exit_code == 2
    assert exc.value.details["unstopped_fraction"] == 1.0


def test_tail_passes_for_optimal_rule(exp3_problem, exp3_optimal):
    """Test the tail diagnostic passes for the optimal rule."""
    sol, rule = exp3_optimal
    diag = tail_diagnostic(exp3_problem, rule, sol, 0, [1, 2, 4, 8], 5000, seed=3)
    assert diag.verdict == TailVerdict.PASS
    assert [t.n for t in diag.terms] == [1, 2, 4, 8]
    assert all(t.mean == 0.0 and t.survival == 0.0 for t in diag.terms[1:])


def test_tail_inconclusive_for_never_stop(exp3_problem, exp3_optimal):
    """Test the tail diagnostic flags never stopping."""
    sol, _ = exp3_optimal
    rule = MarkovStoppingRule.constant(GRID, 2, np.inf)
    diag = tail_diagnostic(exp3_problem, rule, sol, 0, [1, 2, 4, 8], 5000, seed=3)
    assert diag.verdict == TailVerdict.INCONCLUSIVE
    assert abs(diag.terms[-1].mean) > abs(diag.terms[0].mean)


def test_calibration_coverage(exp3_problem, exp3_optimal):
    """Test 3 SE intervals cover the exact value in at least 99 of 100 repeats."""
    _, rule = exp3_optimal
    report = calibrate_estimator(exp3_problem, rule, 0, W0_EXP3, repeats=100, n_paths=10000, seed=8, n_jumps=5)
    assert report.repeats == 100
    assert report.covered >= 99


def _transition_stats(batch, m):
    """Pooled jump frequencies and mean holding time per departure state."""
    src = batch.states[:, :-1].ravel()
    dst = batch.states[:, 1:].ravel()
    counts = np.zeros((m, m))
    np.add.at(counts, (src, dst), 1.0)
    visits = np.bincount(src, minlength=m)
    hold = np.bincount(src, weights=batch.holding.ravel(), minlength=m) / visits
    return counts / visits[:, None], hold


def test_direct_sampler_holding_times_and_jumps(random_model):
    """Test that holding times average 1/q_i and jumps follow the embedded chain."""
    model = random_model(4, seed=21)
    n = 50000
    batch = sample_paths(model, 1, n, seed=6, n_jumps=1)
    q1 = model.q[1]
    assert abs(batch.holding[:, 0].mean() - 1.0 / q1) <= 4.0 / (q1 * math.sqrt(n))
    freq = np.bincount(batch.states[:, 1], minlength=4) / n
    assert np.allclose(freq, embedded_transition(model, 1), atol=0.01)
    assert freq[1] == 0.0


def test_uniformized_and_direct_samplers_agree_on_house(house):
    """Test that the offer-clock sampler and the direct sampler give the same jump statistics."""
    direct = sample_paths(house.model, 0, 40000, seed=3, n_jumps=3)
    clocked = sample_paths(house.model, 0, 40000, seed=3, n_jumps=3, sampler=house_sampler(house))
    p_direct, hold_direct = _transition_stats(direct, house.m)
    p_clocked, hold_clocked = _transition_stats(clocked, house.m)
    assert np.allclose(p_direct, p_clocked, atol=0.02)
    assert np.allclose(p_clocked, embedded_matrix(house.model), atol=0.02)
    assert np.allclose(hold_direct, 0.25, atol=0.01)
    assert np.allclose(hold_clocked, 0.25, atol=0.01)


def test_mc_matches_poisson_hitting_value():
    """Test the Poisson chain (lambda 2, sqrt rewards): stopping on the first arrival is worth -2/e."""
    chain = poisson_chain(2.0, math.sqrt, 10, 1.0)
    sol = solve_exp_infinite(chain, 1.0)
    assert sol.stop_set[0] == 1
    assert sol.W[0] == pytest.approx(-2.0 / math.e)
    problem = build_problem(chain, UtilitySpec.exponential(1.0))
    est = mc_expected_utility(problem, exp_solution_rule(sol, GRID), 0, 100000, seed=0, n_jumps=5)
    assert abs(est.mean - sol.W[0]) <= 3.0 * est.se
