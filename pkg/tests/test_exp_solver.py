"""
Tests for the exponential-utility reduction and its stop-set oracle.
"""
import math

import numpy as np
import pytest

from src.core.entities.grid import TimeGrid
from src.core.errors import ConvergenceFailure, ErrorCode, ValidationFailure
from src.core.use_cases.exp_solver import (check_drift, exp_solution_rule, exp_stop_set_oracle, exp_value_field,
                                           solve_exp_finite, solve_exp_infinite)
from src.core.use_cases.model_core import validate_model

E = math.e


def test_drift_flags(exp_model):
    """Test states with q_i <= c gamma are flagged."""
    assert not check_drift(exp_model, 1.0).any()
    assert check_drift(exp_model, 2.0).all()


def test_gamma_must_be_positive(exp_model):
    """Test gamma must be positive."""
    with pytest.raises(ValidationFailure) as exc:
        solve_exp_infinite(exp_model, 0.0)
    assert exc.value.code == ErrorCode.VALIDATION_ERROR


def test_zero_jump_horizon_stops_everywhere(exp_model):
    """Test the zero-jump horizon is the stop payoff."""
    (w0,) = solve_exp_finite(exp_model, 1.0, 0)
    assert np.allclose(w0.W, [-1.0, -1.0 / E])
    assert w0.stop_set == (0, 1)
    assert w0.horizon == 0


def test_one_jump_horizon(exp_model):
    """Test the one-jump value of the two-state model."""
    w1 = solve_exp_finite(exp_model, 1.0, 1)[-1]
    assert np.allclose(w1.W, [-2.0 / E, -1.0 / E])
    assert w1.stop_set == (1,)


def test_finite_values_increase_with_horizon(random_model):
    """Test finite-horizon values grow with the horizon."""
    model = random_model(4, seed=7)
    sols = solve_exp_finite(model, 0.3, 12)
    for a, b in zip(sols, sols[1:]):
        assert np.all(b.W >= a.W - 1e-15)


def test_negative_horizon_rejected(exp_model):
    """Test a negative horizon is rejected."""
    with pytest.raises(ValidationFailure):
        solve_exp_finite(exp_model, 1.0, -1)


def test_infinite_solution(exp_model):
    """Test the infinite-horizon fixed point of the two-state model."""
    sol = solve_exp_infinite(exp_model, 1.0)
    assert np.allclose(sol.W, [-2.0 / E, -1.0 / E], atol=1e-12)
    assert sol.stop_set == (1,)
    assert sol.horizon is None
    assert np.array_equal(sol.f_star, [np.inf, 0.0])
    assert sol.to_dict()["horizon"] == "infinite"


def test_all_flagged_model_stops_at_once():
    """Test a fully flagged model stops after one iteration."""
    model = validate_model([[-1.0, 1.0], [1.0, -1.0]], [0.0, 1.0], 1.0)
    sol = solve_exp_infinite(model, 2.0)
    assert sol.stop_set == (0, 1)
    assert np.allclose(sol.W, [-1.0, -math.exp(-2.0)])
    assert sol.iterations == 1


def test_constant_reward_stops_everywhere():
    """Test constant rewards stop everywhere."""
    model = validate_model([[-3.0, 1.0, 2.0], [1.0, -2.0, 1.0], [2.0, 2.0, -4.0]], [1.0, 1.0, 1.0], 0.5)
    sol = solve_exp_infinite(model, 1.0)
    assert sol.stop_set == (0, 1, 2)
    assert np.allclose(sol.W, -math.exp(-1.0))


def test_no_convergence(exp_model):
    """Test an iteration cap raises a convergence failure."""
    with pytest.raises(ConvergenceFailure) as exc:
        solve_exp_infinite(exp_model, 1.0, max_iter=1)
    assert exc.value.code == ErrorCode.NO_CONVERGENCE
    assert exc.value.exit_code == 2


def test_oracle_on_two_states(exp_model):
    """Test the oracle on the two-state model."""
    sol = exp_stop_set_oracle(exp_model, 1.0)
    assert sol.stop_set == (1,)
    assert np.allclose(sol.W, [-2.0 / E, -1.0 / E])
    assert sol.candidates[0] == (1,)


def test_oracle_cap(random_model):
    """Test the oracle refuses chains above its cap."""
    model = random_model(3, seed=1)
    with pytest.raises(ValidationFailure) as exc:
        exp_stop_set_oracle(model, 0.1, cap=2)
    assert exc.value.code == ErrorCode.STATE_SPACE_TOO_LARGE
    assert exc.value.details == {"free_states": 3, "cap": 2}


def test_value_iteration_agrees_with_oracle(random_model):
    """Test that value iteration matches stop-set enumeration on random chains of 2 to 8 states."""
    worst = 0.0
    for seed in range(200):
        gamma = (0.1, 0.25, 0.4)[seed % 3]
        model = random_model(2 + seed % 7, seed=seed)
        assert not check_drift(model, gamma).any()
        iterated = solve_exp_infinite(model, gamma)
        exact = exp_stop_set_oracle(model, gamma)
        worst = max(worst, float(np.max(np.abs(iterated.W - exact.W))))
        assert iterated.stop_set == exact.stop_set, f"seed {seed}"
    assert worst <= 1e-10


def test_value_field_and_rule(exp_model):
    """Test lifting an exponential solution to a grid field and rule."""
    sol = solve_exp_infinite(exp_model, 1.0)
    grid = TimeGrid(t_max=1.0, dt=0.25)
    field = exp_value_field(sol, grid, exp_model.c)
    assert np.allclose(field.values[:, -1], sol.W * E)
    assert np.allclose(field.values[:, 0], sol.W)
    rule = exp_solution_rule(sol, grid)
    assert rule.h.shape == (2, grid.K + 1)
    assert np.all(np.isinf(rule.h[0]))
    assert np.all(rule.h[1] == 0.0)
