"""
Tests for model validation and problem construction.
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.core.entities.utility import UtilitySpec
from src.core.errors import ErrorCode, ValidationFailure
from src.core.use_cases.model_core import (build_problem, embedded_matrix, embedded_transition, revalidate,
                                           validate_model)


def test_valid_model_exposes_rates(log_model):
    """Test exit rates and off-diagonal rates."""
    assert log_model.m == 2
    assert np.allclose(log_model.q, [1.0, 1.0])
    assert np.allclose(log_model.rates, [[0.0, 1.0], [1.0, 0.0]])
    assert log_model.states == ("0", "1")


def test_row_sum_defect():
    """Test a nonzero row sum is reported with its magnitude."""
    with pytest.raises(ValidationFailure) as exc:
        validate_model([[-1.0, 0.5], [1.0, -1.0]], [0.0, 1.0], 1.0)
    assert exc.value.code == ErrorCode.ROW_SUM_NONZERO
    defect = exc.value.details["defects"][0]
    assert defect["row"] == 0
    assert defect["magnitude"] == pytest.approx(-0.5)


def test_all_defects_are_collected():
    """Test every defect is reported at once."""
    with pytest.raises(ValidationFailure) as exc:
        validate_model([[-1.0, -1.0], [1.0, -1.0]], [0.0, 1.0], 0.0)
    codes = {d["code"] for d in exc.value.details["defects"]}
    assert exc.value.code == ErrorCode.NEGATIVE_OFFDIAGONAL
    assert codes == {"NEGATIVE_OFFDIAGONAL", "ROW_SUM_NONZERO", "NONPOSITIVE_COST"}


def test_absorbing_state():
    """Test an absorbing state is rejected."""
    with pytest.raises(ValidationFailure) as exc:
        validate_model([[0.0, 0.0], [1.0, -1.0]], [0.0, 1.0], 1.0)
    assert exc.value.code == ErrorCode.ABSORBING_STATE
    assert exc.value.exit_code == 1


def test_nonpositive_cost():
    """Test a nonpositive cost is rejected."""
    with pytest.raises(ValidationFailure) as exc:
        validate_model([[-1.0, 1.0], [1.0, -1.0]], [0.0, 1.0], -0.5)
    assert exc.value.code == ErrorCode.NONPOSITIVE_COST


def test_shape_mismatch_is_a_validation_error():
    """Test mismatched shapes are rejected."""
    with pytest.raises(ValidationFailure) as exc:
        validate_model([[-1.0, 1.0], [1.0, -1.0]], [0.0, 1.0, 2.0], 1.0)
    assert exc.value.code == ErrorCode.VALIDATION_ERROR


def test_embedded_chain(log_model):
    """Test the embedded jump chain."""
    P = embedded_matrix(log_model)
    assert np.allclose(P, [[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(embedded_transition(log_model, 1), [1.0, 0.0])


def test_revalidate_round_trip(exp_model):
    """Test a model revalidates from its own data."""
    assert revalidate(exp_model) == exp_model


def test_restricted_utility_needs_d_below_rewards(exp_model):
    """Test restricted utilities need d below every reward."""
    with pytest.raises(ValidationFailure) as exc:
        build_problem(exp_model, UtilitySpec.logarithmic(d=0.0))
    assert exc.value.code == ErrorCode.VALIDATION_ERROR
    problem = build_problem(exp_model, UtilitySpec.logarithmic(d=-1.0))
    assert np.allclose(problem.caps, [1.0, 2.0])


def test_unrestricted_caps_are_infinite(exp_model):
    """Test unrestricted utilities have infinite caps."""
    problem = build_problem(exp_model, UtilitySpec.exponential(1.0))
    assert np.all(np.isinf(problem.caps))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_random_generators_validate(m, seed):
    """Test random conservative generators validate."""
    rng = np.random.default_rng(seed)
    Q = rng.uniform(0.1, 3.0, size=(m, m))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    model = validate_model(Q, rng.normal(size=m), 1.0)
    P = embedded_matrix(model)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.all(np.diag(P) == 0.0)


def test_state_lookup_by_name_and_index(log_model):
    """Test that states resolve by index or name and bad references are validation errors."""
    assert log_model.index(1) == 1
    assert log_model.index("0") == 0
    with pytest.raises(ValidationFailure) as exc:
        log_model.index(2)
    assert exc.value.code == ErrorCode.VALIDATION_ERROR
    assert exc.value.details["m"] == 2
    with pytest.raises(ValidationFailure) as exc:
        log_model.index("bogus")
    assert exc.value.details["state"] == "bogus"
