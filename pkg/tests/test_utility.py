"""
Tests for utility functionals, Arrow-Pratt coefficients and certainty equivalents.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from src.core.entities.utility import DomainKind, UtilityFamily, UtilitySpec
from src.core.errors import ErrorCode, ValidationFailure
from src.core.use_cases.utility import (arrow_pratt, certainty_equiv_approx, deriv_utility, eval_utility,
                                        exact_certainty_equivalent, in_domain, inverse_utility,
                                        second_deriv_utility)

LOG = UtilitySpec.logarithmic()
EXP = UtilitySpec.exponential(1.0)
POW = UtilitySpec.power(0.5)


def test_families_and_domains():
    """Test families map to their domains."""
    assert EXP.domain_kind == DomainKind.ALL_REALS
    assert LOG.domain_kind == DomainKind.OPEN_LEFT
    assert POW.domain_kind == DomainKind.CLOSED_LEFT
    assert UtilitySpec.linear().risk_neutral
    assert LOG.restricted and not EXP.restricted


def test_parameters_are_checked():
    """Test family parameters are checked."""
    with pytest.raises(ValidationError):
        UtilitySpec(family=UtilityFamily.EXPONENTIAL)
    with pytest.raises(ValidationError):
        UtilitySpec.power(1.5)


def test_eval_utility_off_domain_is_neg_inf():
    """Test utility is -inf off its domain."""
    assert eval_utility(LOG, 0.0) == float("-inf")
    assert eval_utility(LOG, -3.0) == float("-inf")
    assert eval_utility(POW, 0.0) == 0.0
    assert eval_utility(POW, 4.0) == pytest.approx(2.0)
    assert eval_utility(EXP, 0.0) == pytest.approx(-1.0)
    assert np.array_equal(in_domain(POW, [-1.0, 0.0, 1.0]), [False, True, True])


def test_derivatives():
    """Test closed-form derivatives."""
    assert deriv_utility(LOG, 2.0) == pytest.approx(0.5)
    assert second_deriv_utility(LOG, 2.0) == pytest.approx(-0.25)
    assert deriv_utility(EXP, 0.0) == pytest.approx(1.0)
    assert second_deriv_utility(POW, 1.0) == pytest.approx(-0.25)


def test_derivative_outside_interior_raises():
    """Test derivatives outside the interior raise."""
    with pytest.raises(ValidationFailure) as exc:
        deriv_utility(POW, 0.0)
    assert exc.value.code == ErrorCode.OUT_OF_DOMAIN


def test_inverse():
    """Test utility inverses."""
    assert inverse_utility(LOG, eval_utility(LOG, 3.0)) == pytest.approx(3.0)
    assert inverse_utility(EXP, eval_utility(EXP, -2.0)) == pytest.approx(-2.0)
    assert inverse_utility(POW, 3.0) == pytest.approx(9.0)


def test_inverse_out_of_range():
    """Test inverses outside the range raise."""
    with pytest.raises(ValidationFailure) as exc:
        inverse_utility(EXP, 0.5)
    assert exc.value.code == ErrorCode.INVERSE_OUT_OF_RANGE
    with pytest.raises(ValidationFailure):
        inverse_utility(POW, -1.0)


def test_arrow_pratt():
    """Test Arrow-Pratt coefficients."""
    assert arrow_pratt(EXP, 7.0) == pytest.approx(1.0)
    assert arrow_pratt(LOG, 4.0) == pytest.approx(0.25)
    assert arrow_pratt(POW, 4.0) == pytest.approx(0.125)
    assert arrow_pratt(UtilitySpec.linear(), 1.0) == 0.0


@pytest.mark.parametrize("u, mean", [(LOG, 1.0), (EXP, 0.0)])
def test_certainty_equivalent_error_is_third_order(u, mean):
    """Test the certainty-equivalent approximation error is third order."""
    ratios = []
    for eps in (0.1, 0.05, 0.025):
        exact = exact_certainty_equivalent(u, [mean - eps, mean + eps], [0.5, 0.5])
        approx = certainty_equiv_approx(u, mean, eps ** 2)
        ratios.append(abs(exact - approx) / eps ** 3)
    assert max(ratios) < 0.1
    assert ratios[-1] <= ratios[0]


def test_exact_certainty_equivalent_rejects_bad_probabilities():
    """Test bad probabilities are rejected."""
    with pytest.raises(ValidationFailure):
        exact_certainty_equivalent(LOG, [1.0, 2.0], [0.7, 0.7])


def test_log_certainty_equivalent_is_geometric_mean():
    """Test the log certainty equivalent is the geometric mean."""
    assert exact_certainty_equivalent(LOG, [1.0, 4.0], [0.5, 0.5]) == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0.01, 50.0), dx=st.floats(0.01, 10.0))
def test_utilities_increase_and_are_concave(x, dx):
    """Test utilities increase and are concave."""
    for u in (LOG, POW, EXP):
        assert eval_utility(u, x + dx) > eval_utility(u, x)
        assert second_deriv_utility(u, x) < 0
        assert arrow_pratt(u, x) > 0
    assert math.isclose(inverse_utility(LOG, eval_utility(LOG, x)), x, rel_tol=1e-9)


@pytest.mark.parametrize("u", [LOG, EXP, POW, UtilitySpec.power(0.25, 1.0), UtilitySpec.linear()],
                         ids=lambda u: u.label())
@pytest.mark.parametrize("x", [2.0, 3.5, 10.0])
def test_derivatives_match_finite_differences(u, x):
    """Test U' and U'' against central differences."""
    h = 1e-4
    up, mid, down = (float(eval_utility(u, x + s)) for s in (h, 0.0, -h))
    assert deriv_utility(u, x) == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-9)
    assert second_deriv_utility(u, x) == pytest.approx((up - 2 * mid + down) / h ** 2, rel=1e-3, abs=1e-6)
