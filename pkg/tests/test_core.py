import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mepanneal.core import (
    AnnealSchedule,
    EmptySupportError,
    FixedPointConfig,
    InvalidParameterError,
    NoConvergenceError,
    PenaltyConfig,
    damped_fixed_point,
    geometric_ladder,
    log_sum_exp,
    log_sum_exp_rows,
    penalty_gradient,
    penalty_value,
    softmax_rows,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_ladder_endpoints():
    lad = geometric_ladder(1e-2, 1.0, 10.0)
    assert lad == pytest.approx([1e-2, 1e-1, 1.0])
    assert geometric_ladder(1.0, 1.0, 2.0) == [1.0]
    assert geometric_ladder(1.0, 5.0, 2.0)[-1] == 8.0


@pytest.mark.parametrize("lo,hi,rate", [(0, 1, 2), (1, 2, 1.0), (2, 1, 2)])
def test_ladder_rejects_bad_parameters(lo, hi, rate):
    with pytest.raises(InvalidParameterError):
        geometric_ladder(lo, hi, rate)


@given(st.floats(1e-4, 10), st.floats(1.0, 1e4), st.floats(1.05, 5))
def test_ladder_is_increasing_and_covers_range(lo, span, rate):
    lad = geometric_ladder(lo, lo * span, rate)
    assert lad[0] == lo
    assert all(b > a for a, b in zip(lad, lad[1:]))
    assert lad[-1] >= lo * span * (1 - 1e-12)
    assert len(lad) == 1 or lad[-2] < lo * span


def test_schedule_validation():
    with pytest.raises(InvalidParameterError):
        AnnealSchedule(1.0, 0.5, 1.1)
    with pytest.raises(InvalidParameterError):
        AnnealSchedule(0.1, 1.0, 1.0)
    with pytest.raises(InvalidParameterError):
        PenaltyConfig(theta=0)
    with pytest.raises(InvalidParameterError):
        FixedPointConfig(damping=0)


def test_penalty_value_examples():
    assert penalty_value([0.0, 0.0], 10) == 2.0
    assert penalty_value([-0.1], 10) == pytest.approx(math.exp(-1))
    # clamped: no overflow
    assert penalty_value([1e6], 10) == pytest.approx(math.exp(60))


@given(arrays(float, st.integers(1, 6), elements=st.floats(-2, 2)), st.floats(1, 20))
def test_penalty_gradient_matches_finite_differences(slack, theta):
    g = penalty_gradient(slack, theta)
    h = 1e-6
    for k in range(slack.size):
        # The penalty is a sum of per-constraint terms; differencing one term
        # avoids cancellation against much larger neighbours.
        fd = (penalty_value(slack[k] + h, theta) - penalty_value(slack[k] - h, theta)) / (2 * h)
        assert abs(fd - g[k]) <= 1e-5 * g[k]
    # directional derivative of the whole sum, relative to the gradient norm
    d = np.linspace(-1, 1, slack.size)
    fd = (penalty_value(slack + h * d, theta) - penalty_value(slack - h * d, theta)) / (2 * h)
    assert abs(fd - g @ d) <= 1e-5 * np.linalg.norm(g) * np.linalg.norm(d) + 1e-12


@given(arrays(float, st.integers(1, 20), elements=finite), st.floats(-1e3, 1e3))
def test_log_sum_exp_shift_invariance(v, c):
    assert abs(log_sum_exp(v + c) - (log_sum_exp(v) + c)) <= 1e-12 * max(1.0, abs(c) + np.abs(v).max())


def test_log_sum_exp_extremes():
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2))
    assert log_sum_exp([-np.inf, 0.0]) == 0.0
    with pytest.raises(EmptySupportError):
        log_sum_exp([-np.inf])
    assert np.isneginf(log_sum_exp_rows(np.array([[-np.inf, -np.inf]]))[0])


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_stochastic(logits):
    P = softmax_rows(logits)
    assert np.all(P >= 0)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12


def test_damped_fixed_point_contraction():
    x, it = damped_fixed_point(lambda x: 0.5 * np.cos(x), np.zeros(3), FixedPointConfig(tol=1e-12))
    assert np.allclose(x, 0.5 * np.cos(x), atol=1e-11)
    assert it > 1


def test_damped_fixed_point_reports_failure():
    with pytest.raises(NoConvergenceError) as err:
        damped_fixed_point(lambda x: x + 1, np.zeros(1), FixedPointConfig(max_iters=5))
    assert err.value.iterations == 5
