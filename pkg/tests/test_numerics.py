import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cotasr.errors import DimensionError, NumericalError
from cotasr.numerics import (
    Rng, gelu, gelu_grad, grad_check, log_sum_exp, matmul, sigmoid, softmax_row,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_small_cases():
    assert matmul(np.eye(2), np.array([[3.0], [4.0]])).tolist() == [[3.0], [4.0]]
    assert matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_dimension_error():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(softmax_row([0, 0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax_row([1000, 1000]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax_row([0, math.log(3)]), [0.25, 0.75], atol=1e-15)
    with pytest.raises(DimensionError):
        softmax_row([])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_softmax_sums_to_one(z):
    p = softmax_row(z)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_sigmoid_examples():
    assert sigmoid(0.0) == 0.5
    assert abs(sigmoid(50.0) - 1.0) <= 1e-12
    assert abs(sigmoid(math.log(3)) - 0.75) <= 1e-15


@given(st.floats(-30, 30))
def test_sigmoid_symmetry(z):
    assert abs(sigmoid(z) + sigmoid(-z) - 1.0) <= 1e-15


def test_gelu_examples():
    assert gelu(0.0) == 0.0
    assert abs(gelu(10.0) - 10.0) <= 1e-6
    phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert abs(gelu(1.0) - phi1) <= 1e-12
    assert abs(gelu(1.0) - 0.8413447) <= 1e-7


def test_gelu_monotone_on_positive_axis():
    z = np.linspace(0, 8, 1001)
    assert np.all(np.diff(gelu(z)) > 0)


def test_gelu_grad_matches_differences():
    z = np.linspace(-4, 4, 81)
    fd = (gelu(z + 1e-6) - gelu(z - 1e-6)) / 2e-6
    np.testing.assert_allclose(gelu_grad(z), fd, atol=1e-8)


def test_log_sum_exp_examples():
    assert abs(log_sum_exp([0, 0]) - math.log(2)) <= 1e-15
    assert log_sum_exp([1.5]) == 1.5
    assert abs(log_sum_exp([math.log(1), math.log(2), math.log(3)]) - math.log(6)) <= 1e-12
    assert log_sum_exp([-np.inf, -np.inf]) == -np.inf
    assert log_sum_exp([-np.inf, 0.0]) == 0.0


@given(st.lists(st.floats(-300, 300), min_size=1, max_size=10))
def test_log_sum_exp_matches_direct(z):
    assert abs(log_sum_exp(z) - math.log(sum(math.exp(v) for v in z))) <= 1e-12 * max(1, abs(log_sum_exp(z)))


def test_grad_check_quadratic():
    err = grad_check(lambda x: (float(x[0] ** 2), 2 * x), np.array([3.0]))
    assert err <= 1e-10


def test_grad_check_two_class_ce():
    def f(z):
        p = softmax_row(z)
        return -math.log(p[0]), p - np.array([1.0, 0.0])

    assert grad_check(f, np.zeros(2), eps=1e-5) <= 1e-6


def test_grad_check_flags_wrong_gradient():
    assert grad_check(lambda x: (float(x @ x), -2 * x), np.array([1.0, 2.0])) > 0.5


def test_grad_check_non_finite():
    with pytest.raises(NumericalError):
        grad_check(lambda x: (float("nan"), x), np.array([1.0]))


def test_rng_streams_are_reproducible():
    a, b = Rng(5), Rng(5)
    assert np.array_equal(a.normal(10), b.normal(10))
    assert not np.array_equal(Rng(5).normal(10), Rng(6).normal(10))
    assert Rng(5).child(3).seed == Rng(5).child(3).seed != Rng(5).child(4).seed
