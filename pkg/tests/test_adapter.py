import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cotasr.adapter import CtcGuidedAdapter, LinearAdapter
from cotasr.errors import DimensionError, StateError
from cotasr.layers import Module
from cotasr.numerics import Rng, grad_check, sigmoid, softmax


def make(tau=0.05, d_enc=5, V=3, D=4, seed=0, **kw):
    return CtcGuidedAdapter(d_enc, V, D, Rng(seed), hidden=6, tau=tau, **kw)


def zero_module(m: Module):
    for _, p in m.named_parameters():
        p[...] = 0.0


def force_logits(ad: CtcGuidedAdapter, logits: np.ndarray):
    """Make out_proj emit ``logits`` for every frame via its output bias."""
    zero_module(ad.out_proj)
    ad.out_proj.l2.params["b"][...] = logits


def test_one_hot_collapse_is_exact():
    ad = make(V=4, D=6)
    W = Rng(1).normal((4, 6))
    logits = np.zeros((1, 5))
    logits[0, 2] = 1e4
    force_logits(ad, logits)
    zero_module(ad.res_proj)
    A, _ = ad.forward(Rng(2).normal((3, 5)), W)
    for t in range(3):
        assert np.max(np.abs(A[t] - W[2])) <= 1e-12


def test_threshold_zeroes_without_renormalizing():
    ad = make(V=3)
    logits = np.zeros((1, 4))
    logits[0, :3] = np.log([0.90, 0.06, 0.04])
    force_logits(ad, logits)
    zero_module(ad.res_proj)
    W = np.eye(3, 4)
    A, post = ad.forward(np.zeros((1, 5)), W)
    np.testing.assert_allclose(post.nonblank[0], [0.90, 0.06, 0.04], atol=1e-15)
    np.testing.assert_allclose(A[0, :3], [0.90, 0.06, 0.0], atol=1e-15)


def test_gate_half_at_zero_logit():
    ad = make(D=4)
    force_logits(ad, np.zeros((1, 4)))
    ad.out_proj.l2.params["b"][0, :3] = [0.0, 0.0, 0.0]
    W = np.zeros((3, 4))
    zero_module(ad.res_proj)
    ad.res_proj.l2.params["b"][0, :4] = [1.0, -2.0, 3.0, 0.5]
    A, _ = ad.forward(np.ones((2, 5)), W)
    np.testing.assert_allclose(A, 0.5 * np.array([[1.0, -2.0, 3.0, 0.5]] * 2), atol=1e-15)


def test_blank_logit_is_last_index():
    ad = make(V=3)
    logits = np.array([[0.0, 0.0, 0.0, 2.0]])
    force_logits(ad, logits)
    _, post = ad.forward(np.zeros((1, 5)), np.zeros((3, 4)))
    assert abs(post.blank[0] - sigmoid(2.0)) <= 1e-15
    assert ad.blank_index == 3


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_scaled_posteriors_normalize(seed):
    ad = make(seed=seed % 7)
    _, post = ad.forward(Rng(seed).normal((4, 5)) * 3, np.zeros((3, 4)))
    total = post.blank + post.scaled_nonblank.sum(axis=1)
    assert np.max(np.abs(total - 1.0)) <= 1e-9


@pytest.mark.parametrize("L", [1, 2, 7, 50, 200])
def test_length_preserved(L):
    E = Rng(L).normal((L, 5))
    A, post = make().forward(E, np.zeros((3, 4)))
    assert A.shape == (L, 4) and post.length == L
    assert LinearAdapter(5, 4, Rng(0)).forward(E).shape == (L, 4)


def test_tau_monotone_and_gate_range():
    rng = Rng(9)
    E = rng.normal((20, 5)) * 2
    counts = []
    for tau in [0.0, 0.05, 0.2, 0.5, 0.9]:
        ad = make(tau=tau, seed=3)
        ad.forward(E, np.zeros((3, 4)))
        counts.append(int(ad._cache[2].sum()))
        gate = ad._cache[6]
        assert np.all((gate > 0) & (gate < 1))
    assert counts == sorted(counts, reverse=True)


def test_tau_zero_no_residual_is_convex_combination():
    ad = make(tau=0.0, V=3, D=2, seed=4)
    zero_module(ad.res_proj)
    W = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    A, post = ad.forward(Rng(5).normal((6, 5)), W)
    np.testing.assert_allclose(A, post.nonblank @ W, atol=1e-15)
    assert np.all(A >= 0) and np.all(A.sum(axis=1) <= 1 + 1e-12)


def _adapter_objective(ad, E, W, upstream, ctc_up, which):
    """Scalar <A, upstream> + <logits, ctc_up> and its gradient w.r.t. ``which``."""
    A, _ = ad.forward(E, W)
    zb, znb = ad.ctc_logits()
    val = float(np.sum(A * upstream) + np.sum(zb * ctc_up[:, -1]) + np.sum(znb * ctc_up[:, :-1]))
    ad.zero_grad()
    dE, dW = ad.backward(upstream, ctc_up[:, -1], ctc_up[:, :-1])
    return val, dE, dW


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("renorm", [False, True])
def test_backward_matches_finite_differences(seed, renorm):
    rng = Rng(seed)
    ad = make(tau=0.05, seed=seed, renormalize=renorm)
    E, W = rng.normal((3, 5)), rng.normal((3, 4))
    up, cup = rng.normal((3, 4)), rng.normal((3, 4))

    def fE(x):
        v, dE, _ = _adapter_objective(ad, x.reshape(E.shape), W, up, cup, "E")
        return v, dE

    def fW(x):
        v, _, dW = _adapter_objective(ad, E, x.reshape(W.shape), up, cup, "W")
        return v, dW

    assert grad_check(fE, E) <= 1e-4
    assert grad_check(fW, W) <= 1e-4
    params = dict(ad.named_parameters())
    grads = dict(ad.named_grads())
    for name, p in params.items():
        def fp(x, name=name):
            params[name][...] = x.reshape(p.shape)
            v, _, _ = _adapter_objective(ad, E, W, up, cup, name)
            return v, grads[name].copy()
        x0 = p.copy()
        assert grad_check(fp, x0) <= 1e-4, name
        params[name][...] = x0


def test_tau_zero_matches_closed_form():
    rng = Rng(21)
    ad = make(tau=0.0, seed=2)
    E, W, up = rng.normal((3, 5)), rng.normal((3, 4)), rng.normal((3, 4))
    A, post = ad.forward(E, W)
    dE, dW = ad.backward(up)
    p = post.nonblank
    np.testing.assert_allclose(dW, p.T @ up, atol=1e-10)
    dp = up @ W.T
    dz_closed = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    ad.forward(E, W)
    ad.zero_grad()
    ad.backward(up)
    # out_proj bias gradient equals the column sums of dlogits
    np.testing.assert_allclose(ad.out_proj.l2.grads["b"][0, :3], dz_closed.sum(axis=0), atol=1e-10)
    assert abs(ad.out_proj.l2.grads["b"][0, 3]) <= 1e-15


def test_fully_masked_frame_contributes_nothing_to_embedding():
    ad = make(tau=0.5, V=3)
    force_logits(ad, np.zeros((1, 4)))  # uniform 1/3 < 0.5 everywhere
    W = Rng(0).normal((3, 4))
    ad.forward(np.ones((2, 5)), W)
    _, dW = ad.backward(np.ones((2, 4)))
    assert np.all(dW == 0.0)


def test_backward_without_forward():
    with pytest.raises(StateError):
        make().backward(np.zeros((1, 4)))


def test_shape_errors():
    with pytest.raises(DimensionError):
        make().forward(np.zeros((2, 6)), np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        make().forward(np.zeros((2, 5)), np.zeros((2, 4)))
    with pytest.raises(DimensionError):
        LinearAdapter(5, 4, Rng(0)).forward(np.zeros((0, 5)))


def test_linear_adapter_zero_and_saturated():
    ad = LinearAdapter(3, 3, Rng(0), hidden=3)
    zero_module(ad)
    assert np.all(ad.forward(np.ones((4, 3))) == 0.0)
    ad.proj.l1.params["W"][...] = np.eye(3)
    ad.proj.l1.params["b"][...] = 10.0
    ad.proj.l2.params["W"][...] = np.eye(3)
    E = Rng(1).normal((4, 3)) * 0.1
    np.testing.assert_allclose(ad.forward(E), E + 10.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_linear_adapter_gradients(seed):
    ad = LinearAdapter(3, 4, Rng(seed))
    rng = Rng(seed + 100)
    E, up = rng.normal((3, 3)), rng.normal((3, 4))

    def f(x):
        A = ad.forward(x.reshape(E.shape))
        ad.zero_grad()
        return float(np.sum(A * up)), ad.backward(up)

    assert grad_check(f, E) <= 1e-4
