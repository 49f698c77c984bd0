"""Layers with hand-written backward passes.

A layer's ``forward`` caches what its ``backward`` needs; ``backward`` takes
the upstream gradient, accumulates parameter gradients into ``self.grads``
and returns the gradient w.r.t. the layer input.  One cache per layer:
forward and backward are called in matched pairs, one utterance at a time.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import DimensionError, StateError
from .numerics import Rng, gelu_with_grad, softmax


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self._cache = None

    def add_param(self, name: str, value: np.ndarray) -> None:
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"parameter {name} must be 2-D")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, v in self.grads.items():
            yield prefix + k, v
        for name, child in self.children.items():
            yield from child.named_grads(f"{prefix}{name}.")

    def zero_grad(self) -> None:
        for _, g in self.named_grads():
            g[...] = 0.0

    def _pop_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a forward cache")
        cache, self._cache = self._cache, None
        return cache


def init_weight(rng: Rng, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal((fan_in, fan_out), scale=gain / np.sqrt(fan_in))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, gain: float = 1.0):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.add_param("W", init_weight(rng, d_in, d_out, gain))
        self.add_param("b", np.zeros((1, d_out)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"Linear expects (*, {self.d_in}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._pop_cache()
        self.grads["W"] += x.T @ dy
        self.grads["b"] += dy.sum(axis=0, keepdims=True)
        return dy @ self.params["W"].T


class FeedForward(Module):
    """Two projections with an exact GELU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: Rng, out_gain: float = 1.0):
        super().__init__()
        self.l1 = self.add_child("l1", Linear(d_in, d_hidden, rng))
        self.l2 = self.add_child("l2", Linear(d_hidden, d_out, rng, gain=out_gain))

    def forward(self, x: np.ndarray) -> np.ndarray:
        act, dact = gelu_with_grad(self.l1.forward(x))
        self._cache = dact
        return self.l2.forward(act)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dact = self._pop_cache()
        return self.l1.backward(self.l2.backward(dy) * dact)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.add_param("g", np.ones((1, d)))
        self.add_param("b", np.zeros((1, d)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.params["g"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._pop_cache()
        self.grads["g"] += (dy * xhat).sum(axis=0, keepdims=True)
        self.grads["b"] += dy.sum(axis=0, keepdims=True)
        dxhat = dy * self.params["g"]
        return inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )


def rope_tables(n: int, d_head: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    half = d_head // 2
    freq = base ** (-np.arange(half) / half)
    ang = np.arange(n)[:, None] * freq[None, :]
    return np.cos(ang), np.sin(ang)


def rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Rotate (heads, n, d_head) pairs (x[:half], x[half:]) by position angles."""
    half = x.shape[-1] // 2
    a, b = x[..., :half], x[..., half:]
    s = -sin if inverse else sin
    return np.concatenate([a * cos - b * s, a * s + b * cos], axis=-1)


class CausalSelfAttention(Module):
    """Multi-head causal self-attention with rotary position encoding."""

    def __init__(self, d_model: int, n_heads: int, rng: Rng, out_gain: float = 1.0):
        super().__init__()
        if d_model % n_heads or (d_model // n_heads) % 2:
            raise DimensionError("d_model must split into heads of even width")
        self.d, self.h = d_model, n_heads
        self.dh = d_model // n_heads
        self.qkv = self.add_child("qkv", Linear(d_model, 3 * d_model, rng))
        self.out = self.add_child("out", Linear(d_model, d_model, rng, gain=out_gain))

    def _split(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return x.reshape(n, self.h, self.dh).transpose(1, 0, 2)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.d)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        qkv = self.qkv.forward(x)
        q, k, v = (self._split(qkv[:, i * self.d:(i + 1) * self.d]) for i in range(3))
        cos, sin = rope_tables(n, self.dh)
        qr, kr = rope(q, cos, sin), rope(k, cos, sin)
        scale = 1.0 / np.sqrt(self.dh)
        scores = (qr @ kr.transpose(0, 2, 1)) * scale
        future = np.triu(np.ones((n, n), dtype=bool), k=1)
        scores[:, future] = -np.inf
        p = softmax(scores, axis=-1)
        ctx = p @ v
        self._cache = (qr, kr, v, p, cos, sin, scale)
        return self.out.forward(self._merge(ctx))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        qr, kr, v, p, cos, sin, scale = self._pop_cache()
        dctx = self._split(self.out.backward(dy))
        dp = dctx @ v.transpose(0, 2, 1)
        dv = p.transpose(0, 2, 1) @ dctx
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dqr = ds @ kr
        dkr = ds.transpose(0, 2, 1) @ qr
        dq = rope(dqr, cos, sin, inverse=True)
        dk = rope(dkr, cos, sin, inverse=True)
        dqkv = np.concatenate([self._merge(dq), self._merge(dk), self._merge(dv)], axis=1)
        return self.qkv.backward(dqkv)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: Rng, out_gain: float = 1.0):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(d_model))
        self.attn = self.add_child("attn", CausalSelfAttention(d_model, n_heads, rng, out_gain))
        self.ln2 = self.add_child("ln2", LayerNorm(d_model))
        self.ff = self.add_child("ff", FeedForward(d_model, d_ff, d_model, rng, out_gain))

    def forward(self, x: np.ndarray, dropout: float = 0.0, rng: Rng | None = None) -> np.ndarray:
        """``dropout`` > 0 (training only) zeroes residual-branch outputs, inverted scaling."""
        a = self.attn.forward(self.ln1.forward(x))
        m1 = _dropout_mask(a.shape, dropout, rng)
        x = x + (a if m1 is None else a * m1)
        f = self.ff.forward(self.ln2.forward(x))
        m2 = _dropout_mask(f.shape, dropout, rng)
        self._cache = (m1, m2)
        return x + (f if m2 is None else f * m2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        m1, m2 = self._pop_cache()
        dx = dy + self.ln2.backward(self.ff.backward(dy if m2 is None else dy * m2))
        return dx + self.ln1.backward(self.attn.backward(dx if m1 is None else dx * m1))


def _dropout_mask(shape, p: float, rng: Rng | None) -> np.ndarray | None:
    if p <= 0.0:
        return None
    if rng is None:
        raise StateError("dropout needs an Rng")
    return (rng.random(shape) >= p) / (1.0 - p)
