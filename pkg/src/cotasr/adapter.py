"""Modality adapters mapping encoder frames into the LM embedding space.

Both adapters keep one output vector per encoder frame; nothing is dropped
or merged along time.

CTC-guided adapter, per frame ``t``:

    z_t            = out_proj(e_t)                 (V+1 logits, blank last)
    p_b            = sigmoid(z_t[V])
    p_nb           = softmax(z_t[:V])
    w_t            = p_nb with entries < tau zeroed (no renormalization)
    u_t            = w_t @ W_emb
    r_t, gate      = res_proj(e_t)[:D], sigmoid(res_proj(e_t)[D])
    a_t            = u_t + gate * r_t

The CTC loss sees the unthresholded posteriors; the threshold only shapes
``w_t``.  Its mask is treated as constant when differentiating.
"""

from __future__ import annotations

import numpy as np

from .ctc import CtcPosteriorSequence
from .errors import DimensionError, StateError
from .layers import FeedForward, Module
from .numerics import Rng, sigmoid, softmax

DEFAULT_TAU = 0.05


def default_hidden(d_enc: int, d_model: int) -> int:
    return 2 * max(d_enc, d_model)


def _check_frames(E: np.ndarray, d_enc: int) -> None:
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] != d_enc:
        raise DimensionError(f"expected (L>=1, {d_enc}) encoder frames, got {E.shape}")


class CtcGuidedAdapter(Module):
    def __init__(
        self,
        d_enc: int,
        vocab_size: int,
        d_model: int,
        rng: Rng,
        hidden: int | None = None,
        tau: float = DEFAULT_TAU,
        renormalize: bool = False,
    ):
        super().__init__()
        if not 0.0 <= tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        hidden = hidden or default_hidden(d_enc, d_model)
        self.d_enc, self.V, self.D = d_enc, vocab_size, d_model
        self.tau = tau
        self.renormalize = renormalize
        self.out_proj = self.add_child("out_proj", FeedForward(d_enc, hidden, vocab_size + 1, rng))
        self.res_proj = self.add_child("res_proj", FeedForward(d_enc, hidden, d_model + 1, rng))

    @property
    def blank_index(self) -> int:
        return self.V

    def forward(self, E: np.ndarray, W_emb: np.ndarray) -> tuple[np.ndarray, CtcPosteriorSequence]:
        _check_frames(E, self.d_enc)
        if W_emb.shape != (self.V, self.D):
            raise DimensionError(f"W_emb must be {self.V}x{self.D}, got {W_emb.shape}")
        z = self.out_proj.forward(E)
        zb, znb = z[:, self.V], z[:, : self.V]
        p_nb = softmax(znb, axis=1)
        mask = p_nb >= self.tau
        w = p_nb * mask
        total = None
        if self.renormalize:
            total = w.sum(axis=1, keepdims=True)
            w = np.divide(w, total, out=np.zeros_like(w), where=total > 0)
        u = w @ W_emb
        rg = self.res_proj.forward(E)
        r = rg[:, : self.D]
        gate = sigmoid(rg[:, self.D])
        A = u + gate[:, None] * r
        self._cache = (W_emb, p_nb, mask, w, total, r, gate, zb.copy(), znb.copy())
        post = CtcPosteriorSequence(np.asarray(sigmoid(zb)).reshape(-1), p_nb)
        return A, post

    def ctc_logits(self) -> tuple[np.ndarray, np.ndarray]:
        """(blank logits (L,), non-blank logits (L, V)) from the cached forward."""
        if self._cache is None:
            raise StateError("no cached forward pass")
        return self._cache[7], self._cache[8]

    def backward(
        self, dA: np.ndarray, d_logit_blank=None, d_logit_nonblank=None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (dE, dW_emb); parameter gradients accumulate in place.

        ``d_logit_*`` carry the (already weighted) CTC loss gradient.
        """
        W_emb, p_nb, mask, w, total, r, gate, _, _ = self._pop_cache()
        dW_emb = w.T @ dA
        dw = dA @ W_emb.T
        if self.renormalize:
            safe = np.where(total > 0, total, 1.0)
            dw = (dw - (dw * w).sum(axis=1, keepdims=True)) / safe * (total > 0)
        dp = dw * mask
        dznb = p_nb * (dp - (dp * p_nb).sum(axis=1, keepdims=True))
        dz = np.zeros((dA.shape[0], self.V + 1))
        dz[:, : self.V] = dznb
        if d_logit_nonblank is not None:
            dz[:, : self.V] += d_logit_nonblank
        if d_logit_blank is not None:
            dz[:, self.V] += np.asarray(d_logit_blank).reshape(-1)
        dE = self.out_proj.backward(dz)
        drg = np.empty((dA.shape[0], self.D + 1))
        drg[:, : self.D] = dA * gate[:, None]
        drg[:, self.D] = (dA * r).sum(axis=1) * gate * (1.0 - gate)
        dE = dE + self.res_proj.backward(drg)
        return dE, dW_emb


class LinearAdapter(Module):
    """Baseline: two projections with a GELU, one output vector per frame."""

    def __init__(self, d_enc: int, d_model: int, rng: Rng, hidden: int | None = None):
        super().__init__()
        hidden = hidden or default_hidden(d_enc, d_model)
        self.d_enc, self.D = d_enc, d_model
        self.proj = self.add_child("proj", FeedForward(d_enc, hidden, d_model, rng))

    def forward(self, E: np.ndarray) -> np.ndarray:
        _check_frames(E, self.d_enc)
        return self.proj.forward(E)

    def backward(self, dA: np.ndarray) -> np.ndarray:
        return self.proj.backward(dA)
