"""Encoder, causal LM decoder, losses and checkpoints.

The decoder's output head is tied to its input embedding table ``emb``;
the CTC-guided adapter reads the same table, so ``emb`` receives gradient
from the LM input side, the tied head, and the adapter's weighted sum.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .adapter import CtcGuidedAdapter, LinearAdapter
from .ctc import ctc_loss_and_grad
from .errors import CheckpointError, DimensionError, EmptyTargetError, InputTooShortError
from .layers import FeedForward, Linear, Module, TransformerBlock
from .numerics import Rng, log_softmax, softmax


@dataclass
class ModelConfig:
    vocab_size: int = 36
    d_feat: int = 16
    d_enc: int = 32
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    window: int = 3
    stride: int = 2
    enc_blocks: int = 2
    adapter: str = "ctc"  # "ctc" or "linear"
    tau: float = 0.05
    renormalize: bool = False
    adapter_hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.adapter not in ("ctc", "linear"):
            raise ValueError(f"unknown adapter kind {self.adapter!r}")
        if self.stride < 1 or self.window < 1:
            raise ValueError("stride and window must be >= 1")


class Encoder(Module):
    """Strided windowed linear map followed by residual GELU blocks."""

    def __init__(self, d_feat: int, d_enc: int, window: int, stride: int, n_blocks: int, rng: Rng):
        super().__init__()
        self.d_feat, self.d_enc, self.window, self.stride = d_feat, d_enc, window, stride
        self.frame = self.add_child("frame", Linear(window * d_feat, d_enc, rng))
        self.blocks = [
            self.add_child(f"block{i}", FeedForward(d_enc, 2 * d_enc, d_enc, rng, out_gain=0.5))
            for i in range(n_blocks)
        ]

    def output_length(self, n_frames: int) -> int:
        return math.ceil(n_frames / self.stride)

    def forward(self, features: np.ndarray) -> np.ndarray:
        n = features.shape[0]
        if features.ndim != 2 or features.shape[1] != self.d_feat:
            raise DimensionError(f"expected (*, {self.d_feat}) features, got {features.shape}")
        if n < self.window:
            raise InputTooShortError(f"{n} frames is shorter than the window of {self.window}")
        L = self.output_length(n)
        idx = np.arange(L)[:, None] * self.stride + np.arange(self.window)[None, :]
        padded = np.zeros((idx.max() + 1, self.d_feat))
        padded[:n] = features
        x = self.frame.forward(padded[idx].reshape(L, -1))
        for blk in self.blocks:
            x = x + blk.forward(x)
        self._cache = (n, idx, padded.shape[0])
        return x

    def backward(self, dE: np.ndarray) -> np.ndarray:
        n, idx, n_pad = self._pop_cache()
        dx = dE
        for blk in reversed(self.blocks):
            dx = dx + blk.backward(dx)
        dwin = self.frame.backward(dx).reshape(idx.shape[0], self.window, self.d_feat)
        dpad = np.zeros((n_pad, self.d_feat))
        np.add.at(dpad, idx, dwin)
        return dpad[:n]


class Decoder(Module):
    """Causal transformer LM with a tied output head and no final norm."""

    def __init__(self, vocab_size: int, d_model: int, n_blocks: int, n_heads: int, rng: Rng):
        super().__init__()
        self.V, self.D = vocab_size, d_model
        self.add_param("emb", rng.normal((vocab_size, d_model), scale=1.0 / math.sqrt(d_model)))
        gain = 1.0 / math.sqrt(2 * max(n_blocks, 1))
        self.blocks = [
            self.add_child(f"block{i}", TransformerBlock(d_model, n_heads, 4 * d_model, rng, gain))
            for i in range(n_blocks)
        ]

    @property
    def W_emb(self) -> np.ndarray:
        return self.params["emb"]

    def embed(self, ids: Sequence[int]) -> np.ndarray:
        return self.params["emb"][np.asarray(ids, dtype=np.int64)].reshape(-1, self.D)

    def embed_backward(self, ids: Sequence[int], d: np.ndarray) -> None:
        np.add.at(self.grads["emb"], np.asarray(ids, dtype=np.int64), d)

    def forward(self, x: np.ndarray, dropout: float = 0.0, rng: Rng | None = None) -> np.ndarray:
        """Logits for every position of the (n, D) input sequence."""
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != self.D:
            raise DimensionError(f"expected non-empty (n, {self.D}) prefix, got {x.shape}")
        h = x
        for blk in self.blocks:
            h = blk.forward(h, dropout, rng)
        self._cache = h
        return h @ self.params["emb"].T

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        h = self._pop_cache()
        self.grads["emb"] += dlogits.T @ h
        dh = dlogits @ self.params["emb"]
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        return dh

    def next_token_logits(self, prefix: np.ndarray) -> np.ndarray:
        logits = self.forward(prefix)
        self._cache = None
        return logits[-1]


def lm_next_token_logits(prefix: np.ndarray, decoder: Decoder) -> np.ndarray:
    return decoder.next_token_logits(prefix)


def ce_loss_and_grad(logits: np.ndarray, targets: Sequence[int], mask=None) -> tuple[float, np.ndarray]:
    """Summed token cross-entropy over masked positions and its logit gradient."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.ones(len(targets), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if logits.shape[0] != len(targets) or len(mask) != len(targets):
        raise DimensionError("logits, targets and mask must cover the same positions")
    if not mask.any():
        raise EmptyTargetError("CE mask selects no positions")
    rows = np.nonzero(mask)[0]
    logp = log_softmax(logits[rows], axis=1)
    loss = -float(logp[np.arange(len(rows)), targets[rows]].sum())
    grad = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(len(rows)), targets[rows]] -= 1.0
    grad[rows] = g
    return loss, grad


def ce_loss(logits: np.ndarray, targets: Sequence[int], mask=None) -> float:
    return ce_loss_and_grad(logits, targets, mask)[0]


def joint_loss(ce: float, ctc: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ce + lam * ctc


@dataclass
class Example:
    """One teacher-forced training sequence."""

    features: np.ndarray
    prefix: list[int]  # text prompt ids after the speech prompt
    target: list[int]  # y: ids the LM must emit
    ctc_target: list[int]
    uid: str = ""


class CotAsrModel(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = Rng(config.seed)
        c = config
        self.encoder = self.add_child(
            "encoder", Encoder(c.d_feat, c.d_enc, c.window, c.stride, c.enc_blocks, rng.child(1))
        )
        if c.adapter == "ctc":
            adapter = CtcGuidedAdapter(
                c.d_enc, c.vocab_size, c.d_model, rng.child(2), c.adapter_hidden, c.tau, c.renormalize
            )
        else:
            adapter = LinearAdapter(c.d_enc, c.d_model, rng.child(2), c.adapter_hidden)
        self.adapter = self.add_child("adapter", adapter)
        self.decoder = self.add_child(
            "decoder", Decoder(c.vocab_size, c.d_model, c.n_blocks, c.n_heads, rng.child(3))
        )

    @property
    def has_ctc(self) -> bool:
        return isinstance(self.adapter, CtcGuidedAdapter)

    def speech_prompt(self, features: np.ndarray) -> np.ndarray:
        """A: one LM-space vector per encoder frame (no caches retained)."""
        E = self.encoder.forward(features)
        if self.has_ctc:
            A, _ = self.adapter.forward(E, self.decoder.W_emb)
        else:
            A = self.adapter.forward(E)
        self.clear_caches()
        return A

    def clear_caches(self) -> None:
        stack: list[Module] = [self]
        while stack:
            m = stack.pop()
            m._cache = None
            stack.extend(m.children.values())

    def loss(self, ex: Example, lam: float = 0.5, backward: bool = True,
             text_in: Sequence[int] | None = None, dropout: float = 0.0, rng: Rng | None = None) -> dict:
        """Joint loss on one example; accumulates gradients when ``backward``.

        ``text_in`` replaces the teacher-forced decoder inputs (same length as
        prefix + target[:-1]); the loss targets are unchanged.  ``dropout``
        applies to the decoder's residual branches and needs ``rng``.
        """
        dec = self.decoder
        E = self.encoder.forward(ex.features)
        ctc = 0.0
        if self.has_ctc:
            A, _ = self.adapter.forward(E, dec.W_emb)
            zb, znb = self.adapter.ctc_logits()
            if lam > 0:
                ctc, dzb, dznb = ctc_loss_and_grad(zb, znb, ex.ctc_target)
        else:
            A = self.adapter.forward(E)
        n_in = len(ex.prefix) + len(ex.target) - 1
        if text_in is None:
            text_in = list(ex.prefix) + list(ex.target[:-1])
        elif len(text_in) != n_in:
            raise DimensionError(f"text_in must hold {n_in} ids, got {len(text_in)}")
        x = np.concatenate([A, dec.embed(text_in)], axis=0)
        logits = dec.forward(x, dropout, rng)
        start = A.shape[0] + len(ex.prefix) - 1
        ce, dlog_sel = ce_loss_and_grad(logits[start:start + len(ex.target)], ex.target)
        total = joint_loss(ce, ctc, lam if self.has_ctc else 0.0)
        out = {"loss": total, "ce": ce, "ctc": ctc, "tokens": len(ex.target)}
        if not backward:
            self.clear_caches()
            return out
        dlogits = np.zeros_like(logits)
        dlogits[start:start + len(ex.target)] = dlog_sel
        dx = dec.backward(dlogits)
        L = A.shape[0]
        dec.embed_backward(text_in, dx[L:])
        if self.has_ctc:
            if lam > 0:
                dE, dW = self.adapter.backward(dx[:L], lam * dzb, lam * dznb)
            else:
                dE, dW = self.adapter.backward(dx[:L])
            dec.grads["emb"] += dW
        else:
            dE = self.adapter.backward(dx[:L])
        self.encoder.backward(dE)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise CheckpointError(f"parameter names differ: {missing[:5]}")
        for k, v in state.items():
            if own[k].shape != v.shape:
                raise CheckpointError(f"shape mismatch for {k}: {v.shape} vs {own[k].shape}")
        for k, v in state.items():
            own[k][...] = v


# --- checkpoint file --------------------------------------------------------
# magic | u32 version | u32 len + JSON header | u32 n_tensors |
#   per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols <f8

MAGIC = b"COTASRCK"
CHECKPOINT_VERSION = 1


def checkpoint_save(path: str | os.PathLike, model: CotAsrModel, extra: dict | None = None) -> None:
    header = json.dumps({"model": asdict(model.config), "extra": extra or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(header)), header]
    tensors = sorted(model.named_parameters())
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode()
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<II", *arr.shape)]
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def checkpoint_read(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint fully into memory: (header, tensors)."""
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic bytes")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt header") from exc
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rows, cols = r.u32(), r.u32()
        arr = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        tensors[name] = arr.astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return header, tensors


def checkpoint_load(path: str | os.PathLike) -> CotAsrModel:
    header, tensors = checkpoint_read(path)
    try:
        config = ModelConfig(**header["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad model config in header: {exc}") from exc
    model = CotAsrModel(config)
    model.load_state_dict(tensors)
    model.checkpoint_extra = header.get("extra", {})
    return model
