"""Finite-difference checks of every hand-written backward pass, one suite per component.

Each suite draws ``n`` random micro-instances and returns the worst relative
error it saw.  ``flip`` negates the analytic gradient of the named component;
it exists so callers can confirm that a broken backward pass is caught.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapter import CtcGuidedAdapter
from .ctc import ctc_loss_and_grad, min_frames
from .model import CotAsrModel, Decoder, Encoder, Example, ModelConfig, ce_loss_and_grad
from .numerics import Rng, grad_check

COMPONENTS = ("adapter", "ctc", "ce", "encoder", "decoder", "joint")
MICRO = dict(vocab_size=5, d_feat=3, d_enc=4, d_model=8, n_blocks=1, n_heads=2,
             window=2, stride=2, enc_blocks=1)


@dataclass
class CheckRow:
    component: str
    instances: int
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _module_check(module, objective, sign: float, rng: np.random.Generator, coords: int = 6) -> float:
    params, grads = dict(module.named_parameters()), dict(module.named_grads())
    worst = 0.0
    for name, p in params.items():
        def f(x):
            p[...] = x.reshape(p.shape)
            module.zero_grad()
            return objective(), sign * grads[name]

        x0 = p.copy()
        sel = rng.choice(p.size, size=min(coords, p.size), replace=False)
        worst = max(worst, grad_check(f, x0, coords=sel))
        p[...] = x0
    return worst


def _adapter(seed: int, sign: float) -> float:
    rng = Rng(seed)
    ad = CtcGuidedAdapter(5, 3, 4, rng.child(0), tau=0.05)
    E, W = rng.normal((3, 5)), rng.normal((3, 4))
    up, cup = rng.normal((3, 4)), rng.normal((3, 4))

    def run(E, W):
        A, _ = ad.forward(E, W)
        zb, znb = ad.ctc_logits()
        val = float(np.sum(A * up) + np.sum(zb * cup[:, -1]) + np.sum(znb * cup[:, :-1]))
        ad.zero_grad()
        dE, dW = ad.backward(up, cup[:, -1], cup[:, :-1])
        return val, sign * dE, sign * dW

    worst = grad_check(lambda x: run(x.reshape(E.shape), W)[:2], E)
    worst = max(worst, grad_check(lambda x: run(E, x.reshape(W.shape))[::2], W))
    return max(worst, _module_check(ad, lambda: run(E, W)[0], sign, np.random.default_rng(seed)))


def _ctc(seed: int, sign: float) -> float:
    rng = np.random.default_rng(seed)
    while True:
        T, V = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        tgt = list(rng.integers(0, V, int(rng.integers(0, 4))))
        if min_frames(tgt) <= T:
            break

    def f(x):
        loss, gb, gn = ctc_loss_and_grad(x[:T], x[T:].reshape(T, V), tgt)
        return loss, sign * np.concatenate([gb, gn.ravel()])

    return grad_check(f, rng.normal(size=T + T * V) * 1.5)


def _ce(seed: int, sign: float) -> float:
    rng = np.random.default_rng(seed)
    n, v = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    tgt = rng.integers(0, v, n)
    mask = rng.random(n) < 0.7
    mask[0] = True

    def f(x):
        loss, g = ce_loss_and_grad(x.reshape(n, v), tgt, mask)
        return loss, sign * g

    return grad_check(f, rng.normal(size=(n, v)) * 2.0)


def _encoder(seed: int, sign: float) -> float:
    rng = Rng(seed)
    enc = Encoder(3, 4, 3, 2, 2, rng.child(0))
    x = rng.normal((7, 3))
    up = rng.normal((4, 4))

    def obj():
        out = float(np.sum(enc.forward(x) * up))
        enc.backward(up)
        return out

    def fx(v):
        out = float(np.sum(enc.forward(v.reshape(x.shape)) * up))
        return out, sign * enc.backward(up)

    return max(grad_check(fx, x), _module_check(enc, obj, sign, np.random.default_rng(seed)))


def _decoder(seed: int, sign: float) -> float:
    rng = Rng(seed)
    dec = Decoder(5, 8, 1, 2, rng.child(0))
    x, up = rng.normal((4, 8)), rng.normal((4, 5))

    def obj():
        out = float(np.sum(dec.forward(x) * up))
        dec.backward(up)
        return out

    def fx(v):
        out = float(np.sum(dec.forward(v.reshape(x.shape)) * up))
        return out, sign * dec.backward(up)

    return max(grad_check(fx, x), _module_check(dec, obj, sign, np.random.default_rng(seed)))


def _joint(seed: int, sign: float) -> float:
    adapter = "ctc" if seed % 2 == 0 else "linear"
    model = CotAsrModel(ModelConfig(**MICRO, adapter=adapter, seed=seed))
    rng = Rng(seed + 1)
    ex = Example(rng.normal((7, 3)), [1], [2, 0, 3, 4], [1, 2])
    return _module_check(model, lambda: model.loss(ex, 0.5)["loss"], sign,
                         np.random.default_rng(seed), coords=3)


SUITES: dict[str, Callable[[int, float], float]] = {
    "adapter": _adapter, "ctc": _ctc, "ce": _ce,
    "encoder": _encoder, "decoder": _decoder, "joint": _joint,
}


def run_gradcheck(components=COMPONENTS, n: int = 50, tolerance: float = 1e-4,
                  seed: int = 0, flip: str | None = None) -> list[CheckRow]:
    rows = []
    for comp in components:
        if comp not in SUITES:
            raise KeyError(f"unknown component {comp!r}")
        sign = -1.0 if comp == flip else 1.0
        t0 = time.perf_counter()
        worst = max(SUITES[comp](seed * 100_003 + k, sign) for k in range(n))
        rows.append(CheckRow(comp, n, worst, tolerance, time.perf_counter() - t0))
    return rows


def format_table(rows: list[CheckRow]) -> str:
    lines = [f"{'component':<10} {'n':>4} {'max_rel_err':>12} {'tol':>8}  result"]
    for r in rows:
        lines.append(f"{r.component:<10} {r.instances:>4} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
