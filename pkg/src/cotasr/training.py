"""AdamW, warmup/linear-decay schedule and the two-stage training loop.

Stage 1 updates only the adapter; encoder and decoder (including the shared
embedding table) stay frozen.  Stage 2 updates everything.  Each stage gets
a fresh optimizer and its own warmup-then-linear-decay schedule.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .cot import make_example
from .errors import ConfigError, NumericalError, TrainingDivergedError
from .model import CotAsrModel, Example, ModelConfig
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 0.5
    stage1_steps: int = 300
    stage2_steps: int = 3000
    peak_lr: float = 5e-3
    warmup_steps: int = 100
    batch_size: int = 8
    seed: int = 42
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    loss_norm: str = "token"  # "token": divide by target tokens; "sum": raw summed loss
    feature_noise: float = 0.2  # extra Gaussian noise on input features, redrawn every step
    token_replace: float = 0.0  # probability of swapping a teacher-forced input id for a random one
    dropout: float = 0.1  # decoder residual-branch dropout

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.warmup_steps > self.stage1_steps + self.stage2_steps:
            raise ConfigError("warmup_steps exceeds total steps")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss_norm not in ("token", "sum"):
            raise ConfigError(f"unknown loss_norm {self.loss_norm!r}")
        if self.feature_noise < 0 or not 0.0 <= self.token_replace < 1.0 or not 0.0 <= self.dropout < 1.0:
            raise ConfigError("feature_noise must be >= 0, token_replace and dropout in [0, 1)")


def lr_at(step: int, total: int, warmup: int, peak: float) -> float:
    """Linear warmup over ``warmup`` steps, then linear decay to zero at ``total``."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    span = max(total - warmup, 1)
    return peak * max(0.0, (total - step) / span)


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = params
        self.b1, self.b2, self.eps, self.wd = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(self.params):
            p, g = self.params[k], grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd and p.shape[0] > 1:  # no decay on (1, n) bias / norm rows
                p -= lr * self.wd * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepRecord:
    step: int
    stage: int
    loss: float
    ce: float
    ctc: float
    lr: float


@dataclass
class TrainResult:
    model: CotAsrModel
    curve: list[StepRecord] = field(default_factory=list)
    seconds: float = 0.0

    def losses(self, stage: int | None = None) -> np.ndarray:
        return np.array([r.loss for r in self.curve if stage is None or r.stage == stage])


def moving_average(x: Sequence[float], window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return np.array([x.mean()]) if len(x) else x
    c = np.cumsum(np.insert(x, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def _batches(n: int, batch_size: int, rng: Rng) -> Iterable[np.ndarray]:
    epoch = 0
    while True:
        order = rng.child(epoch).permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i:i + batch_size]
        epoch += 1


def augment(ex: Example, cfg: TrainConfig, rng: Rng, vocab_size: int) -> tuple[Example, list[int] | None]:
    """Per-step input perturbation; the targets are never touched."""
    if cfg.feature_noise > 0:
        ex = replace(ex, features=ex.features + rng.normal(ex.features.shape, scale=cfg.feature_noise))
    text_in = None
    if cfg.token_replace > 0:
        ids = np.array(list(ex.prefix) + list(ex.target[:-1]))
        # the prompt prefix stays intact; only generated-side inputs are perturbed
        hit = rng.random(len(ids)) < cfg.token_replace
        hit[: len(ex.prefix)] = False
        ids[hit] = rng.integers(0, vocab_size, int(hit.sum()))
        text_in = [int(i) for i in ids]
    return ex, text_in


def run_stage(model: CotAsrModel, examples: list[Example], cfg: TrainConfig, stage: int, steps: int,
              trainable: Callable[[str], bool], curve: list[StepRecord],
              on_step: Callable[[StepRecord], None] | None = None) -> None:
    if steps <= 0:
        return
    named = dict(model.named_parameters())
    grads = dict(model.named_grads())
    params = {k: v for k, v in named.items() if trainable(k)}
    opt = AdamW(params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    batches = _batches(len(examples), min(cfg.batch_size, len(examples)), Rng(cfg.seed).child(stage))
    warmup = min(cfg.warmup_steps, steps)
    lam = cfg.lam if model.has_ctc else 0.0
    base = len(curve)
    aug_rng = Rng(cfg.seed).child(stage, 1)
    vocab_size = model.config.vocab_size
    for step in range(steps):
        model.zero_grad()
        tot = ce = ctc = 0.0
        idx = next(batches)
        for k, i in enumerate(idx):
            rng = aug_rng.child(step, k)
            ex, text_in = augment(examples[i], cfg, rng, vocab_size)
            try:
                out = model.loss(ex, lam, backward=True, text_in=text_in, dropout=cfg.dropout, rng=rng)
            except NumericalError:
                curve.append(StepRecord(base + step, stage, math.inf, math.nan, math.inf, 0.0))
                raise TrainingDivergedError(base + step, math.inf) from None
            tot += out["loss"]
            ce += out["ce"]
            ctc += out["ctc"]
        n = len(idx)
        rec = StepRecord(base + step, stage, tot / n, ce / n, ctc / n, lr_at(step, steps, warmup, cfg.peak_lr))
        if not math.isfinite(rec.loss):
            curve.append(rec)
            raise TrainingDivergedError(rec.step, rec.loss)
        scale = 1.0 / n
        if cfg.loss_norm == "token":
            scale /= np.mean([len(examples[i].target) for i in idx])
        sub = {k: grads[k] * scale for k in params}
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in sub.values()))
        if not math.isfinite(norm):
            curve.append(rec)
            raise TrainingDivergedError(rec.step, norm)
        if cfg.clip_norm and norm > cfg.clip_norm:
            for g in sub.values():
                g *= cfg.clip_norm / norm
        opt.step(sub, rec.lr)
        curve.append(rec)
        if not all(np.isfinite(v).all() for v in params.values()):
            raise TrainingDivergedError(rec.step, float("nan"))
        if on_step:
            on_step(rec)


def examples_for(corpus, mode: str) -> list[Example]:
    return [make_example(u, mode) for u in corpus]


def train_two_stage(corpus, config: TrainConfig, mode: str = "cot", adapter_kind: str = "ctc",
                    model_config: ModelConfig | None = None,
                    on_step: Callable[[StepRecord], None] | None = None) -> TrainResult:
    """Adapter-only stage followed by full fine-tuning; deterministic given the seeds."""
    if not corpus:
        raise ConfigError("empty training corpus")
    if mode not in ("cot", "plain"):
        raise ConfigError(f"unknown mode {mode!r}")
    kind = {"ctc": "ctc", "ctc_guided": "ctc", "linear": "linear"}.get(adapter_kind)
    if kind is None:
        raise ConfigError(f"unknown adapter kind {adapter_kind!r}")
    mc = model_config or ModelConfig()
    mc = ModelConfig(**{**asdict(mc), "adapter": kind})
    model = CotAsrModel(mc)
    examples = examples_for(corpus, mode)
    curve: list[StepRecord] = []
    t0 = time.perf_counter()
    run_stage(model, examples, config, 1, config.stage1_steps,
              lambda k: k.startswith("adapter."), curve, on_step)
    run_stage(model, examples, config, 2, config.stage2_steps, lambda k: True, curve, on_step)
    return TrainResult(model, curve, time.perf_counter() - t0)
