"""Decode-and-score helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cot import TranscriptionRecord, transcribe
from .metrics import UndefinedMetricError, eer, wer
from .model import CotAsrModel
from .synthdata import AnnotatedUtterance, corrupt_context

STANDARD_TRAIN = 2000
STANDARD_HELDOUT = 200
TRAIN_SEED = 1
HELDOUT_SEED = 2
HOMOPHONE_SEED = 3


@dataclass
class EvalResult:
    records: list[TranscriptionRecord]
    wer: float
    eer: float | None
    format_validity: float
    rtf: float


def decode_set(model: CotAsrModel, corpus: list[AnnotatedUtterance], mode: str,
               contexts: list[str] | None = None, max_len: int = 160) -> list[TranscriptionRecord]:
    out = []
    for k, u in enumerate(corpus):
        ctx = contexts[k] if contexts is not None else None
        out.append(transcribe(model, u.features, mode, ctx, max_len, u.id))
    return out


def score_records(corpus: list[AnnotatedUtterance], records: list[TranscriptionRecord]) -> EvalResult:
    refs = [u.transcript for u in corpus]
    hyps = [r.transcript for r in records]
    try:
        e = eer(refs, [u.entities for u in corpus], hyps)
    except UndefinedMetricError:
        e = None
    dec = sum(r.decode_seconds for r in records)
    aud = sum(r.audio_seconds for r in records)
    return EvalResult(records, wer(refs, hyps), e,
                      float(np.mean([r.well_formed for r in records])), dec / aud if aud else 0.0)


def evaluate(model: CotAsrModel, corpus: list[AnnotatedUtterance], mode: str,
             contexts: list[str] | None = None, max_len: int = 160) -> EvalResult:
    return score_records(corpus, decode_set(model, corpus, mode, contexts, max_len))


def oracle_contexts(corpus: list[AnnotatedUtterance]) -> list[str]:
    return [u.context for u in corpus]


def corrupted_contexts(corpus: list[AnnotatedUtterance], rate: float, seed: int) -> list[str]:
    return [corrupt_context(u.context, rate, seed * 1_000_003 + k) for k, u in enumerate(corpus)]
