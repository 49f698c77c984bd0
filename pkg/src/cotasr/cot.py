"""Reason-before-transcribe targets, prompts, greedy decoding and parsing.

Target layout (cot mode)::

    <CONTEXT> context </CONTEXT> <TRANSCRIPT> transcript </TRANSCRIPT>

Plain mode drops the context block.  In user-guided mode the caller's
context block is appended to the prompt, so decoding resumes at
``<TRANSCRIPT>``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import VocabError
from .model import CotAsrModel, Decoder, Example
from .vocab import DEFAULT_VOCAB, Vocabulary

INSTRUCTION = "transcribe:"


@dataclass
class TaggedOutput:
    context: str | None
    transcript: str
    well_formed: bool
    diagnostics: list[str] = field(default_factory=list)
    tokens: list[int] = field(default_factory=list)


def build_target(context: str | None, transcript: str, vocab: Vocabulary = DEFAULT_VOCAB) -> list[int]:
    """Token ids of the training target; an empty context gives the plain layout."""
    if not transcript:
        raise ValueError("transcript must be non-empty")
    bad = [c for c in (context or "") + transcript if c not in vocab.characters]
    if bad:
        raise VocabError(bad)
    body = [vocab.transcript_open] + vocab.encode(transcript) + [vocab.transcript_close]
    if not context:
        return body
    return [vocab.context_open] + vocab.encode(context) + [vocab.context_close] + body


def parse_output(tokens: Sequence[int], vocab: Vocabulary = DEFAULT_VOCAB,
                 expect_context: bool | None = None) -> TaggedOutput:
    """Split generated ids into context and transcript, salvaging malformed output.

    ``expect_context`` True demands the full layout, False the transcript
    block alone; None accepts whichever layout the output starts with.
    Missing ``<TRANSCRIPT>`` yields an empty transcript; a missing
    ``</TRANSCRIPT>`` keeps everything after the opening tag.
    """
    toks = list(tokens)
    co, cc, to, tc = vocab.tag_ids
    name = vocab.tokens
    diag: list[str] = []
    context = None
    if expect_context is None:
        expect_context = bool(toks) and toks[0] == co

    pos = 0
    if expect_context:
        if toks[:1] == [co]:
            pos = 1
        else:
            diag.append(f"missing {name[co]}")
        end = next((i for i in range(pos, len(toks)) if toks[i] < 4), len(toks))
        context = vocab.text_only(toks[pos:end])
        if end < len(toks) and toks[end] == cc:
            pos = end + 1
        else:
            diag.append(f"missing {name[cc]}")
            pos = end
    elif co in toks:
        diag.append(f"unexpected {name[co]}")

    transcript = ""
    if to in toks[pos:]:
        t_open = toks.index(to, pos)
        if t_open != pos:
            diag.append(f"unexpected tokens before {name[to]}")
        body = toks[t_open + 1:]
        if tc in body:
            close = body.index(tc)
            if close != len(body) - 1:
                diag.append(f"trailing tokens after {name[tc]}")
            body = body[:close]
        if any(t < 4 for t in body):
            diag.append("tag inside transcript")
        transcript = vocab.text_only(body)
    else:
        diag.append(f"missing {name[to]}")
    if tc not in toks:
        diag.append("truncated")
    return TaggedOutput(context, transcript, not diag, diag, toks)


def instruction_ids(vocab: Vocabulary = DEFAULT_VOCAB, instruction: str = INSTRUCTION) -> list[int]:
    return vocab.encode(instruction)


def prompt_text_ids(user_context: str | None, vocab: Vocabulary = DEFAULT_VOCAB,
                    instruction: str = INSTRUCTION) -> list[int]:
    ids = instruction_ids(vocab, instruction)
    if user_context is not None:
        ids += [vocab.context_open] + vocab.encode(user_context) + [vocab.context_close]
    return ids


def assemble_prompt(A: np.ndarray, decoder: Decoder, instruction: str = INSTRUCTION,
                    user_context: str | None = None, vocab: Vocabulary = DEFAULT_VOCAB) -> np.ndarray:
    """[A; embed(I)] or, with a user context, [A; embed(I); embed(<CONTEXT> ctx </CONTEXT>)]."""
    if A.ndim != 2 or A.shape[0] < 1:
        raise ValueError("speech prompt must be non-empty")
    ids = prompt_text_ids(user_context, vocab, instruction)
    return np.concatenate([A, decoder.embed(ids)], axis=0)


def generate_one_pass(prompt: np.ndarray, decoder: Decoder, max_len: int = 160,
                      vocab: Vocabulary = DEFAULT_VOCAB, expect_context: bool | None = None) -> TaggedOutput:
    """Greedy decoding until ``</TRANSCRIPT>`` or ``max_len`` emitted tokens.

    Each step re-runs the decoder on [prompt; generated so far]; ties in the
    argmax go to the lowest token id.
    """
    if max_len < 4:
        raise ValueError("max_len must be >= 4")
    out: list[int] = []
    x = prompt
    while len(out) < max_len:
        logits = decoder.next_token_logits(x)
        tok = int(np.argmax(logits))
        out.append(tok)
        if tok == vocab.transcript_close:
            break
        x = np.concatenate([x, decoder.embed([tok])], axis=0)
    return parse_output(out, vocab, expect_context)


def make_example(utt, mode: str, vocab: Vocabulary = DEFAULT_VOCAB) -> Example:
    """Teacher-forced sequence for ``mode`` in {"cot", "plain"}."""
    if mode not in ("cot", "plain"):
        raise ValueError(f"unknown mode {mode!r}")
    ctx = utt.context if mode == "cot" else None
    return Example(
        features=utt.features,
        prefix=instruction_ids(vocab),
        target=build_target(ctx, utt.transcript, vocab),
        ctc_target=vocab.encode(utt.transcript),
        uid=utt.id,
    )


FRAME_SECONDS = 0.01  # synthetic feature hop


@dataclass
class TranscriptionRecord:
    id: str
    context: str | None
    transcript: str
    well_formed: bool
    tokens: int
    decode_seconds: float
    audio_seconds: float
    mode: str
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id, "mode": self.mode, "context": self.context, "transcript": self.transcript,
            "well_formed": self.well_formed, "tokens": self.tokens,
            "decode_seconds": self.decode_seconds, "audio_seconds": self.audio_seconds,
            "diagnostics": self.diagnostics,
        }


def transcribe(model: CotAsrModel, features: np.ndarray, mode: str = "self",
               user_context: str | None = None, max_len: int = 160, uid: str = "",
               vocab: Vocabulary = DEFAULT_VOCAB) -> TranscriptionRecord:
    """One-pass decoding in ``self`` (reason then transcribe), ``user`` or ``plain`` mode."""
    if mode not in ("self", "user", "plain"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "user" and user_context is None:
        raise ValueError("user mode needs a context")
    t0 = time.perf_counter()
    A = model.speech_prompt(features)
    prompt = assemble_prompt(A, model.decoder, user_context=user_context if mode == "user" else None,
                             vocab=vocab)
    out = generate_one_pass(prompt, model.decoder, max_len, vocab, expect_context=(mode == "self"))
    dt = time.perf_counter() - t0
    context = user_context if mode == "user" else out.context
    return TranscriptionRecord(uid, context, out.transcript, out.well_formed, len(out.tokens),
                               dt, features.shape[0] * FRAME_SECONDS, mode, out.diagnostics)
