"""WER, entity error rate and biased/unbiased WER on Levenshtein alignments.

All scoring case-folds words first.  Rates are pooled over a set: summed
errors over summed reference words, never a mean of per-utterance rates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError, UndefinedMetricError

MATCH, SUB, DEL, INS = "match", "substitute", "delete", "insert"
REPORT_SCHEMA_VERSION = 1
UNDEFINED = None  # marker for a metric with an empty denominator


@dataclass
class AlignmentResult:
    ops: list[tuple[str, int | None, int | None]]  # (op, ref index, hyp index)
    S: int
    I: int
    D: int
    R: int

    @property
    def errors(self) -> int:
        return self.S + self.I + self.D

    @property
    def wer(self) -> float:
        if self.R == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.R

    def matched_ref(self) -> set[int]:
        return {r for op, r, _ in self.ops if op == MATCH}


def _words(x) -> list[str]:
    if isinstance(x, str):
        x = x.split()
    return [w.lower() for w in x]


def align(ref, hyp) -> AlignmentResult:
    """Minimum-edit alignment; backtrace prefers match, then substitute, delete, insert."""
    r, h = _words(ref), _words(hyp)
    n, m = len(r), len(h)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1][j - 1] + (r[i - 1] != h[j - 1])
            cost[i][j] = min(diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and r[i - 1] == h[j - 1] and cost[i][j] == cost[i - 1][j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and j and cost[i][j] == cost[i - 1][j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and cost[i][j] == cost[i - 1][j] + 1:
            ops.append((DEL, i - 1, None))
            i -= 1
        else:
            ops.append((INS, None, j - 1))
            j -= 1
    ops.reverse()
    count = lambda k: sum(1 for o in ops if o[0] == k)
    return AlignmentResult(ops, count(SUB), count(INS), count(DEL), n)


def _check_lengths(refs, hyps) -> None:
    if len(refs) != len(hyps):
        raise InputError(f"{len(refs)} references but {len(hyps)} hypotheses")


def wer(refs: Sequence, hyps: Sequence) -> float:
    """Pooled WER: sum(S+I+D) / sum(R)."""
    _check_lengths(refs, hyps)
    errs = tot = 0
    for r, h in zip(refs, hyps):
        a = align(r, h)
        errs += a.errors
        tot += a.R
    if tot == 0:
        raise UndefinedMetricError("no reference words")
    return errs / tot


def eer(refs: Sequence, spans: Sequence[Iterable[tuple[int, int]]], hyps: Sequence) -> float:
    """1 - entity recall; an entity counts only if every one of its words aligns as a match.

    ``spans[k]`` lists ``(start, end)`` word ranges (end exclusive) of the
    entities in ``refs[k]``; extra tuple fields are ignored.
    """
    _check_lengths(refs, hyps)
    if len(spans) != len(refs):
        raise InputError("one span list per reference required")
    total = hit = 0
    for r, sp, h in zip(refs, spans, hyps):
        n_ref = len(_words(r))
        matched = align(r, h).matched_ref()
        for s in sp:
            start, end = int(s[0]), int(s[1])
            if not 0 <= start < end <= n_ref:
                raise InputError(f"entity span {start}:{end} outside {n_ref} reference words")
            total += 1
            hit += all(k in matched for k in range(start, end))
    if total == 0:
        raise UndefinedMetricError("no entities in the reference set")
    return 1.0 - hit / total


@dataclass
class BiasList:
    words: frozenset[str]

    @classmethod
    def of(cls, words: Iterable[str]) -> "BiasList":
        return cls(frozenset(w.strip().lower() for w in words if w.strip()))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "BiasList":
        return cls.of(Path(path).read_text().splitlines())

    def __contains__(self, w: str) -> bool:
        return w.lower() in self.words


@dataclass
class BiasedWer:
    wer: float
    b_wer: float | None
    u_wer: float | None
    b_errors: int
    u_errors: int
    b_ref: int
    u_ref: int


def biased_wer(refs: Sequence, hyps: Sequence, bias: BiasList) -> BiasedWer:
    """WER split by bias-list membership.

    Substitutions and deletions go to the side of their reference word;
    insertions go to B-WER when the inserted word is bias-listed, else to U-WER.
    """
    _check_lengths(refs, hyps)
    be = ue = br = ur = errs = 0
    for r, h in zip(refs, hyps):
        rw, hw = _words(r), _words(h)
        a = align(rw, hw)
        errs += a.errors
        for op, ri, hi in a.ops:
            if op == INS:
                if hw[hi] in bias:
                    be += 1
                else:
                    ue += 1
            elif op in (SUB, DEL):
                if rw[ri] in bias:
                    be += 1
                else:
                    ue += 1
        nb = sum(1 for w in rw if w in bias)
        br += nb
        ur += len(rw) - nb
    if br + ur == 0:
        raise UndefinedMetricError("no reference words")
    return BiasedWer(
        errs / (br + ur),
        be / br if br else UNDEFINED,
        ue / ur if ur else UNDEFINED,
        be, ue, br, ur,
    )


# --- reports ----------------------------------------------------------------

def _fmt(v) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}" if not isinstance(v, str) else v


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass
class Report:
    """``results[system][test_set][metric]``; metrics are fractions, RTF a ratio."""

    results: dict[str, dict[str, dict[str, float | None]]]
    metrics: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.results:
            raise InputError("report needs at least one system")
        if not self.metrics:
            seen: list[str] = []
            for sets in self.results.values():
                for vals in sets.values():
                    seen += [k for k in vals if k not in seen]
            order = ["WER", "EER", "B-WER", "U-WER", "RTF"]
            self.metrics = sorted(seen, key=lambda k: (order.index(k) if k in order else len(order), k))

    @property
    def systems(self) -> list[str]:
        return list(self.results)

    @property
    def sets(self) -> list[str]:
        out: list[str] = []
        for s in self.results.values():
            out += [k for k in s if k not in out]
        return out

    def average(self, system: str, metric: str):
        """Unweighted mean over test sets."""
        return _mean([self.results[system].get(s, {}).get(metric) for s in self.sets])

    def table(self) -> str:
        cols = [f"{sys}:{m}" for sys in self.systems for m in self.metrics]
        rows = [["set"] + cols]
        for s in self.sets + ["Average"]:
            row = [s]
            for sys in self.systems:
                for m in self.metrics:
                    v = self.average(sys, m) if s == "Average" else self.results[sys].get(s, {}).get(m)
                    row.append(f"{v:.3f}" if m == "RTF" and v is not None else _fmt(v))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "metrics": self.metrics,
            "results": self.results,
            "average": {sys: {m: self.average(sys, m) for m in self.metrics} for sys in self.systems},
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Report":
        data = json.loads(Path(path).read_text())
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise InputError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(data["results"], data["metrics"])


def report(results: dict) -> Report:
    return Report(results)
