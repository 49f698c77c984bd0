"""CTC likelihood over a sigmoid-blank / softmax-non-blank emission model.

Each frame ``t`` carries a blank probability ``p_b[t]`` and a normalized
non-blank distribution ``p_nb[t]`` over ``V`` tokens.  A token is emitted
with probability ``(1 - p_b[t]) * p_nb[t, v]`` so blank and non-blank mass
sum to one.  Token ids are ``0..V-1``; the blank occupies column ``V`` of
every emission table built here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import BoundsError, InfeasibleTargetError, InvariantError, NumericalError
from .numerics import log_sigmoid, log_softmax, sigmoid, softmax

NORM_TOL = 1e-9


@dataclass(frozen=True)
class CtcPosteriorSequence:
    blank: np.ndarray  # (T,)
    nonblank: np.ndarray  # (T, V), rows sum to one

    @property
    def length(self) -> int:
        return self.blank.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.nonblank.shape[1]

    @property
    def scaled_nonblank(self) -> np.ndarray:
        return (1.0 - self.blank)[:, None] * self.nonblank

    @classmethod
    def from_logits(cls, logit_blank, logit_nonblank) -> "CtcPosteriorSequence":
        zb = np.asarray(logit_blank, dtype=np.float64).reshape(-1)
        znb = np.asarray(logit_nonblank, dtype=np.float64)
        return cls(np.asarray(sigmoid(zb), dtype=np.float64).reshape(-1), softmax(znb, axis=1))

    def validate(self) -> None:
        b, nb = self.blank, self.nonblank
        if b.ndim != 1 or nb.ndim != 2 or nb.shape[0] != b.shape[0] or b.shape[0] < 1:
            raise InvariantError(f"bad posterior shapes {b.shape} / {nb.shape}")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(nb))):
            raise InvariantError("non-finite posterior entries")
        if np.any(b < 0) or np.any(b > 1) or np.any(nb < 0):
            raise InvariantError("probabilities outside [0, 1]")
        if np.max(np.abs(nb.sum(axis=1) - 1.0)) > NORM_TOL:
            raise InvariantError("non-blank rows do not sum to one")

    def log_emissions(self) -> np.ndarray:
        """(T, V+1) log emission table; column V is blank."""
        with np.errstate(divide="ignore"):
            tok = np.log1p(-self.blank)[:, None] + np.log(self.nonblank)
            return np.concatenate([tok, np.log(self.blank)[:, None]], axis=1)


def min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank per repeat."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extended(target: Sequence[int], blank: int) -> tuple[np.ndarray, np.ndarray]:
    ext = [blank]
    for tok in target:
        ext += [int(tok), blank]
    ext = np.array(ext, dtype=np.int64)
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return ext, skip


def _check_target(target: Sequence[int], vocab: int) -> list[int]:
    target = [int(t) for t in target]
    if any(t < 0 or t >= vocab for t in target):
        raise InvariantError(f"target ids must lie in [0, {vocab})")
    return target


def _alpha(log_emit: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = log_emit.shape[0], len(ext)
    em = log_emit[:, ext]
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = em[0, 0]
    if S > 1:
        alpha[0, 1] = em[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + em[t]
    return alpha


def _beta(log_emit: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = log_emit.shape[0], len(ext)
    em = log_emit[:, ext]
    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = em[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = em[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + em[t]
    return beta


def _total(alpha: np.ndarray) -> float:
    last = alpha[-1]
    return float(np.logaddexp(last[-1], last[-2])) if last.size > 1 else float(last[-1])


def ctc_log_likelihood_from_log_emissions(log_emit: np.ndarray, target: Sequence[int]) -> float:
    T, V1 = log_emit.shape
    target = _check_target(target, V1 - 1)
    if T < min_frames(target):
        return -np.inf
    ext, skip = _extended(target, V1 - 1)
    return _total(_alpha(log_emit, ext, skip))


def ctc_log_likelihood(post: CtcPosteriorSequence, target: Sequence[int]) -> float:
    """log P(target | posteriors), summed over every alignment; ``-inf`` if infeasible."""
    post.validate()
    return ctc_log_likelihood_from_log_emissions(post.log_emissions(), target)


def ctc_occupancy(log_emit: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Forward-backward: (log P, per-frame posterior occupancy of each of the V+1 symbols)."""
    T, V1 = log_emit.shape
    ext, skip = _extended(target, V1 - 1)
    alpha = _alpha(log_emit, ext, skip)
    log_p = _total(alpha)
    beta = _beta(log_emit, ext, skip)
    gamma = np.exp(alpha + beta - log_emit[:, ext] - log_p)
    occ = np.zeros((T, V1))
    for s, sym in enumerate(ext):
        occ[:, sym] += gamma[:, s]
    return log_p, occ


def ctc_loss_and_grad(
    logit_blank, logit_nonblank, target: Sequence[int]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative CTC log-likelihood and its gradient w.r.t. both logit tables.

    Returns ``(loss, d_logit_blank (T,), d_logit_nonblank (T, V))``.
    """
    zb = np.asarray(logit_blank, dtype=np.float64).reshape(-1)
    znb = np.asarray(logit_nonblank, dtype=np.float64)
    T, V = znb.shape
    target = _check_target(target, V)
    if T < min_frames(target):
        raise InfeasibleTargetError(
            f"target of {len(target)} labels needs {min_frames(target)} frames, got {T}"
        )
    log_nb = log_softmax(znb, axis=1)
    log_emit = np.concatenate(
        [log_sigmoid(-zb)[:, None] + log_nb, log_sigmoid(zb)[:, None]], axis=1
    )
    log_p, occ = ctc_occupancy(log_emit, target)
    if not np.isfinite(log_p):
        raise NumericalError("target probability underflowed to zero")
    pb = np.asarray(sigmoid(zb)).reshape(-1)
    occ_b = occ[:, V]
    occ_nb = occ[:, :V]
    nb_mass = occ_nb.sum(axis=1)
    d_zb = pb * nb_mass - (1.0 - pb) * occ_b
    d_znb = np.exp(log_nb) * nb_mass[:, None] - occ_nb
    return -log_p, d_zb, d_znb


# --- brute-force oracle -----------------------------------------------------

BRUTE_MAX_T = 8
BRUTE_MAX_V = 4


def collapse(path: Sequence[int], blank: int) -> tuple[int, ...]:
    out = []
    prev = None
    for sym in path:
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return tuple(out)


@lru_cache(maxsize=64)
def _enumeration(T: int, V: int) -> tuple[np.ndarray, dict]:
    paths = np.array(list(itertools.product(range(V + 1), repeat=T)), dtype=np.int64)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, p in enumerate(paths):
        groups.setdefault(collapse(p, V), []).append(i)
    return paths, {k: np.array(v) for k, v in groups.items()}


def brute_force_probabilities(emit: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Total probability of ``target`` for a stack of (T, V+1) emission tables.

    ``emit`` is (..., T, V+1) in probability space, blank last.
    """
    T, V1 = emit.shape[-2:]
    if T > BRUTE_MAX_T or V1 - 1 > BRUTE_MAX_V:
        raise BoundsError(f"enumeration limited to T<={BRUTE_MAX_T}, V<={BRUTE_MAX_V}")
    paths, groups = _enumeration(T, V1 - 1)
    members = groups.get(tuple(int(t) for t in target))
    if members is None:
        return np.zeros(emit.shape[:-2])
    sel = paths[members]  # (n, T)
    probs = emit[..., np.arange(T)[None, :], sel]  # (..., n, T)
    return probs.prod(axis=-1).sum(axis=-1)


def ctc_brute_force(post: CtcPosteriorSequence, target: Sequence[int]) -> float:
    """Log-probability of ``target`` by enumerating all (V+1)^T emission strings."""
    post.validate()
    if post.length > BRUTE_MAX_T or post.vocab_size > BRUTE_MAX_V:
        raise BoundsError(f"enumeration limited to T<={BRUTE_MAX_T}, V<={BRUTE_MAX_V}")
    target = _check_target(target, post.vocab_size)
    emit = np.concatenate([post.scaled_nonblank, post.blank[:, None]], axis=1)
    p = float(brute_force_probabilities(emit, target))
    with np.errstate(divide="ignore"):
        return float(np.log(p))
