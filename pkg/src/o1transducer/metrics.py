"""Edit distance, WER, oracle selection and expected-error aggregation.

Tokens are compared by equality only; at toy scale a "word" is one symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.total / max(1, self.ref_len)


def edit_distance(reference: Sequence, hypothesis: Sequence) -> ErrorCounts:
    """Minimum unit-cost alignment of ``hypothesis`` against ``reference``.

    When several alignments reach the minimum, the backtrace prefers a
    substitution (or match) over an insertion, and an insertion over a
    deletion, so the S/I/D split is deterministic.
    """
    ref = reference if isinstance(reference, (list, tuple, str)) else list(reference)
    hyp = hypothesis if isinstance(hypothesis, (list, tuple, str)) else list(hypothesis)
    n, m = len(ref), len(hyp)
    if n == 0 or m == 0:
        return ErrorCounts(0, m, n, n)

    # dist[i][j]: cost of aligning ref[:i] with hyp[:j]
    dist = [list(range(m + 1))]
    for i, r in enumerate(ref, 1):
        prev = dist[-1]
        row = [i]
        left = i
        for j, h in enumerate(hyp):
            best = prev[j] + (r != h)
            if left + 1 < best:
                best = left + 1
            up = prev[j + 1] + 1
            if up < best:
                best = up
            row.append(best)
            left = best
        dist.append(row)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 and j > 0:
        here = dist[i][j]
        mismatch = ref[i - 1] != hyp[j - 1]
        if here == dist[i - 1][j - 1] + mismatch:
            subs += mismatch
            i -= 1
            j -= 1
        elif here == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorCounts(subs, ins + j, dels + i, n)


def wer(reference: Sequence, hypothesis: Sequence) -> float:
    """Raw (unclamped) error rate: errors / max(1, len(reference))."""
    return edit_distance(reference, hypothesis).wer


def wer_clamped(reference: Sequence, hypothesis: Sequence) -> float:
    """Error rate clamped to [0, 1], the form used to weight O-1 terms."""
    return min(wer(reference, hypothesis), 1.0)


@dataclass(frozen=True)
class OracleSelection:
    oracle_index: int
    one_best_index: int
    oracle_wer: float
    one_best_wer: float
    wers: tuple[float, ...]


def select_oracle(hypotheses, reference: Sequence, log_probs: Sequence[float] | None = None) -> OracleSelection:
    """Pick the lowest-WER hypothesis (oracle) and the rank-0 one (1-best).

    ``hypotheses`` is an n-best list sorted by decreasing log-probability,
    either label sequences or objects with a ``labels`` attribute.  WER ties
    go to the higher log-probability, then the lower index.
    """
    if len(hypotheses) == 0:
        raise ContractViolation("oracle selection needs a non-empty n-best list")
    seqs = [getattr(h, "labels", h) for h in hypotheses]
    if log_probs is None:
        log_probs = [getattr(h, "log_prob", 0.0) for h in hypotheses]
    wers = tuple(wer(reference, s) for s in seqs)
    oracle = min(range(len(seqs)), key=lambda i: (wers[i], -log_probs[i], i))
    return OracleSelection(oracle, 0, wers[oracle], wers[0], wers)


def expected_errors(error_counts: Sequence[float], probs: Sequence[float]) -> float:
    """Risk under the n-best distribution: sum_j probs[j] * errors[j]."""
    probs = np.asarray(probs, dtype=np.float64)
    errors = np.asarray(error_counts, dtype=np.float64)
    if probs.shape != errors.shape:
        raise ContractViolation("probs and error counts differ in length")
    if abs(math.fsum(probs) - 1.0) > 1e-9:
        raise ContractViolation(f"weights must sum to 1, got {math.fsum(probs)!r}")
    return float(probs @ errors)


def mean_errors(error_counts: Sequence[float]) -> float:
    """Monte-Carlo form of the risk: the unweighted average error count."""
    return float(np.mean(error_counts))


def corpus_wer(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Total errors over total reference tokens (not a mean of per-utterance rates)."""
    errors = sum(edit_distance(r, h).total for r, h in zip(references, hypotheses))
    return errors / max(1, sum(len(r) for r in references))
