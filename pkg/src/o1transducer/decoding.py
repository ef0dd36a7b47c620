"""N-best decoding for transducers: prefix-merging beam search and exact references."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import BLANK
from .errors import ContractViolation, EnumerationGuardError
from .lattice import rnnt_log_prob

EXHAUSTIVE_LIMIT = 4096


class StepScorer(Protocol):
    vocab_size: int

    def log_probs(self, frame: np.ndarray, prefixes: Sequence[tuple[int, ...]]) -> np.ndarray:
        """``(len(prefixes), vocab_size + 1)`` log-softmax rows for one frame."""


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[int, ...]
    log_prob: float

    @property
    def length(self) -> int:
        return len(self.labels)


def rank_key(labels: tuple[int, ...], log_prob: float):
    """Decreasing score, then shorter, then lexicographically smaller."""
    return (-log_prob, len(labels), labels)


@dataclass(frozen=True)
class NBestList:
    hypotheses: tuple[Hypothesis, ...]
    beam_size: int

    def __len__(self):
        return len(self.hypotheses)

    def __getitem__(self, i):
        return self.hypotheses[i]

    def __iter__(self):
        return iter(self.hypotheses)

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    def top(self, k: int) -> "NBestList":
        return NBestList(self.hypotheses[:k], self.beam_size)

    @classmethod
    def from_scores(cls, scores: dict[tuple[int, ...], float], beam_size: int) -> "NBestList":
        ranked = sorted(scores.items(), key=lambda kv: rank_key(*kv))[:beam_size]
        return cls(tuple(Hypothesis(labels, float(lp)) for labels, lp in ranked), beam_size)


def _prune(
    closed: dict[tuple[int, ...], float],
    prefixes: list[tuple[int, ...]],
    ext: np.ndarray,
    beam_size: int,
):
    """Keep the ``beam_size`` best states among closed ones and one-symbol extensions.

    ``ext[i, k - 1]`` scores ``prefixes[i] + (k,)``.  Scores are cut in
    numpy; only the survivors (plus anything tied at the cut-off) pay for
    the full Python ranking key: score, length, closed-before-open, labels.
    """
    closed_items = list(closed.items())
    n_closed = len(closed_items)
    V = ext.shape[1] if ext.ndim == 2 else 0
    scores = np.concatenate([np.fromiter((s for _, s in closed_items), np.float64, n_closed), ext.ravel()])
    finite = np.isfinite(scores)
    if np.count_nonzero(finite) > beam_size:
        cut = np.partition(scores, len(scores) - beam_size)[len(scores) - beam_size]
        chosen = np.flatnonzero(scores >= cut)
    else:
        chosen = np.flatnonzero(finite)
    survivors = []
    for i in chosen.tolist():
        if i < n_closed:
            q, s = closed_items[i]
            survivors.append((q, s, 0))
        else:
            row, k = divmod(i - n_closed, V)
            survivors.append((prefixes[row] + (k + 1,), float(scores[i]), 1))
    survivors.sort(key=lambda c: (-c[1], len(c[0]), c[2], c[0]))
    return survivors[:beam_size]


def beam_search(
    scorer: StepScorer,
    encoder_states: np.ndarray,
    beam_size: int,
    max_symbols_per_frame: int = 3,
    max_label_len: int | None = None,
) -> NBestList:
    """Frame-synchronous beam search with prefix merging.

    Within a frame, each round either closes a hypothesis with blank (it
    moves to the next frame) or extends it by one symbol; closed and open
    states compete for the same ``beam_size`` slots.  Label-identical closed
    states are merged by log-sum-exp, so with an unpruned beam every
    hypothesis carries its full alignment-marginal probability.  After
    ``max_symbols_per_frame`` emissions a blank is forced.
    """
    if beam_size < 1:
        raise ContractViolation("beam_size must be >= 1")
    if max_symbols_per_frame < 1:
        raise ContractViolation("max_symbols_per_frame must be >= 1")
    encoder_states = np.asarray(encoder_states)
    if encoder_states.ndim < 1 or len(encoder_states) == 0:
        raise ContractViolation("encoder states are empty")

    beam: dict[tuple[int, ...], float] = {(): 0.0}
    for frame in encoder_states:
        closed: dict[tuple[int, ...], float] = {}
        prefixes = list(beam)
        scores = np.fromiter(beam.values(), np.float64, len(beam))
        for rounds in range(max_symbols_per_frame + 1):
            if not prefixes:
                break
            lp = scorer.log_probs(frame, prefixes)
            for q, s in zip(prefixes, (scores + lp[:, BLANK]).tolist()):
                old = closed.get(q)
                closed[q] = s if old is None else float(np.logaddexp(old, s))
            if rounds == max_symbols_per_frame:
                break
            ext = scores[:, None] + lp[:, 1:]
            if max_label_len is not None:
                ext[[len(q) >= max_label_len for q in prefixes]] = -np.inf
            survivors = _prune(closed, prefixes, ext, beam_size)
            closed = {q: s for q, s, is_open in survivors if not is_open}
            prefixes = [q for q, _, is_open in survivors if is_open]
            scores = np.array([s for _, s, is_open in survivors if is_open])
        kept = _prune(closed, [], np.empty((0, 0)), beam_size)
        beam = {q: s for q, s, _ in kept}
    return NBestList.from_scores(beam, beam_size)


def greedy_search(scorer: StepScorer, encoder_states: np.ndarray, max_symbols_per_frame: int = 3) -> Hypothesis:
    """Argmax decoding: at each step take the single most likely output."""
    labels: tuple[int, ...] = ()
    total = 0.0
    for frame in encoder_states:
        for emitted in range(max_symbols_per_frame + 1):
            lp = scorer.log_probs(frame, [labels])[0]
            k = int(np.argmax(lp)) if emitted < max_symbols_per_frame else BLANK
            total += float(lp[k])
            if k == BLANK:
                break
            labels = labels + (k,)
    return Hypothesis(labels, total)


def scorer_lattice(scorer: StepScorer, encoder_states: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """Full ``T x (U+1) x (V+1)`` lattice of a label sequence, built from the step scorer."""
    labels = tuple(labels)
    prefixes = [labels[:u] for u in range(len(labels) + 1)]
    return np.stack([scorer.log_probs(frame, prefixes) for frame in encoder_states])


def exhaustive_search(scorer: StepScorer, encoder_states: np.ndarray, max_label_len: int, beam_size: int | None = None) -> NBestList:
    """Score every label sequence up to ``max_label_len`` by full-sum lattice probability."""
    V = scorer.vocab_size
    count = sum(V**n for n in range(max_label_len + 1))
    if V**max_label_len > EXHAUSTIVE_LIMIT:
        raise EnumerationGuardError(f"{count} candidate sequences exceed the exhaustive-search guard")
    encoder_states = np.asarray(encoder_states)
    if len(encoder_states) == 0:
        raise ContractViolation("encoder states are empty")
    scores = {}
    for n in range(max_label_len + 1):
        for labels in itertools.product(range(1, V + 1), repeat=n):
            lattice = scorer_lattice(scorer, encoder_states, labels)
            scores[labels] = rnnt_log_prob(lattice, labels).log_prob
    return NBestList.from_scores(scores, beam_size or count)
