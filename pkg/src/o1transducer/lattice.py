"""Transducer alignment lattice: forward-backward, gradients and a brute-force oracle.

The joint logits of one utterance form an array ``logits[t, u, k]`` with
``t`` in ``0..T-1`` (frames), ``u`` in ``0..U`` (label-prefix positions) and
``k`` in ``0..V`` (blank at index 0).  A non-blank emission at ``(t, u)``
moves to ``(t, u + 1)``; a blank moves to ``(t + 1, u)``; the blank at
``(T - 1, U)`` terminates the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from . import BLANK
from .errors import ContractViolation, EnumerationGuardError

MAX_ENUMERATION_STEPS = 16


@dataclass(frozen=True)
class LatticePosterior:
    """Forward/backward log-sums over the ``T x (U+1)`` lattice nodes.

    ``alpha[t, u]`` is the log-mass of partial paths arriving at node
    ``(t, u)``; ``beta[t, u]`` the log-mass of completions from it,
    including the final blank.
    """

    alpha: np.ndarray
    beta: np.ndarray
    log_prob: float
    log_probs: np.ndarray  # log-softmax of the logits, kept for gradients
    labels: tuple[int, ...]

    @property
    def node_posterior(self) -> np.ndarray:
        return np.exp(self.alpha + self.beta - self.log_prob)


def check_lattice(logits: np.ndarray, labels: Sequence[int]) -> tuple[int, ...]:
    """Validate a lattice/label pair and return the labels as a tuple."""
    logits = np.asarray(logits)
    if logits.ndim != 3:
        raise ContractViolation(f"joint logits must be 3-D, got shape {logits.shape}")
    T, U1, V1 = logits.shape
    labels = tuple(int(y) for y in labels)
    if T < 1:
        raise ContractViolation("lattice needs at least one frame")
    if V1 < 2:
        raise ContractViolation("vocabulary must hold at least one non-blank symbol")
    if U1 != len(labels) + 1:
        raise ContractViolation(
            f"lattice has {U1} label positions but {len(labels)} labels were given"
        )
    if any(y < 1 or y >= V1 for y in labels):
        raise ContractViolation(f"labels must lie in 1..{V1 - 1}: {labels}")
    if not np.all(np.isfinite(logits)):
        raise ContractViolation("joint logits contain NaN or Inf")
    return labels


def _emit_scores(log_probs: np.ndarray, labels: tuple[int, ...]) -> np.ndarray:
    # emit[t, u] = log p(labels[u] | t, u) for u < U
    U = len(labels)
    if U == 0:
        return np.zeros((log_probs.shape[0], 0))
    return log_probs[:, np.arange(U), np.asarray(labels)]


def _forward(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    alpha = np.empty((T, U1))
    # Within a frame the recurrence a[u] = logaddexp(b[u], a[u-1] + e[u-1])
    # unrolls into a prefix log-sum-exp over cumulative emission scores.
    arrive = np.full(U1, -np.inf)
    arrive[0] = 0.0
    for t in range(T):
        c = np.zeros(U1)
        np.cumsum(emit[t], out=c[1:])
        alpha[t] = c + np.logaddexp.accumulate(arrive - c)
        arrive = alpha[t] + blank[t]
    return alpha


def _backward(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    beta = np.empty((T, U1))
    leave = np.full(U1, -np.inf)
    leave[-1] = blank[T - 1, U1 - 1]
    for t in range(T - 1, -1, -1):
        if t < T - 1:
            leave = beta[t + 1] + blank[t]
        c = np.zeros(U1)
        np.cumsum(emit[t], out=c[1:])
        beta[t] = -c + np.logaddexp.accumulate((leave + c)[::-1])[::-1]
    return beta


def rnnt_log_prob(logits: np.ndarray, labels: Sequence[int]) -> LatticePosterior:
    """Alignment-marginal ``log p(labels | X)`` by forward-backward.

    Sums the probability of every blank/label interleaving that reduces to
    ``labels``; all reductions are log-sum-exp in float64.
    """
    labels = check_lattice(logits, labels)
    log_probs = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
    blank = log_probs[:, :, BLANK]
    emit = _emit_scores(log_probs, labels)
    alpha = _forward(blank, emit)
    beta = _backward(blank, emit)
    log_prob = float(alpha[-1, -1] + blank[-1, -1])
    return LatticePosterior(alpha, beta, log_prob, log_probs, labels)


def occupancy(posterior: LatticePosterior) -> tuple[np.ndarray, np.ndarray]:
    """Posterior probability of traversing each blank arc and each label arc.

    Returns ``(blank_occ [T, U+1], emit_occ [T, U])``.
    """
    alpha, beta, lp = posterior.alpha, posterior.beta, posterior.log_prob
    blank = posterior.log_probs[:, :, BLANK]
    emit = _emit_scores(posterior.log_probs, posterior.labels)
    T, U1 = alpha.shape
    after_blank = np.full((T, U1), -np.inf)
    after_blank[:-1] = beta[1:]
    after_blank[-1, -1] = 0.0
    blank_occ = np.exp(alpha + blank + after_blank - lp)
    emit_occ = np.exp(alpha[:, :-1] + emit + beta[:, 1:] - lp)
    return blank_occ, emit_occ


def posterior_grad(posterior: LatticePosterior) -> np.ndarray:
    """Gradient of ``-log p`` w.r.t. the logits from an existing posterior."""
    blank_occ, emit_occ = occupancy(posterior)
    T, U1, _ = posterior.log_probs.shape
    node = blank_occ + np.pad(emit_occ, ((0, 0), (0, 1)))
    grad = np.exp(posterior.log_probs) * node[:, :, None]
    grad[:, :, BLANK] -= blank_occ
    U = U1 - 1
    if U:
        grad[:, np.arange(U), np.asarray(posterior.labels)] -= emit_occ
    return grad


def rnnt_grad(logits: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """``d(-log p(labels | X)) / d logits``, same shape as ``logits``.

    At each node the entry is ``softmax * node_occupancy - arc_occupancy``.
    """
    return posterior_grad(rnnt_log_prob(logits, labels))


def rnnt_loss_and_grad(logits: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    posterior = rnnt_log_prob(logits, labels)
    return -posterior.log_prob, posterior_grad(posterior)


def normalized_log_prob(posterior: LatticePosterior | float, labels: Sequence[int]) -> float:
    """Length-normalised log-probability, ``log_prob / max(1, U)``."""
    lp = posterior.log_prob if isinstance(posterior, LatticePosterior) else float(posterior)
    return lp / max(1, len(labels))


def brute_force_log_prob(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Enumerate every alignment path and sum their probabilities.

    Pure-Python arithmetic on purpose: this is the reference the
    vectorised forward-backward is checked against.
    """
    labels = check_lattice(logits, labels)
    T, U1, V1 = np.shape(logits)
    U = U1 - 1
    if T + U > MAX_ENUMERATION_STEPS:
        raise EnumerationGuardError(
            f"refusing to enumerate paths of length T+U={T + U} > {MAX_ENUMERATION_STEPS}"
        )
    table = np.asarray(logits, dtype=np.float64).tolist()

    def log_softmax_at(t, u, k):
        row = table[t][u]
        m = max(row)
        return row[k] - (m + math.log(math.fsum(math.exp(x - m) for x in row)))

    path_scores = []

    def walk(t, u, score):
        if u < U:
            walk(t, u + 1, score + log_softmax_at(t, u, labels[u]))
        if t < T - 1:
            walk(t + 1, u, score + log_softmax_at(t, u, BLANK))
        elif u == U:
            path_scores.append(score + log_softmax_at(t, u, BLANK))

    walk(0, 0, 0.0)
    m = max(path_scores)
    return m + math.log(math.fsum(math.exp(s - m) for s in path_scores))


def enumerate_alignments(T: int, labels: Sequence[int]) -> list[list[tuple[int, int, int]]]:
    """All alignment paths as ``(t, u, symbol)`` step lists, for small lattices."""
    labels = tuple(labels)
    U = len(labels)
    if T + U > MAX_ENUMERATION_STEPS:
        raise EnumerationGuardError(f"T+U={T + U} exceeds {MAX_ENUMERATION_STEPS}")
    paths = []

    def walk(t, u, steps):
        if u < U:
            walk(t, u + 1, steps + [(t, u, labels[u])])
        if t < T - 1:
            walk(t + 1, u, steps + [(t, u, BLANK)])
        elif u == U:
            paths.append(steps + [(t, u, BLANK)])

    walk(0, 0, [])
    return paths
