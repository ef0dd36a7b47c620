"""Sequence-level objectives over an n-best list: EMBR, O-1 and their multitask forms.

Every loss is expressed as a function of per-hypothesis log-probabilities.
``LossResult.coeffs[i]`` is ``dL / d log p(Y_i | X)``; the lattice gradient
of hypothesis ``i`` is then ``-coeffs[i] * rnnt_grad(lattice_i, Y_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .errors import ContractViolation
from .metrics import edit_distance, expected_errors, select_oracle


@dataclass
class LossResult:
    loss: float
    coeffs: np.ndarray
    components: dict[str, float] = field(default_factory=dict)
    # weight on -log p(reference | X) in the total loss
    rnnt_weight: float = 0.0


@dataclass
class HypothesisScores:
    log_probs: np.ndarray
    error_counts: np.ndarray
    wers: np.ndarray
    lengths: np.ndarray
    oracle_index: int
    one_best_index: int = 0

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        self.error_counts = np.asarray(self.error_counts, dtype=np.float64)
        self.wers = np.asarray(self.wers, dtype=np.float64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        n = len(self.log_probs)
        if not (len(self.error_counts) == len(self.wers) == len(self.lengths) == n):
            raise ContractViolation("hypothesis score lists differ in length")
        if n == 0:
            raise ContractViolation("at least one hypothesis is required")
        if not (0 <= self.oracle_index < n and 0 <= self.one_best_index < n):
            raise ContractViolation("oracle/1-best index out of range")

    def __len__(self):
        return len(self.log_probs)

    @property
    def normalized_log_probs(self) -> np.ndarray:
        return self.log_probs / np.maximum(1, self.lengths)


def score_hypotheses(
    hypotheses: Sequence[Sequence[int]],
    log_probs: Sequence[float],
    reference: Sequence[int],
    ranking_scores: Sequence[float] | None = None,
) -> HypothesisScores:
    """Attach error counts, WERs and the oracle/1-best choice to an n-best list.

    ``log_probs`` are the full-sum scores the losses differentiate;
    ``ranking_scores`` (the decoder's own scores, default ``log_probs``)
    only break WER ties during oracle selection.
    """
    counts = [edit_distance(reference, h) for h in hypotheses]
    selection = select_oracle(
        list(hypotheses), reference, list(log_probs if ranking_scores is None else ranking_scores)
    )
    return HypothesisScores(
        log_probs=log_probs,
        error_counts=[c.total for c in counts],
        wers=[c.wer for c in counts],
        lengths=[len(h) for h in hypotheses],
        oracle_index=selection.oracle_index,
        one_best_index=selection.one_best_index,
    )


def embr_loss(scores: HypothesisScores) -> LossResult:
    """Expected error count under the softmax of hypothesis log-probabilities.

    The gradient coefficient subtracts the expected risk from each
    hypothesis' error count (variance reduction); the loss value does not.
    """
    probs = softmax(scores.log_probs)
    risk = expected_errors(scores.error_counts, probs / probs.sum())
    coeffs = probs * (scores.error_counts - risk)
    return LossResult(risk, coeffs, {"embr": risk})


def o1_loss(scores: HypothesisScores) -> LossResult:
    """Boost the oracle by ``1 - WER`` and suppress the 1-best by its WER.

    Log-probabilities are divided by ``max(1, label length)`` and WERs are
    clamped to ``[0, 1]``.  Only the oracle and the 1-best receive gradient;
    if they coincide, both terms land on the same hypothesis.
    """
    o, b = scores.oracle_index, scores.one_best_index
    w_o = min(float(scores.wers[o]), 1.0)
    w_b = min(float(scores.wers[b]), 1.0)
    norm = scores.normalized_log_probs
    loss = -norm[o] * (1.0 - w_o) + norm[b] * w_b
    coeffs = np.zeros(len(scores))
    coeffs[o] -= (1.0 - w_o) / max(1, scores.lengths[o])
    coeffs[b] += w_b / max(1, scores.lengths[b])
    return LossResult(float(loss), coeffs, {"o1": float(loss)})


def _with_rnnt(result: LossResult, rnnt_loss: float, weight: float, rnnt_name: str = "rnnt") -> LossResult:
    if weight < 0:
        raise ContractViolation(f"RNN-T loss weight must be non-negative, got {weight}")
    total = result.loss + weight * rnnt_loss
    components = dict(result.components)
    components[rnnt_name] = float(rnnt_loss)
    components["total"] = float(total)
    return LossResult(float(total), result.coeffs.copy(), components, weight)


def multitask_embr(embr: LossResult, rnnt_loss: float, gamma: float = 0.1) -> LossResult:
    return _with_rnnt(embr, rnnt_loss, gamma)


def multitask_o1(o1: LossResult, rnnt_loss: float, lam: float = 0.1) -> LossResult:
    return _with_rnnt(o1, rnnt_loss, lam)


def o1_distill_loss(scores: HypothesisScores, rnnt_loss_on_pseudo: float, lam: float = 0.1) -> LossResult:
    """O-1 against a teacher pseudo-label plus ``lam`` times the RNN-T loss on it.

    ``scores`` must already be computed against the pseudo-label.
    """
    return _with_rnnt(o1_loss(scores), rnnt_loss_on_pseudo, lam, rnnt_name="distill")
