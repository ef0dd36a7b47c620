"""Per-utterance and per-batch objective steps: decode, score, chain gradients.

Loss coefficients on hypothesis log-probabilities are chained through the
lattice gradient of each hypothesis and then through the model's backward
pass.  Every step reports how many lattices it evaluated so the O-1 vs EMBR
cost difference can be counted directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decoding import NBestList, beam_search
from .lattice import posterior_grad, rnnt_log_prob
from .model import ToyTransducer
from .objectives import (
    LossResult,
    embr_loss,
    multitask_embr,
    multitask_o1,
    o1_distill_loss,
    o1_loss,
    score_hypotheses,
)

MODES = ("mle", "embr", "o1", "o1_distill")


@dataclass
class UtteranceStep:
    result: LossResult
    grad: np.ndarray
    objective_lattices: int
    aux_lattices: int
    nbest: NBestList | None = None
    oracle_index: int = 0


@dataclass
class BatchStep:
    loss_total: float
    loss_obj: float
    loss_rnnt: float
    grad: np.ndarray
    objective_lattices: int
    aux_lattices: int
    decode_seconds: float
    objective_seconds: float
    utterances: list[UtteranceStep] = field(default_factory=list)


def decode(model: ToyTransducer, features: np.ndarray, beam_size: int, max_symbols_per_frame: int = 3) -> NBestList:
    enc = model.encode(features)
    return beam_search(model.scorer(), enc.states, beam_size, max_symbols_per_frame)


def mle_step(model: ToyTransducer, features: np.ndarray, reference: Sequence[int]) -> UtteranceStep:
    """Plain RNN-T loss, ``-log p(reference | X)``."""
    (logits,), cache = model.forward_lattices(features, [reference])
    post = rnnt_log_prob(logits, reference)
    grad = model.backward(cache, [posterior_grad(post)])
    loss = -post.log_prob
    result = LossResult(loss, np.zeros(0), {"rnnt": loss, "total": loss}, 1.0)
    return UtteranceStep(result, grad, 0, 1)


def sequence_step(
    model: ToyTransducer,
    features: np.ndarray,
    reference: Sequence[int],
    nbest: NBestList,
    objective: str,
    rnnt_weight: float = 0.1,
) -> UtteranceStep:
    """EMBR or O-1 on a decoded n-best list plus the weighted RNN-T loss on ``reference``.

    ``objective`` is ``"embr"``, ``"o1"`` or ``"o1_distill"`` (O-1 against a
    pseudo-label passed as ``reference``).  EMBR evaluates a lattice for every
    hypothesis; O-1 evaluates exactly two, the oracle and the 1-best.
    """
    hyps = [h.labels for h in nbest]
    reference = tuple(reference)
    if objective == "embr":
        chosen = list(range(len(hyps)))
    elif objective in ("o1", "o1_distill"):
        pre = score_hypotheses(hyps, [h.log_prob for h in nbest], reference)
        chosen = [pre.oracle_index, pre.one_best_index]
    else:
        raise ValueError(f"unknown sequence objective {objective!r}")

    label_seqs = [hyps[i] for i in chosen] + [reference]
    lattices, cache = model.forward_lattices(features, label_seqs)
    posts = [rnnt_log_prob(lat, labels) for lat, labels in zip(lattices, label_seqs)]
    ref_post = posts[-1]
    rnnt_loss = -ref_post.log_prob

    if objective == "embr":
        scores = score_hypotheses(hyps, [p.log_prob for p in posts[:-1]], reference, [h.log_prob for h in nbest])
        result = multitask_embr(embr_loss(scores), rnnt_loss, rnnt_weight)
        coeffs = result.coeffs
    else:
        # Only the oracle and the 1-best are kept; score them as a two-entry list.
        two = score_hypotheses([label_seqs[0], label_seqs[1]], [posts[0].log_prob, posts[1].log_prob], reference)
        two.oracle_index, two.one_best_index = 0, 1
        if objective == "o1":
            result = multitask_o1(o1_loss(two), rnnt_loss, rnnt_weight)
        else:
            result = o1_distill_loss(two, rnnt_loss, rnnt_weight)
        coeffs = result.coeffs

    lattice_grads = [-c * posterior_grad(p) for c, p in zip(coeffs, posts[:-1])]
    lattice_grads.append(rnnt_weight * posterior_grad(ref_post))
    grad = model.backward(cache, lattice_grads)
    oracle = chosen[0] if objective != "embr" else scores.oracle_index
    return UtteranceStep(result, grad, len(chosen), 1, nbest, oracle)


def batch_step(
    model: ToyTransducer,
    batch: Sequence[tuple[np.ndarray, Sequence[int]]],
    mode: str,
    beam_size: int = 8,
    rnnt_weight: float = 0.1,
    max_symbols_per_frame: int = 3,
    nbests: Sequence[NBestList] | None = None,
    objectives: Sequence[str] | None = None,
) -> BatchStep:
    """Mean loss and gradient over ``batch`` of ``(features, reference)`` pairs.

    Gradients are reduced in batch order, so results do not depend on how
    the per-utterance work was scheduled.  ``objectives`` optionally gives a
    per-utterance objective (used to mix supervised and distillation items).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    decode_seconds = 0.0
    if mode != "mle" and nbests is None:
        start = time.perf_counter()
        nbests = [decode(model, x, beam_size, max_symbols_per_frame) for x, _ in batch]
        decode_seconds = time.perf_counter() - start

    start = time.perf_counter()
    steps = []
    for n, (x, ref) in enumerate(batch):
        if mode == "mle":
            steps.append(mle_step(model, x, ref))
        else:
            objective = objectives[n] if objectives is not None else mode
            steps.append(sequence_step(model, x, ref, nbests[n], objective, rnnt_weight))
    grad = np.zeros_like(model.params.flat)
    for s in steps:
        grad += s.grad
    grad /= len(steps)
    objective_seconds = time.perf_counter() - start

    obj = float(np.mean([s.result.loss - s.result.rnnt_weight * _rnnt_component(s.result) for s in steps]))
    return BatchStep(
        loss_total=float(np.mean([s.result.loss for s in steps])),
        loss_obj=obj,
        loss_rnnt=float(np.mean([_rnnt_component(s.result) for s in steps])),
        grad=grad,
        objective_lattices=sum(s.objective_lattices for s in steps),
        aux_lattices=sum(s.aux_lattices for s in steps),
        decode_seconds=decode_seconds,
        objective_seconds=objective_seconds,
        utterances=steps,
    )


def _rnnt_component(result: LossResult) -> float:
    return result.components.get("rnnt", result.components.get("distill", 0.0))
