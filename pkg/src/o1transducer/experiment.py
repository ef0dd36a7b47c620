"""Training, evaluation, beam sweeps and distillation driven by an ``ExperimentConfig``.

A run directory holds the canonical config dump (``config.txt``), the
metrics log (``metrics.csv``) and the final checkpoint (``final.ckpt``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump
from .corpus import Utterance, read_corpus, split_corpus
from .decoding import NBestList
from .errors import ContractViolation
from .lattice import rnnt_log_prob
from .metrics import edit_distance, select_oracle
from .model import ModelConfig, ModelParams, ToyTransducer
from .objectives import embr_loss, o1_loss, score_hypotheses
from .optim import AdamState, adam_step, clip_by_norm
from .training import batch_step, decode

METRICS_HEADER = (
    "step", "mode", "one_best_wer", "oracle_wer", "gap",
    "loss_total", "loss_obj", "loss_rnnt", "examples_per_sec",
)
SWEEP_HEADER = ("beam", "one_best_wer", "oracle_wer", "gap", "truncated_k", "loss_o1_topk", "loss_embr_topk")


@dataclass(frozen=True)
class EvalRecord:
    id: str
    reference: tuple[int, ...]
    one_best: tuple[int, ...]
    oracle: tuple[int, ...]
    one_best_errors: int
    oracle_errors: int
    nbest_size: int

    @property
    def one_best_wer(self) -> float:
        return self.one_best_errors / max(1, len(self.reference))

    @property
    def oracle_wer(self) -> float:
        return self.oracle_errors / max(1, len(self.reference))


@dataclass
class EvalReport:
    one_best_wer: float
    oracle_wer: float
    records: list[EvalRecord] = field(default_factory=list)
    examples_per_second: float = math.nan
    step: int = 0

    def __post_init__(self):
        if self.oracle_wer > self.one_best_wer:
            raise ContractViolation(f"oracle WER {self.oracle_wer} exceeds 1-best WER {self.one_best_wer}")

    @property
    def gap(self) -> float:
        return self.one_best_wer - self.oracle_wer


def evaluate_nbests(utterances: Sequence[Utterance], nbests: Sequence[NBestList], step: int = 0) -> EvalReport:
    records = []
    for u, nbest in zip(utterances, nbests):
        sel = select_oracle(nbest, u.labels)
        one, orc = nbest[sel.one_best_index].labels, nbest[sel.oracle_index].labels
        records.append(
            EvalRecord(
                u.id, u.labels, one, orc,
                edit_distance(u.labels, one).total, edit_distance(u.labels, orc).total, len(nbest),
            )
        )
    ref_tokens = max(1, sum(len(r.reference) for r in records))
    return EvalReport(
        one_best_wer=sum(r.one_best_errors for r in records) / ref_tokens,
        oracle_wer=sum(r.oracle_errors for r in records) / ref_tokens,
        records=records,
        step=step,
    )


def evaluate_model(
    model: ToyTransducer, utterances: Sequence[Utterance], beam_size: int = 8,
    max_symbols_per_frame: int = 3, step: int = 0,
) -> EvalReport:
    """Decode every utterance; corpus-level 1-best and oracle WER."""
    nbests = [decode(model, u.features, beam_size, max_symbols_per_frame) for u in utterances]
    return evaluate_nbests(utterances, nbests, step)


def _as_checkpoint(checkpoint) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def _as_corpus(corpus) -> list[Utterance]:
    return list(corpus) if not isinstance(corpus, (str, Path)) else read_corpus(corpus)


def evaluate(checkpoint, corpus, beam_size: int = 8, max_symbols_per_frame: int = 3, limit: int = 0) -> EvalReport:
    """Evaluate a checkpoint (object or path) on the labeled part of a corpus (list or path)."""
    ckpt = _as_checkpoint(checkpoint)
    labeled, _ = split_corpus(_as_corpus(corpus))
    if limit:
        labeled = labeled[:limit]
    return evaluate_model(ToyTransducer(ckpt.params), labeled, beam_size, max_symbols_per_frame, ckpt.step)


def sweep_beam(
    checkpoint, corpus, beam_sizes: Sequence[int], max_symbols_per_frame: int = 3, limit: int = 0
) -> list[dict]:
    """Oracle/1-best WER per beam, plus O-1 and EMBR losses over only the top-k hypotheses.

    One row per ``(beam, k)`` with ``k = 1..beam``; the WER columns repeat
    within a beam.  Truncated losses use full-sum hypothesis log-probabilities
    and are averaged over utterances (utterances with fewer than ``k``
    hypotheses use all they have).
    """
    ckpt = _as_checkpoint(checkpoint)
    model = ToyTransducer(ckpt.params)
    labeled, _ = split_corpus(_as_corpus(corpus))
    if limit:
        labeled = labeled[:limit]
    rows = []
    for beam in beam_sizes:
        if beam < 1:
            raise ContractViolation("beam sizes must be >= 1")
        nbests = [decode(model, u.features, beam, max_symbols_per_frame) for u in labeled]
        report = evaluate_nbests(labeled, nbests, ckpt.step)
        per_utt = []
        for u, nbest in zip(labeled, nbests):
            hyps = [h.labels for h in nbest]
            lattices, _ = model.forward_lattices(u.features, hyps)
            logp = [rnnt_log_prob(lat, h).log_prob for lat, h in zip(lattices, hyps)]
            per_utt.append((hyps, logp, [h.log_prob for h in nbest], u.labels))
        for k in range(1, beam + 1):
            o1_vals, embr_vals = [], []
            for hyps, logp, ranking, ref in per_utt:
                scores = score_hypotheses(hyps[:k], logp[:k], ref, ranking[:k])
                o1_vals.append(o1_loss(scores).loss)
                embr_vals.append(embr_loss(scores).loss)
            rows.append(
                {
                    "beam": beam,
                    "one_best_wer": report.one_best_wer,
                    "oracle_wer": report.oracle_wer,
                    "gap": report.gap,
                    "truncated_k": k,
                    "loss_o1_topk": float(np.mean(o1_vals)) if o1_vals else math.nan,
                    "loss_embr_topk": float(np.mean(embr_vals)) if embr_vals else math.nan,
                }
            )
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.8g}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    rows: list[dict]
    output_dir: Path
    final_report: EvalReport | None = None


def _labeled(path) -> list[Utterance]:
    labeled, _ = split_corpus(read_corpus(path))
    if not labeled:
        raise ConfigError(f"corpus {path} has no labeled utterances")
    return labeled


def _vocab_size(config: ExperimentConfig, *corpora) -> int:
    if config.vocab_size:
        return config.vocab_size
    return max((max(u.labels, default=0) for c in corpora for u in c), default=1) or 1


class _Sampler:
    """Epoch-wise shuffled draws without replacement."""

    def __init__(self, items: Sequence, rng: np.random.Generator):
        self.items, self.rng = list(items), rng
        self.order: list[int] = []

    def draw(self, n: int) -> list:
        out = []
        while len(out) < n:
            if not self.order:
                self.order = self.rng.permutation(len(self.items)).tolist()
            out.append(self.items[self.order.pop()])
        return out


def _initial_params(config: ExperimentConfig, train: list[Utterance], dev: list[Utterance]) -> ModelParams:
    path = config.init_checkpoint or (config.teacher_checkpoint if config.mode == "o1_distill" else "")
    if path:
        return load_checkpoint(path).params.copy()
    model_config = ModelConfig(
        input_dim=train[0].features.shape[1],
        vocab_size=_vocab_size(config, train, dev),
        hidden=config.hidden,
        embed=config.embed,
    )
    return ModelParams.initialize(model_config, config.seed)


def train(config: ExperimentConfig) -> TrainResult:
    """Run one training stage and write its run directory.

    ``mle`` starts from a seeded initialization (or ``init_checkpoint``);
    ``embr`` and ``o1`` fine-tune ``init_checkpoint``; ``o1_distill`` is
    delegated to :func:`distill_train`.  A metrics row is logged before the
    first step and every ``eval_interval`` steps after it.
    """
    config.validate()
    if config.mode == "o1_distill":
        return distill_train(config)
    if config.init_checkpoint and not Path(config.init_checkpoint).exists():
        raise FileNotFoundError(f"baseline checkpoint {config.init_checkpoint} does not exist")
    train_set = _labeled(config.train_corpus)
    dev = _eval_set(config)
    params = _initial_params(config, train_set, dev)
    sampler = _Sampler(train_set, np.random.default_rng([config.seed, 2]))

    def next_batch():
        return [(u.features, u.labels) for u in sampler.draw(config.batch_size)], None

    return _loop(config, params, dev, next_batch)


def distill_train(config: ExperimentConfig) -> TrainResult:
    """O-1 distillation: half of each batch labeled (ground truth), half teacher-labeled.

    The teacher's beam-search 1-best on an unlabeled utterance is its
    pseudo-label; the teacher is frozen, so each one is decoded once and
    cached.  Unlabeled references never reach the loss.  The student starts
    from ``init_checkpoint`` if given, otherwise from the teacher.
    """
    config.validate()
    if config.mode != "o1_distill":
        raise ConfigError("distill_train needs mode o1_distill")
    if not Path(config.teacher_checkpoint).exists():
        raise FileNotFoundError(f"teacher checkpoint {config.teacher_checkpoint} does not exist")
    teacher = ToyTransducer(load_checkpoint(config.teacher_checkpoint).params)
    corpus = read_corpus(config.train_corpus)
    labeled, unlabeled = split_corpus(corpus)
    if config.unlabeled_corpus:
        unlabeled = read_corpus(config.unlabeled_corpus)
    if not labeled or not unlabeled:
        raise ConfigError("distillation needs both labeled and unlabeled utterances")
    dev = _eval_set(config)
    params = _initial_params(config, labeled, dev)

    rng = np.random.default_rng([config.seed, 2])
    lab_sampler, unl_sampler = _Sampler(labeled, rng), _Sampler(unlabeled, rng)
    pseudo: dict[str, tuple[int, ...]] = {}

    def next_batch():
        n_unl = config.batch_size // 2
        labs = lab_sampler.draw(config.batch_size - n_unl)
        unls = unl_sampler.draw(n_unl)
        batch, objectives = [], []
        for i in range(config.batch_size):
            # alternate labeled / unlabeled
            if i % 2 == 0 and labs or not unls:
                u = labs.pop(0)
                batch.append((u.features, u.labels))
                objectives.append("o1")
            else:
                u = unls.pop(0)
                if u.id not in pseudo:
                    nbest = decode(teacher, u.features, config.train_beam_size, config.max_symbols_per_frame)
                    pseudo[u.id] = nbest.best.labels
                batch.append((u.features, pseudo[u.id]))
                objectives.append("o1_distill")
        return batch, objectives

    return _loop(config, params, dev, next_batch)


def _eval_set(config: ExperimentConfig) -> list[Utterance]:
    dev = _labeled(config.eval_corpus)
    return dev[: config.eval_limit] if config.eval_limit else dev


def _loop(config: ExperimentConfig, params: ModelParams, dev: list[Utterance], next_batch) -> TrainResult:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump(config))
    model = ToyTransducer(params)
    adam = AdamState.zeros(params.config.param_count)
    rnnt_weight = config.gamma if config.mode == "embr" else config.lam
    if config.mode == "mle":
        rnnt_weight = 1.0

    rows: list[dict] = []
    window = {"total": [], "obj": [], "rnnt": [], "examples": 0, "seconds": 0.0}

    def log(step: int) -> EvalReport:
        report = evaluate_model(model, dev, config.eval_beam_size, config.max_symbols_per_frame, step)
        seconds = window["seconds"]
        report.examples_per_second = (
            window["examples"] / seconds if config.log_throughput and seconds > 0 else math.nan
        )
        mean = lambda xs: float(np.mean(xs)) if xs else math.nan  # noqa: E731
        rows.append(
            {
                "step": step,
                "mode": config.mode,
                "one_best_wer": report.one_best_wer,
                "oracle_wer": report.oracle_wer,
                "gap": report.gap,
                "loss_total": mean(window["total"]),
                "loss_obj": mean(window["obj"]),
                "loss_rnnt": mean(window["rnnt"]),
                "examples_per_sec": report.examples_per_second,
            }
        )
        write_csv(out / "metrics.csv", METRICS_HEADER, rows)
        window.update(total=[], obj=[], rnnt=[], examples=0, seconds=0.0)
        return report

    report = log(0)
    mode = "o1" if config.mode == "o1_distill" else config.mode
    for step in range(1, config.steps + 1):
        batch, objectives = next_batch()
        result = batch_step(
            model, batch, mode, config.train_beam_size, rnnt_weight,
            config.max_symbols_per_frame, objectives=objectives,
        )
        grad = clip_by_norm(result.grad, config.grad_clip) if config.grad_clip > 0 else result.grad
        new_flat, adam = adam_step(params.flat, grad, adam, config.learning_rate)
        params.assign(new_flat)
        window["total"].append(result.loss_total)
        window["obj"].append(result.loss_obj)
        window["rnnt"].append(result.loss_rnnt)
        window["examples"] += len(batch)
        window["seconds"] += result.objective_seconds
        if step % config.eval_interval == 0 or step == config.steps:
            report = log(step)

    ckpt = Checkpoint(params, config.steps, adam, params.config.fingerprint())
    save_checkpoint(ckpt, out / "final.ckpt")
    return TrainResult(ckpt, rows, out, report)
