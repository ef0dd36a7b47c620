"""Command-line entry point: ``o1t <subcommand> ...``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .corpus import CorpusSpec, generate_corpus, split_corpus, write_corpus
from .errors import ContractViolation, FormatError
from .experiment import SWEEP_HEADER, distill_train, evaluate, sweep_beam, train, write_csv
from .gradcheck import run_all

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_args(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--output-dir")
    p.add_argument("--mode")
    p.add_argument("--init-checkpoint")
    p.add_argument("--teacher-checkpoint")
    p.add_argument("--train-corpus")
    p.add_argument("--eval-corpus")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="o1t", description="O-1 transducer training toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic train/dev corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=2000, help="labeled training utterances")
    g.add_argument("--dev-count", type=int, default=200)
    g.add_argument("--unlabeled-count", type=int, default=0)
    g.add_argument("--vocab-size", type=int, default=16)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--noise", type=float, default=CorpusSpec.noise_sigma)
    g.add_argument("--confusion", type=float, default=CorpusSpec.substitution_confusion_rate)
    g.add_argument("--label-len", type=int, nargs=2, default=list(CorpusSpec.label_len))
    g.add_argument("--frames-per-symbol", type=int, nargs=2, default=list(CorpusSpec.frames_per_symbol))

    _add_config_args(sub.add_parser("train", help="MLE, EMBR or O-1 training"), seed_required=True)
    _add_config_args(sub.add_parser("distill", help="O-1 distillation from a teacher"), seed_required=True)

    e = sub.add_parser("evaluate", help="1-best and oracle WER of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--beam-size", type=int, default=8)
    e.add_argument("--max-symbols-per-frame", type=int, default=3)
    e.add_argument("--limit", type=int, default=0)
    e.add_argument("--json", action="store_true", help="print a JSON summary")

    s = sub.add_parser("sweep-beam", help="WER and truncated losses across beam sizes")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--beams", default="1,2,4,8", help="comma-separated beam sizes")
    s.add_argument("--max-symbols-per-frame", type=int, default=3)
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--out", help="CSV path (default: stdout)")

    c = sub.add_parser("grad-check", help="finite-difference and brute-force suites")
    c.add_argument("--config", help="key=value config; only seed is used")
    c.add_argument("--seed", type=int)
    c.add_argument("--cases", type=int, default=50)
    c.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def _experiment_config(args, mode: str | None = None) -> ExperimentConfig:
    overrides = list(args.set)
    for key in ("output_dir", "mode", "init_checkpoint", "teacher_checkpoint", "train_corpus", "eval_corpus"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    if mode is not None:
        overrides.append(f"mode={mode}")
    overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides).validate()


def _gen_data(args) -> int:
    spec = CorpusSpec(
        seed=args.seed,
        utterance_count=args.count + args.dev_count,
        unlabeled_count=args.unlabeled_count,
        vocab_size=args.vocab_size,
        feature_dim=args.feature_dim,
        noise_sigma=args.noise,
        substitution_confusion_rate=args.confusion,
        label_len=tuple(args.label_len),
        frames_per_symbol=tuple(args.frames_per_symbol),
    )
    try:
        corpus = generate_corpus(spec)
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None
    labeled, unlabeled = split_corpus(corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(labeled[: args.count] + unlabeled, out / "train.txt")
    write_corpus(labeled[args.count :], out / "dev.txt")
    print(f"wrote {args.count} labeled + {len(unlabeled)} unlabeled to {out / 'train.txt'}")
    print(f"wrote {len(labeled) - args.count} labeled to {out / 'dev.txt'}")
    return EXIT_OK


def _train(args, mode=None) -> int:
    config = _experiment_config(args, mode)
    result = (distill_train if config.mode == "o1_distill" else train)(config)
    last = result.rows[-1]
    print(
        f"{config.mode} step={last['step']} one_best_wer={last['one_best_wer']:.4f} "
        f"oracle_wer={last['oracle_wer']:.4f} gap={last['gap']:.4f} -> {result.output_dir}"
    )
    return EXIT_OK


def _evaluate(args) -> int:
    report = evaluate(args.checkpoint, args.corpus, args.beam_size, args.max_symbols_per_frame, args.limit)
    summary = {
        "step": report.step,
        "utterances": len(report.records),
        "one_best_wer": report.one_best_wer,
        "oracle_wer": report.oracle_wer,
        "gap": report.gap,
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def _sweep(args) -> int:
    try:
        beams = [int(b) for b in args.beams.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"--beams must be comma-separated integers, got {args.beams!r}") from None
    if not beams or min(beams) < 1:
        raise UsageError("--beams needs at least one beam size >= 1")
    rows = sweep_beam(args.checkpoint, args.corpus, beams, args.max_symbols_per_frame, args.limit)
    write_csv(args.out or "/dev/stdout", SWEEP_HEADER, rows)
    return EXIT_OK


def _grad_check(args) -> int:
    seed = args.seed
    if args.config is not None:
        lines = [ln.split("#", 1)[0].strip() for ln in Path(args.config).read_text().splitlines()]
        if not any(lines):
            raise UsageError(f"grad-check: config file {args.config} is empty")
        config = load_config(args.config)
        seed = config.seed if seed is None else seed
    if seed is None:
        raise UsageError("grad-check needs --config or --seed")
    results = run_all(seed, args.cases, args.perturb)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "gen-data": _gen_data,
            "train": _train,
            "distill": lambda a: _train(a, "o1_distill"),
            "evaluate": _evaluate,
            "sweep-beam": _sweep,
            "grad-check": _grad_check,
        }[args.command]
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
