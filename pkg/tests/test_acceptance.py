"""End-to-end acceptance checks, one test per criterion.

Each test reports a single PASS/FAIL line (also repeated in the pytest
terminal summary).  Criteria 5 and 7 share one pipeline per seed: an MLE
baseline, then O-1, EMBR and distillation runs from it.
"""

import itertools
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from o1transducer.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from o1transducer.config import ExperimentConfig
from o1transducer.corpus import CorpusSpec, Utterance, generate_corpus, split_corpus, write_corpus
from o1transducer.decoding import beam_search, exhaustive_search
from o1transducer.experiment import EvalReport, evaluate_nbests, train
from o1transducer.gradcheck import (
    embr_suite,
    end_to_end_suite,
    lattice_suite,
    o1_suite,
    rnnt_grad_suite,
)
from o1transducer.lattice import rnnt_grad, rnnt_log_prob
from o1transducer.metrics import edit_distance, select_oracle
from o1transducer.model import ModelConfig, ModelParams, ToyTransducer
from o1transducer.objectives import HypothesisScores, embr_loss, o1_loss
from o1transducer.optim import AdamState
from o1transducer.training import batch_step, decode

from conftest import tiny_model

SEEDS = (0, 1, 2)


# criteria 1-4: oracles


def test_criterion_1_lattice(report_criterion):
    start = time.perf_counter()
    result = lattice_suite(np.random.default_rng(101), cases=200)
    seconds = time.perf_counter() - start
    passed = result.passed and result.cases >= 200 and seconds < 5
    detail = f"cases={result.cases} max_abs_error={result.max_error:.2e} (tol {result.tolerance:.0e}) time={seconds:.2f}s (<5s)"
    report_criterion(1, "lattice vs brute force", passed, detail)
    assert passed


def test_criterion_2_gradients(report_criterion):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    suites = [
        rnnt_grad_suite(rng, 50),
        embr_suite(rng, 50),
        o1_suite(rng, 50),
        end_to_end_suite(rng, 50),
    ]
    seconds = time.perf_counter() - start
    passed = all(s.passed and s.cases >= 50 for s in suites) and seconds < 60
    detail = "; ".join(f"{s.name} max={s.max_error:.2e}/{s.tolerance:.0e} n={s.cases}" for s in suites)
    report_criterion(2, "finite-difference gradients", passed, f"{detail}; time={seconds:.1f}s (<60s)")
    assert passed


def test_criterion_3_decoder(report_criterion):
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    matches = 0
    for case in range(50):
        V = int(rng.integers(1, 4))
        T = int(rng.integers(1, 4))
        model = tiny_model(1000 + case, vocab_size=V)
        enc = model.encode(rng.normal(size=(T, 3))).states
        scorer = model.scorer()
        exact = exhaustive_search(scorer, enc, max_label_len=3)
        beam = beam_search(scorer, enc, beam_size=512, max_label_len=3)
        same_order = [h.labels for h in beam] == [h.labels for h in exact]
        same_scores = np.allclose([h.log_prob for h in beam], [h.log_prob for h in exact], rtol=0, atol=1e-10)
        matches += same_order and same_scores
    seconds = time.perf_counter() - start
    passed = matches == 50 and seconds < 30
    report_criterion(3, "saturating beam == exhaustive", passed, f"{matches}/50 models match; time={seconds:.1f}s (<30s)")
    assert passed


def test_criterion_4_metrics(report_criterion):
    start = time.perf_counter()
    seqs = [s for k in range(7) for s in itertools.product(range(3), repeat=k)]
    ids = {s: i for i, s in enumerate(seqs)}
    n = len(seqs)
    tail = [ids[s[1:]] if s else -1 for s in seqs]
    length = [len(s) for s in seqs]
    memo = [-1] * (n * n)

    def levenshtein(i, j):
        # plain recursion over suffixes, memoized by sequence id
        key = i * n + j
        if memo[key] < 0:
            if not length[i] or not length[j]:
                memo[key] = length[i] + length[j]
            else:
                memo[key] = min(
                    levenshtein(tail[i], tail[j]) + (seqs[i][0] != seqs[j][0]),
                    levenshtein(tail[i], j) + 1,
                    levenshtein(i, tail[j]) + 1,
                )
        return memo[key]

    mismatches = 0
    for i, a in enumerate(seqs):
        for j, b in enumerate(seqs):
            c = edit_distance(a, b)
            if c.total != levenshtein(i, j) or len(a) - c.deletions != len(b) - c.insertions:
                mismatches += 1
    seconds = time.perf_counter() - start
    passed = mismatches == 0 and seconds < 30
    report_criterion(
        4, "edit distance exhaustive", passed, f"{n * n} pairs, {mismatches} mismatches; time={seconds:.1f}s (<30s)"
    )
    assert passed


# criteria 5 and 7: training dynamics


def run_seed(seed: int, root: Path) -> dict:
    timings = {}
    start = time.perf_counter()
    corpus = generate_corpus(CorpusSpec(seed=seed, utterance_count=2200, unlabeled_count=2000))
    labeled, unlabeled = split_corpus(corpus)
    write_corpus(labeled[:2000] + unlabeled, root / "train.txt")
    write_corpus(labeled[2000:], root / "dev.txt")
    timings["corpus"] = time.perf_counter() - start

    common = dict(
        seed=seed, train_corpus=str(root / "train.txt"), eval_corpus=str(root / "dev.txt"),
        eval_interval=1000, log_throughput=False,
    )
    base_ckpt = str(root / "mle" / "final.ckpt")
    runs = {
        "mle": dict(mode="mle"),
        "o1": dict(mode="o1", init_checkpoint=base_ckpt, train_beam_size=18),
        "embr": dict(mode="embr", init_checkpoint=base_ckpt, train_beam_size=8),
        "distill": dict(mode="o1_distill", teacher_checkpoint=base_ckpt, train_beam_size=8),
    }
    reports = {}
    for name, fields in runs.items():
        start = time.perf_counter()
        result = train(ExperimentConfig(output_dir=str(root / name), **common, **fields))
        timings[name] = time.perf_counter() - start
        reports[name] = result.final_report
    return {"reports": reports, "timings": timings}


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    out = {}
    for seed in SEEDS:
        root = tmp_path_factory.mktemp(f"seed{seed}")
        out[seed] = run_seed(seed, root)
    return out


def closure(base: EvalReport, tuned: EvalReport) -> float:
    return (base.gap - tuned.gap) / base.gap


def test_criterion_5_gap_closure(pipelines, report_criterion):
    parts, o1_closures, wins = [], [], 0
    seconds = 0.0
    baselines_ok = True
    for seed in SEEDS:
        r, t = pipelines[seed]["reports"], pipelines[seed]["timings"]
        seconds += t["corpus"] + t["mle"] + t["o1"] + t["embr"]
        c_o1, c_embr = closure(r["mle"], r["o1"]), closure(r["mle"], r["embr"])
        o1_closures.append(c_o1)
        wins += c_o1 >= c_embr
        baselines_ok &= r["mle"].gap >= 0.02
        parts.append(f"seed{seed}: base gap={r['mle'].gap:.4f} o1={c_o1:+.1%} embr={c_embr:+.1%}")
    mean_o1 = float(np.mean(o1_closures))
    passed = baselines_ok and mean_o1 >= 0.40 and wins >= 2 and seconds <= 900
    detail = (
        f"{'; '.join(parts)}; mean o1 closure={mean_o1:.1%} (>=40%), o1>=embr in {wins}/3 (>=2), "
        f"baselines gap>=2%: {baselines_ok}; time={seconds:.0f}s (<=900s)"
    )
    report_criterion(5, "gap closure", passed, detail)
    assert passed


def test_criterion_7_distillation(pipelines, report_criterion):
    parts, wins = [], 0
    seconds = 0.0
    for seed in SEEDS:
        r, t = pipelines[seed]["reports"], pipelines[seed]["timings"]
        # labeled-only student: O-1 from the same teacher on the labeled split
        seconds += t["corpus"] + t["mle"] + t["o1"] + t["distill"]
        wins += r["distill"].one_best_wer <= r["o1"].one_best_wer
        parts.append(f"seed{seed}: distill={r['distill'].one_best_wer:.4f} labeled-only={r['o1'].one_best_wer:.4f}")
    passed = wins >= 2 and seconds <= 1200
    detail = f"{'; '.join(parts)}; distill <= labeled-only in {wins}/3 (>=2); time={seconds:.0f}s (<=1200s)"
    report_criterion(7, "distillation", passed, detail)
    assert passed


# criterion 6: compute


def test_criterion_6_compute(report_criterion):
    start = time.perf_counter()
    utts = generate_corpus(CorpusSpec(seed=6, utterance_count=32))
    model = ToyTransducer(ModelParams.initialize(ModelConfig(16, 16), 6))
    batches = [utts[i : i + 8] for i in range(0, 32, 8)]
    nbests = [[decode(model, u.features, 8) for u in b] for b in batches]
    full = all(len(nb) == 8 for group in nbests for nb in group)
    seconds = {"o1": 0.0, "embr": 0.0}
    lattices = {"o1": 0, "embr": 0}
    for _ in range(3):
        for batch, group in zip(batches, nbests):
            pairs = [(u.features, u.labels) for u in batch]
            for mode in ("o1", "embr"):
                step = batch_step(model, pairs, mode, beam_size=8, nbests=group)
                seconds[mode] += step.objective_seconds
                lattices[mode] += step.objective_lattices
    utterances = 3 * 32
    per_utt = {m: lattices[m] / utterances for m in lattices}
    total = time.perf_counter() - start
    passed = full and seconds["o1"] < seconds["embr"] and per_utt == {"o1": 2, "embr": 8} and total < 300
    detail = (
        f"objective time o1={seconds['o1']:.2f}s embr={seconds['embr']:.2f}s; "
        f"lattices/utt o1={per_utt['o1']:g} embr={per_utt['embr']:g}; time={total:.1f}s (<300s)"
    )
    report_criterion(6, "compute advantage", passed, detail)
    assert passed


# criterion 8: property suites


@st.composite
def hypothesis_scores(draw, distinct=False):
    n = draw(st.integers(2 if distinct else 1, 8))
    log_probs = draw(st.lists(st.floats(-40, 0), min_size=n, max_size=n))
    errors = draw(st.lists(st.integers(0, 10), min_size=n, max_size=n))
    lengths = draw(st.lists(st.integers(0, 10), min_size=n, max_size=n))
    ref_len = draw(st.integers(1, 10))
    oracle = int(np.argmin(errors))
    one_best = draw(st.integers(0, n - 1).filter(lambda i: not distinct or i != oracle))
    errors = np.asarray(errors)
    return HypothesisScores(log_probs, errors, errors / ref_len, lengths, oracle, one_best)


def property_embr_zero_sum(count):
    @settings(max_examples=100, deadline=None, database=None)
    @given(hypothesis_scores())
    def check(scores):
        count[0] += 1
        coeffs = embr_loss(scores).coeffs
        assert abs(coeffs.sum()) <= 1e-9 * max(1.0, np.abs(coeffs).max())

    check()


def property_shift_invariance(count):
    @settings(max_examples=100, deadline=None, database=None)
    @given(st.integers(0, 2**32 - 1))
    def check(seed):
        count[0] += 1
        rng = np.random.default_rng(seed)
        T, U, V = (int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(1, 5)))
        logits = rng.normal(scale=2.0, size=(T, U + 1, V + 1))
        labels = tuple(int(y) for y in rng.integers(1, V + 1, size=U))
        shifted = logits + rng.normal(scale=50.0, size=(T, U + 1, 1))
        assert abs(rnnt_log_prob(logits, labels).log_prob - rnnt_log_prob(shifted, labels).log_prob) <= 1e-9
        np.testing.assert_allclose(rnnt_grad(logits, labels), rnnt_grad(shifted, labels), atol=1e-9)

    check()


def property_oracle_not_worse(count):
    @settings(max_examples=100, deadline=None, database=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 6))
    def check(seed, V, beam):
        count[0] += 1
        rng = np.random.default_rng(seed)
        model = tiny_model(seed % 10_000, vocab_size=V)
        refs = [tuple(int(y) for y in rng.integers(1, V + 1, size=rng.integers(0, 4))) for _ in range(3)]
        feats = [rng.normal(size=(int(rng.integers(1, 5)), 3)) for _ in refs]
        nbests = [beam_search(model.scorer(), model.encode(x).states, beam) for x in feats]
        for ref, nb in zip(refs, nbests):
            sel = select_oracle(nb, ref)
            assert sel.oracle_wer <= sel.one_best_wer
        utts = [Utterance(str(i), x, r) for i, (x, r) in enumerate(zip(feats, refs))]
        report = evaluate_nbests(utts, nbests)
        assert report.oracle_wer <= report.one_best_wer

    check()


def property_o1_signs(count):
    @settings(max_examples=100, deadline=None, database=None)
    @given(hypothesis_scores(distinct=True))
    def check(scores):
        count[0] += 1
        coeffs = o1_loss(scores).coeffs
        assert coeffs[scores.oracle_index] <= 0
        assert coeffs[scores.one_best_index] >= 0

    check()


def property_checkpoint_round_trip(count):
    @settings(max_examples=100, deadline=None, database=None)
    @given(
        st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4),
        st.integers(0, 2**32 - 1), st.booleans(), st.integers(0, 2**40),
    )
    def check(D, V, H, E, seed, with_adam, step):
        count[0] += 1
        config = ModelConfig(D, V, H, E)
        rng = np.random.default_rng(seed)
        params = ModelParams(config, rng.normal(scale=10.0, size=config.param_count))
        adam = None
        if with_adam:
            adam = AdamState(rng.normal(size=config.param_count), rng.random(config.param_count), int(step % 1000))
        data = encode_checkpoint(Checkpoint(params, step, adam, config.fingerprint()))
        assert encode_checkpoint(decode_checkpoint(data)) == data
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / "a.ckpt", Path(tmp) / "b.ckpt"
            first.write_bytes(data)
            save_checkpoint(load_checkpoint(first), second)
            assert second.read_bytes() == data

    check()


def property_csv_reproducibility(count, root: Path):
    spec = CorpusSpec(utterance_count=10, vocab_size=4, feature_dim=4, label_len=(1, 3))
    corpus = generate_corpus(spec)
    write_corpus(corpus[:8], root / "train.txt")
    write_corpus(corpus[8:], root / "dev.txt")
    tiny = dict(
        train_corpus=str(root / "train.txt"), eval_corpus=str(root / "dev.txt"), hidden=4, embed=2,
        train_beam_size=2, eval_beam_size=2, eval_interval=2, log_throughput=False,
    )
    base = train(ExperimentConfig(output_dir=str(root / "base"), pretrain_steps=2, batch_size=2, **tiny))
    base_ckpt = str(base.output_dir / "final.ckpt")

    @settings(max_examples=100, deadline=None, database=None)
    @given(
        st.integers(0, 2**31 - 1), st.sampled_from(["mle", "o1", "embr"]), st.integers(1, 3),
        st.integers(1, 3), st.sampled_from([1e-3, 1e-2, 5e-2]),
    )
    def check(seed, mode, steps, batch, lr):
        count[0] += 1
        fields = dict(seed=seed, mode=mode, pretrain_steps=steps, finetune_steps=steps, batch_size=batch,
                      learning_rate=lr, **tiny)
        if mode != "mle":
            fields["init_checkpoint"] = base_ckpt
        with tempfile.TemporaryDirectory() as tmp:
            a = train(ExperimentConfig(output_dir=f"{tmp}/a", **fields))
            b = train(ExperimentConfig(output_dir=f"{tmp}/b", **fields))
            assert (a.output_dir / "metrics.csv").read_bytes() == (b.output_dir / "metrics.csv").read_bytes()

    check()


def test_criterion_8_property_suites(report_criterion, tmp_path):
    start = time.perf_counter()
    suites = {
        "embr_zero_sum": property_embr_zero_sum,
        "softmax_shift_invariance": property_shift_invariance,
        "oracle_le_one_best": property_oracle_not_worse,
        "o1_sign_structure": property_o1_signs,
        "checkpoint_round_trip": property_checkpoint_round_trip,
        "metrics_csv_reproducible": lambda c: property_csv_reproducibility(c, tmp_path),
    }
    outcomes = {}
    for name, run in suites.items():
        count = [0]
        try:
            run(count)
            outcomes[name] = (True, count[0], "")
        except Exception as exc:  # report every suite, then fail
            outcomes[name] = (False, count[0], f"{type(exc).__name__}: {str(exc).splitlines()[0][:80]}")
    seconds = time.perf_counter() - start
    passed = all(ok and n >= 100 for ok, n, _ in outcomes.values())
    detail = "; ".join(
        f"{name} {'ok' if ok else 'FAILED'} n={n}{' ' + err if err else ''}" for name, (ok, n, err) in outcomes.items()
    )
    report_criterion(8, "property suites", passed, f"{detail}; time={seconds:.1f}s")
    assert passed
