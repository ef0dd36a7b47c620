"""Finite-difference and brute-force verification suites.

Relative error is ``|analytic - numeric| / max(1, |analytic|)``,
so tiny gradients are compared absolutely.  ``perturb`` adds a constant to
every analytic gradient; it exists so tests can confirm that a breach is
actually reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .decoding import beam_search
from .lattice import brute_force_log_prob, rnnt_grad, rnnt_log_prob
from .model import ModelConfig, ModelParams, ToyTransducer
from .objectives import HypothesisScores, embr_loss, o1_loss
from .training import mle_step, sequence_step

LATTICE_ABS_TOL = 1e-10
KERNEL_REL_TOL = 1e-6
END_TO_END_REL_TOL = 1e-5
FD_STEP = 1e-5


@dataclass(frozen=True)
class SuiteResult:
    name: str
    cases: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: cases={self.cases} max_error={self.max_error:.3e} tol={self.tolerance:.0e}"


def relative_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.abs(a))
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, coords=None, h: float = FD_STEP) -> np.ndarray:
    """Numeric gradient of scalar ``f`` at ``x`` (only at the flat ``coords`` if given)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def _random_lattice(rng: np.random.Generator, max_t=4, max_u=3, max_v=4):
    T = int(rng.integers(1, max_t + 1))
    U = int(rng.integers(0, max_u + 1))
    V = int(rng.integers(1, max_v + 1))
    logits = rng.normal(scale=2.0, size=(T, U + 1, V + 1))
    labels = tuple(int(y) for y in rng.integers(1, V + 1, size=U))
    return logits, labels


def lattice_suite(rng: np.random.Generator, cases: int = 200) -> SuiteResult:
    worst = 0.0
    for _ in range(cases):
        logits, labels = _random_lattice(rng)
        worst = max(worst, abs(rnnt_log_prob(logits, labels).log_prob - brute_force_log_prob(logits, labels)))
    return SuiteResult("lattice_vs_brute_force", cases, worst, LATTICE_ABS_TOL)


def rnnt_grad_suite(rng: np.random.Generator, cases: int = 50, perturb: float = 0.0) -> SuiteResult:
    worst = 0.0
    for _ in range(cases):
        logits, labels = _random_lattice(rng)
        analytic = rnnt_grad(logits, labels) + perturb
        numeric = central_difference(lambda z: -rnnt_log_prob(z, labels).log_prob, logits)
        worst = max(worst, relative_error(analytic.reshape(-1), numeric))
    return SuiteResult("rnnt_grad", cases, worst, KERNEL_REL_TOL)


def _random_scores(rng: np.random.Generator) -> HypothesisScores:
    n = int(rng.integers(1, 9))
    lengths = rng.integers(0, 7, size=n)
    errors = rng.integers(0, 6, size=n)
    ref_len = int(rng.integers(1, 7))
    return HypothesisScores(
        log_probs=rng.normal(scale=3.0, size=n) - 5.0,
        error_counts=errors,
        wers=errors / ref_len,
        lengths=lengths,
        oracle_index=int(np.argmin(errors)),
        one_best_index=int(rng.integers(0, n)),
    )


def _coefficient_suite(name, loss_fn, rng, cases, perturb) -> SuiteResult:
    worst = 0.0
    for _ in range(cases):
        scores = _random_scores(rng)
        analytic = loss_fn(scores).coeffs + perturb

        def f(lp, scores=scores):
            shifted = HypothesisScores(
                lp, scores.error_counts, scores.wers, scores.lengths, scores.oracle_index, scores.one_best_index
            )
            return loss_fn(shifted).loss

        worst = max(worst, relative_error(analytic, central_difference(f, scores.log_probs)))
    return SuiteResult(name, cases, worst, KERNEL_REL_TOL)


def embr_suite(rng: np.random.Generator, cases: int = 50, perturb: float = 0.0) -> SuiteResult:
    return _coefficient_suite("embr_coefficients", embr_loss, rng, cases, perturb)


def o1_suite(rng: np.random.Generator, cases: int = 50, perturb: float = 0.0) -> SuiteResult:
    return _coefficient_suite("o1_coefficients", o1_loss, rng, cases, perturb)


def _random_model(rng: np.random.Generator) -> ToyTransducer:
    config = ModelConfig(input_dim=3, vocab_size=int(rng.integers(2, 4)), hidden=5, embed=4)
    flat = rng.uniform(-0.6, 0.6, size=config.param_count)
    return ToyTransducer(ModelParams(config, flat))


def end_to_end_suite(
    rng: np.random.Generator, cases: int = 50, coords_per_case: int = 32, perturb: float = 0.0
) -> SuiteResult:
    """Parameter gradients of the MLE, EMBR and O-1 steps against finite differences.

    The n-best list is decoded once per case and held fixed, which is what
    the training step differentiates.
    """
    worst = 0.0
    objectives = ("mle", "embr", "o1")
    for case in range(cases):
        model = _random_model(rng)
        V = model.params.config.vocab_size
        T = int(rng.integers(2, 6))
        x = rng.normal(size=(T, model.params.config.input_dim))
        ref = tuple(int(y) for y in rng.integers(1, V + 1, size=int(rng.integers(1, 4))))
        objective = objectives[case % 3]
        if objective == "mle":
            def step(m):
                return mle_step(m, x, ref)
        else:
            nbest = beam_search(model.scorer(), model.encode(x).states, 4)

            def step(m, nbest=nbest, objective=objective):
                return sequence_step(m, x, ref, nbest, objective, 0.1)

        analytic = step(model).grad + perturb
        coords = rng.choice(model.params.flat.size, size=coords_per_case, replace=False)
        params = model.params

        def f(theta, params=params, step=step):
            return step(ToyTransducer(ModelParams(params.config, theta))).result.loss

        numeric = central_difference(f, params.flat, coords)
        worst = max(worst, relative_error(analytic[coords], numeric))
    return SuiteResult("end_to_end_params", cases, worst, END_TO_END_REL_TOL)


def run_all(seed: int = 0, cases: int = 50, perturb: float = 0.0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    return [
        lattice_suite(rng, max(cases, 200)),
        rnnt_grad_suite(rng, cases, perturb),
        embr_suite(rng, cases, perturb),
        o1_suite(rng, cases, perturb),
        end_to_end_suite(rng, cases, perturb=perturb),
    ]
