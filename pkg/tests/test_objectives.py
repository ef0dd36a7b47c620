import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from o1transducer.errors import ContractViolation
from o1transducer.gradcheck import central_difference, relative_error
from o1transducer.metrics import select_oracle
from o1transducer.objectives import (
    HypothesisScores,
    embr_loss,
    multitask_embr,
    multitask_o1,
    o1_distill_loss,
    o1_loss,
    score_hypotheses,
)


def scores(log_probs, errors, ref_len=4, lengths=None, oracle=None, one_best=0):
    errors = np.asarray(errors, dtype=float)
    lengths = [ref_len] * len(errors) if lengths is None else lengths
    oracle = int(np.argmin(errors)) if oracle is None else oracle
    return HypothesisScores(log_probs, errors, errors / ref_len, lengths, oracle, one_best)


@st.composite
def random_scores(draw):
    n = draw(st.integers(1, 8))
    log_probs = draw(st.lists(st.floats(-30, 0), min_size=n, max_size=n))
    errors = draw(st.lists(st.integers(0, 8), min_size=n, max_size=n))
    lengths = draw(st.lists(st.integers(0, 8), min_size=n, max_size=n))
    ref_len = draw(st.integers(1, 8))
    one_best = draw(st.integers(0, n - 1))
    return scores(log_probs, errors, ref_len, lengths, one_best=one_best)


def test_embr_equal_scores():
    r = embr_loss(scores([-3.0, -3.0], [1, 3]))
    assert r.loss == pytest.approx(2.0)
    np.testing.assert_allclose(r.coeffs, [-0.5, 0.5])


def test_embr_single_hypothesis():
    r = embr_loss(scores([-1.2], [3]))
    assert r.loss == pytest.approx(3.0)
    np.testing.assert_allclose(r.coeffs, [0.0])


def test_embr_coeffs_match_finite_differences():
    rng = np.random.default_rng(0)
    s = scores(rng.normal(size=5) * 2 - 4, [0, 2, 1, 3, 5])
    analytic = embr_loss(s).coeffs

    def f(lp):
        return embr_loss(HypothesisScores(lp, s.error_counts, s.wers, s.lengths, s.oracle_index)).loss

    assert relative_error(analytic, central_difference(f, s.log_probs)) <= 1e-7


def test_o1_arithmetic():
    # normalized log-probs -2 and -1, oracle WER 0, 1-best WER 0.25
    s = scores([-8.0, -4.0], [1, 0], ref_len=4, oracle=1, one_best=0)
    r = o1_loss(s)
    # oracle ell=-1 (len 4), 1-best ell=-2 with WER 0.25
    assert r.loss == pytest.approx(1.0 - 0.5)
    s = HypothesisScores([-4.0, -8.0], [1, 0], [0.25, 0.0], [4, 4], oracle_index=1, one_best_index=0)
    r = o1_loss(s)
    assert r.loss == pytest.approx(2.0 - 0.25)
    np.testing.assert_allclose(r.coeffs, [0.25 / 4, -1.0 / 4])


def test_o1_zero_loss_when_certain_and_correct():
    r = o1_loss(scores([0.0], [0]))
    assert r.loss == 0.0


def test_o1_same_hypothesis_first_term_only():
    r = o1_loss(HypothesisScores([-1.0], [0], [0.0], [2], 0, 0))
    assert r.loss == pytest.approx(0.5)
    np.testing.assert_allclose(r.coeffs, [-0.5])


def test_o1_same_hypothesis_with_errors_accumulates():
    # literal formula: -ell (1 - w) + ell w
    r = o1_loss(HypothesisScores([-3.0], [1], [0.5], [3], 0, 0))
    assert r.loss == pytest.approx(1.0 * 0.5 - 1.0 * 0.5)
    np.testing.assert_allclose(r.coeffs, [(-0.5 + 0.5) / 3])


def test_o1_clamps_wer_above_one():
    r = o1_loss(HypothesisScores([-2.0, -1.0], [6, 5], [3.0, 2.5], [1, 1], 1, 0))
    # oracle weight (1 - 1) = 0, 1-best weight 1
    assert r.loss == pytest.approx(-2.0)
    np.testing.assert_allclose(r.coeffs, [1.0, 0.0])


def test_o1_empty_hypothesis_uses_unit_length():
    r = o1_loss(HypothesisScores([-2.0, -5.0], [2, 0], [1.0, 0.0], [0, 2], 1, 0))
    assert r.loss == pytest.approx(2.5 - 2.0)
    np.testing.assert_allclose(r.coeffs, [1.0, -0.5])


def test_multitask_arithmetic():
    embr = embr_loss(scores([-1.0, -1.0], [1, 3]))
    assert multitask_embr(embr, 3.0, 0.1).loss == pytest.approx(2.3)
    assert multitask_embr(embr, 3.0, 0.0).loss == pytest.approx(2.0)
    o1 = o1_loss(HypothesisScores([-4.0, -8.0], [1, 0], [0.25, 0.0], [4, 4], 1, 0))
    r = multitask_o1(o1, 3.0, 0.1)
    assert r.loss == pytest.approx(2.05)
    assert r.components["o1"] == pytest.approx(1.75)
    assert r.components["rnnt"] == 3.0
    assert r.rnnt_weight == 0.1
    assert multitask_o1(o1, 3.0, 0.0).loss == pytest.approx(1.75)


def test_multitask_rejects_negative_weight():
    with pytest.raises(ContractViolation):
        multitask_o1(o1_loss(scores([-1.0], [0])), 1.0, -0.1)


def test_distill_arithmetic_and_components():
    o1_scores = HypothesisScores([-4.0, -8.0], [1, 0], [0.25, 0.0], [4, 4], 1, 0)
    r = o1_distill_loss(o1_scores, 3.0, 0.1)
    assert r.loss == pytest.approx(2.05)
    assert r.components["o1"] + 0.1 * r.components["distill"] == pytest.approx(r.loss)


def test_distill_degenerate_convergence():
    r = o1_distill_loss(HypothesisScores([0.0], [0], [0.0], [3], 0, 0), 0.0, 0.1)
    assert r.loss == 0.0


def test_score_hypotheses_against_pseudo_label_matches_hand_composition():
    hyps = [(1, 2), (1, 3), (2,)]
    log_probs = [-1.0, -1.5, -2.5]
    pseudo = (1, 3)
    s = score_hypotheses(hyps, log_probs, pseudo)
    sel = select_oracle(hyps, pseudo, log_probs)
    assert (s.oracle_index, s.one_best_index) == (sel.oracle_index, sel.one_best_index) == (1, 0)
    by_hand = -(-1.5 / 2) * (1 - 0.0) + (-1.0 / 2) * 0.5
    r = o1_distill_loss(s, 2.0, 0.1)
    assert r.loss == pytest.approx(by_hand + 0.2)


def test_score_hypotheses_ranking_scores_break_ties():
    # equal WER; ranking scores prefer the second hypothesis
    s = score_hypotheses([(1,), (2,)], [-1.0, -1.0], (3,), ranking_scores=[-2.0, -1.0])
    assert s.oracle_index == 1


def test_hypothesis_scores_validation():
    with pytest.raises(ContractViolation):
        HypothesisScores([-1.0, -2.0], [0], [0.0], [1], 0, 0)
    with pytest.raises(ContractViolation):
        HypothesisScores([], [], [], [], 0, 0)
    with pytest.raises(ContractViolation):
        HypothesisScores([-1.0], [0], [0.0], [1], 1, 0)


@settings(max_examples=100, deadline=None)
@given(random_scores())
def test_embr_loss_bounds(s):
    r = embr_loss(s)
    assert min(s.error_counts) - 1e-9 <= r.loss <= max(s.error_counts) + 1e-9


@settings(max_examples=100, deadline=None)
@given(random_scores())
def test_o1_lower_bound(s):
    r = o1_loss(s)
    ell_b = s.normalized_log_probs[s.one_best_index]
    assert r.loss >= ell_b - 1e-12


@settings(max_examples=100, deadline=None)
@given(random_scores())
def test_coefficients_match_finite_differences(s):
    for loss_fn in (embr_loss, o1_loss):

        def f(lp, loss_fn=loss_fn):
            return loss_fn(HypothesisScores(lp, s.error_counts, s.wers, s.lengths, s.oracle_index, s.one_best_index)).loss

        assert relative_error(loss_fn(s).coeffs, central_difference(f, s.log_probs)) <= 1e-6
