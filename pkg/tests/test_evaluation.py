"""Voting behavior and metric definitions against hand oracles."""

import numpy as np
import pytest

from helpers import make_timeline, tiny_config
from temt.evaluation import (
    N_VOTES,
    auc_from_scores,
    compute_metrics,
    evaluate_timelines,
    majority_vote,
    predict_user,
)
from temt.model import init_params


class TestMajorityVote:
    def test_unanimous_positive(self):
        r = majority_vote("u", np.full(10, 0.9))
        assert (r.final_label, r.votes_positive, r.votes_negative) == (1, 10, 0)
        assert not r.tie_broken

    def test_six_four_positive(self):
        probs = np.array([0.9] * 6 + [0.1] * 4)
        r = majority_vote("u", probs)
        assert r.final_label == 1 and r.votes_positive == 6

    def test_tie_resolved_by_mean(self):
        low = np.array([0.6] * 5 + [0.1] * 5)   # mean 0.35
        high = np.array([0.95] * 5 + [0.4] * 5)  # mean 0.675
        assert majority_vote("u", low).final_label == 0
        assert majority_vote("u", high).final_label == 1
        assert majority_vote("u", low).tie_broken

    def test_exact_tie_goes_positive(self):
        probs = np.array([0.7] * 5 + [0.3] * 5)  # mean exactly 0.5
        assert majority_vote("u", probs).final_label == 1

    def test_vote_counts_strictly_above_half(self):
        probs = np.array([0.5] * 10)  # 0.5 is not a positive vote
        r = majority_vote("u", probs)
        assert r.votes_positive == 0 and r.final_label == 0


class TestPredictUser:
    def test_short_timeline_unanimous(self):
        # fewer posts than K: every window is the whole timeline, so the
        # ten votes are identical
        config = tiny_config(window_size=5)
        params = init_params(config, np.random.default_rng(0))
        tl = make_timeline(3, seed=1)
        r = predict_user(tl, params, config, np.random.default_rng(2), image_dim=4)
        assert len(r.probabilities) == N_VOTES
        assert len(set(np.round(r.probabilities, 15))) == 1
        assert r.votes_positive in (0, N_VOTES)

    def test_deterministic_given_seed(self):
        config = tiny_config(window_size=3)
        params = init_params(config, np.random.default_rng(0))
        tl = make_timeline(20, seed=1)
        a = predict_user(tl, params, config, np.random.default_rng(7), image_dim=4)
        b = predict_user(tl, params, config, np.random.default_rng(7), image_dim=4)
        np.testing.assert_array_equal(a.probabilities, b.probabilities)

    def test_evaluate_timelines_matches_per_user_path(self):
        config = tiny_config(window_size=3)
        params = init_params(config, np.random.default_rng(0))
        tls = [make_timeline(12, seed=s, user_id=f"u{s}", label=s % 2) for s in range(4)]
        metrics, votes = evaluate_timelines(tls, params, config,
                                            np.random.default_rng(3), image_dim=4)
        assert len(votes) == 4
        assert metrics.tp + metrics.fp + metrics.fn + metrics.tn == 4


class TestMetrics:
    def test_perfect(self):
        m = compute_metrics([1, 0, 1], [1, 0, 1], [0.9, 0.1, 0.8])
        assert (m.f1, m.precision, m.recall, m.accuracy, m.auc) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_hand_confusion_matrix(self):
        # TP=2, FP=1, FN=2, TN=6: precision 2/3, recall 1/2,
        # F1 = 2*(2/3 * 1/2)/(2/3 + 1/2) = 4/7
        labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        preds = [1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0]
        m = compute_metrics(preds, labels)
        assert m.precision == pytest.approx(2 / 3)
        assert m.recall == pytest.approx(1 / 2)
        assert m.f1 == pytest.approx(4 / 7)
        assert m.accuracy == pytest.approx(8 / 11)
        assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 2, 6)

    def test_perfect_ranking_auc(self):
        auc = auc_from_scores(np.array([0.9, 0.8, 0.3, 0.1]), np.array([1, 1, 0, 0]))
        assert auc == 1.0

    def test_all_tied_scores_auc_half(self):
        auc = auc_from_scores(np.full(6, 0.5), np.array([1, 0, 1, 0, 1, 0]))
        assert auc == 0.5

    def test_single_class_auc_none(self):
        m = compute_metrics([1, 1], [1, 1], [0.9, 0.8])
        assert m.auc is None

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(0)
        scores = rng.random(40)
        labels = (rng.random(40) < 0.5).astype(int)
        base = auc_from_scores(scores, labels)
        for transform in (lambda s: 2 * s + 1, np.exp, lambda s: s ** 3):
            assert auc_from_scores(transform(scores), labels) == pytest.approx(base, abs=1e-15)

    def test_degenerate_zero_conventions(self):
        m = compute_metrics([0, 0], [1, 1])
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics([1], [1, 0])
        with pytest.raises(ValueError):
            compute_metrics([1, 0], [1, 0], [0.5])

    def test_small_exhaustive_brute_force(self):
        # every confusion matrix with counts <= 4 against direct formulas
        for tp in range(5):
            for fp in range(5):
                for fn in range(5):
                    for tn in range(5):
                        if tp + fp + fn + tn == 0:
                            continue
                        labels = [1] * (tp + fn) + [0] * (fp + tn)
                        preds = [1] * tp + [0] * fn + [1] * fp + [0] * tn
                        m = compute_metrics(preds, labels)
                        prec = tp / (tp + fp) if tp + fp else 0.0
                        rec = tp / (tp + fn) if tp + fn else 0.0
                        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
                        assert m.precision == prec and m.recall == rec
                        assert m.f1 == f1
                        assert m.accuracy == (tp + tn) / len(labels)

    def test_auc_pairwise_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(4, 40))
            scores = np.round(rng.random(n), 1)  # force ties
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.min() == labels.max():
                continue
            pos = scores[labels == 1]
            neg = scores[labels == 0]
            wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
            oracle = wins / (len(pos) * len(neg))
            assert auc_from_scores(scores, labels) == pytest.approx(oracle, abs=1e-12)
