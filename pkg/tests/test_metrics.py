"""Rank-based AUC against the exhaustive pairwise oracle, plus logloss."""

import math

import numpy as np
import pytest

from fcn_ctr.metrics import auc, average_ranks, logloss
from fcn_ctr.numerics import Rng
from fcn_ctr.verification import pairwise_auc_oracle


class TestAuc:
    def test_hand_example(self):
        # 4 positive/negative pairs, 3 won: 0.75
        assert auc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])) == 0.75

    def test_perfect_separation(self):
        assert auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0

    def test_all_tied_is_half(self):
        assert auc(np.full(6, 0.5), np.array([0, 1, 0, 1, 0, 1])) == 0.5

    def test_single_class_names_the_class(self):
        with pytest.raises(ValueError, match="no negative"):
            auc(np.array([0.1, 0.2]), np.array([1, 1]))
        with pytest.raises(ValueError, match="no positive"):
            auc(np.array([0.1, 0.2]), np.array([0, 0]))

    def test_invariant_under_increasing_transform(self):
        rng = Rng(13)
        scores = rng.uniform(-3, 3, 400)
        labels = (rng.random(400) < 0.4).astype(np.int64)
        base = auc(scores, labels)
        for transform in (np.exp, lambda s: s ** 3, lambda s: 100 + 0.1 * s):
            np.testing.assert_allclose(auc(transform(scores), labels), base,
                                       rtol=1e-12)

    def test_reversal_symmetry_without_ties(self):
        rng = Rng(14)
        scores = rng.permutation(500).astype(np.float64)  # all distinct
        labels = (rng.random(500) < 0.5).astype(np.int64)
        np.testing.assert_allclose(auc(scores, labels) + auc(-scores, labels), 1.0,
                                   rtol=1e-12)

    def test_matches_pairwise_oracle_with_ties(self):
        rng = Rng(15)
        for i in range(50):
            n = int(rng.integers(500)) + 10
            scores = np.round(rng.random(n), 2 if i % 2 == 0 else 6)
            labels = (rng.random(n) < 0.5).astype(np.int64)
            labels[0], labels[1] = 0, 1
            gap = abs(auc(scores, labels) - pairwise_auc_oracle(scores, labels))
            assert gap <= 1e-12

    def test_order_independence(self):
        rng = Rng(16)
        scores = np.round(rng.random(200), 2)
        labels = (rng.random(200) < 0.5).astype(np.int64)
        labels[:2] = [0, 1]
        perm = rng.permutation(200)
        assert auc(scores, labels) == auc(scores[perm], labels[perm])


class TestAverageRanks:
    def test_simple_ties(self):
        ranks = average_ranks(np.array([0.1, 0.3, 0.3, 0.7]))
        np.testing.assert_array_equal(ranks, [1.0, 2.5, 2.5, 4.0])

    def test_all_equal(self):
        ranks = average_ranks(np.full(5, 2.0))
        np.testing.assert_array_equal(ranks, np.full(5, 3.0))


class TestLogloss:
    def test_half_scores(self):
        np.testing.assert_allclose(
            logloss(np.array([0.5, 0.5]), np.array([1, 0])), math.log(2.0))

    def test_confident_correct_hits_clip_floor(self):
        val = logloss(np.array([1.0, 0.0]), np.array([1, 0]))
        assert 0.0 < val < 1e-6

    def test_hand_value(self):
        # (-ln 0.9 - ln 0.8) / 2
        expected = (-math.log(0.9) - math.log(0.8)) / 2.0
        got = logloss(np.array([0.9, 0.2]), np.array([1, 0]))
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        np.testing.assert_allclose(got, 0.16425, atol=1e-5)
