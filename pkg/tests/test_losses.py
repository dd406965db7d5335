import itertools
import math

import numpy as np
import pytest

from gaitkit import autodiff as ad
from gaitkit.autodiff import Tensor
from gaitkit.errors import DataError
from gaitkit.gradcheck import fd_check
from gaitkit.losses import combined_loss, smoothed_ce, triplet_loss


def brute_force_triplet(emb, labels, margin):
    """Literal enumeration of Eq-style batch-all pairs, per part, averaged."""
    n, parts, _ = emb.shape
    total, nonzero = 0.0, 0
    for p in range(parts):
        pos, neg = [], []
        for i, j in itertools.combinations(range(n), 2):
            d = math.dist(emb[i, p], emb[j, p])
            (pos if labels[i] == labels[j] else neg).append(d)
        terms = [dp - dn + margin for dp in pos for dn in neg]
        active = [v for v in terms if v > 0]
        nonzero += len(active)
        total += (sum(active) / len(active)) if active else 0.0
    return total / parts, nonzero


class TestTriplet:
    def test_satisfied_term_is_zero(self):
        assert max(0.5 - 0.9 + 0.2, 0) == 0  # the hinge convention under test
        emb = np.zeros((4, 1, 2))
        emb[0, 0] = [0.0, 0.0]
        emb[1, 0] = [0.5, 0.0]   # d_pos = 0.5
        emb[2, 0] = [5.0, 0.0]
        emb[3, 0] = [5.0, 0.9]   # far cluster
        lv = triplet_loss(Tensor(emb), np.array([0, 0, 1, 1]), margin=0.2)
        assert lv.nonzero_count == 0
        assert lv.value.item() == 0.0

    def test_violating_term_value(self):
        # d_pos = 1.0, d_neg = 0.5, margin 0.2 -> 0.7
        emb = np.zeros((3, 1, 1))
        emb[0, 0] = [0.0]
        emb[1, 0] = [1.0]    # positive pair distance 1.0
        emb[2, 0] = [0.5]    # negative at 0.5 from anchor, 0.5 from positive
        lv = triplet_loss(Tensor(emb), np.array([0, 0, 1]), margin=0.2)
        # pairs: pos {(0,1): 1.0}; neg {(0,2): 0.5, (1,2): 0.5} -> two active 0.7 terms
        np.testing.assert_allclose(lv.value.item(), 0.7, atol=1e-12)
        assert lv.nonzero_count == 2

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        labels = np.array([0, 0, 0, 1, 1, 2, 2, 2])
        emb = rng.standard_normal((8, 4, 5))
        lv = triplet_loss(Tensor(emb), labels, margin=0.2)
        expect, count = brute_force_triplet(emb, labels, 0.2)
        np.testing.assert_allclose(lv.value.item(), expect, rtol=1e-12)
        assert lv.nonzero_count == count

    def test_single_identity_raises(self):
        with pytest.raises(DataError, match="negative"):
            triplet_loss(Tensor(np.ones((3, 1, 2))), np.array([1, 1, 1]))

    def test_rotation_invariance(self):
        rng = np.random.default_rng(9)
        emb = rng.standard_normal((6, 2, 8))
        labels = np.array([0, 0, 1, 1, 2, 2])
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        rotated = emb @ q
        a = triplet_loss(Tensor(emb), labels).value.item()
        b = triplet_loss(Tensor(rotated), labels).value.item()
        assert abs(a - b) < 1e-9

    def test_zero_iff_all_margins_satisfied(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            emb = rng.standard_normal((6, 1, 3))
            labels = np.array([0, 0, 0, 1, 1, 1])
            lv = triplet_loss(Tensor(emb), labels, margin=0.2)
            expect, _ = brute_force_triplet(emb, labels, 0.2)
            assert (lv.value.item() == 0.0) == (expect == 0.0)
            assert lv.value.item() >= 0.0


class TestSmoothedCE:
    def test_perfect_prediction_is_zero(self):
        p = np.array([[[1.0, 0.0]]])
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=0.0)
        assert out.item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_prediction_is_log_two(self):
        p = np.array([[[0.5, 0.5]]])
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=0.0)
        np.testing.assert_allclose(out.item(), math.log(2.0), atol=1e-12)

    def test_confident_prediction_value(self):
        p = np.array([[[0.9, 0.1]]])
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=0.0)
        np.testing.assert_allclose(out.item(), -math.log(0.9), atol=1e-12)

    def test_every_class_contributes_one_vs_rest(self):
        # literal per-class evaluation: -(1/Y) sum_y [t log p + (1-t) log(1-p)]
        p = np.array([[[0.7, 0.2, 0.1]]])
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=0.0)
        expect = -(math.log(0.7) + math.log(0.8) + math.log(0.9)) / 3.0
        np.testing.assert_allclose(out.item(), expect, atol=1e-12)

    def test_smoothing_mixes_targets(self):
        p = np.array([[[0.7, 0.3]]])
        eps = 0.1
        t0 = 1 - eps + eps / 2  # true class target
        t1 = eps / 2
        expect = -(
            t0 * math.log(0.7) + (1 - t0) * math.log(0.3)
            + t1 * math.log(0.3) + (1 - t1) * math.log(0.7)
        ) / 2.0
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=eps)
        np.testing.assert_allclose(out.item(), expect, atol=1e-12)

    def test_conventional_switch(self):
        p = np.array([[[0.7, 0.3]]])
        out = smoothed_ce(Tensor(p), np.array([0]), epsilon=0.0, conventional=True)
        np.testing.assert_allclose(out.item(), -math.log(0.7), atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            smoothed_ce(Tensor(np.ones((1, 1, 2)) / 2), np.array([2]))

    def test_clamp_floor_prevents_infinity(self):
        p = np.array([[[1.0, 0.0]]])
        out = smoothed_ce(Tensor(p), np.array([1]), epsilon=0.0)
        assert np.isfinite(out.item())


class TestCombined:
    def _batch(self):
        rng = np.random.default_rng(11)
        emb = rng.standard_normal((4, 2, 3))
        logits = rng.standard_normal((4, 2, 3))
        labels = np.array([0, 0, 1, 1])
        return emb, logits, labels

    def test_lambda_ce_zero_equals_triplet(self):
        emb, logits, labels = self._batch()
        total, tri, _ = combined_loss(Tensor(emb), Tensor(logits), labels, lambda_ce=0.0)
        np.testing.assert_allclose(total.item(), tri.value.item(), atol=1e-12)

    def test_lambda_tri_zero_equals_ce(self):
        emb, logits, labels = self._batch()
        total, _, ce = combined_loss(Tensor(emb), Tensor(logits), labels, lambda_triplet=0.0)
        np.testing.assert_allclose(total.item(), ce.item(), atol=1e-12)

    def test_both_zero(self):
        emb, logits, labels = self._batch()
        total, _, _ = combined_loss(Tensor(emb), Tensor(logits), labels,
                                    lambda_triplet=0.0, lambda_ce=0.0)
        assert total.item() == 0.0


class TestLossGradients:
    def test_triplet_gradient_matches_fd(self):
        rng = np.random.default_rng(12)
        labels = np.array([0, 0, 1, 1])
        for _ in range(10):
            emb = rng.standard_normal((4, 2, 3))
            err = fd_check(lambda x: triplet_loss(x, labels, margin=0.2).value, [emb])
            assert err < 1e-4

    def test_ce_gradient_matches_fd(self):
        rng = np.random.default_rng(13)
        labels = np.array([0, 1, 2])
        for _ in range(10):
            z = rng.uniform(-2, 2, size=(3, 2, 3))
            err = fd_check(
                lambda x: smoothed_ce(ad.softmax(x, axis=2), labels, epsilon=0.1), [z])
            assert err < 1e-4
