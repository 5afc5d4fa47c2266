"""IoU / mIoU and the domain-gap proxy."""

import numpy as np
import pytest

from critseg.metrics import ConfusionMatrix, domain_gap, iou


class TestConfusionMatrix:
    def test_total_matches_pixel_count(self, rng):
        cm = ConfusionMatrix(3)
        cm.add(rng.integers(0, 3, size=(8, 8)), rng.integers(0, 3, size=(8, 8)))
        assert cm.total == 64

    def test_accumulation_order_independent(self, rng):
        t = rng.integers(0, 4, size=200)
        p = rng.integers(0, 4, size=200)
        a = ConfusionMatrix(4).add(t, p)
        b = ConfusionMatrix(4)
        for i in rng.permutation(200):
            b.add(t[i : i + 1], p[i : i + 1])
        assert np.array_equal(a.counts, b.counts)

    def test_merge_equals_joint(self, rng):
        t = rng.integers(0, 3, size=100)
        p = rng.integers(0, 3, size=100)
        joint = ConfusionMatrix(3).add(t, p)
        left = ConfusionMatrix(3).add(t[:50], p[:50])
        right = ConfusionMatrix(3).add(t[50:], p[50:])
        assert np.array_equal(left.merge(right).counts, joint.counts)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            ConfusionMatrix(2).add(np.array([0, 2]), np.array([0, 1]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            ConfusionMatrix(2).add(np.zeros(3, int), np.zeros(4, int))


class TestIoU:
    def test_diagonal_is_perfect(self):
        cm = ConfusionMatrix(3)
        cm.counts = np.diag([5, 7, 2]).astype(np.int64)
        per_class, miou = iou(cm)
        assert np.allclose(per_class, 1.0)
        assert miou == 1.0

    def test_constant_prediction_two_class_truth(self):
        # prediction always class 0, truth half class 0 half class 1
        cm = ConfusionMatrix(2)
        cm.add(np.array([0] * 10 + [1] * 10), np.array([0] * 20))
        per_class, miou = iou(cm)
        assert per_class[0] == pytest.approx(0.5)
        assert per_class[1] == pytest.approx(0.0)
        assert miou == pytest.approx(0.25)

    def test_permutation_of_classes_permutes_ious(self, rng):
        t = rng.integers(0, 3, size=500)
        p = rng.integers(0, 3, size=500)
        base, base_miou = iou(ConfusionMatrix(3).add(t, p))
        perm = np.array([2, 0, 1])
        permuted, perm_miou = iou(ConfusionMatrix(3).add(perm[t], perm[p]))
        # class c of the base run becomes class perm[c] after relabeling
        assert np.allclose(permuted[perm], base, atol=1e-15)
        assert perm_miou == pytest.approx(base_miou, abs=1e-12)

    def test_absent_class_excluded_from_mean(self):
        cm = ConfusionMatrix(3)
        cm.add(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
        per_class, miou = iou(cm)
        assert np.isnan(per_class[2])
        included = per_class[:2]
        assert miou == pytest.approx(included.mean())
        assert min(included) <= miou <= max(included)

    def test_bounds(self, rng):
        for _ in range(20):
            cm = ConfusionMatrix(4).add(
                rng.integers(0, 4, size=300), rng.integers(0, 4, size=300)
            )
            per_class, miou = iou(cm)
            valid = per_class[~np.isnan(per_class)]
            assert np.all(valid >= 0.0) and np.all(valid <= 1.0)
            assert valid.min() - 1e-12 <= miou <= valid.max() + 1e-12

    def test_all_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            iou(ConfusionMatrix(3))


class TestDomainGap:
    def test_constant_half_gives_zero(self):
        maps = np.full((4, 8, 8), 0.5)
        assert domain_gap(list(maps[:2]), list(maps[2:])) == 0.0

    def test_perfect_separation_gives_one(self):
        src = [np.full((8, 8), 0.02)]
        tgt = [np.full((8, 8), 0.98)]
        assert domain_gap(src, tgt) == 1.0

    def test_random_outputs_near_zero(self, rng):
        src = [rng.uniform(size=10_000)]
        tgt = [rng.uniform(size=10_000)]
        assert domain_gap(src, tgt) < 0.05  # binomial noise over 1e4 pixels

    def test_symmetric_under_domain_swap(self, rng):
        src = [rng.uniform(size=(6, 6))]
        tgt = [rng.uniform(size=(6, 6))]
        assert domain_gap(src, tgt) == domain_gap(tgt, src)

    def test_swap_symmetry_holds_with_ties(self):
        src = [np.array([0.5, 0.2, 0.9])]
        tgt = [np.array([0.5, 0.5, 0.7])]
        assert domain_gap(src, tgt) == domain_gap(tgt, src)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            domain_gap([np.zeros(0)], [np.zeros(5)])

    def test_range(self, rng):
        for _ in range(20):
            g = domain_gap([rng.uniform(size=50)], [rng.uniform(size=50)])
            assert 0.0 <= g <= 1.0
