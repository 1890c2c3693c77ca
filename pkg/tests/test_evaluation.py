"""Metric correctness against exhaustive matching oracles."""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conftest import brute_force_assignment_max
from depthgroup.errors import ValidationError
from depthgroup.evaluation import (
    bilateral_match_miou,
    gt_query_miou,
    matched_metrics,
    split_connected,
)


class TestMatchedMetrics:
    def test_perfect_prediction(self):
        gt = np.array([[0, 0], [1, 1]])
        out = matched_metrics([gt], [gt], num_classes=2)
        assert out["accuracy"] == 1.0
        assert out["miou"] == 1.0

    def test_permuted_labels_still_perfect(self):
        gt = np.array([[0, 0, 2], [1, 1, 2]])
        pred = np.array([[2, 2, 1], [0, 0, 1]])  # 0->2, 1->0, 2->1
        out = matched_metrics([pred], [gt], num_classes=3)
        assert out["accuracy"] == 1.0
        assert out["miou"] == 1.0

    def test_two_by_two_toy(self):
        """gt [[0,0],[1,1]], pred [[0,1],[1,1]]: Acc 3/4, mIoU 7/12."""
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        out = matched_metrics([pred], [gt], num_classes=2)
        assert abs(out["accuracy"] - 0.75) < 1e-12
        assert abs(out["per_class_iou"][0] - 0.5) < 1e-12
        assert abs(out["per_class_iou"][1] - 2.0 / 3.0) < 1e-12
        assert abs(out["miou"] - 7.0 / 12.0) < 1e-9
        # brute force over both 2-permutations confirms identity is best
        conf = np.zeros((2, 2))
        for p, g in zip(pred.ravel(), gt.ravel()):
            conf[p, g] += 1
        assert conf[0, 0] + conf[1, 1] >= conf[0, 1] + conf[1, 0]

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 5, size=(30, 40))
        pred = rng.integers(0, 7, size=(30, 40))
        base = matched_metrics([pred], [gt], num_classes=5)
        perm = rng.permutation(7)
        out = matched_metrics([perm[pred]], [gt], num_classes=5)
        assert abs(base["accuracy"] - out["accuracy"]) < 1e-12
        assert abs(base["miou"] - out["miou"]) < 1e-12

    def test_ignore_pixels_excluded(self):
        gt = np.array([[0, 255], [1, 255]])
        pred = np.array([[0, 3], [1, 3]])
        out = matched_metrics([pred], [gt], num_classes=2, ignore_value=255)
        assert out["accuracy"] == 1.0

    def test_hungarian_equals_exhaustive_small(self):
        """scipy assignment equals brute force up to 7x7."""
        rng = np.random.default_rng(1)
        for trial in range(60):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            score = rng.uniform(0, 100, size=(rows, cols))
            r, c = linear_sum_assignment(score, maximize=True)
            assert abs(score[r, c].sum() - brute_force_assignment_max(score)) < 1e-9

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            matched_metrics([], [], num_classes=2)


class TestSplitConnected:
    def test_disconnected_same_label_splits(self):
        labels = np.zeros((4, 5), np.int32)
        labels[0, 0] = 1
        labels[3, 4] = 1
        masks = split_connected(labels)
        sizes = sorted(int(m.sum()) for m in masks)
        assert len(masks) == 3  # background + the two fragments
        assert sizes == [1, 1, 18]

    def test_diagonal_not_connected(self):
        """Both labels occupy diagonally-touching pixels: 4-connectivity
        splits each into two singleton masks."""
        labels = np.zeros((2, 2), np.int32)
        labels[0, 0] = 1
        labels[1, 1] = 1
        masks = split_connected(labels)
        assert len(masks) == 4
        assert all(m.sum() == 1 for m in masks)


def _label_map(h, w, boxes):
    """Proposal label image: background 0 plus one label per box."""
    labels = np.zeros((h, w), np.int32)
    for i, (r0, c0, r1, c1) in enumerate(boxes, start=1):
        labels[r0:r1, c0:c1] = i
    return labels


class TestRegionMious:
    def test_proposals_equal_gt(self):
        labels = _label_map(10, 10, [(0, 0, 5, 10), (5, 0, 10, 10)])
        gt = [labels == i for i in range(1, 3)]
        assert gt_query_miou([labels], [gt]) == 1.0
        assert bilateral_match_miou([labels], [gt]) == 1.0

    def test_full_cover_proposal(self):
        """One proposal over everything vs two GT masks of sizes a and b in
        an image of size s scores mean(a/s, b/s)."""
        labels = np.zeros((8, 8), np.int32)
        gt_a = np.zeros((8, 8), bool)
        gt_a[:2, :4] = True  # a = 8
        gt_b = np.zeros((8, 8), bool)
        gt_b[5:, 5:] = True  # b = 9
        expected = (8 / 64 + 9 / 64) / 2
        assert abs(gt_query_miou([labels], [[gt_a, gt_b]]) - expected) < 1e-12

    def test_gt_query_matches_exhaustive(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            labels = rng.integers(0, 5, size=(12, 12)).astype(np.int32)
            masks = [rng.random((12, 12)) < 0.3 for _ in range(int(rng.integers(1, 6)))]
            masks = [m for m in masks if m.any()]
            if not masks:
                continue
            got = gt_query_miou([labels], [masks])
            expected = np.mean(
                [
                    max(
                        _iou(labels == p, m)
                        for p in range(int(labels.max()) + 1)
                    )
                    for m in masks
                ]
            )
            assert abs(got - expected) < 1e-12

    def test_bilateral_matches_exhaustive_injections(self):
        """A case where greedy differs from optimal, verified by brute force."""
        rng = np.random.default_rng(3)
        for _ in range(30):
            labels = rng.integers(0, 4, size=(10, 10)).astype(np.int32)
            masks = [rng.random((10, 10)) < 0.35 for _ in range(int(rng.integers(1, 4)))]
            masks = [m for m in masks if m.any()]
            if not masks:
                continue
            got = bilateral_match_miou([labels], [masks])
            n_prop = int(labels.max()) + 1
            iou = np.zeros((n_prop, len(masks)))
            for p in range(n_prop):
                for gi, m in enumerate(masks):
                    iou[p, gi] = _iou(labels == p, m)
            expected = brute_force_assignment_max(iou) / len(masks)
            assert abs(got - expected) < 1e-12

    def test_fragmentation_penalized_only_bilaterally(self):
        """Many tiny fragments can each query-match well, but one-to-one
        matching leaves most GT unmatched: bilateral <= GT-query."""
        labels = np.zeros((12, 12), np.int32)
        # fragment the image into 12 stripes
        for i in range(12):
            labels[i, :] = i
        gt = [np.zeros((12, 12), bool) for _ in range(2)]
        gt[0][:6] = True
        gt[1][6:] = True
        q = gt_query_miou([labels], [gt])
        b = bilateral_match_miou([labels], [gt])
        assert b <= q

    def test_bilateral_never_exceeds_gt_query(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            labels = rng.integers(0, int(rng.integers(2, 8)), size=(9, 9)).astype(np.int32)
            masks = [rng.random((9, 9)) < rng.uniform(0.1, 0.5) for _ in range(int(rng.integers(1, 5)))]
            masks = [m for m in masks if m.any()]
            if not masks:
                continue
            assert bilateral_match_miou([labels], [masks]) <= gt_query_miou(
                [labels], [masks]
            ) + 1e-12

    def test_zero_proposals_scores_zero(self):
        labels = np.full((5, 5), -1, np.int32)  # no proposals
        gt = [np.ones((5, 5), bool)]
        assert gt_query_miou([labels], [gt]) == 0.0
        assert bilateral_match_miou([labels], [gt]) == 0.0


def _iou(a, b):
    union = np.logical_or(a, b).sum()
    return np.logical_and(a, b).sum() / union if union else 0.0
