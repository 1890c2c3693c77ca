"""Segmentation and region-proposal quality metrics.

Unsupervised segmentation is scored after the one-to-one cluster-to-class
assignment that maximizes matched pixels (Hungarian over the confusion
matrix). Region proposals are scored two ways: each ground-truth mask
queries its best-overlapping proposal, or proposals and ground truth are
matched one-to-one and unmatched ground truth scores zero.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError


def confusion_matrix(
    preds, gts, num_pred: int, num_classes: int, ignore_value: int = 255
) -> np.ndarray:
    """Accumulate a (num_pred, num_classes) pixel count matrix over pairs of
    label images. Ignored ground-truth pixels are excluded."""
    counts = np.zeros((num_pred, num_classes), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred).ravel()
        gt = np.asarray(gt).ravel()
        if pred.shape != gt.shape:
            raise ValidationError("prediction and ground truth shapes differ")
        keep = gt != ignore_value
        pred, gt = pred[keep], gt[keep]
        if pred.size == 0:
            continue
        if pred.min() < 0 or pred.max() >= num_pred:
            raise ValidationError("prediction labels out of range")
        if gt.min() < 0 or gt.max() >= num_classes:
            raise ValidationError("ground-truth labels out of range")
        counts += np.bincount(
            pred * num_classes + gt, minlength=num_pred * num_classes
        ).reshape(num_pred, num_classes)
    return counts


def matched_metrics(
    preds, gts, num_classes: int, num_pred: int | None = None, ignore_value: int = 255
) -> dict:
    """Hungarian-matched accuracy and mean IoU over a dataset.

    ``preds``/``gts`` are iterables of same-shaped label images. Prediction
    clusters are matched one-to-one to ground-truth classes to maximize
    matched pixels; accuracy and per-class IoU are reported under that
    matching. Classes absent from the ground truth are excluded from the
    IoU mean.
    """
    preds = list(preds)
    gts = list(gts)
    if not preds or len(preds) != len(gts):
        raise ValidationError("need equal, nonzero numbers of predictions and ground truths")
    if num_pred is None:
        num_pred = max(int(np.asarray(p).max()) for p in preds) + 1
    conf = confusion_matrix(preds, gts, num_pred, num_classes, ignore_value)
    total = conf.sum()
    if total == 0:
        raise ValidationError("no labeled pixels to evaluate")

    row, col = linear_sum_assignment(conf, maximize=True)
    matching = {int(r): int(c) for r, c in zip(row, col)}
    matched_pixels = conf[row, col].sum()
    accuracy = matched_pixels / total

    pred_totals = conf.sum(axis=1)
    gt_totals = conf.sum(axis=0)
    class_to_pred = {c: r for r, c in matching.items()}
    present = np.where(gt_totals > 0)[0]
    ious = {}
    for cls in present:
        r = class_to_pred.get(int(cls))
        if r is None:
            ious[int(cls)] = 0.0
            continue
        inter = conf[r, cls]
        union = pred_totals[r] + gt_totals[cls] - inter
        ious[int(cls)] = float(inter / union) if union else 0.0
    miou = float(np.mean(list(ious.values()))) if ious else 0.0
    return {
        "accuracy": float(accuracy),
        "miou": miou,
        "per_class_iou": ious,
        "matching": matching,
    }


def split_connected(labels: np.ndarray, ignore_value: int | None = None) -> list[np.ndarray]:
    """Split an instance label image into 4-connected binary masks."""
    from skimage import measure

    labels = np.asarray(labels)
    masks = []
    for value in np.unique(labels):
        if ignore_value is not None and value == ignore_value:
            continue
        comp = measure.label(labels == value, connectivity=1)
        for cid in range(1, comp.max() + 1):
            masks.append(comp == cid)
    return masks


def _iou_matrix(proposal_labels: np.ndarray, gt_masks: list[np.ndarray]) -> np.ndarray:
    """(num_proposals, num_gt) IoU table for one image."""
    labels = np.asarray(proposal_labels)
    n_prop = int(labels.max()) + 1 if labels.size else 0
    prop_sizes = np.bincount(labels.ravel(), minlength=n_prop)
    out = np.zeros((n_prop, len(gt_masks)))
    for gi, mask in enumerate(gt_masks):
        inter = np.bincount(labels[mask], minlength=n_prop)
        gt_size = int(mask.sum())
        union = prop_sizes + gt_size - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, gi] = np.where(union > 0, inter / union, 0.0)
    return out


def _gather_scores(proposal_maps, gt_mask_sets, matched: bool) -> list[float]:
    proposal_maps = list(proposal_maps)
    gt_mask_sets = list(gt_mask_sets)
    if len(proposal_maps) != len(gt_mask_sets):
        raise ValidationError("one ground-truth mask set per proposal map required")
    scores: list[float] = []
    for labels, gt_masks in zip(proposal_maps, gt_mask_sets):
        if not gt_masks:
            continue
        labels = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
        if labels.size == 0 or labels.max() < 0:
            scores.extend([0.0] * len(gt_masks))
            continue
        iou = _iou_matrix(labels, gt_masks)
        if iou.shape[0] == 0:
            scores.extend([0.0] * len(gt_masks))
        elif matched:
            row, col = linear_sum_assignment(iou, maximize=True)
            per_gt = np.zeros(len(gt_masks))
            per_gt[col] = iou[row, col]
            scores.extend(per_gt.tolist())
        else:
            scores.extend(iou.max(axis=0).tolist())
    if not scores:
        raise ValidationError("no ground-truth masks to evaluate")
    return scores


def gt_query_miou(proposal_maps, gt_mask_sets) -> float:
    """Mean over ground-truth masks of the best proposal IoU (pooled over
    the dataset)."""
    return float(np.mean(_gather_scores(proposal_maps, gt_mask_sets, matched=False)))


def bilateral_match_miou(proposal_maps, gt_mask_sets) -> float:
    """Mean ground-truth IoU under the optimal one-to-one proposal matching;
    unmatched ground-truth masks score zero."""
    return float(np.mean(_gather_scores(proposal_maps, gt_mask_sets, matched=True)))
