"""Segmentation quality (per-class IoU, mIoU) and a domain-gap proxy."""

from __future__ import annotations

import numpy as np


class ConfusionMatrix:
    """K x K integer counts, rows = ground truth, columns = prediction."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def add(self, truth, prediction):
        t = np.asarray(truth).reshape(-1)
        p = np.asarray(prediction).reshape(-1)
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch: truth {t.shape} vs prediction {p.shape}")
        ok = (t >= 0) & (t < self.n_classes) & (p >= 0) & (p < self.n_classes)
        if not np.all(ok):
            raise ValueError("class indices out of range")
        flat = self.n_classes * t + p
        self.counts += np.bincount(
            flat, minlength=self.n_classes**2
        ).reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def iou(cm: ConfusionMatrix):
    """(per-class IoU with NaN for absent classes, mIoU over present classes).

    A class is excluded from the mean when its union (row + column - diag)
    is zero, i.e. it appears in neither truth nor prediction.
    """
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    if counts.sum() == 0:
        raise ValueError("IoU of an all-zero confusion matrix is undefined")
    diag = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    per_class = np.full(counts.shape[0], np.nan)
    present = union > 0
    per_class[present] = diag[present] / union[present]
    return per_class, float(np.nanmean(per_class))


def domain_gap(d_source, d_target) -> float:
    """Balanced discriminator accuracy rescaled to [0, 1].

    With the target domain as the positive class at threshold 0.5 the
    balanced accuracy is acc = ((dt > .5).mean() + (ds <= .5).mean()) / 2 and
    gap = 2|acc - 0.5|, which simplifies to |rate_t - rate_s| of the two
    above-threshold rates; that form is exactly symmetric in floats. 0 means
    the domains are indistinguishable to the discriminator.
    """
    ds = np.concatenate([np.asarray(m).reshape(-1) for m in _as_list(d_source)])
    dt = np.concatenate([np.asarray(m).reshape(-1) for m in _as_list(d_target)])
    if ds.size == 0 or dt.size == 0:
        raise ValueError("domain_gap needs non-empty batches from both domains")
    return float(abs((dt > 0.5).mean() - (ds > 0.5).mean()))


def _as_list(maps):
    if isinstance(maps, np.ndarray) and maps.ndim <= 3:
        return [maps]
    return list(maps)
