"""Domain-wise adversarial alignment and category-wise centroid divergence.

The adversarial objective is reported as a (discriminator side, encoder side)
pair of minimization losses; the sign of the min/max game lives here, the
trainer only decides which parameter sets step. The divergence loss compares
per-class feature centroids across domains as smoothed distributions under a
symmetric KL.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .critic import EmptyMaskWarning
from .pseudolabel import SoftLabelMap
from .tensor import ShapeError, Tensor

DMAP_CLAMP = 1e-7
CENTROID_EPS = 1e-8


@dataclass
class CentroidSet:
    """Per-class mean feature vectors with their accumulation weights.

    Source weights are pixel counts; target weights are summed soft-label
    mass. A class with zero weight has no centroid and is flagged invalid.
    """

    vectors: list  # K entries, Tensor of shape (Cf,) or None
    weights: np.ndarray  # (K,)

    @property
    def valid(self) -> np.ndarray:
        return self.weights > 0.0

    def to_array(self, n_channels: int) -> np.ndarray:
        out = np.zeros((len(self.vectors), n_channels))
        for k, vec in enumerate(self.vectors):
            if vec is not None:
                out[k] = vec.data
        return out


def loss_adv(d_source, d_target, literal: bool = False):
    """(discriminator loss, encoder loss) for one source/target map pair.

    Conventional saturating form by default: the shared objective is
    mean log(1 - D_s) + mean log D_t, maximized by the discriminator and
    minimized by the encoder. ``literal=True`` switches the source term to
    mean(1 - log D_s), whose maximum is unbounded and only tamed by the
    clamp; it is kept for fidelity comparisons.
    """
    ds = T.clamp(d_source, DMAP_CLAMP, 1.0 - DMAP_CLAMP)
    dt = T.clamp(d_target, DMAP_CLAMP, 1.0 - DMAP_CLAMP)
    if literal:
        source_term = T.tmean(1.0 - T.log(ds))
    else:
        source_term = T.tmean(T.log(1.0 - ds))
    objective = source_term + T.tmean(T.log(dt))
    return T.neg(objective), objective


def _as_feature_batch(features):
    if isinstance(features, Tensor):
        return [features]
    return list(features)


def _accumulate_centroids(feats, weight_mats, k_classes) -> CentroidSet:
    """Shared accumulation: per-class weighted pixel sums via one matmul per
    scene (weightsT @ flattened features), then normalization by total mass."""
    totals = None
    masses = np.zeros(k_classes)
    for f, w in zip(feats, weight_mats):
        n = w.shape[0]
        masses += w.sum(axis=0)
        part = T.matmul(Tensor(w.T), T.reshape(f, (n, f.data.shape[-1])))
        totals = part if totals is None else totals + part
    vectors = [
        None if masses[k] == 0 else T.take_row(totals, k) * (1.0 / masses[k])
        for k in range(k_classes)
    ]
    return CentroidSet(vectors=vectors, weights=masses)


def source_centroids(features, labels) -> CentroidSet:
    """Per-class mean encoder feature over pixels with that ground-truth class."""
    feats = _as_feature_batch(features)
    if isinstance(labels, np.ndarray) and labels.ndim == 3:
        labs = [labels.astype(np.float64)]
    else:
        labs = [np.asarray(l, dtype=np.float64) for l in labels]
    if len(feats) != len(labs):
        raise ShapeError(f"{len(feats)} feature maps vs {len(labs)} label maps")
    k_classes = labs[0].shape[-1]
    weight_mats = []
    for f, lab in zip(feats, labs):
        if f.data.shape[:2] != lab.shape[:2]:
            raise ShapeError(
                f"spatial dims disagree: features {f.data.shape} vs labels {lab.shape}"
            )
        present = lab.reshape(-1, k_classes).sum(axis=-1) > 0.0
        winners = lab.reshape(-1, k_classes).argmax(axis=-1)
        w = np.zeros((winners.size, k_classes))
        w[np.arange(winners.size), winners] = present
        weight_mats.append(w)
    return _accumulate_centroids(feats, weight_mats, k_classes)


def target_centroids(features, soft_labels) -> CentroidSet:
    """Soft-mass-weighted per-class centroids from pseudo-labeled pixels.

    A pixel contributes its class-k soft mass times its feature vector, but
    only where k wins the soft label's argmax; unselected (all-zero) pixels
    contribute nothing.
    """
    feats = _as_feature_batch(features)
    maps = [soft_labels] if isinstance(soft_labels, SoftLabelMap) else list(soft_labels)
    if len(feats) != len(maps):
        raise ShapeError(f"{len(feats)} feature maps vs {len(maps)} label maps")
    k_classes = maps[0].values.shape[-1]
    weight_mats = []
    for f, lm in zip(feats, maps):
        if f.data.shape[:2] != lm.values.shape[:2]:
            raise ShapeError(
                f"spatial dims disagree: features {f.data.shape} vs labels "
                f"{lm.values.shape}"
            )
        values = lm.values.reshape(-1, k_classes)
        winners = values.argmax(axis=-1)
        idx = np.arange(winners.size)
        w = np.zeros((winners.size, k_classes))
        w[idx, winners] = values[idx, winners] * lm.selected.reshape(-1)
        weight_mats.append(w)
    return _accumulate_centroids(feats, weight_mats, k_classes)


def _normalize(vec: Tensor) -> Tensor:
    shifted = vec + CENTROID_EPS
    return shifted * (1.0 / T.tsum(shifted))


def _kl(p: Tensor, q: Tensor) -> Tensor:
    return T.tsum(p * (T.log(p) - T.log(q)))


def loss_div(source_set: CentroidSet, target_set: CentroidSet) -> Tensor:
    """Symmetric KL between matched class centroids, averaged over all K.

    Centroids are non-negative (relu features) and are smoothed and
    L1-normalized into distributions before the KL; classes missing on
    either side contribute zero but still count in the 1/K.
    """
    k_classes = len(source_set.vectors)
    if k_classes != len(target_set.vectors):
        raise ShapeError(
            f"class count mismatch: {k_classes} vs {len(target_set.vectors)}"
        )
    both = source_set.valid & target_set.valid
    if not np.any(both):
        warnings.warn("loss_div with no class valid in both domains", EmptyMaskWarning)
        return Tensor(0.0)
    total = None
    for k in range(k_classes):
        if not both[k]:
            continue
        p_s = _normalize(source_set.vectors[k])
        p_t = _normalize(target_set.vectors[k])
        term = (_kl(p_s, p_t) + _kl(p_t, p_s)) * 0.5
        total = term if total is None else total + term
    return total * (1.0 / k_classes)
