"""Transferability quantification, the reward mechanism, and critic losses.

The transfer score of a pixel is high when the discriminator is confident
about its domain (knowledge not yet aligned or domain-specific) and zero at
maximal discriminator confusion. The critic regresses a per-pixel value
toward a reward built from prediction correctness, and in turn supervises
the quantizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, _result, _taped

LOG2 = float(np.log(2.0))
_TINY = 1e-12


class EmptyMaskWarning(UserWarning):
    """A masked loss was evaluated with no valid pixels."""


@dataclass
class TransferMap:
    """Per-pixel transfer scores with the raw quantizer output alongside."""

    scores: np.ndarray  # (H, W), in [0, 1] when entropy is normalized
    raw: np.ndarray  # (H, W), quantizer sigmoid output in (0, 1)


@dataclass
class RewardMap:
    """Segmentation reward, amelioration reward, their sum, and the pixel mask."""

    correct: np.ndarray  # (H, W) in {0, 1}
    improved: np.ndarray  # (H, W) in {0, 1}
    total: np.ndarray  # (H, W) in {0, 1, 2}
    mask: np.ndarray  # (H, W) bool; False where the label row is all-zero


def uncertainty(q):
    """Binary entropy -(q log q + (1-q) log(1-q)), elementwise, in [0, log 2].

    Endpoints use 0*log(0) = 0 exactly; the derivative log((1-q)/q) is
    clamped away from the endpoints so saturated sigmoids stay finite.
    """
    q_arr = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    if np.any(q_arr < 0.0) or np.any(q_arr > 1.0):
        raise ValueError("uncertainty() needs values in [0, 1]")
    data = -(
        q_arr * np.log(np.maximum(q_arr, _TINY))
        + (1.0 - q_arr) * np.log(np.maximum(1.0 - q_arr, _TINY))
    )
    if not isinstance(q, Tensor) or not _taped(q):
        return Tensor(data) if isinstance(q, Tensor) else data
    p = np.clip(q_arr, _TINY, 1.0 - _TINY)

    def backward(g):
        return (g * np.log((1.0 - p) / p),)

    return _result(data, (q,), backward)


# evaluated through uncertainty() itself so that q = 0.5 normalizes to a
# transfer score of exactly 0.0 (x/x division is exact)
ENTROPY_AT_HALF = float(uncertainty(np.array(0.5)))


def quantify(domain_map, quantizer, normalize: bool = True) -> TransferMap:
    """Run the quantizer over a discriminator output map and score pixels.

    score = 1 - U(q)/log 2 per pixel (or 1 - U(q) without normalization,
    which confines scores to [1 - log 2, 1]).
    """
    d = domain_map.data if isinstance(domain_map, Tensor) else np.asarray(domain_map)
    if d.ndim == 2:
        d = d[:, :, None]
    if d.ndim != 3 or d.shape[2] != 1:
        raise ShapeError(f"domain map must be HxW or HxWx1, got {d.shape}")
    with T.no_grad():
        raw = quantizer(Tensor(d)).data[:, :, 0]
    u = uncertainty(raw)
    scores = 1.0 - (u / ENTROPY_AT_HALF if normalize else u)
    return TransferMap(scores=scores, raw=raw)


def _as_label_array(labels) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.float64)
    row_sums = arr.sum(axis=-1)
    nonzero = row_sums > 0.0
    bad = nonzero & (
        (np.abs(row_sums - 1.0) > 1e-6) | (arr.min(axis=-1) < -1e-12)
    )
    if np.any(bad):
        raise ValueError("label rows must be on the simplex or exactly zero")
    return arr


def reward(prob_with, prob_without, labels) -> RewardMap:
    """Per-pixel rewards for the critic.

    correct: the attention-path prediction argmax matches the label argmax.
    improved: the attention-path probability at the true class strictly
    exceeds the baseline (no-attention) probability there.
    Pixels with an all-zero label row get 0/0 and are masked out.
    """
    pw = prob_with.data if isinstance(prob_with, Tensor) else np.asarray(prob_with)
    po = prob_without.data if isinstance(prob_without, Tensor) else np.asarray(prob_without)
    lab = _as_label_array(labels)
    if pw.shape != po.shape or pw.shape != lab.shape:
        raise ShapeError(
            f"shape mismatch: with {pw.shape}, without {po.shape}, labels {lab.shape}"
        )
    mask = lab.sum(axis=-1) > 0.0
    true_class = lab.argmax(axis=-1)
    sel = true_class[:, :, None]
    pw_true = np.take_along_axis(pw, sel, axis=2)[:, :, 0]
    po_true = np.take_along_axis(po, sel, axis=2)[:, :, 0]
    correct = (pw.argmax(axis=-1) == true_class) & mask
    improved = (pw_true > po_true) & mask
    rs = correct.astype(np.float64)
    ra = improved.astype(np.float64)
    return RewardMap(correct=rs, improved=ra, total=rs + ra, mask=mask)


def critic_value(features, transfer_scores, critic) -> Tensor:
    """Evaluate the critic on (features, transfer scores); (H, W, 1) output."""
    scores = transfer_scores
    if not isinstance(scores, Tensor):
        scores = Tensor(np.asarray(scores, dtype=np.float64))
    if scores.data.ndim == 2:
        scores = T.reshape(scores, (*scores.data.shape, 1))
    return critic(features, scores)


def _check_mask(values: Tensor, mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != values.data.shape[:2]:
        raise ShapeError(
            f"mask shape {m.shape} does not match map {values.data.shape}"
        )
    return m


def loss_cri(critic_values: Tensor, mask) -> Tensor:
    """Mean of -V over masked pixels: minimized by the quantizer to push the
    critic value up. Gradients must only reach the quantizer: callers freeze
    the critic and detach the feature input."""
    m = _check_mask(critic_values, mask)
    count = int(m.sum())
    if count == 0:
        warnings.warn("loss_cri over an empty mask", EmptyMaskWarning)
        return Tensor(0.0)
    weights = Tensor(m[:, :, None].astype(np.float64))
    return T.tsum(critic_values * weights) * (-1.0 / count)


def loss_reg(critic_values: Tensor, rewards, mask) -> Tensor:
    """Mean squared error between critic values and rewards over the mask.

    Trains the critic alone; rewards and transfer scores enter as constants.
    """
    m = _check_mask(critic_values, mask)
    r = rewards.total if isinstance(rewards, RewardMap) else np.asarray(rewards)
    if r.shape != critic_values.data.shape[:2]:
        raise ShapeError(
            f"reward shape {r.shape} does not match map {critic_values.data.shape}"
        )
    count = int(m.sum())
    if count == 0:
        warnings.warn("loss_reg over an empty mask", EmptyMaskWarning)
        return Tensor(0.0)
    diff = critic_values - Tensor(r[:, :, None])
    weights = Tensor(m[:, :, None].astype(np.float64))
    return T.tsum(diff * diff * weights) * (1.0 / count)
