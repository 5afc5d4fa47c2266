"""Confidence-guided soft pseudo labels for unlabeled target scenes.

Per-class thresholds come from sorting max-probability values over the whole
target set and picking the value at the scheduled selection-amount rank. Each
pixel then gets the closed-form soft label, and keeps it only if its selection
cost beats the all-zero (ignore) label strictly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class Thresholds:
    """Per-class selection thresholds plus the selection amount behind them."""

    values: np.ndarray  # (K,), each in (0, 1]
    selection_amount: float
    epoch: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values <= 0.0) or np.any(self.values > 1.0):
            raise ValueError(f"thresholds must lie in (0, 1], got {self.values}")


@dataclass
class SoftLabelMap:
    """Per-pixel soft labels; unselected pixels hold the exact zero vector."""

    values: np.ndarray  # (H, W, K)
    selected: np.ndarray  # (H, W) bool

    @property
    def selected_fraction(self) -> float:
        return float(self.selected.mean())


def schedule_selection_amount(epoch: int, start=0.35, step=0.05, cap=0.50) -> float:
    """Selection amount per epoch: start, +step each epoch, held at the cap."""
    return min(start + step * epoch, cap)


def determine_thresholds(prob_maps, selection_amount: float, epoch: int = 0) -> Thresholds:
    """Class-wise thresholds from the pooled target predictions.

    For each class, collect the max probability of every pixel argmaxed to it,
    sort descending, and take the value at index floor(selection_amount * n)
    (clamped to the last element). Classes that never win an argmax get
    threshold 1 so they select nothing spuriously.
    """
    if not (0.0 < selection_amount <= 1.0):
        raise ValueError(f"selection amount must be in (0, 1], got {selection_amount}")
    prob_maps = list(prob_maps)
    if not prob_maps:
        raise ValueError("determine_thresholds needs at least one probability map")
    k_classes = np.asarray(prob_maps[0]).shape[-1]
    pooled_max = []
    pooled_arg = []
    for pm in prob_maps:
        arr = np.asarray(pm, dtype=np.float64).reshape(-1, k_classes)
        pooled_max.append(arr.max(axis=1))
        pooled_arg.append(arr.argmax(axis=1))
    max_probs = np.concatenate(pooled_max)
    arg_classes = np.concatenate(pooled_arg)
    values = np.ones(k_classes)
    for k in range(k_classes):
        vals = max_probs[arg_classes == k]
        if vals.size == 0:
            continue
        ordered = np.sort(vals)[::-1]
        idx = min(int(selection_amount * vals.size), vals.size - 1)
        values[k] = ordered[idx]
    return Thresholds(values=values, selection_amount=selection_amount, epoch=epoch)


def _threshold_values(thresholds) -> np.ndarray:
    if isinstance(thresholds, Thresholds):
        return thresholds.values
    return np.asarray(thresholds, dtype=np.float64)


def _soft_labels(probs: np.ndarray, delta: np.ndarray, gamma: float) -> np.ndarray:
    """Closed-form soft labels, rows of (C_k/d_k)^(1/gamma) normalized.

    Evaluated in log space: a config can push gamma down to 0.01, where the
    direct power overflows long before the normalized result does.
    """
    z = (np.log(probs) - np.log(delta)) / gamma
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_label(pixel_probs, thresholds, gamma: float) -> np.ndarray:
    """Closed-form soft label for one pixel's class distribution."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    delta = _threshold_values(thresholds)
    probs = np.maximum(np.asarray(pixel_probs, dtype=np.float64), PROB_FLOOR)
    if not np.all(np.isfinite(probs)):
        raise ValueError("pixel probabilities must be finite")
    if np.any(delta <= 0.0):
        raise ValueError("thresholds must be strictly positive")
    return _soft_labels(probs[None, :], delta, gamma)[0]


def _xlogx(v: np.ndarray) -> np.ndarray:
    return np.where(v > 0.0, v * np.log(np.maximum(v, PROB_FLOOR)), 0.0)


def selection_cost(label, pixel_probs, thresholds, gamma: float) -> float:
    """sum_k [-y_k log(C_k/d_k) + gamma y_k log y_k], with 0*log(0) = 0.

    The zero label costs exactly 0; a soft label is kept only if it does
    strictly better.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    delta = _threshold_values(thresholds)
    lab = np.asarray(label, dtype=np.float64)
    probs = np.maximum(np.asarray(pixel_probs, dtype=np.float64), PROB_FLOOR)
    log_ratio = np.log(probs) - np.log(delta)
    return float(np.sum(-lab * log_ratio + gamma * _xlogx(lab)))


def _selected(costs: np.ndarray) -> np.ndarray:
    # strict: a pixel whose soft label only ties the zero label stays ignored
    return costs < 0.0


def generate(prob_map, thresholds, gamma: float) -> SoftLabelMap:
    """Soft labels for a whole scene, gated by the selection cost."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    delta = _threshold_values(thresholds)
    pm = np.asarray(prob_map, dtype=np.float64)
    h, w, k = pm.shape
    probs = np.maximum(pm.reshape(-1, k), PROB_FLOOR)
    labels = _soft_labels(probs, delta, gamma)
    log_ratio = np.log(probs) - np.log(delta)
    costs = np.sum(-labels * log_ratio + gamma * _xlogx(labels), axis=1)
    selected = _selected(costs)
    values = np.where(selected[:, None], labels, 0.0).reshape(h, w, k)
    return SoftLabelMap(values=values, selected=selected.reshape(h, w))


def selection_report(prob_maps, label_maps) -> np.ndarray:
    """Per-class selected fraction among pixels predicted as that class."""
    k_classes = np.asarray(prob_maps[0]).shape[-1]
    selected = np.zeros(k_classes)
    totals = np.zeros(k_classes)
    for pm, lm in zip(prob_maps, label_maps):
        pred = np.asarray(pm).reshape(-1, k_classes).argmax(axis=1)
        sel = lm.selected.reshape(-1)
        for k in range(k_classes):
            here = pred == k
            totals[k] += here.sum()
            selected[k] += (here & sel).sum()
    with np.errstate(invalid="ignore"):
        frac = np.where(totals > 0, selected / np.maximum(totals, 1), 0.0)
    return frac


def save_soft_labels(label_map: SoftLabelMap, path) -> None:
    """Compact text dump: header, then one line per selected pixel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w, k = label_map.values.shape
    flat = label_map.values.reshape(-1, k)
    idx = np.flatnonzero(label_map.selected.reshape(-1))
    with open(path, "w") as f:
        f.write("# soft-label-map v1\n")
        f.write(f"{h} {w} {k}\n")
        for n in idx:
            row = " ".join(repr(float(v)) for v in flat[n])
            f.write(f"{n} {row}\n")


def load_soft_labels(path) -> SoftLabelMap:
    with open(path) as f:
        header = f.readline()
        if not header.startswith("# soft-label-map v1"):
            raise ValueError(f"{path}: not a soft-label file")
        h, w, k = (int(t) for t in f.readline().split())
        values = np.zeros((h * w, k))
        selected = np.zeros(h * w, dtype=bool)
        for line in f:
            parts = line.split()
            n = int(parts[0])
            values[n] = [float(v) for v in parts[1:]]
            selected[n] = True
    return SoftLabelMap(values=values.reshape(h, w, k), selected=selected.reshape(h, w))
