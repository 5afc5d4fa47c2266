"""Procedural paired-domain segmentation scenes with controllable shift.

Scenes are rendered label-first: a background class plus layered geometric
regions (rectangles, ellipses, stripes), then colored from a fixed per-class
palette with additive noise. The target domain runs the same generative
process with a color offset, its own noise scale, a class-frequency skew and
geometric jitter, so ground truth stays exact on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class SceneSpec:
    size: int = 32
    classes: int = 5
    channels: int = 3
    train_scenes: int = 200
    eval_scenes: int = 50
    color_shift: tuple = (0.18, -0.12, 0.10)  # target per-channel offset
    noise_source: float = 0.05
    noise_target: float = 0.09
    skew_source: float = 0.0
    skew_target: float = 0.25
    jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"scene size must be >= 8, got {self.size}")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.channels < 1:
            raise ValueError(f"need at least 1 channel, got {self.channels}")
        if len(self.color_shift) < self.channels:
            self.color_shift = tuple(self.color_shift) + (0.0,) * (
                self.channels - len(self.color_shift)
            )


def class_palette(n_classes: int, n_channels: int = 3) -> np.ndarray:
    """Fixed, well-separated base colors shared by both domains."""
    base = np.zeros((n_classes, n_channels))
    for k in range(n_classes):
        phase = 2.0 * np.pi * k / n_classes
        for c in range(n_channels):
            base[k, c] = 0.5 + 0.35 * np.sin(phase + 2.0 * np.pi * c / 3.0)
    return base


def _class_weights(n_classes: int, skew: float) -> np.ndarray:
    """Skewed class-draw weights; skew 0 is uniform, skew 1 concentrates on
    low class indices (class 0 strictly most frequent)."""
    ranks = np.arange(n_classes, dtype=np.float64)
    w = (1.0 - skew) * np.ones(n_classes) + skew * n_classes * np.exp(-1.5 * ranks)
    return w / w.sum()


def _draw_shape(rng, labels: np.ndarray, cls: int, size: int, scale: float):
    kind = rng.integers(0, 3)
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == 0:  # rectangle
        h = max(2, int(rng.uniform(0.12, 0.45) * size * scale))
        w = max(2, int(rng.uniform(0.12, 0.45) * size * scale))
        top = rng.integers(0, max(1, size - h))
        left = rng.integers(0, max(1, size - w))
        labels[top : top + h, left : left + w] = cls
    elif kind == 1:  # ellipse
        cy, cx = rng.uniform(0.15, 0.85, size=2) * size
        ry = max(1.5, rng.uniform(0.08, 0.28) * size * scale)
        rx = max(1.5, rng.uniform(0.08, 0.28) * size * scale)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        labels[inside] = cls
    else:  # diagonal stripe
        offset = rng.integers(-size, size)
        width = max(2, int(rng.uniform(0.06, 0.18) * size * scale))
        band = np.abs((yy + xx - size - offset)) < width
        labels[band] = cls


def _render_scene(rng, spec: SceneSpec, domain: str):
    size, k_classes = spec.size, spec.classes
    skew = spec.skew_target if domain == "target" else spec.skew_source
    noise = spec.noise_target if domain == "target" else spec.noise_source
    scale = 1.0 + (spec.jitter if domain == "target" else 0.0) * rng.uniform(-1.0, 1.0)
    weights = _class_weights(k_classes, skew)

    labels = np.full((size, size), rng.choice(k_classes, p=weights), dtype=np.int64)
    n_shapes = int(rng.integers(4, 9))
    for _ in range(n_shapes):
        cls = int(rng.choice(k_classes, p=weights))
        _draw_shape(rng, labels, cls, size, scale)
    if np.unique(labels).size < 2:
        # guarantee at least two classes per scene
        other = (int(labels[0, 0]) + 1) % k_classes
        h = max(2, size // 4)
        labels[:h, :h] = other

    palette = class_palette(k_classes, spec.channels)
    scene = palette[labels].astype(np.float64)
    # per-scene illumination wobble, shared across classes
    scene += rng.uniform(-0.04, 0.04)
    if domain == "target":
        scene += np.asarray(spec.color_shift[: spec.channels])
    scene += rng.normal(0.0, noise, size=scene.shape)
    return scene, labels


def _scene_rng(spec: SceneSpec, domain: str, index: int):
    domain_code = 1 if domain == "target" else 0
    ss = np.random.SeedSequence([spec.seed, domain_code, index])
    return np.random.Generator(np.random.PCG64(ss))


def generate_domain(spec: SceneSpec, n_scenes: int, domain: str):
    """(scenes (n, H, W, C), labels (n, H, W)) for one domain, seed-pure."""
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    scenes = np.empty((n_scenes, spec.size, spec.size, spec.channels))
    labels = np.empty((n_scenes, spec.size, spec.size), dtype=np.int64)
    for i in range(n_scenes):
        scenes[i], labels[i] = _render_scene(_scene_rng(spec, domain, i), spec, domain)
    return scenes, labels


def class_frequency_report(spec: SceneSpec, n_scenes: int, domain: str) -> np.ndarray:
    """Realized per-class pixel counts over freshly generated scenes."""
    _, labels = generate_domain(spec, n_scenes, domain)
    return np.bincount(labels.reshape(-1), minlength=spec.classes)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    flat = np.asarray(labels, dtype=np.int64)
    if flat.min() < 0 or flat.max() >= n_classes:
        raise ValueError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{flat.min()}, {flat.max()}]"
        )
    eye = np.eye(n_classes)
    return eye[flat]


def export_scene(scene: np.ndarray, labels: np.ndarray, stem: Path) -> None:
    """Write a portable pixmap (8-bit quantized view) plus a label-grid text file."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    img = np.clip(scene, 0.0, 1.0)
    h, w = labels.shape
    if scene.shape[2] >= 3:
        data = (img[:, :, :3] * 255).astype(np.uint8)
        with open(stem.with_suffix(".ppm"), "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode())
            f.write(data.tobytes())
    else:
        data = (img[:, :, 0] * 255).astype(np.uint8)
        with open(stem.with_suffix(".pgm"), "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode())
            f.write(data.tobytes())
    with open(stem.parent / (stem.name + "-labels.txt"), "w") as f:
        for row in labels:
            f.write(" ".join(str(int(v)) for v in row) + "\n")
