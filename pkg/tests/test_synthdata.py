"""Procedural scene generation: determinism, shift knobs, label exactness."""

from dataclasses import replace

import numpy as np
import pytest

from critseg.synthdata import (
    SceneSpec,
    class_frequency_report,
    class_palette,
    export_scene,
    generate_domain,
    one_hot,
)


def small_spec(**kw):
    base = dict(size=16, classes=4, train_scenes=8, eval_scenes=4, seed=7)
    base.update(kw)
    return SceneSpec(**base)


class TestSpecValidation:
    def test_rejects_tiny_size(self):
        with pytest.raises(ValueError, match="size"):
            SceneSpec(size=4)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError, match="class"):
            SceneSpec(classes=1)

    def test_rejects_bad_domain(self):
        with pytest.raises(ValueError, match="domain"):
            generate_domain(small_spec(), 2, "middle")

    def test_rejects_zero_scenes(self):
        with pytest.raises(ValueError, match="n_scenes"):
            generate_domain(small_spec(), 0, "source")


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        spec = small_spec()
        s1, l1 = generate_domain(spec, 4, "target")
        s2, l2 = generate_domain(spec, 4, "target")
        assert np.array_equal(s1, s2) and np.array_equal(l1, l2)

    def test_different_seeds_differ(self):
        a, _ = generate_domain(small_spec(seed=1), 3, "source")
        b, _ = generate_domain(small_spec(seed=2), 3, "source")
        assert not np.array_equal(a, b)

    def test_scenes_within_domain_differ(self):
        scenes, _ = generate_domain(small_spec(), 4, "source")
        assert not np.array_equal(scenes[0], scenes[1])


class TestLabels:
    def test_labels_in_range_and_two_classes(self):
        spec = small_spec()
        for domain in ("source", "target"):
            _, labels = generate_domain(spec, 20, domain)
            assert labels.min() >= 0 and labels.max() < spec.classes
            for lab in labels:
                assert np.unique(lab).size >= 2

    def test_zero_noise_pixels_of_one_class_share_color(self):
        spec = small_spec(noise_source=0.0)
        scenes, labels = generate_domain(spec, 5, "source")
        for scene, lab in zip(scenes, labels):
            for k in np.unique(lab):
                pix = scene[lab == k]
                assert np.allclose(pix, pix[0], atol=1e-12)

    def test_palette_classes_are_distinct(self):
        pal = class_palette(5, 3)
        for i in range(5):
            for j in range(i + 1, 5):
                assert np.abs(pal[i] - pal[j]).max() > 0.05

    def test_one_hot_round_trip(self, rng):
        labels = rng.integers(0, 4, size=(6, 6))
        oh = one_hot(labels, 4)
        assert np.array_equal(oh.argmax(axis=-1), labels)
        assert np.all(oh.sum(axis=-1) == 1.0)

    def test_one_hot_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            one_hot(np.array([[0, 4]]), 4)


class TestDomainShift:
    def test_zero_shift_matches_marginals(self):
        spec = small_spec(
            color_shift=(0.0, 0.0, 0.0), noise_target=0.05, noise_source=0.05,
            skew_target=0.0, skew_source=0.0, jitter=0.0, train_scenes=64,
        )
        src, src_lab = generate_domain(spec, 64, "source")
        tgt, tgt_lab = generate_domain(spec, 64, "target")
        # same generative process, independent draws: per-class pixel color
        # means agree (class-mix variance would dominate the raw marginals)
        for k in range(spec.classes):
            a = src[src_lab == k].mean(axis=0)
            b = tgt[tgt_lab == k].mean(axis=0)
            assert np.allclose(a, b, atol=0.02)

    def test_color_shift_moves_channel_means(self):
        spec = small_spec(color_shift=(0.3, -0.2, 0.0), skew_target=0.0, jitter=0.0)
        src, _ = generate_domain(spec, 48, "source")
        tgt, _ = generate_domain(spec, 48, "target")
        delta = tgt.mean(axis=(0, 1, 2)) - src.mean(axis=(0, 1, 2))
        assert delta[0] > 0.2 and delta[1] < -0.1


class TestFrequencySkew:
    def test_report_sums_to_total_pixels(self):
        spec = small_spec()
        counts = class_frequency_report(spec, 10, "source")
        assert counts.sum() == 10 * spec.size * spec.size

    def test_zero_skew_near_uniform(self):
        spec = small_spec(skew_source=0.0, size=32)
        counts = class_frequency_report(spec, 80, "source")
        freqs = counts / counts.sum()
        assert freqs.max() < 2.5 / spec.classes

    def test_full_skew_makes_class_zero_largest(self):
        spec = small_spec(skew_source=1.0, size=32)
        counts = class_frequency_report(spec, 60, "source")
        assert counts[0] == counts.max()
        assert counts[0] > counts[1:].max()

    def test_skew_monotone_for_class_zero(self):
        freqs = []
        for skew in (0.0, 0.4, 0.8):
            spec = small_spec(skew_source=skew, size=32)
            counts = class_frequency_report(spec, 60, "source")
            freqs.append(counts[0] / counts.sum())
        assert freqs[0] < freqs[1] < freqs[2]


class TestExport:
    def test_writes_pixmap_and_label_grid(self, tmp_path):
        spec = small_spec()
        scenes, labels = generate_domain(spec, 1, "source")
        export_scene(scenes[0], labels[0], tmp_path / "scene-000")
        ppm = (tmp_path / "scene-000.ppm").read_bytes()
        assert ppm.startswith(b"P6\n16 16\n255\n")
        assert len(ppm) == len(b"P6\n16 16\n255\n") + 16 * 16 * 3
        grid = (tmp_path / "scene-000-labels.txt").read_text().splitlines()
        assert len(grid) == 16
        parsed = np.array([[int(v) for v in row.split()] for row in grid])
        assert np.array_equal(parsed, labels[0])
