"""Adversarial loss pair, class centroids, symmetric divergence loss."""

import math
import warnings

import numpy as np
import pytest

from critseg import tensor as T
from critseg.alignment import (
    CentroidSet,
    loss_adv,
    loss_div,
    source_centroids,
    target_centroids,
)
from critseg.critic import EmptyMaskWarning
from critseg.networks import Encoder
from critseg.pseudolabel import SoftLabelMap
from critseg.tensor import ShapeError, Tensor

from oracles import (
    assert_grad_close,
    fd_gradient,
    np_adv_objective,
    np_divergence,
    np_source_centroids,
    np_target_centroids,
)


class TestLossAdv:
    def test_constant_half_maps_conventional(self):
        d = Tensor(np.full((4, 4, 1), 0.5))
        d_side, e_side = loss_adv(d, d)
        expected = math.log(0.5) + math.log(0.5)
        assert e_side.item() == pytest.approx(expected, abs=1e-12)
        assert d_side.item() == pytest.approx(-expected, abs=1e-12)

    def test_constant_half_maps_literal(self):
        d = Tensor(np.full((4, 4, 1), 0.5))
        d_side, e_side = loss_adv(d, d, literal=True)
        expected = (1.0 - math.log(0.5)) + math.log(0.5)
        assert e_side.item() == pytest.approx(expected, abs=1e-12)
        assert d_side.item() == pytest.approx(-expected, abs=1e-12)

    def test_perfect_separation_hits_clamped_supremum(self):
        clamp = 1e-7
        d_src = Tensor(np.zeros((3, 3, 1)))
        d_tgt = Tensor(np.ones((3, 3, 1)))
        d_side, _ = loss_adv(d_src, d_tgt)
        supremum = math.log(1.0 - clamp) + math.log(1.0 - clamp)
        assert -d_side.item() == pytest.approx(supremum, abs=1e-12)

    def test_matches_pixel_mean_oracle(self, rng):
        for literal in (False, True):
            for _ in range(20):
                ds = rng.uniform(size=(5, 7, 1))
                dt = rng.uniform(size=(5, 7, 1))
                d_side, e_side = loss_adv(Tensor(ds), Tensor(dt), literal=literal)
                expected = np_adv_objective(ds, dt, literal=literal)
                assert e_side.item() == pytest.approx(expected, abs=1e-12)
                assert d_side.item() == pytest.approx(-expected, abs=1e-12)

    def test_endpoint_values_stay_finite(self):
        d = Tensor(np.array([[[0.0], [1.0]]]))
        d_side, e_side = loss_adv(d, d)
        assert np.isfinite(d_side.item()) and np.isfinite(e_side.item())

    def test_gradients_match_fd(self, rng):
        for literal in (False, True):
            ds0 = rng.uniform(0.05, 0.95, size=(4, 4, 1))
            dt0 = rng.uniform(0.05, 0.95, size=(4, 4, 1))
            ds = Tensor(ds0.copy(), requires_grad=True)
            dt = Tensor(dt0.copy(), requires_grad=True)
            _, e_side = loss_adv(ds, dt, literal=literal)
            e_side.backward()
            probes = [ds.data, dt.data]

            def f():
                return np_adv_objective(probes[0], probes[1], literal=literal)

            fd = fd_gradient(f, probes)
            assert_grad_close(ds.grad, fd[0], label="adv source side")
            assert_grad_close(dt.grad, fd[1], label="adv target side")


def _onehot(rng, h, w, k):
    return np.eye(k)[rng.integers(0, k, size=(h, w))]


class TestSourceCentroids:
    def test_single_pixel_is_its_feature(self, rng):
        feat = Tensor(rng.normal(size=(1, 1, 4)))
        labels = np.eye(3)[np.array([[2]])]
        cset = source_centroids(feat, labels)
        assert cset.valid.tolist() == [False, False, True]
        assert np.array_equal(cset.vectors[2].data, feat.data[0, 0])

    def test_two_pixels_average(self, rng):
        feat = Tensor(rng.normal(size=(1, 2, 3)))
        labels = np.eye(2)[np.array([[1, 1]])]
        cset = source_centroids(feat, labels)
        expected = (feat.data[0, 0] + feat.data[0, 1]) / 2
        assert np.allclose(cset.vectors[1].data, expected, atol=1e-15)

    def test_matches_accumulation_oracle(self, rng):
        for _ in range(20):
            feat = rng.normal(size=(6, 6, 5))
            labels = _onehot(rng, 6, 6, 4)
            cset = source_centroids(Tensor(feat), labels)
            vecs, counts = np_source_centroids(feat, labels)
            assert np.array_equal(cset.weights, counts)
            for k in range(4):
                if counts[k]:
                    assert np.allclose(cset.vectors[k].data, vecs[k], atol=1e-12)
                else:
                    assert cset.vectors[k] is None

    def test_permutation_invariant_over_pixels(self, rng):
        feat = rng.normal(size=(4, 4, 3))
        labels = _onehot(rng, 4, 4, 3)
        base = source_centroids(Tensor(feat), labels)
        perm = rng.permutation(16)
        feat_p = feat.reshape(16, 3)[perm].reshape(4, 4, 3)
        labels_p = labels.reshape(16, 3)[perm].reshape(4, 4, 3)
        shuffled = source_centroids(Tensor(feat_p), labels_p)
        for k in range(3):
            if base.vectors[k] is None:
                assert shuffled.vectors[k] is None
            else:
                assert np.allclose(
                    base.vectors[k].data, shuffled.vectors[k].data, atol=1e-12
                )

    def test_batch_accumulation(self, rng):
        feats = [Tensor(rng.normal(size=(3, 3, 2))) for _ in range(3)]
        labels = [_onehot(rng, 3, 3, 2) for _ in range(3)]
        cset = source_centroids(feats, labels)
        pooled_f = np.concatenate([f.data.reshape(-1, 2) for f in feats])
        pooled_l = np.concatenate([l.reshape(-1, 2) for l in labels])
        vecs, counts = np_source_centroids(
            pooled_f.reshape(1, -1, 2), pooled_l.reshape(1, -1, 2)
        )
        assert np.array_equal(cset.weights, counts)
        for k in range(2):
            if counts[k]:
                assert np.allclose(cset.vectors[k].data, vecs[k], atol=1e-12)


class TestTargetCentroids:
    def _soft_map(self, values):
        selected = values.sum(axis=-1) > 0
        return SoftLabelMap(values=values, selected=selected)

    def test_single_selected_pixel_weight_cancels(self, rng):
        feat = Tensor(rng.normal(size=(1, 1, 4)))
        values = np.zeros((1, 1, 2))
        values[0, 0] = [0.8, 0.2]
        cset = target_centroids(feat, self._soft_map(values))
        # the pixel contributes only to its argmax class; 0.8*f/0.8 cancels
        assert cset.valid.tolist() == [True, False]
        assert np.allclose(cset.vectors[0].data, feat.data[0, 0], rtol=1e-15, atol=1e-15)

    def test_all_unselected_all_invalid(self, rng):
        feat = Tensor(rng.normal(size=(3, 3, 2)))
        cset = target_centroids(
            feat, SoftLabelMap(values=np.zeros((3, 3, 2)),
                               selected=np.zeros((3, 3), bool))
        )
        assert not cset.valid.any()
        assert all(v is None for v in cset.vectors)

    def test_matches_weighted_accumulation_oracle(self, rng):
        for _ in range(20):
            feat = rng.normal(size=(5, 5, 4))
            raw = rng.uniform(size=(5, 5, 3))
            values = raw / raw.sum(axis=-1, keepdims=True)
            drop = rng.uniform(size=(5, 5)) < 0.4
            values[drop] = 0.0
            sm = self._soft_map(values)
            cset = target_centroids(Tensor(feat), sm)
            vecs, masses = np_target_centroids(feat, values, sm.selected)
            assert np.allclose(cset.weights, masses, atol=1e-12)
            for k in range(3):
                if masses[k] > 0:
                    assert np.allclose(cset.vectors[k].data, vecs[k], atol=1e-12)


class TestLossDiv:
    def _set_from(self, arrays, weights):
        vectors = [None if w == 0 else Tensor(a) for a, w in zip(arrays, weights)]
        return CentroidSet(vectors=vectors, weights=np.asarray(weights, float))

    def test_identical_sets_give_exact_zero(self, rng):
        arrays = [np.abs(rng.normal(size=4)) for _ in range(3)]
        a = self._set_from(arrays, [5, 2, 1])
        b = self._set_from(arrays, [3, 1, 4])
        assert loss_div(a, b).item() == 0.0

    def test_symmetric_exactly(self, rng):
        a = self._set_from([np.abs(rng.normal(size=4)) for _ in range(3)], [1, 2, 0])
        b = self._set_from([np.abs(rng.normal(size=4)) for _ in range(3)], [2, 1, 1])
        assert loss_div(a, b).item() == loss_div(b, a).item()

    def test_frozen_two_vector_example(self):
        u = np.array([1.0, 2.0, 3.0])
        v = np.array([3.0, 1.0, 1.0])
        a = self._set_from([u], [1])
        b = self._set_from([v], [1])
        expected = np_divergence(u[None, :], [1], v[None, :], [1])
        assert loss_div(a, b).item() == pytest.approx(expected, abs=1e-12)
        assert loss_div(a, b).item() > 0

    def test_divides_by_full_class_count(self, rng):
        u, v = np.abs(rng.normal(size=3)), np.abs(rng.normal(size=3))
        one = loss_div(self._set_from([u], [1]), self._set_from([v], [1])).item()
        padded_a = self._set_from([u, u], [1, 0])
        padded_b = self._set_from([v, v], [1, 0])
        assert loss_div(padded_a, padded_b).item() == pytest.approx(one / 2, abs=1e-15)

    def test_no_mutual_valid_warns_and_zero(self, rng):
        a = self._set_from([np.abs(rng.normal(size=3)), None], [1, 0])
        b = self._set_from([None, np.abs(rng.normal(size=3))], [0, 1])
        with pytest.warns(EmptyMaskWarning):
            out = loss_div(a, b)
        assert out.item() == 0.0

    def test_nonnegative_random(self, rng):
        for _ in range(50):
            k = int(rng.integers(1, 5))
            a = self._set_from([np.abs(rng.normal(size=6)) for _ in range(k)], [1] * k)
            b = self._set_from([np.abs(rng.normal(size=6)) for _ in range(k)], [1] * k)
            assert loss_div(a, b).item() >= 0.0

    def test_matches_full_oracle(self, rng):
        for _ in range(20):
            feat_s = rng.normal(size=(5, 5, 4))
            feat_t = rng.normal(size=(5, 5, 4))
            labels = _onehot(rng, 5, 5, 3)
            raw = rng.uniform(size=(5, 5, 3))
            values = raw / raw.sum(axis=-1, keepdims=True)
            values[rng.uniform(size=(5, 5)) < 0.3] = 0.0
            sm = SoftLabelMap(values=values, selected=values.sum(-1) > 0)
            # relu'd features, as produced by the encoder
            fs = np.maximum(feat_s, 0.0)
            ft = np.maximum(feat_t, 0.0)
            ours = loss_div(
                source_centroids(Tensor(fs), labels),
                target_centroids(Tensor(ft), sm),
            ).item()
            cs, ns = np_source_centroids(fs, labels)
            ct, nt = np_target_centroids(ft, values, sm.selected)
            both = (ns > 0) & (nt > 0)
            if not both.any():
                continue
            expected = np_divergence(cs, ns, ct, nt)
            assert ours == pytest.approx(expected, abs=1e-12)

    def test_class_count_mismatch_rejected(self, rng):
        a = self._set_from([np.ones(3)], [1])
        b = self._set_from([np.ones(3), np.ones(3)], [1, 1])
        with pytest.raises(ShapeError):
            loss_div(a, b)

    def test_gradient_on_leaf_features(self, rng):
        # analytic gradient through centroids + normalization wrt raw features
        fs = Tensor(np.abs(rng.normal(size=(3, 3, 4))), requires_grad=True)
        ft = Tensor(np.abs(rng.normal(size=(3, 3, 4))), requires_grad=True)
        labels = _onehot(rng, 3, 3, 2)
        raw = rng.uniform(size=(3, 3, 2))
        values = raw / raw.sum(axis=-1, keepdims=True)
        sm = SoftLabelMap(values=values, selected=np.ones((3, 3), bool))
        loss_div(source_centroids(fs, labels), target_centroids(ft, sm)).backward()
        probes = [fs.data, ft.data]

        def f():
            with T.no_grad():
                return loss_div(
                    source_centroids(Tensor(probes[0]), labels),
                    target_centroids(Tensor(probes[1]), sm),
                ).item()

        fd = fd_gradient(f, probes)
        assert_grad_close(fs.grad, fd[0], label="divergence wrt source features")
        assert_grad_close(ft.grad, fd[1], label="divergence wrt target features")

    def test_gradient_through_encoder_and_normalization(self, rng):
        # configuration chosen so no relu pre-activation sits near its kink:
        # finite differences are only trustworthy away from the kink, where
        # the eps-smoothed log would amplify a crossing enormously
        enc = Encoder(in_channels=2, feature_channels=3, hidden=(2, 2),
                      rng=np.random.default_rng(104))
        for p in enc.parameters():
            if p.data.ndim == 1:
                p.data[...] = 0.3
        local = np.random.default_rng(4)
        xs = local.uniform(0.2, 1.2, size=(4, 4, 2))
        xt = local.uniform(0.2, 1.2, size=(4, 4, 2))
        with T.no_grad():
            for x in (xs, xt):
                h = Tensor(x)
                for block in enc.blocks:
                    pre = block(h)
                    assert np.abs(pre.data).min() > 1e-2
                    h = T.relu(pre)
        labels = _onehot(local, 4, 4, 2)
        raw = local.uniform(size=(4, 4, 2))
        values = raw / raw.sum(axis=-1, keepdims=True)
        sm = SoftLabelMap(values=values, selected=np.ones((4, 4), bool))

        def build():
            cs = source_centroids(enc(Tensor(xs)), labels)
            ct = target_centroids(enc(Tensor(xt)), sm)
            return loss_div(cs, ct)

        enc.zero_grad()
        build().backward()
        params = enc.parameters()
        probes = [p.data for p in params]

        def f():
            with T.no_grad():
                return build().item()

        fd = fd_gradient(f, probes)
        for p, g in zip(params, fd):
            assert_grad_close(p.grad, g, label="divergence through encoder")
