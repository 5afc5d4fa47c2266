"""Joint training: per-step update lines, epoch-level label refresh, metrics.

Each training step runs four update lines in a fixed order, each with its own
loss graph and its own parameter set stepped:

  1. encoder + classifier via the segmentation loss (source cross-entropy
     plus the target soft-label term once labels exist),
  2. encoder (min) and discriminator (max) via the weighted adversarial and
     centroid-divergence losses,
  3. quantizer via the attention-path segmentation loss plus the weighted
     critic-gain loss,
  4. critic via the reward regression loss.

Before every line all gradients are zeroed and every network outside the
line's declared set is frozen, so off-target gradients are exactly zero.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import alignment, critic as critic_ops, metrics, pseudolabel, synthdata
from . import tensor as T
from .checkpoint import save_params
from .networks import SegmentationModel
from .optim import OptimizerConfig, step as optim_step
from .synthdata import SceneSpec, one_hot
from .tensor import Tensor


class NumericsError(RuntimeError):
    """A loss went non-finite; diagnostics were dumped if a run dir exists."""


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class ModelConfig:
    feature_channels: int = 32
    encoder_hidden: tuple = (16, 32)
    width_factor: float = 0.25
    kernel_size: int = 3


@dataclass
class OptimSettings:
    kind: str = "adam"
    lr_seg: float = 2e-3
    lr_disc: float = 5e-4
    lr_critic: float = 1e-3
    poly_power: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    max_iterations: int = 0  # 0 means epochs * train_scenes


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 1
    gamma: float = 0.25
    critic_weight: float = 0.3
    adv_weight: float = 0.001
    div_weight: float = 10.0
    use_critic: bool = True
    use_pseudo: bool = True
    use_div: bool = True
    literal_adv: bool = False
    normalize_entropy: bool = True
    select_start: float = 0.35
    select_step: float = 0.05
    select_cap: float = 0.50
    label_dump_limit: int = 8
    data: SceneSpec = field(default_factory=SceneSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimSettings = field(default_factory=OptimSettings)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise ConfigError(
                f"the training procedure is defined per scene pair; batch_size "
                f"must be 1, got {self.batch_size}"
            )
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        for name in ("critic_weight", "adv_weight", "div_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (0 < self.select_start <= 1 and 0 < self.select_cap <= 1):
            raise ConfigError("selection amounts must lie in (0, 1]")


@dataclass
class RunState:
    iteration: int = 0
    epoch: int = 0
    thresholds: object = None
    rng: object = None


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over pixels of the soft cross-entropy; all-zero rows contribute 0."""
    log_probs = T.log_softmax(logits, axis=-1)
    n_pixels = logits.data.shape[0] * logits.data.shape[1]
    return T.tsum(log_probs * Tensor(np.asarray(targets, dtype=np.float64))) * (
        -1.0 / n_pixels
    )


def _pooled(parts) -> Tensor:
    """Pool per-domain masked means (loss, count) into one masked mean."""
    total = sum(n for _, n in parts)
    if total == 0:
        return Tensor(0.0)
    acc = None
    for loss, n in parts:
        if n == 0:
            continue
        term = loss * (n / total)
        acc = term if acc is None else acc + term
    return acc


class Trainer:
    """Owns the model, the optimizers, and the epoch/step loop."""

    GROUP_OPTIM = {
        "encoder": "seg",
        "classifier": "seg",
        "discriminator": "disc",
        "quantizer": "critic",
        "critic": "critic",
    }

    def __init__(self, config: TrainConfig, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = SegmentationModel(
            in_channels=config.data.channels,
            n_classes=config.data.classes,
            feature_channels=config.model.feature_channels,
            encoder_hidden=tuple(config.model.encoder_hidden),
            width_factor=config.model.width_factor,
            kernel_size=config.model.kernel_size,
            normalize_entropy=config.normalize_entropy,
            seed=config.seed,
        )
        self.state = RunState(
            rng=np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([config.seed, 7]))
            )
        )
        self.history = []
        self._optims = {}
        self._max_iterations = (
            config.optim.max_iterations or config.epochs * config.data.train_scenes
        )

    def _optimizer_for(self, group: str) -> OptimizerConfig:
        if group not in self._optims:
            o = self.config.optim
            lr = {"seg": o.lr_seg, "disc": o.lr_disc, "critic": o.lr_critic}[
                self.GROUP_OPTIM[group]
            ]
            self._optims[group] = OptimizerConfig(
                kind=o.kind,
                lr=lr,
                poly_power=o.poly_power,
                betas=(o.adam_beta1, o.adam_beta2),
                max_iterations=self._max_iterations,
            )
        return self._optims[group]

    # -- freezing ----------------------------------------------------------
    def _freeze_except(self, *active_groups):
        for name, params in self.model.groups().items():
            flag = name in active_groups
            for p in params:
                p.requires_grad = flag

    def _zero_all(self):
        for p in self.model.parameters():
            p.zero_grad()

    def _unfreeze_all(self):
        for p in self.model.parameters():
            p.requires_grad = True

    # -- update lines ------------------------------------------------------
    def _attention_logits(self, scene):
        """Taped encoder/classifier forward with the transfer scores applied
        as constants: the quantizer's attention modulates the features, but
        this line does not differentiate through the score path."""
        features = self.model.encoder(scene)
        with T.no_grad():
            d_map = self.model.discriminator(Tensor(features.data))
            scores = self.model.transfer_scores(d_map)
        boosted = features * Tensor(1.0 + scores.data)
        return self.model.classifier(boosted)

    def _update_segmentation(self, xs, ys, xt, soft_map):
        """Line 1: encoder + classifier on the segmentation loss."""
        cfg = self.config
        self._freeze_except("encoder", "classifier")
        self._zero_all()
        if cfg.use_critic:
            logits_s = self._attention_logits(xs)
        else:
            _, logits_s = self.model.segmentation_logits(xs, use_attention=False)
        loss = cross_entropy(logits_s, ys)
        if cfg.use_pseudo and soft_map is not None and soft_map.selected.any():
            if cfg.use_critic:
                logits_t = self._attention_logits(xt)
            else:
                _, logits_t = self.model.segmentation_logits(xt, use_attention=False)
            loss = loss + cross_entropy(logits_t, soft_map.values)
        loss.backward()
        for group in ("encoder", "classifier"):
            optim_step(
                self.model.groups()[group], self._optimizer_for(group), self.state.iteration
            )
        return loss.item()

    def _update_alignment(self, xs, ys, xt, soft_map):
        """Line 2: encoder vs discriminator on adversarial + divergence losses.

        One shared taped forward serves both players: the backward pass
        deposits the encoder-side gradient of the adversarial objective, and
        the discriminator gradients are then negated in place (exact), which
        equals backpropagating the discriminator-side loss separately.
        """
        cfg = self.config
        do_adv = cfg.adv_weight > 0
        do_div = cfg.use_div and cfg.div_weight > 0
        out = {"adv_e": 0.0, "adv_d": 0.0, "div": 0.0}
        if not (do_adv or do_div):
            return out

        self._freeze_except("encoder", "discriminator")
        self._zero_all()
        feat_s = self.model.encoder(xs)
        feat_t = self.model.encoder(xt)
        encoder_terms = []
        if do_adv:
            d_loss, e_loss = alignment.loss_adv(
                self.model.discriminator(feat_s),
                self.model.discriminator(feat_t),
                literal=cfg.literal_adv,
            )
            out["adv_e"] = e_loss.item()
            out["adv_d"] = d_loss.item()
            encoder_terms.append(e_loss * cfg.adv_weight)
        if do_div:
            cset = alignment.source_centroids([feat_s], [ys])
            if cfg.use_pseudo and soft_map is not None and soft_map.selected.any():
                tset = alignment.target_centroids([feat_t], [soft_map])
            else:
                tset = alignment.CentroidSet(
                    vectors=[None] * cfg.data.classes,
                    weights=np.zeros(cfg.data.classes),
                )
            if np.any(cset.valid & tset.valid):
                div = alignment.loss_div(cset, tset)
            else:
                div = Tensor(0.0)
            out["div"] = div.item()
            encoder_terms.append(div * cfg.div_weight)
        total = encoder_terms[0]
        for term in encoder_terms[1:]:
            total = total + term
        total.backward()
        for p in self.model.groups()["discriminator"]:
            np.negative(p.grad, out=p.grad)

        optim_step(
            self.model.groups()["encoder"], self._optimizer_for("encoder"),
            self.state.iteration,
        )
        if do_adv:
            optim_step(
                self.model.groups()["discriminator"], self._optimizer_for("discriminator"),
                self.state.iteration,
            )
        return out

    def _constants_for_critic(self, xs, xt):
        """Forward encoder and discriminator with no tape; later lines treat
        these as constants (the two networks do not change in between)."""
        with T.no_grad():
            feat_s = self.model.encoder(xs)
            feat_t = self.model.encoder(xt)
            d_s = self.model.discriminator(feat_s)
            d_t = self.model.discriminator(feat_t)
        return feat_s.data, feat_t.data, d_s.data, d_t.data

    def _update_quantizer(self, consts, ys, soft_map):
        """Line 3: quantizer via attention-path segmentation + critic gain."""
        cfg = self.config
        feat_s, feat_t, d_s, d_t = consts
        self._freeze_except("quantizer")
        self._zero_all()

        scores_s = self.model.transfer_scores(Tensor(d_s))
        scores_t = self.model.transfer_scores(Tensor(d_t))
        logits_s = self.model.classifier(Tensor(feat_s) * (1.0 + scores_s))
        loss = cross_entropy(logits_s, ys)
        have_target = (
            cfg.use_pseudo and soft_map is not None and soft_map.selected.any()
        )
        if have_target:
            logits_t = self.model.classifier(Tensor(feat_t) * (1.0 + scores_t))
            loss = loss + cross_entropy(logits_t, soft_map.values)

        n_s = d_s.shape[0] * d_s.shape[1]
        mask_s = np.ones(d_s.shape[:2], dtype=bool)
        v_s = critic_ops.critic_value(Tensor(feat_s), scores_s, self.model.critic)
        parts = [(critic_ops.loss_cri(v_s, mask_s), n_s)]
        if have_target:
            mask_t = soft_map.selected
            n_t = int(mask_t.sum())
            v_t = critic_ops.critic_value(Tensor(feat_t), scores_t, self.model.critic)
            parts.append((critic_ops.loss_cri(v_t, mask_t), n_t))
        gain = _pooled(parts)
        (loss + gain * cfg.critic_weight).backward()
        optim_step(
            self.model.groups()["quantizer"], self._optimizer_for("quantizer"),
            self.state.iteration,
        )
        return {
            "cri": gain.item(),
            "mean_p_src": float(scores_s.data.mean()),
            "mean_p_tgt": float(scores_t.data.mean()),
        }

    def _update_critic(self, consts, ys, soft_map):
        """Line 4: critic regresses its value map onto the rewards."""
        cfg = self.config
        feat_s, feat_t, d_s, d_t = consts
        self._freeze_except("critic")
        self._zero_all()

        with T.no_grad():
            scores_s = self.model.transfer_scores(Tensor(d_s))
            scores_t = self.model.transfer_scores(Tensor(d_t))
            with_s = T.softmax(
                self.model.classifier(Tensor(feat_s) * (1.0 + scores_s)), axis=-1
            )
            base_s = T.softmax(self.model.classifier(Tensor(feat_s)), axis=-1)
            with_t = T.softmax(
                self.model.classifier(Tensor(feat_t) * (1.0 + scores_t)), axis=-1
            )
            base_t = T.softmax(self.model.classifier(Tensor(feat_t)), axis=-1)

        reward_s = critic_ops.reward(with_s, base_s, ys)
        parts = []
        v_s = critic_ops.critic_value(
            Tensor(feat_s), Tensor(scores_s.data), self.model.critic
        )
        n_s = int(reward_s.mask.sum())
        parts.append((critic_ops.loss_reg(v_s, reward_s, reward_s.mask), n_s))
        reward_stats = {
            "mean_r_src": float(reward_s.total[reward_s.mask].mean()) if n_s else 0.0,
            "mean_v_src": float(v_s.data.mean()),
            "mean_r_tgt": 0.0,
            "mean_v_tgt": 0.0,
        }
        have_target = (
            cfg.use_pseudo and soft_map is not None and soft_map.selected.any()
        )
        if have_target:
            reward_t = critic_ops.reward(with_t, base_t, soft_map.values)
            v_t = critic_ops.critic_value(
                Tensor(feat_t), Tensor(scores_t.data), self.model.critic
            )
            n_t = int(reward_t.mask.sum())
            parts.append((critic_ops.loss_reg(v_t, reward_t, reward_t.mask), n_t))
            if n_t:
                reward_stats["mean_r_tgt"] = float(reward_t.total[reward_t.mask].mean())
            reward_stats["mean_v_tgt"] = float(v_t.data.mean())
        reg = _pooled(parts)
        reg.backward()
        optim_step(
            self.model.groups()["critic"], self._optimizer_for("critic"),
            self.state.iteration,
        )
        reward_stats["reg"] = reg.item()
        return reward_stats

    def train_step(self, source_scene, source_labels, target_scene, soft_map):
        """One full pass over the update lines; returns every loss scalar."""
        cfg = self.config
        xs = Tensor(np.asarray(source_scene, dtype=np.float64))
        xt = Tensor(np.asarray(target_scene, dtype=np.float64))
        ys = np.asarray(source_labels, dtype=np.float64)

        report = {
            "seg": 0.0, "adv_e": 0.0, "adv_d": 0.0, "cri": 0.0, "reg": 0.0,
            "div": 0.0, "mean_p_src": 0.0, "mean_p_tgt": 0.0, "mean_r_src": 0.0,
            "mean_r_tgt": 0.0, "mean_v_src": 0.0, "mean_v_tgt": 0.0,
        }
        report["seg"] = self._update_segmentation(xs, ys, xt, soft_map)
        report.update(self._update_alignment(xs, ys, xt, soft_map))
        if cfg.use_critic:
            consts = self._constants_for_critic(xs, xt)
            report.update(self._update_quantizer(consts, ys, soft_map))
            report.update(self._update_critic(consts, ys, soft_map))
        report["obj"] = (
            report["seg"]
            + report["reg"]
            + cfg.critic_weight * report["cri"]
            + cfg.adv_weight * report["adv_e"]
            + cfg.div_weight * report["div"]
        )
        self._unfreeze_all()
        self.state.iteration += 1

        for key in ("seg", "adv_e", "adv_d", "cri", "reg", "div", "obj"):
            if not np.isfinite(report[key]):
                self._dump_diagnostics(report)
                raise NumericsError(
                    f"non-finite loss {key}={report[key]} at iteration "
                    f"{self.state.iteration - 1}"
                )
        return report

    # -- epoch-level work ----------------------------------------------------
    def generate_epoch_labels(self, target_scenes, epoch: int):
        """Attention-off inference over the target set, thresholds at the
        scheduled selection amount, fresh soft labels, centroid snapshot data."""
        cfg = self.config
        amount = pseudolabel.schedule_selection_amount(
            epoch, cfg.select_start, cfg.select_step, cfg.select_cap
        )
        prob_maps = []
        features = []
        with T.no_grad():
            for scene in target_scenes:
                feat, probs = self.model.forward_segmentation(
                    Tensor(scene), use_attention=False
                )
                prob_maps.append(probs.data)
                features.append(feat.data)
        thresholds = pseudolabel.determine_thresholds(prob_maps, amount, epoch=epoch)
        label_maps = [
            pseudolabel.generate(pm, thresholds, cfg.gamma) for pm in prob_maps
        ]
        self.state.thresholds = thresholds
        return thresholds, label_maps, prob_maps, features

    def evaluate(self, scenes, labels):
        """Attention-off mIoU over a labeled scene set."""
        cm = metrics.ConfusionMatrix(self.config.data.classes)
        with T.no_grad():
            for scene, lab in zip(scenes, labels):
                _, probs = self.model.forward_segmentation(
                    Tensor(scene), use_attention=False
                )
                cm.add(lab, probs.data.argmax(axis=-1))
        return metrics.iou(cm)

    def predict_proba(self, scenes) -> np.ndarray:
        out = []
        with T.no_grad():
            for scene in scenes:
                _, probs = self.model.forward_segmentation(
                    Tensor(np.asarray(scene, dtype=np.float64)), use_attention=False
                )
                out.append(probs.data)
        return np.stack(out)

    def _domain_gap(self, eval_source, eval_target) -> float:
        d_src, d_tgt = [], []
        with T.no_grad():
            for scene in eval_source:
                d_src.append(
                    self.model.discriminator(self.model.encoder(Tensor(scene))).data
                )
            for scene in eval_target:
                d_tgt.append(
                    self.model.discriminator(self.model.encoder(Tensor(scene))).data
                )
        return metrics.domain_gap(d_src, d_tgt)

    def fit(self, source_scenes, source_labels, target_scenes,
            eval_source=None, eval_source_labels=None,
            eval_target=None, eval_target_labels=None):
        """Full training; returns the per-epoch history (last row = final)."""
        cfg = self.config
        n_source = len(source_scenes)
        n_target = len(target_scenes)
        k = cfg.data.classes
        source_onehot = [one_hot(lab, k) for lab in source_labels]
        self._max_iterations = (
            cfg.optim.max_iterations or cfg.epochs * n_target
        )
        self._write_config_copy()

        loss_keys = ("seg", "adv_e", "adv_d", "cri", "reg", "div", "obj",
                     "mean_p_src", "mean_p_tgt", "mean_r_src", "mean_r_tgt",
                     "mean_v_src", "mean_v_tgt")
        for epoch in range(cfg.epochs):
            self.state.epoch = epoch
            if cfg.use_pseudo:
                thresholds, label_maps, prob_maps, target_feats = (
                    self.generate_epoch_labels(target_scenes, epoch)
                )
                sel_frac = pseudolabel.selection_report(prob_maps, label_maps)
            else:
                thresholds, label_maps, target_feats = None, [None] * n_target, None
                sel_frac = np.zeros(k)

            order = self.state.rng.permutation(n_target)
            source_pick = self.state.rng.integers(0, n_source, size=n_target)
            sums = {key: 0.0 for key in loss_keys}
            for j, t_idx in enumerate(order):
                s_idx = int(source_pick[j])
                report = self.train_step(
                    source_scenes[s_idx], source_onehot[s_idx],
                    target_scenes[t_idx], label_maps[t_idx],
                )
                for key in loss_keys:
                    sums[key] += report[key]
            means = {key: sums[key] / n_target for key in loss_keys}

            row = {"epoch": epoch}
            row["selection_amount"] = (
                thresholds.selection_amount if thresholds is not None else 0.0
            )
            row.update(means)
            if eval_target is not None and eval_target_labels is not None:
                per_class, miou = self.evaluate(eval_target, eval_target_labels)
            else:
                per_class, miou = np.full(k, np.nan), float("nan")
            row["miou"] = miou
            if eval_source is not None and eval_source_labels is not None:
                _, row["miou_source"] = self.evaluate(eval_source, eval_source_labels)
            else:
                row["miou_source"] = float("nan")
            gap_src = eval_source if eval_source is not None else source_scenes[:32]
            gap_tgt = eval_target if eval_target is not None else target_scenes[:32]
            row["gap"] = self._domain_gap(gap_src, gap_tgt)
            for i in range(k):
                row[f"iou_{i}"] = per_class[i]
            for i in range(k):
                row[f"sel_frac_{i}"] = float(sel_frac[i])
            for i in range(k):
                row[f"delta_{i}"] = (
                    float(thresholds.values[i]) if thresholds is not None else 1.0
                )
            self.history.append(row)
            self._write_epoch_artifacts(epoch, row, label_maps, target_feats,
                                        source_scenes, source_onehot)
        return self.history

    # -- artifacts -----------------------------------------------------------
    def _write_config_copy(self):
        if self.out_dir is None:
            return
        from .config import serialize_config, config_to_dict

        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.yaml").write_text(
            serialize_config(config_to_dict(self.config))
        )

    def _write_epoch_artifacts(self, epoch, row, label_maps, target_feats,
                               source_scenes, source_onehot):
        if self.out_dir is None:
            return
        self._append_metrics_row(row)
        save_params(
            self.model.state_dict(), self.out_dir / "checkpoints" / f"epoch-{epoch}"
        )
        if self.config.use_pseudo and label_maps[0] is not None:
            label_dir = self.out_dir / "labels" / f"epoch-{epoch}"
            for i, lm in enumerate(label_maps[: self.config.label_dump_limit]):
                pseudolabel.save_soft_labels(lm, label_dir / f"scene-{i:03d}.txt")
        self._write_centroid_snapshot(epoch, label_maps, target_feats,
                                      source_scenes, source_onehot)

    def _write_centroid_snapshot(self, epoch, label_maps, target_feats,
                                 source_scenes, source_onehot):
        cf = self.config.model.feature_channels
        k = self.config.data.classes
        cdir = self.out_dir / "centroids" / f"epoch-{epoch}"
        cdir.mkdir(parents=True, exist_ok=True)
        n = min(32, len(source_scenes))
        with T.no_grad():
            feats = [self.model.encoder(Tensor(source_scenes[i])) for i in range(n)]
            cset = alignment.source_centroids(feats, [source_onehot[i] for i in range(n)])
        self._dump_centroids(cset, cdir / "source.csv", cf)
        if target_feats is not None and label_maps[0] is not None:
            m = min(32, len(target_feats))
            tset = alignment.target_centroids(
                [Tensor(f) for f in target_feats[:m]], label_maps[:m]
            )
            self._dump_centroids(tset, cdir / "target.csv", cf)

    @staticmethod
    def _dump_centroids(cset, path, cf):
        arr = cset.to_array(cf)
        with open(path, "w") as f:
            f.write("class,weight," + ",".join(f"c{i}" for i in range(cf)) + "\n")
            for k, row in enumerate(arr):
                vals = ",".join(repr(v) for v in row)
                f.write(f"{k},{repr(float(cset.weights[k]))},{vals}\n")

    def _metrics_columns(self):
        k = self.config.data.classes
        cols = ["epoch", "selection_amount", "seg", "adv_e", "adv_d", "cri", "reg",
                "div", "obj", "miou", "miou_source", "gap"]
        cols += [f"iou_{i}" for i in range(k)]
        cols += [f"sel_frac_{i}" for i in range(k)]
        cols += [f"delta_{i}" for i in range(k)]
        cols += ["mean_p_src", "mean_p_tgt", "mean_r_src", "mean_r_tgt",
                 "mean_v_src", "mean_v_tgt"]
        return cols

    def _append_metrics_row(self, row):
        path = self.out_dir / "metrics.csv"
        cols = self._metrics_columns()
        if not path.exists():
            path.write_text(",".join(cols) + "\n")
        rendered = []
        for c in cols:
            v = row[c]
            rendered.append(str(v) if isinstance(v, (int, np.integer)) else repr(float(v)))
        with open(path, "a") as f:
            f.write(",".join(rendered) + "\n")

    def _dump_diagnostics(self, report):
        if self.out_dir is None:
            return
        diag = {
            "iteration": self.state.iteration,
            "epoch": self.state.epoch,
            "losses": {key: float(v) for key, v in report.items()},
            "param_norms": {
                name: float(np.linalg.norm(p.data))
                for name, p in self.model.named_parameters().items()
            },
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2))


def run(config: TrainConfig, out_dir=None):
    """Generate the benchmark datasets from the config and train end to end."""
    cfg = config
    spec = cfg.data
    t0 = time.time()
    src_x, src_y = synthdata.generate_domain(spec, spec.train_scenes, "source")
    tgt_x, tgt_y = synthdata.generate_domain(spec, spec.train_scenes, "target")
    eval_spec = SceneSpec(**{**asdict(spec), "seed": spec.seed + 10_000})
    es_x, es_y = synthdata.generate_domain(eval_spec, spec.eval_scenes, "source")
    et_x, et_y = synthdata.generate_domain(eval_spec, spec.eval_scenes, "target")

    trainer = Trainer(cfg, out_dir=out_dir)
    history = trainer.fit(
        src_x, src_y, tgt_x,
        eval_source=es_x, eval_source_labels=es_y,
        eval_target=et_x, eval_target_labels=et_y,
    )
    summary = {
        "miou": history[-1]["miou"],
        "miou_source": history[-1]["miou_source"],
        "gap_first": history[0]["gap"],
        "gap_last": history[-1]["gap"],
        "seconds": time.time() - t0,
    }
    if out_dir is not None:
        trainer_out = Path(out_dir)
        save_params(trainer.model.state_dict(), trainer_out / "checkpoints" / "final")
        (trainer_out / "summary.json").write_text(json.dumps(summary, indent=2))
    return trainer, history, summary
