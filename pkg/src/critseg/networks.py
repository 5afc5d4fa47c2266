"""The five toy networks: encoder, pixel classifier, discriminator,
transferability quantizer and transferability critic.

All convolutions run at stride 1 so every per-pixel quantity (transfer
scores, critic values, rewards) stays aligned with the label grid.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor

LOG2 = float(np.log(2.0))


def scaled_channels(base, width_factor: float):
    """Scale a channel tuple, keeping every entry at least 1."""
    return tuple(max(1, int(round(c * width_factor))) for c in base)


class Module:
    """Minimal parameter container with recursive discovery."""

    def parameters(self):
        return list(self.named_parameters().values())

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix=f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(prefix=f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def requires_grad_(self, flag: bool = True):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict:
        return {n: p.data.copy() for n, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state dict missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model "
                    f"shape {p.data.shape}"
                )
            p.data = arr.copy()

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Conv(Module):
    """One convolution layer with bias, He-initialized."""

    def __init__(self, cin: int, cout: int, kernel_size: int, rng, pad=None):
        self.stride = 1
        self.pad = (kernel_size - 1) // 2 if pad is None else pad
        std = np.sqrt(2.0 / (kernel_size * kernel_size * cin))
        self.kernel = Parameter(
            rng.normal(0.0, std, size=(kernel_size, kernel_size, cin, cout))
        )
        self.bias = Parameter(np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, stride=self.stride, pad=self.pad)


class Encoder(Module):
    """3 conv blocks, channels (16, 32, Cf), relu after each; keeps H x W.

    The final relu guarantees non-negative features, which the centroid
    divergence loss relies on.
    """

    def __init__(self, in_channels=3, feature_channels=32, hidden=(16, 32),
                 kernel_size=3, rng=None):
        rng = rng or np.random.default_rng(0)
        self.feature_channels = feature_channels
        chans = (in_channels,) + tuple(hidden) + (feature_channels,)
        self.blocks = [
            Conv(chans[i], chans[i + 1], kernel_size, rng) for i in range(3)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = T.relu(block(h))
        return h


class PixelClassifier(Module):
    """1x1 conv from feature channels to K class logits."""

    def __init__(self, feature_channels=32, n_classes=5, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_classes = n_classes
        self.head = Conv(feature_channels, n_classes, 1, rng)

    def __call__(self, features: Tensor) -> Tensor:
        return self.head(features)

    def probabilities(self, features: Tensor) -> Tensor:
        return T.softmax(self.head(features), axis=-1)


class Discriminator(Module):
    """5 conv layers, channels (64,128,256,512,1) scaled by width_factor,
    leaky relu (slope 0.2) between layers, sigmoid output in (0,1)."""

    BASE_CHANNELS = (64, 128, 256, 512)
    KERNELS = (3, 3, 1, 1, 1)

    def __init__(self, in_channels=32, width_factor=0.25, slope=0.2, rng=None,
                 kernels=None):
        rng = rng or np.random.default_rng(0)
        self.slope = slope
        kernels = kernels or self.KERNELS
        chans = (in_channels,) + scaled_channels(self.BASE_CHANNELS, width_factor) + (1,)
        self.layers = [
            Conv(chans[i], chans[i + 1], kernels[i], rng) for i in range(5)
        ]

    def __call__(self, features: Tensor) -> Tensor:
        h = features
        for layer in self.layers[:-1]:
            h = T.leaky_relu(layer(h), self.slope)
        return T.sigmoid(self.layers[-1](h))


class TransferQuantizer(Module):
    """Exactly one conv layer with a single output channel, then sigmoid.

    Consumes the discriminator's single-channel output map, not raw features.
    """

    def __init__(self, kernel_size=3, rng=None):
        rng = rng or np.random.default_rng(0)
        self.layer = Conv(1, 1, kernel_size, rng)

    def __call__(self, domain_map: Tensor) -> Tensor:
        return T.sigmoid(self.layer(domain_map))


class TransferCritic(Module):
    """Two-branch critic: a 3-layer state branch over features, a 2-layer
    policy branch over the transfer-score map, concatenated into a final
    1-channel conv producing the per-pixel critic value."""

    STATE_CHANNELS = (64, 32, 16)
    POLICY_CHANNELS = (16, 16)
    STATE_KERNELS = (3, 1, 1)
    POLICY_KERNELS = (3, 1)

    def __init__(self, in_channels=32, width_factor=0.25, slope=0.2, rng=None):
        rng = rng or np.random.default_rng(0)
        self.slope = slope
        s_chans = (in_channels,) + scaled_channels(self.STATE_CHANNELS, width_factor)
        p_chans = (1,) + scaled_channels(self.POLICY_CHANNELS, width_factor)
        self.state_branch = [
            Conv(s_chans[i], s_chans[i + 1], self.STATE_KERNELS[i], rng)
            for i in range(3)
        ]
        self.policy_branch = [
            Conv(p_chans[i], p_chans[i + 1], self.POLICY_KERNELS[i], rng)
            for i in range(2)
        ]
        self.head = Conv(s_chans[-1] + p_chans[-1], 1, 1, rng)

    def __call__(self, features: Tensor, transfer_scores: Tensor) -> Tensor:
        if features.shape[:2] != transfer_scores.shape[:2]:
            raise ShapeError(
                f"spatial dims disagree: features {features.shape} vs "
                f"transfer scores {transfer_scores.shape}"
            )
        s = features
        for layer in self.state_branch:
            s = T.leaky_relu(layer(s), self.slope)
        p = transfer_scores
        for layer in self.policy_branch:
            p = T.leaky_relu(layer(p), self.slope)
        return self.head(T.concat([s, p], axis=-1))


class SegmentationModel(Module):
    """Bundle of the five networks plus the attention-coupled forward paths."""

    def __init__(self, in_channels=3, n_classes=5, feature_channels=32,
                 encoder_hidden=(16, 32), width_factor=0.25, kernel_size=3,
                 normalize_entropy=True, seed=0):
        streams = np.random.SeedSequence(seed).spawn(5)
        rngs = [np.random.Generator(np.random.PCG64(s)) for s in streams]
        self.normalize_entropy = normalize_entropy
        self.encoder = Encoder(in_channels, feature_channels, encoder_hidden,
                               kernel_size, rngs[0])
        self.classifier = PixelClassifier(feature_channels, n_classes, rngs[1])
        self.discriminator = Discriminator(feature_channels, width_factor,
                                           rng=rngs[2])
        self.quantizer = TransferQuantizer(kernel_size, rngs[3])
        self.critic = TransferCritic(feature_channels, width_factor, rng=rngs[4])

    def transfer_scores(self, domain_map: Tensor) -> Tensor:
        """Transfer score per pixel from the discriminator output map.

        Binary entropy of the quantizer output, flipped so maximal
        discriminator confusion scores 0; normalization by log 2 stretches
        the range to the full [0, 1].
        """
        from .critic import ENTROPY_AT_HALF, uncertainty  # avoid an import cycle

        u = uncertainty(self.quantizer(domain_map))
        if self.normalize_entropy:
            u = u / ENTROPY_AT_HALF
        return 1.0 - u

    def segmentation_logits(self, scene: Tensor, use_attention: bool = False):
        """Forward the scene through encoder and classifier.

        With attention, features are re-weighted as F * (1 + P), where the
        per-pixel transfer score P broadcasts over channels; P = 0 is exactly
        a no-op. Returns (feature map fed to the classifier, logits).
        """
        features = self.encoder(scene)
        if use_attention:
            if self.discriminator is None or self.quantizer is None:
                raise ShapeError(
                    "attention path requested but discriminator/quantizer are absent"
                )
            scores = self.transfer_scores(self.discriminator(features))
            features = features * (1.0 + scores)
        return features, self.classifier(features)

    def forward_segmentation(self, scene: Tensor, use_attention: bool = False):
        """(feature map fed to the classifier, per-pixel class distribution)."""
        features, logits = self.segmentation_logits(scene, use_attention)
        return features, T.softmax(logits, axis=-1)

    def forward_discriminator(self, features: Tensor) -> Tensor:
        return self.discriminator(features)

    def groups(self) -> dict:
        """Parameter groups keyed by the update line that owns them."""
        return {
            "encoder": self.encoder.parameters(),
            "classifier": self.classifier.parameters(),
            "discriminator": self.discriminator.parameters(),
            "quantizer": self.quantizer.parameters(),
            "critic": self.critic.parameters(),
        }
