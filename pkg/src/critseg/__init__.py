"""Critic-guided unsupervised domain adaptation for semantic segmentation.

A desk-scale laboratory: a float64 autodiff substrate, five toy networks,
confidence-guided soft pseudo labels, adversarial plus centroid-divergence
alignment, a critic-supervised transferability mechanism, and the full joint
training procedure on procedurally generated scene pairs.
"""

__version__ = "0.1.0"

from .estimator import DomainAdaptiveSegmenter, check_label_array, check_scene_array
from .networks import SegmentationModel
from .synthdata import SceneSpec, generate_domain
from .tensor import Parameter, Tensor, no_grad
from .trainer import TrainConfig, Trainer, run

__all__ = [
    "DomainAdaptiveSegmenter",
    "Parameter",
    "SceneSpec",
    "SegmentationModel",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "check_label_array",
    "check_scene_array",
    "generate_domain",
    "no_grad",
    "run",
    "__version__",
]
