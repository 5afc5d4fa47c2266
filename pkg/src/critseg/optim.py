"""Optimizers: plain SGD with polynomial learning-rate decay, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


class OptimizerError(ValueError):
    """Raised for invalid optimizer configuration or scheduling state."""


@dataclass
class OptimizerConfig:
    kind: str = "adam"  # "adam" or "sgd-poly"
    lr: float = 1e-3
    poly_power: float = 0.9
    betas: tuple = (0.9, 0.99)
    max_iterations: int = 1000
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd-poly"):
            raise OptimizerError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise OptimizerError(f"learning rate must be > 0, got {self.lr}")
        if self.poly_power <= 0:
            raise OptimizerError(f"poly power must be > 0, got {self.poly_power}")
        if not (0 < self.betas[0] < 1 and 0 < self.betas[1] < 1):
            raise OptimizerError(f"betas must lie in (0, 1), got {self.betas}")
        if self.max_iterations < 1:
            raise OptimizerError("max_iterations must be >= 1")


def poly_lr(config: OptimizerConfig, iteration: int) -> float:
    """base * (1 - i/max)^power; only defined for i < max."""
    if iteration >= config.max_iterations:
        raise OptimizerError(
            f"iteration {iteration} >= max_iterations {config.max_iterations} "
            "under the poly schedule"
        )
    return config.lr * (1.0 - iteration / config.max_iterations) ** config.poly_power


def step(params, config: OptimizerConfig, iteration: int) -> None:
    """Apply one update from the accumulated gradients.

    Gradients are not cleared here. Adam keeps per-parameter moment buffers
    and a per-parameter step count for bias correction; the poly schedule is
    driven by the caller's iteration counter.
    """
    if config.kind == "sgd-poly":
        lr = poly_lr(config, iteration)
        for p in params:
            p.data = p.data - lr * p.grad
        return

    b1, b2 = config.betas
    for p in params:
        if p.m is None:
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
        p.steps += 1
        p.m *= b1
        p.m += (1.0 - b1) * p.grad
        p.v *= b2
        p.v += (1.0 - b2) * (p.grad * p.grad)
        m_hat = p.m / (1.0 - b1**p.steps)
        v_hat = p.v / (1.0 - b2**p.steps)
        np.sqrt(v_hat, out=v_hat)
        v_hat += config.eps
        m_hat /= v_hat
        m_hat *= config.lr
        p.data = p.data - m_hat


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
