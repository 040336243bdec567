"""Targeted L-infinity PGD against a (possibly masked) network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masking import MeanMask, masked_input_gradient, masked_logits
from .network import NeuronNetwork

__all__ = ["AttackConfig", "draw_targets", "pgd_attack"]


@dataclass(frozen=True)
class AttackConfig:
    """PGD parameters. The defaults keep the 30-step, step = epsilon / 20
    schedule and size epsilon for unit-variance features."""

    epsilon: float = 1.0
    steps: int = 30
    step_size: float = 0.05
    norm: str = "inf"
    target_rule: str = "random_class"

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.norm != "inf":
            raise ValueError("only the infinity norm is supported")
        if self.target_rule != "random_class":
            raise ValueError("only the random_class target rule is supported")


def draw_targets(labels: np.ndarray, n_classes: int, seed) -> np.ndarray:
    """One target per example, uniform over the classes other than its label."""
    rng = np.random.default_rng(seed)
    shift = rng.integers(1, n_classes, size=len(labels))
    return (np.asarray(labels) + shift) % n_classes


def pgd_attack(
    net: NeuronNetwork,
    masks: MeanMask,
    absent,
    x: np.ndarray,
    targets: np.ndarray,
    cfg: AttackConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Perturb ``x`` toward ``targets`` inside the epsilon ball.

    Returns ``(x_adv, success)`` where ``success[i]`` says the masked network
    predicts ``targets[i]`` on ``x_adv[i]``. No box constraint is applied:
    the features are unbounded.
    """
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    x_adv = x.copy()
    if cfg.epsilon > 0:
        for _ in range(cfg.steps):
            grad, _ = masked_input_gradient(net, masks, absent, x_adv, targets)
            x_adv = x_adv - cfg.step_size * np.sign(grad)
            x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
    pred = masked_logits(net, masks, absent, x_adv).argmax(axis=1)
    return x_adv, pred == targets
