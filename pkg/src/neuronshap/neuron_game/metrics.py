"""Performance metrics of a masked network on an evaluation set.

All metrics take the same ``(net, masks, absent, eval_set)`` prefix, where
``absent`` lists the players whose outputs are pinned to their means.
"""

from __future__ import annotations

import numpy as np

from .attack import AttackConfig, draw_targets, pgd_attack
from .data import GroupedDataset
from .masking import MeanMask, masked_logits
from .network import NeuronNetwork

__all__ = [
    "predict",
    "metric_accuracy",
    "metric_class_recall",
    "metric_group_fairness",
    "group_accuracies",
    "metric_adversarial",
    "attack_success_rate",
]


def predict(net: NeuronNetwork, masks: MeanMask, absent, x: np.ndarray) -> np.ndarray:
    return masked_logits(net, masks, absent, x).argmax(axis=1)


def _nonempty(eval_set: GroupedDataset) -> None:
    if len(eval_set) == 0:
        raise ValueError("evaluation set is empty")


def metric_accuracy(net: NeuronNetwork, masks: MeanMask, absent, eval_set: GroupedDataset) -> float:
    _nonempty(eval_set)
    return float(np.mean(predict(net, masks, absent, eval_set.features) == eval_set.labels))


def metric_class_recall(
    net: NeuronNetwork, masks: MeanMask, absent, eval_set: GroupedDataset, target_class: int
) -> float:
    rows = eval_set.labels == target_class
    if not rows.any():
        raise ValueError(f"evaluation set has no examples of class {target_class}")
    pred = predict(net, masks, absent, eval_set.features[rows])
    return float(np.mean(pred == target_class))


def group_accuracies(net: NeuronNetwork, masks: MeanMask, absent, eval_set: GroupedDataset) -> list[float]:
    _nonempty(eval_set)
    correct = predict(net, masks, absent, eval_set.features) == eval_set.labels
    accs = []
    for g in range(eval_set.n_groups):
        rows = eval_set.groups == g
        if not rows.any():
            raise ValueError(f"group {g} has no examples in the evaluation set")
        accs.append(float(np.mean(correct[rows])))
    return accs


def metric_group_fairness(net: NeuronNetwork, masks: MeanMask, absent, eval_set: GroupedDataset) -> float:
    """Mean of per-group accuracies; each group counts equally whatever its size."""
    return float(np.mean(group_accuracies(net, masks, absent, eval_set)))


def attack_success_rate(
    net: NeuronNetwork, masks: MeanMask, absent, x_adv: np.ndarray, targets: np.ndarray
) -> float:
    return float(np.mean(predict(net, masks, absent, x_adv) == targets))


def metric_adversarial(
    net: NeuronNetwork,
    masks: MeanMask,
    absent,
    eval_set: GroupedDataset,
    cfg: AttackConfig,
    seed: int,
    adversary: str = "adaptive",
) -> float:
    """Attack success rate minus clean accuracy, in ``[-1, 1]``.

    ``adversary="adaptive"`` attacks the masked network itself;
    ``"original"`` crafts the perturbations against the unmasked network and
    scores them on the masked one. Targets come from ``seed``.
    """
    _nonempty(eval_set)
    targets = draw_targets(eval_set.labels, net.n_classes, seed)
    attacked = absent if adversary == "adaptive" else None
    if adversary not in ("adaptive", "original"):
        raise ValueError(f"unknown adversary {adversary!r}")
    x_adv, success = pgd_attack(net, masks, attacked, eval_set.features, targets, cfg)
    if adversary == "original":
        success = predict(net, masks, absent, x_adv) == targets
    return float(np.mean(success)) - metric_accuracy(net, masks, absent, eval_set)
