"""Model repair by masking the units a Shapley ranking blames."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .attack import AttackConfig, draw_targets, pgd_attack
from .game import DEFAULT_ATTACK, NeuronFixture, bake_masks
from .metrics import attack_success_rate, group_accuracies, metric_accuracy

__all__ = ["REPAIR_MODES", "select_players", "repair_report", "repair_fixture"]

REPAIR_MODES = ("fairness", "adversarial")


def select_players(
    values: Sequence[float], mode: str, count: int | None = None, threshold: float | None = None
) -> list[int]:
    """Players to mask: most negative values for fairness, largest for adversarial.

    Exactly one of ``count`` (top-c) and ``threshold`` (all strictly below,
    resp. above, ``threshold``) must be given. Ties go to the lower index.
    """
    if mode not in REPAIR_MODES:
        raise ValueError(f"unknown repair mode {mode!r}; choose from {REPAIR_MODES}")
    if (count is None) == (threshold is None):
        raise ValueError("give exactly one of count and threshold")
    v = np.asarray(values, dtype=float)
    key = v if mode == "fairness" else -v
    order = np.lexsort((np.arange(len(v)), key))
    if count is not None:
        if not 0 <= count <= len(v):
            raise ValueError(f"count must be in 0..{len(v)}, got {count}")
        return sorted(int(i) for i in order[:count])
    hit = v < threshold if mode == "fairness" else v > threshold
    return sorted(int(i) for i in np.flatnonzero(hit))


def _state(fixture: NeuronFixture, absent: np.ndarray, mode: str, attack_state) -> dict[str, Any]:
    ev = fixture.eval_set
    acc = metric_accuracy(fixture.net, fixture.masks, absent, ev)
    if mode == "fairness":
        groups = group_accuracies(fixture.net, fixture.masks, absent, ev)
        return {
            "fairness": float(np.mean(groups)),
            "group_accuracies": groups,
            "worst_group_accuracy": float(min(groups)),
            "overall_accuracy": acc,
        }
    x_adv, targets = attack_state
    return {
        "attack_success_rate": attack_success_rate(fixture.net, fixture.masks, absent, x_adv, targets),
        "clean_accuracy": acc,
    }


def repair_report(
    fixture: NeuronFixture,
    mode: str,
    players: Sequence[int],
    attack: AttackConfig | None = None,
    attack_seed: int = 0,
) -> dict[str, Any]:
    """Before/after metrics on the holdout split with ``players`` mean-masked.

    In adversarial mode the perturbations are crafted once against the
    unmasked network and replayed on the repaired one.
    """
    if mode not in REPAIR_MODES:
        raise ValueError(f"unknown repair mode {mode!r}; choose from {REPAIR_MODES}")
    n = fixture.n_players
    absent = np.zeros(n, dtype=bool)
    absent[list(players)] = True
    attack_state = None
    if mode == "adversarial":
        ev = fixture.eval_set
        cfg = attack or DEFAULT_ATTACK
        targets = draw_targets(ev.labels, fixture.net.n_classes, attack_seed)
        x_adv, _ = pgd_attack(fixture.net, fixture.masks, None, ev.features, targets, cfg)
        attack_state = (x_adv, targets)
    return {
        "mode": mode,
        "masked_players": sorted(int(p) for p in players),
        "before": _state(fixture, np.zeros(n, dtype=bool), mode, attack_state),
        "after": _state(fixture, absent, mode, attack_state),
    }


def repair_fixture(fixture: NeuronFixture, players: Sequence[int]) -> NeuronFixture:
    """A fixture whose network has ``players`` baked to their mean outputs."""
    net = bake_masks(fixture.net, fixture.masks, players)
    params = {**fixture.params, "masked_players": sorted(int(p) for p in players)}
    return NeuronFixture(fixture.dataset, net, fixture.masks, params)
