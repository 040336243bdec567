"""The neuron game: hidden units as players, a masked-network metric as ``V``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..game_core import Coalition, GameSpec, PlayerSet
from .attack import AttackConfig, draw_targets, pgd_attack
from .data import GroupedDataset, generate_dataset
from .masking import MeanMask, compute_masks, masked_hidden
from .metrics import metric_accuracy
from .network import NeuronNetwork, train

__all__ = [
    "METRICS",
    "NeuronOracle",
    "NeuronFixture",
    "DEFAULT_FIXTURE",
    "DEFAULT_ATTACK",
    "build_fixture",
    "make_neuron_game",
    "bake_masks",
    "save_bundle",
    "load_bundle",
]

METRICS = ("accuracy", "class_recall", "fairness", "adversarial")

DEFAULT_FIXTURE: dict[str, Any] = {
    "n_examples": 2000,
    "n_classes": 4,
    "n_groups": 2,
    "skew": 0.8,
    "hidden": (16, 16),
    "epochs": 60,
    "learning_rate": 0.05,
    "batch_size": 32,
}

# Scaled to the low-amplitude features of the default data: succeeds on
# at least 80% of holdout examples against the unmasked default network.
DEFAULT_ATTACK = AttackConfig(epsilon=0.5, steps=30, step_size=0.025)


class NeuronOracle:
    """``V(S)`` for the neuron game; players outside ``S`` are mean-masked.

    With ``batch_size`` set the oracle is batched: the batch key seeds a
    draw of ``batch_size`` evaluation rows, so one key always means the
    same rows.
    """

    def __init__(
        self,
        net: NeuronNetwork,
        masks: MeanMask,
        eval_set: GroupedDataset,
        metric: str = "accuracy",
        target_class: int | None = None,
        attack: AttackConfig | None = None,
        attack_seed: int = 0,
        batch_size: int | None = None,
    ):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
        if masks.n_players != net.n_players:
            raise ValueError("mask/network player count mismatch")
        if len(eval_set) == 0:
            raise ValueError("evaluation set is empty")
        self.net = net
        self.masks = masks
        self.metric = metric
        self.target_class = target_class
        self.batch_size = batch_size
        self.batched = batch_size is not None
        self.eval_set = eval_set
        self.attack_seed = attack_seed
        self.x = eval_set.features
        self.y = eval_set.labels
        self.groups = eval_set.groups
        self.n_groups = eval_set.n_groups
        self._pre = self.x @ net.weights[0] + net.biases[0]
        if metric == "class_recall":
            if target_class is None:
                raise ValueError("class_recall needs target_class")
            if not (self.y == target_class).any():
                raise ValueError(f"evaluation set has no examples of class {target_class}")
        if metric == "fairness":
            for g in range(self.n_groups):
                if not (self.groups == g).any():
                    raise ValueError(f"group {g} has no examples in the evaluation set")
        if metric == "adversarial":
            self.attack = attack or DEFAULT_ATTACK
            self.targets = draw_targets(self.y, net.n_classes, attack_seed)
            self.x_adv, _ = pgd_attack(net, masks, None, self.x, self.targets, self.attack)
            self._pre_adv = self.x_adv @ net.weights[0] + net.biases[0]
        self._rows: dict[int, np.ndarray] = {}

    def rows(self, batch: int | None) -> np.ndarray | slice:
        if batch is None or self.batch_size is None:
            return slice(None)
        rows = self._rows.get(batch)
        if rows is None:
            m = len(self.y)
            rng = np.random.default_rng([batch, 0x5EED])
            rows = np.sort(rng.choice(m, size=min(self.batch_size, m), replace=False))
            if len(self._rows) > 64:
                self._rows.clear()
            self._rows[batch] = rows
        return rows

    def _predict(self, absent: np.ndarray, pre: np.ndarray) -> np.ndarray:
        h = masked_hidden(self.net, self.masks, absent, None, first_pre=pre)[-1]
        return (h @ self.net.weights[-1] + self.net.biases[-1]).argmax(axis=1)

    def value(self, absent: np.ndarray, batch: int | None = None) -> float:
        rows = self.rows(batch)
        y = self.y[rows]
        correct = self._predict(absent, self._pre[rows]) == y
        if self.metric == "accuracy":
            return float(np.mean(correct))
        if self.metric == "class_recall":
            sel = y == self.target_class
            return float(np.mean(correct[sel])) if sel.any() else 0.0
        if self.metric == "fairness":
            g = self.groups[rows]
            return float(np.mean([np.mean(correct[g == k]) for k in range(self.n_groups) if (g == k).any()]))
        fooled = self._predict(absent, self._pre_adv[rows]) == self.targets[rows]
        return float(np.mean(fooled)) - float(np.mean(correct))

    def __call__(self, s: Coalition, batch: int | None = None) -> float:
        return self.value(~s.mask(), batch)


@dataclass
class NeuronFixture:
    dataset: GroupedDataset
    net: NeuronNetwork
    masks: MeanMask
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def eval_set(self) -> GroupedDataset:
        return self.dataset.holdout()

    @property
    def n_players(self) -> int:
        return self.net.n_players

    def holdout_accuracy(self) -> float:
        return metric_accuracy(self.net, self.masks, None, self.eval_set)


def build_fixture(seed: int = 0, **overrides: Any) -> NeuronFixture:
    """Generate data, train the network and compute masks, all from ``seed``.

    Masks are means over the fit split; metrics are scored on the holdout.
    """
    unknown = set(overrides) - set(DEFAULT_FIXTURE)
    if unknown:
        raise ValueError(f"unknown fixture parameters {sorted(unknown)}")
    p = {**DEFAULT_FIXTURE, **overrides}
    p["hidden"] = tuple(int(h) for h in p["hidden"])
    data = generate_dataset(seed, p["n_examples"], p["n_classes"], p["n_groups"], p["skew"])
    fit = data.fit()
    sizes = (data.n_features, *p["hidden"], p["n_classes"])
    net = train(
        fit.features,
        fit.labels,
        sizes,
        seed=seed,
        epochs=p["epochs"],
        learning_rate=p["learning_rate"],
        batch_size=p["batch_size"],
    )
    masks = compute_masks(net, fit.features)
    p["hidden"] = list(p["hidden"])
    return NeuronFixture(data, net, masks, {"seed": seed, **p})


def make_neuron_game(
    fixture: NeuronFixture,
    metric: str = "accuracy",
    target_class: int | None = None,
    attack: AttackConfig | None = None,
    attack_seed: int = 0,
    batch_size: int | None = None,
    eval_set: GroupedDataset | None = None,
    **game_kw: Any,
) -> GameSpec:
    """Wrap a fixture as a :class:`GameSpec` over its hidden units."""
    oracle = NeuronOracle(
        fixture.net,
        fixture.masks,
        eval_set if eval_set is not None else fixture.eval_set,
        metric=metric,
        target_class=target_class,
        attack=attack,
        attack_seed=attack_seed,
        batch_size=batch_size,
    )
    return GameSpec(
        PlayerSet(fixture.n_players, tuple(fixture.net.player_labels())),
        oracle,
        name="neuron",
        params={"metric": metric, "target_class": target_class, "batch_size": batch_size},
        **game_kw,
    )


def bake_masks(net: NeuronNetwork, masks: MeanMask, players: Sequence[int]) -> NeuronNetwork:
    """A copy of ``net`` in which each listed unit outputs its mean constant.

    The unit's incoming weights are zeroed and its bias set to the mean, so
    the plain forward pass equals the masked forward pass exactly.
    """
    out = net.copy()
    pmap = net.player_map
    for p in sorted(set(int(i) for i in players)):
        layer, unit = pmap[p]
        out.weights[layer][:, unit] = 0.0
        out.biases[layer][unit] = masks.means[p]
    out.provenance = {**net.provenance, "masked_players": sorted(set(int(i) for i in players))}
    return out


def save_bundle(fixture: NeuronFixture, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dataset.csv").write_text(fixture.dataset.to_csv())
    (out / "network.json").write_text(fixture.net.dumps() + "\n")
    (out / "masks.json").write_text(json.dumps({"version": 1, "means": fixture.masks.to_list()}) + "\n")
    (out / "fixture.json").write_text(json.dumps(fixture.params, sort_keys=True, indent=2) + "\n")


def load_bundle(path: str | Path) -> NeuronFixture:
    path = Path(path)
    params = json.loads((path / "fixture.json").read_text())
    data = GroupedDataset.from_csv(
        (path / "dataset.csv").read_text(),
        {"n_classes": params["n_classes"], "n_groups": params["n_groups"]},
    )
    net = NeuronNetwork.loads((path / "network.json").read_text())
    means = np.array(json.loads((path / "masks.json").read_text())["means"], dtype=float)
    if len(means) != net.n_players:
        raise ValueError(f"masks.json has {len(means)} means, network has {net.n_players} units")
    means.setflags(write=False)
    return NeuronFixture(data, net, MeanMask(means), params)
