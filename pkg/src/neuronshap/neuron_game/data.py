"""Synthetic grouped classification data with a group-dependent shortcut."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["GroupedDataset", "generate_dataset"]

FIT, HOLDOUT = "fit", "eval_holdout"


@dataclass
class GroupedDataset:
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    split: np.ndarray
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        m = len(self.features)
        if not (len(self.labels) == len(self.groups) == len(self.split) == m):
            raise ValueError("dataset columns have different lengths")
        bad = set(self.split.tolist()) - {FIT, HOLDOUT}
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.params.get("n_classes", self.labels.max() + 1))

    @property
    def n_groups(self) -> int:
        return int(self.params.get("n_groups", self.groups.max() + 1))

    def subset(self, split: str) -> "GroupedDataset":
        keep = self.split == split
        return GroupedDataset(
            self.features[keep], self.labels[keep], self.groups[keep], self.split[keep], dict(self.params)
        )

    def fit(self) -> "GroupedDataset":
        return self.subset(FIT)

    def holdout(self) -> "GroupedDataset":
        return self.subset(HOLDOUT)

    def take(self, rows: np.ndarray) -> "GroupedDataset":
        return GroupedDataset(
            self.features[rows], self.labels[rows], self.groups[rows], self.split[rows], dict(self.params)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"feature_{j}" for j in range(self.n_features)] + ["class", "group", "split"])
        for row, c, g, s in zip(self.features, self.labels, self.groups, self.split):
            writer.writerow([repr(float(v)) for v in row] + [int(c), int(g), s])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, params: dict[str, Any] | None = None) -> "GroupedDataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        d = len(header) - 3
        if header[:d] != [f"feature_{j}" for j in range(d)] or header[d:] != ["class", "group", "split"]:
            raise ValueError(f"unexpected dataset header {header}")
        rows = list(reader)
        feats = np.array([[float(v) for v in r[:d]] for r in rows], dtype=float).reshape(len(rows), d)
        return cls(
            feats,
            np.array([int(r[d]) for r in rows], dtype=np.int64),
            np.array([int(r[d + 1]) for r in rows], dtype=np.int64),
            np.array([r[d + 2] for r in rows], dtype=object),
            dict(params or {}),
        )


def _group_shares(n_groups: int, majority: float) -> np.ndarray:
    if n_groups == 1:
        return np.ones(1)
    rest = (1.0 - majority) / (n_groups - 1)
    return np.array([majority] + [rest] * (n_groups - 1))


def generate_dataset(
    seed: int,
    n_examples: int,
    n_classes: int,
    n_groups: int,
    skew: float,
    n_core: int = 6,
    n_nuisance: int = 4,
    core_separation: float = 2.4,
    nuisance_scale: float = 2.5,
    majority_share: float = 0.8,
    holdout_fraction: float = 0.5,
    n_fragile: int = 4,
    fragile_scale: float = 0.15,
    fragile_noise: float = 0.1,
) -> GroupedDataset:
    """Gaussian-cluster classification data with group-dependent nuisance features.

    Core features are class centroids plus unit Gaussian noise. Nuisance
    features carry ``skew * nuisance_scale`` times a class code: group 0 (the
    majority) sees the code of its true class, group ``g`` sees the code of
    class ``(c + g) mod C``. A classifier fit to the pooled data learns the
    shortcut and is less accurate on minority groups. With ``skew = 0`` the
    nuisance features are pure noise and all groups are exchangeable.

    A further ``n_fragile`` low-amplitude features carry a class code of norm
    ``fragile_scale``: predictive, but small L-infinity perturbations can
    rewrite them, so units reading them are the ones an attacker exploits.

    Every (class, group) cell gets at least one example.
    """
    if not 0.0 <= skew <= 1.0:
        raise ValueError(f"skew must be in [0, 1], got {skew}")
    if n_examples < n_classes * n_groups:
        raise ValueError(f"need n_examples >= n_classes * n_groups = {n_classes * n_groups}")
    rng = np.random.default_rng(seed)
    core_centroids = rng.normal(size=(n_classes, n_core))
    core_centroids *= core_separation / np.linalg.norm(core_centroids, axis=1, keepdims=True)
    nuis_codes = rng.normal(size=(n_classes, n_nuisance))
    nuis_codes /= np.linalg.norm(nuis_codes, axis=1, keepdims=True)

    cell_p = np.outer(np.full(n_classes, 1.0 / n_classes), _group_shares(n_groups, majority_share)).ravel()
    counts = np.ones(n_classes * n_groups, dtype=np.int64)
    counts += rng.multinomial(n_examples - counts.sum(), cell_p)
    cells = np.repeat(np.arange(n_classes * n_groups), counts)
    cells = cells[rng.permutation(len(cells))]
    labels = cells // n_groups
    groups = cells % n_groups

    core = core_centroids[labels] + rng.normal(size=(n_examples, n_core))
    shown = (labels + groups) % n_classes
    nuisance = skew * nuisance_scale * nuis_codes[shown] + 0.5 * rng.normal(size=(n_examples, n_nuisance))
    fragile_codes = rng.normal(size=(n_classes, n_fragile))
    fragile_codes *= fragile_scale / np.maximum(np.linalg.norm(fragile_codes, axis=1, keepdims=True), 1e-12)
    fragile = fragile_codes[labels] + fragile_noise * rng.normal(size=(n_examples, n_fragile))
    features = np.hstack([core, nuisance, fragile])

    split = np.where(rng.random(n_examples) < holdout_fraction, HOLDOUT, FIT).astype(object)
    params = {
        "seed": seed,
        "n_examples": n_examples,
        "n_classes": n_classes,
        "n_groups": n_groups,
        "skew": skew,
        "n_core": n_core,
        "n_nuisance": n_nuisance,
        "core_separation": core_separation,
        "nuisance_scale": nuisance_scale,
        "majority_share": majority_share,
        "holdout_fraction": holdout_fraction,
        "n_fragile": n_fragile,
        "fragile_scale": fragile_scale,
        "fragile_noise": fragile_noise,
    }
    return GroupedDataset(features, labels, groups, split, params)
