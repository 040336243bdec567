"""Analytic cooperative games with known Shapley values.

These are the ground truth for the exact routes and the estimators. Each
constructor returns a :class:`GameSpec` whose ``params`` carry the
construction arguments (and, where useful, the analytic Shapley vector).
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .game_core import Coalition, GameSpec, PlayerSet

__all__ = [
    "make_glove",
    "make_weighted_voting",
    "make_additive",
    "make_unanimity",
    "make_sparse_synthetic",
    "make_random_table",
    "make_sum",
    "make_game",
    "GAME_KINDS",
]


class GloveOracle:
    """Player 0 holds the only left glove; everyone else holds a right glove."""

    def __call__(self, s: Coalition) -> float:
        return 1.0 if (s.bits & 1) and (s.bits >> 1) else 0.0


class VotingOracle:
    def __init__(self, quota: float, weights: Sequence[float]):
        self.quota = float(quota)
        self.weights = np.asarray(weights, dtype=float)

    def __call__(self, s: Coalition) -> float:
        return 1.0 if self.weights[s.mask()].sum() >= self.quota else 0.0


class AdditiveOracle:
    def __init__(self, weights: Sequence[float]):
        self.weights = np.asarray(weights, dtype=float)

    def __call__(self, s: Coalition) -> float:
        return float(self.weights[s.mask()].sum())


class UnanimityOracle:
    def __init__(self, required: Sequence[int], n: int):
        self.required_bits = Coalition.from_members(n, required).bits

    def __call__(self, s: Coalition) -> float:
        return 1.0 if s.bits & self.required_bits == self.required_bits else 0.0


class SparseSyntheticOracle:
    """Additive weights plus a bonus for each designated pair present together."""

    def __init__(self, weights: np.ndarray, pairs: list[tuple[int, int]], bonus: float, n: int):
        self.weights = np.asarray(weights, dtype=float)
        self.pair_bits = [Coalition.from_members(n, p).bits for p in pairs]
        self.bonus = float(bonus)

    def __call__(self, s: Coalition) -> float:
        value = float(self.weights[s.mask()].sum())
        for pb in self.pair_bits:
            if s.bits & pb == pb:
                value += self.bonus
        return value


class TableOracle:
    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)

    def __call__(self, s: Coalition) -> float:
        return float(self.table[s.bits])


class SumOracle:
    def __init__(self, first, second):
        self.first = first
        self.second = second

    def __call__(self, s: Coalition) -> float:
        return self.first(s) + self.second(s)


def make_glove(n_right: int, **game_kw: Any) -> GameSpec:
    if n_right < 1:
        raise ValueError("glove game needs at least one right glove")
    n = n_right + 1
    labels = ["left"] + [f"right{j + 1}" for j in range(n_right)]
    return GameSpec(
        PlayerSet(n, tuple(labels)),
        GloveOracle(),
        name="glove",
        params={"n_right": n_right},
        **game_kw,
    )


def make_weighted_voting(quota: float, weights: Sequence[float], **game_kw: Any) -> GameSpec:
    weights = [float(w) for w in weights]
    if quota <= 0:
        raise ValueError(f"quota must be > 0, got {quota}")
    if any(w < 0 for w in weights):
        raise ValueError("voting weights must be non-negative")
    return GameSpec(
        PlayerSet(len(weights)),
        VotingOracle(quota, weights),
        name="weighted_voting",
        params={"quota": float(quota), "weights": weights},
        **game_kw,
    )


def make_additive(weights: Sequence[float], **game_kw: Any) -> GameSpec:
    weights = [float(w) for w in weights]
    if not np.all(np.isfinite(weights)):
        raise ValueError("additive weights must be finite")
    return GameSpec(
        PlayerSet(len(weights)),
        AdditiveOracle(weights),
        name="additive",
        params={"weights": weights},
        **game_kw,
    )


def make_unanimity(n: int, required: Sequence[int], **game_kw: Any) -> GameSpec:
    required = sorted({int(i) for i in required})
    if not required:
        raise ValueError("unanimity game needs a non-empty required set")
    return GameSpec(
        PlayerSet(n),
        UnanimityOracle(required, n),
        name="unanimity",
        params={"n": n, "required": required},
        **game_kw,
    )


def make_sparse_synthetic(
    n: int,
    k_hot: int,
    seed: int,
    gap: float = 0.05,
    noise_scale: float = 0.1,
    bonus: float | None = None,
    **game_kw: Any,
) -> GameSpec:
    """A sparse additive game with a few designated high-value players.

    The ``k_hot`` designated players (chosen by ``seed``) get weights in
    ``[gap, 2 gap)``; consecutive designated players are paired and a pair
    present together earns ``bonus`` (default ``gap / 2``), split evenly by
    Shapley but fully credited to each partner by leave-one-out. Remaining
    players get weights uniform in ``[0, noise_scale * gap]``.

    ``params["shapley"]`` holds the analytic Shapley vector and
    ``params["designated"]`` the ground-truth top set.
    """
    if not 1 <= k_hot <= n:
        raise ValueError(f"need 1 <= k_hot <= n, got k_hot={k_hot}, n={n}")
    if bonus is None:
        bonus = gap / 2
    rng = np.random.default_rng(seed)
    designated = np.sort(rng.permutation(n)[:k_hot])
    weights = rng.uniform(0.0, noise_scale * gap, size=n) if noise_scale > 0 else np.zeros(n)
    weights[designated] = gap * (1.0 + np.arange(k_hot) / k_hot)
    order = rng.permutation(designated)
    pairs = [(int(order[j]), int(order[j + 1])) for j in range(0, k_hot - 1, 2)]
    shapley = weights.copy()
    for a, b in pairs:
        shapley[a] += bonus / 2
        shapley[b] += bonus / 2
    return GameSpec(
        PlayerSet(n),
        SparseSyntheticOracle(weights, pairs, bonus, n),
        name="sparse_synthetic",
        params={
            "n": n,
            "k_hot": k_hot,
            "seed": seed,
            "gap": gap,
            "noise_scale": noise_scale,
            "bonus": bonus,
            "weights": weights.tolist(),
            "pairs": pairs,
            "designated": designated.tolist(),
            "shapley": shapley.tolist(),
        },
        **game_kw,
    )


def make_random_table(n: int, seed: int, low: float = 0.0, high: float = 1.0, **game_kw: Any) -> GameSpec:
    """A game whose characteristic function is an i.i.d. uniform table over all 2^n subsets."""
    if n > 20:
        raise ValueError("random table games are limited to n <= 20")
    rng = np.random.default_rng(seed)
    table = rng.uniform(low, high, size=1 << n)
    return GameSpec(
        PlayerSet(n),
        TableOracle(table),
        name="random_table",
        params={"n": n, "seed": seed, "low": low, "high": high},
        **game_kw,
    )


def make_sum(g1: GameSpec, g2: GameSpec, **game_kw: Any) -> GameSpec:
    """The game ``V1 + V2`` on a shared player set."""
    if g1.n != g2.n:
        raise ValueError("summed games must share a player set")
    return GameSpec(PlayerSet(g1.n), SumOracle(g1.oracle, g2.oracle), name="sum", **game_kw)


GAME_KINDS = {
    "glove": make_glove,
    "weighted_voting": make_weighted_voting,
    "additive": make_additive,
    "unanimity": make_unanimity,
    "sparse_synthetic": make_sparse_synthetic,
    "random_table": make_random_table,
}


def make_game(kind: str, **params: Any) -> GameSpec:
    """Build an analytic game by kind name, e.g. ``make_game("glove", n_right=2)``."""
    try:
        factory = GAME_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown game kind {kind!r}; choose from {sorted(GAME_KINDS)}") from None
    return factory(**params)
