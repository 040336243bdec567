"""Cheap importance scores used as comparison baselines."""

from __future__ import annotations

import numpy as np

from ..game_core import Coalition, GameSpec

__all__ = ["baseline_scores", "BASELINES"]

BASELINES = ("weight_norm", "response_norm", "leave_one_out", "random")


def _neuron_oracle(game: GameSpec, method: str):
    oracle = game.oracle
    if not hasattr(oracle, "net") or not hasattr(oracle, "masks"):
        raise TypeError(f"{method} reads network internals and needs a neuron game, got {game.name!r}")
    return oracle


def baseline_scores(
    game: GameSpec, method: str, seed: int | None = None, reference: np.ndarray | None = None
) -> np.ndarray:
    """Per-player scores from one of :data:`BASELINES`.

    ``weight_norm`` is the L2 norm of a unit's incoming weights and bias;
    ``response_norm`` the L2 norm of its activations over ``reference``
    (default: the game's evaluation inputs); ``leave_one_out`` is
    ``V(N) - V(N - {i})``; ``random`` draws uniform scores from ``seed``.
    """
    n = game.n
    if method == "weight_norm":
        net = _neuron_oracle(game, method).net
        scores = []
        for layer, unit in net.player_map:
            w = np.append(net.weights[layer][:, unit], net.biases[layer][unit])
            scores.append(np.linalg.norm(w))
        return np.array(scores)
    if method == "response_norm":
        oracle = _neuron_oracle(game, method)
        x = oracle.x if reference is None else reference
        acts = oracle.net.hidden_activations(x)
        return np.concatenate([np.linalg.norm(a, axis=0) for a in acts])
    if method == "leave_one_out":
        full = Coalition.full(n)
        v_full = game.evaluate(full)
        return np.array([v_full - game.evaluate(full.remove(i)) for i in range(n)])
    if method == "random":
        if seed is None:
            raise ValueError("random baseline needs a seed")
        return np.random.default_rng(seed).uniform(size=n)
    raise ValueError(f"unknown baseline {method!r}; choose from {BASELINES}")
