"""Brute-force Shapley values for small games.

Two independent routes: a weighted sum over all subsets, and an average over
all ``n!`` orderings. Both are deliberately naive and serve as ground truth.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from .game_core import Coalition, GameSpec

__all__ = ["shapley_by_subsets", "shapley_by_permutations", "all_values", "ExactCapError"]

SUBSET_CAP = 20
PERMUTATION_CAP = 8


class ExactCapError(ValueError):
    """Refusal to enumerate a game that is too large."""


def all_values(game: GameSpec) -> np.ndarray:
    """``V(S)`` for every subset, indexed by the coalition bit pattern.

    Each subset is evaluated exactly once through ``game.evaluate``.
    """
    n = game.n
    return np.array([game.evaluate(Coalition(n, b)) for b in range(1 << n)], dtype=float)


def _popcounts(n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    counts = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        counts += (idx >> i) & 1
    return counts


def shapley_by_subsets(game: GameSpec, cap: int = SUBSET_CAP) -> np.ndarray:
    """Exact Shapley vector from the subset formula.

    Marginals are grouped by coalition size and each group is summed with
    ``math.fsum``; the combinatorial weights ``s! (n-s-1)! / n!`` are applied
    in exact rational arithmetic and converted to float once per player.
    """
    n = game.n
    if n > cap:
        raise ExactCapError(f"subset enumeration needs 2^{n} evaluations; cap is n <= {cap}")
    values = all_values(game)
    sizes = _popcounts(n)
    idx = np.arange(1 << n, dtype=np.int64)
    n_fact = math.factorial(n)
    phi = np.empty(n)
    for i in range(n):
        without = idx[(idx >> i) & 1 == 0]
        deltas = values[without | (1 << i)] - values[without]
        s_sizes = sizes[without]
        total = Fraction(0)
        for s in range(n):
            bucket = deltas[s_sizes == s]
            if bucket.size:
                weight = math.factorial(s) * math.factorial(n - s - 1)
                total += Fraction(math.fsum(bucket)) * weight
        phi[i] = float(total / n_fact)
    return phi


def shapley_by_permutations(game: GameSpec, cap: int = PERMUTATION_CAP) -> np.ndarray:
    """Exact Shapley vector as the mean marginal over all ``n!`` orderings."""
    n = game.n
    if n > cap:
        raise ExactCapError(f"permutation enumeration needs {n}! orderings; cap is n <= {cap}")
    values = all_values(game)
    sums: list[list[float]] = [[] for _ in range(n)]
    for perm in itertools.permutations(range(n)):
        bits = 0
        prev = values[0]
        for i in perm:
            bits |= 1 << i
            cur = values[bits]
            sums[i].append(cur - prev)
            prev = cur
    n_fact = math.factorial(n)
    return np.array([float(Fraction(math.fsum(s)) / n_fact) for s in sums])
