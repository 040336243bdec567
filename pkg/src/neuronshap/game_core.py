"""Players, coalitions and the black-box value-function contract.

A game binds a player set to a value oracle ``V(S)``. Every estimator in the
package talks to the oracle through :class:`GameSpec`, which memoizes scores
in a bounded LRU cache and counts the calls that actually reached the oracle.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "PlayerSet",
    "Coalition",
    "GameSpec",
    "NonFiniteValueError",
    "evaluate",
    "marginal",
]

DEFAULT_CACHE_ENTRIES = 10_000


class NonFiniteValueError(ValueError):
    """The oracle returned NaN or an infinity."""


@dataclass(frozen=True)
class PlayerSet:
    n: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"player count must be >= 1, got {self.n}")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n:
                raise ValueError(f"expected {self.n} labels, got {len(labels)}")
            if len(set(labels)) != self.n:
                raise ValueError("player labels must be distinct")
            object.__setattr__(self, "labels", labels)

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i)

    def full(self) -> "Coalition":
        return Coalition.full(self.n)

    def empty(self) -> "Coalition":
        return Coalition(self.n, 0)


@dataclass(frozen=True, slots=True)
class Coalition:
    """A subset of ``{0..n-1}`` stored as an integer bit set.

    Equality and hashing depend only on the member set, so insertion order
    never matters.
    """

    n: int
    bits: int = 0

    def __post_init__(self) -> None:
        if self.bits < 0 or self.bits >> self.n:
            raise ValueError(f"coalition bits {self.bits:#x} exceed {self.n} players")

    @classmethod
    def from_members(cls, n: int, members: Iterable[int]) -> "Coalition":
        bits = 0
        for i in members:
            i = int(i)
            if not 0 <= i < n:
                raise ValueError(f"player {i} outside 0..{n - 1}")
            bits |= 1 << i
        return cls(n, bits)

    @classmethod
    def from_mask(cls, mask: Sequence[bool] | np.ndarray) -> "Coalition":
        mask = np.asarray(mask, dtype=bool)
        return cls.from_members(len(mask), np.flatnonzero(mask))

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls(n, (1 << n) - 1)

    def __contains__(self, i: object) -> bool:
        return isinstance(i, (int, np.integer)) and 0 <= i < self.n and bool(self.bits >> int(i) & 1)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __iter__(self):
        return iter(self.members())

    def members(self) -> list[int]:
        out = []
        b = self.bits
        while b:
            low = b & -b
            out.append(low.bit_length() - 1)
            b ^= low
        return out

    def mask(self) -> np.ndarray:
        """Boolean membership vector of length ``n``."""
        if self.n == 0:
            return np.zeros(0, dtype=bool)
        raw = np.frombuffer(self.bits.to_bytes((self.n + 7) // 8, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.n].astype(bool)

    def add(self, i: int) -> "Coalition":
        return Coalition(self.n, self.bits | (1 << i))

    def remove(self, i: int) -> "Coalition":
        return Coalition(self.n, self.bits & ~(1 << i))

    def complement(self) -> "Coalition":
        return Coalition(self.n, ((1 << self.n) - 1) ^ self.bits)

    def __repr__(self) -> str:
        return f"Coalition(n={self.n}, members={self.members()})"


Oracle = Callable[..., float]


@dataclass
class GameSpec:
    """A player set bound to a value oracle, with caching and call accounting.

    ``oracle(coalition)`` must be a pure function of the coalition. Oracles
    that score on per-iteration data batches expose ``batched = True`` and
    are called as ``oracle(coalition, batch)``; the batch key is part of the
    cache key.

    ``cache_entries`` is the LRU bound; ``0`` turns caching off and ``None``
    makes the cache unbounded.
    """

    players: PlayerSet
    oracle: Oracle
    declared_range: tuple[float, float] = (-1.0, 1.0)
    cache_entries: int | None = DEFAULT_CACHE_ENTRIES
    name: str = "game"
    params: dict[str, Any] = field(default_factory=dict)
    eval_counter: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        lo, hi = self.declared_range
        if not lo < hi:
            raise ValueError(f"declared_range must satisfy lo < hi, got {self.declared_range}")
        self._cache: OrderedDict[Hashable, float] = OrderedDict()
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.players.n

    @property
    def batched(self) -> bool:
        return bool(getattr(self.oracle, "batched", False))

    @property
    def range_width(self) -> float:
        """Largest magnitude a single marginal may take (``R``)."""
        lo, hi = self.declared_range
        return max(abs(lo), abs(hi))

    def evaluate(self, s: Coalition, batch: int | None = None) -> float:
        return self.evaluate_counted(s, batch)[0]

    def evaluate_counted(self, s: Coalition, batch: int | None = None) -> tuple[float, bool]:
        """Like :meth:`evaluate`, also reporting whether the oracle was called."""
        if s.n != self.n:
            raise ValueError(f"coalition over {s.n} players used with a {self.n}-player game")
        key = (s.bits, batch)
        if self.cache_entries != 0:
            with self._lock:
                hit = self._cache.get(key)
                if hit is not None:
                    self._cache.move_to_end(key)
                    return hit, False
        value = self.oracle(s, batch) if self.batched else self.oracle(s)
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteValueError(f"oracle returned {value} for {s!r} (batch={batch})")
        with self._lock:
            self.eval_counter += 1
            if self.cache_entries != 0:
                self._cache[key] = value
                if self.cache_entries is not None and len(self._cache) > self.cache_entries:
                    self._cache.popitem(last=False)
        return value, True

    def marginal(self, s: Coalition, i: int, batch: int | None = None) -> float:
        if i in s:
            raise ValueError(f"player {i} is already in {s!r}")
        return self.evaluate(s.add(i), batch) - self.evaluate(s, batch)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    def cache_snapshot(self) -> list[list]:
        """LRU-ordered cache contents, oldest first, in a JSON-friendly form."""
        with self._lock:
            return [[format(bits, "x"), batch, value] for (bits, batch), value in self._cache.items()]

    def restore_cache(self, entries: list[list], eval_counter: int) -> None:
        with self._lock:
            self._cache.clear()
            for bits, batch, value in entries:
                self._cache[(int(bits, 16), batch)] = float(value)
            self.eval_counter = int(eval_counter)


def evaluate(game: GameSpec, s: Coalition, batch: int | None = None) -> float:
    return game.evaluate(s, batch)


def marginal(game: GameSpec, s: Coalition, i: int, batch: int | None = None) -> float:
    """``V(S + i) - V(S)``; ``i`` must not already be in ``s``."""
    return game.marginal(s, i, batch)
