"""Permutation-sampling Shapley estimators.

One engine serves plain Monte-Carlo, truncated Monte-Carlo and the
truncated multi-armed-bandit (TMAB) top-k search. An outer iteration draws a
random ordering, walks the removal chain ``N = S_0 > S_1 > ... > S_n = {}``
and records ``V(S_{j-1}) - V(S_j)`` as a sample of the removed player's
value.

The engine is split into ``assignment -> walk -> merge`` so the runner can
execute walks on worker threads while a single coordinator owns the state.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..game_core import Coalition, GameSpec
from .bounds import bernstein_half_width

__all__ = [
    "EstimatorConfig",
    "ShapleyResult",
    "ShapleyRun",
    "Assignment",
    "WalkResult",
    "ConfigError",
    "mc_shapley",
    "truncated_mc_shapley",
    "tmab_shapley",
    "stream_seeds",
    "METHODS",
]

log = logging.getLogger(__name__)

METHODS = ("mc", "truncated_mc", "tmab")

CONVERGED = "converged"
CAPPED = "iteration-capped"


class ConfigError(ValueError):
    """Invalid estimator configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class EstimatorConfig:
    seed: int
    delta: float = 0.05
    epsilon: float = 1e-3
    k: int = 1
    v_T: float | None = None
    max_iterations: int = 100_000
    candidates: tuple[int, ...] | None = None
    bonferroni: bool = False
    range_r: float | None = None

    def __post_init__(self) -> None:
        if self.candidates is not None:
            self.candidates = tuple(sorted({int(i) for i in self.candidates}))
        if self.seed is None:
            raise ConfigError("seed", "a seed is required")
        if not 0 < self.delta < 1:
            raise ConfigError("delta", f"must be in (0, 1), got {self.delta}")
        if self.epsilon < 0:
            raise ConfigError("epsilon", f"must be >= 0, got {self.epsilon}")
        if self.k < 1:
            raise ConfigError("k", f"must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations", f"must be >= 1, got {self.max_iterations}")
        if self.range_r is not None and self.range_r <= 0:
            raise ConfigError("range_r", f"must be > 0, got {self.range_r}")

    def validate_for(self, n: int) -> None:
        if self.candidates is not None:
            if any(not 0 <= i < n for i in self.candidates):
                raise ConfigError("candidates", f"players must lie in 0..{n - 1}")
            pool = len(self.candidates)
        else:
            pool = n
        if self.k > pool:
            raise ConfigError("k", f"k={self.k} exceeds the {pool} eligible players")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["candidates"] = list(self.candidates) if self.candidates is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EstimatorConfig":
        return cls(**d)


@dataclass
class ShapleyResult:
    method: str
    values: np.ndarray
    variances: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    samples: np.ndarray
    evals: np.ndarray
    ranks: np.ndarray
    top_k: list[int]
    iterations: int
    eval_count: int
    overhead_evals: int
    truncation_hits: int
    status: str
    config: dict[str, Any]
    v_full_mean: float = float("nan")
    v_empty_mean: float = float("nan")
    wall_ms: float | None = None
    active: list[int] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass
class Assignment:
    iteration: int
    perm: np.ndarray
    batch: int | None
    active: np.ndarray
    epoch: int


@dataclass
class WalkResult:
    iteration: int
    epoch: int
    players: np.ndarray
    marginals: np.ndarray
    v_full: float
    v_empty: float | None
    truncated: bool
    evals: dict[int, int]
    overhead_evals: int


def stream_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    """Independent child seeds for the permutation, batch and target streams."""
    perm, batch, target = np.random.SeedSequence(seed).spawn(3)
    return {"permutation": perm, "batch": batch, "target": target}


def rank_values(values: np.ndarray) -> np.ndarray:
    """Rank 1 = largest value; ties go to the lower player index."""
    order = np.lexsort((np.arange(len(values)), -values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def _rng_state(rng: np.random.Generator) -> dict[str, Any]:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def _set_rng_state(rng: np.random.Generator, d: dict[str, Any]) -> None:
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {
            "counter": np.array(d["counter"], dtype=np.uint64),
            "key": np.array(d["key"], dtype=np.uint64),
        },
        "buffer": np.array(d["buffer"], dtype=np.uint64),
        "buffer_pos": d["buffer_pos"],
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }


class ShapleyRun:
    """State and stepping logic shared by all three estimators.

    ``method`` is ``"mc"``, ``"truncated_mc"`` or ``"tmab"``. For ``"mc"``
    either ``iterations`` fixes the number of orderings, or (``None``) the
    run stops once every player's Bernstein half-width is at most
    ``epsilon``. ``"truncated_mc"`` uses the same stopping rules plus the
    ``v_T`` cut-off. ``"tmab"`` only samples players in the active set.
    """

    def __init__(
        self,
        game: GameSpec,
        config: EstimatorConfig,
        method: str = "tmab",
        iterations: int | None = None,
        record_samples: bool = False,
    ):
        if method not in METHODS:
            raise ConfigError("method", f"unknown estimator {method!r}; choose from {METHODS}")
        if method == "truncated_mc" and config.v_T is None:
            raise ConfigError("v_T", "truncated_mc needs a truncation threshold")
        if iterations is not None and iterations < 0:
            raise ConfigError("iterations", "must be >= 0")
        config.validate_for(game.n)
        self.game = game
        self.config = config
        self.method = method
        self.fixed_iterations = iterations
        n = game.n
        self.n = n
        self.truncate_below = config.v_T if method in ("truncated_mc", "tmab") else None
        self.candidate_mask = np.zeros(n, dtype=bool)
        if config.candidates is None or method != "tmab":
            self.candidate_mask[:] = True
        else:
            self.candidate_mask[list(config.candidates)] = True
        self.delta = config.delta / n if config.bonferroni else config.delta
        self.range_r = float(config.range_r if config.range_r is not None else game.range_width)

        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)
        self.count = np.zeros(n, dtype=np.int64)
        self.lower = np.full(n, -np.inf)
        self.upper = np.full(n, np.inf)
        self.evals = np.zeros(n, dtype=np.int64)
        self.overhead_evals = 0
        self.active = self.candidate_mask.copy()
        self.iteration = 0
        self.issued = 0
        self.epoch = 0
        self.truncation_hits = 0
        self.sum_full = 0.0
        self.sum_empty = 0.0
        self.n_empty = 0
        self.elapsed = 0.0

        seeds = stream_seeds(config.seed)
        self.perm_rng = np.random.Generator(np.random.Philox(seeds["permutation"]))
        self.batch_rng = np.random.Generator(np.random.Philox(seeds["batch"]))
        self.record_samples = record_samples
        self.sample_log: list[tuple[int, int, float]] = []

    # -- sampling -----------------------------------------------------------

    def assignment(self) -> Assignment:
        """Draw the next ordering (and batch key) in coordinator order."""
        perm = self.perm_rng.permutation(self.n)
        batch = int(self.batch_rng.integers(0, 2**31 - 1)) if self.game.batched else None
        a = Assignment(self.issued, perm, batch, self.active.copy(), self.epoch)
        self.issued += 1
        return a

    def walk(self, a: Assignment) -> WalkResult:
        """Walk the removal chain of ``a.perm``.

        Only marginals of players active in ``a`` are measured. Between active
        players the chain value is not needed, so one oracle call at the end
        of each inactive run provides the next active player's starting
        value. Once a computed chain value falls below ``v_T`` the remaining
        marginals are zero and no further calls are made.
        """
        game = self.game
        n = self.n
        v_t = self.truncate_below
        active = a.active
        bits = (1 << n) - 1
        overhead = 0
        evals: dict[int, int] = {}
        v_prev, miss = game.evaluate_counted(Coalition(n, bits), a.batch)
        v_full = v_prev
        overhead += miss
        known = True
        truncated = v_t is not None and v_prev < v_t
        players: list[int] = []
        margs: list[float] = []
        for p in a.perm.tolist():
            if truncated:
                if active[p]:
                    players.append(p)
                    margs.append(0.0)
                bits &= ~(1 << p)
                continue
            if not active[p]:
                bits &= ~(1 << p)
                known = False
                continue
            calls = 0
            if not known:
                v_prev, miss = game.evaluate_counted(Coalition(n, bits), a.batch)
                calls += miss
                if v_t is not None and v_prev < v_t:
                    truncated = True
                    players.append(p)
                    margs.append(0.0)
                    bits &= ~(1 << p)
                    if calls:
                        evals[p] = calls
                    continue
            bits &= ~(1 << p)
            v_cur, miss = game.evaluate_counted(Coalition(n, bits), a.batch)
            calls += miss
            players.append(p)
            margs.append(v_prev - v_cur)
            v_prev = v_cur
            known = True
            if calls:
                evals[p] = calls
            if v_t is not None and v_cur < v_t:
                truncated = True
        if truncated or known:
            v_empty = v_prev
        else:
            v_empty = None
        return WalkResult(
            a.iteration,
            a.epoch,
            np.asarray(players, dtype=np.int64),
            np.asarray(margs, dtype=float),
            v_full,
            v_empty,
            truncated,
            evals,
            overhead,
        )

    def merge(self, w: WalkResult) -> None:
        """Fold one walk into the running statistics and close the iteration.

        Only players active *now* are updated, so a player that has left the
        active set keeps its statistics frozen even if a stale walk measured it.
        """
        for p, c in w.evals.items():
            self.evals[p] += c
        self.overhead_evals += w.overhead_evals
        self.truncation_hits += int(w.truncated)
        self.sum_full += w.v_full
        if w.v_empty is not None:
            self.sum_empty += w.v_empty
            self.n_empty += 1
        keep = self.active[w.players]
        players = w.players[keep]
        x = w.marginals[keep]
        if players.size:
            big = float(np.max(np.abs(x)))
            if big > self.range_r:
                msg = f"observed marginal {big:.6g} outside declared range R={self.range_r:.6g}; widening R"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                log.warning(msg)
                self.range_r = big
            self.count[players] += 1
            t = self.count[players]
            d = x - self.mean[players]
            self.mean[players] += d / t
            self.m2[players] += d * (x - self.mean[players])
            if self.record_samples:
                self.sample_log.extend((w.iteration, int(p), float(v)) for p, v in zip(players, x))
        self.iteration += 1
        self._refresh_bounds()
        if self.method == "tmab":
            self._update_active()

    def variance(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.count >= 2, self.m2 / np.maximum(self.count - 1, 1), 0.0)

    def half_width(self) -> np.ndarray:
        return bernstein_half_width(self.variance(), self.count, self.delta, self.range_r)

    def _refresh_bounds(self) -> None:
        hw = self.half_width()
        self.lower = self.mean - hw
        self.upper = self.mean + hw

    def pivot(self) -> float:
        """k-th largest current estimate over the eligible players."""
        idx = np.flatnonzero(self.candidate_mask)
        vals = self.mean[idx]
        order = np.lexsort((idx, -vals))
        return float(vals[order[self.config.k - 1]])

    def _update_active(self) -> None:
        eps = self.config.epsilon
        pivot = self.pivot()
        new = self.candidate_mask & (self.lower + eps < pivot) & (pivot < self.upper - eps)
        if not np.array_equal(new, self.active):
            self.epoch += 1
        self.active = new

    def done(self) -> bool:
        if self.fixed_iterations is not None:
            return self.iteration >= self.fixed_iterations
        if self.iteration >= self.config.max_iterations:
            return True
        if self.method == "tmab":
            return not self.active.any()
        return self.iteration > 0 and bool(np.all(self.half_width() <= self.config.epsilon))

    def converged(self) -> bool:
        if self.fixed_iterations is not None:
            return self.iteration >= self.fixed_iterations
        if self.method == "tmab":
            return not self.active.any()
        return self.iteration > 0 and bool(np.all(self.half_width() <= self.config.epsilon))

    def step(self) -> WalkResult:
        w = self.walk(self.assignment())
        self.merge(w)
        return w

    def run(self, on_iteration: Callable[["ShapleyRun"], None] | None = None) -> ShapleyResult:
        start = time.perf_counter()
        while not self.done():
            self.step()
            if on_iteration is not None:
                on_iteration(self)
        self.elapsed += time.perf_counter() - start
        return self.result()

    # -- output -------------------------------------------------------------

    def top_k(self) -> list[int]:
        idx = np.flatnonzero(self.candidate_mask)
        order = np.lexsort((idx, -self.mean[idx]))
        return [int(i) for i in idx[order[: self.config.k]]]

    def result(self) -> ShapleyResult:
        it = self.iteration
        return ShapleyResult(
            method=self.method,
            values=self.mean.copy(),
            variances=self.variance(),
            lower=self.lower.copy(),
            upper=self.upper.copy(),
            samples=self.count.copy(),
            evals=self.evals.copy(),
            ranks=rank_values(self.mean),
            top_k=self.top_k(),
            iterations=it,
            eval_count=self.game.eval_counter,
            overhead_evals=self.overhead_evals,
            truncation_hits=self.truncation_hits,
            status=CONVERGED if self.converged() else CAPPED,
            config={"method": self.method, "iterations": self.fixed_iterations, **self.config.to_dict()},
            v_full_mean=self.sum_full / it if it else float("nan"),
            v_empty_mean=self.sum_empty / self.n_empty if self.n_empty else float("nan"),
            wall_ms=self.elapsed * 1000.0,
            active=[int(i) for i in np.flatnonzero(self.active)],
        )

    # -- checkpointing ------------------------------------------------------

    def state_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "fixed_iterations": self.fixed_iterations,
            "config": self.config.to_dict(),
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
            "count": self.count.tolist(),
            "evals": self.evals.tolist(),
            "overhead_evals": self.overhead_evals,
            "active": [int(i) for i in np.flatnonzero(self.active)],
            "iteration": self.iteration,
            "issued": self.issued,
            "epoch": self.epoch,
            "truncation_hits": self.truncation_hits,
            "sum_full": self.sum_full,
            "sum_empty": self.sum_empty,
            "n_empty": self.n_empty,
            "range_r": self.range_r,
            "elapsed": self.elapsed,
            "rng": {"permutation": _rng_state(self.perm_rng), "batch": _rng_state(self.batch_rng)},
            "eval_counter": self.game.eval_counter,
            "cache": self.game.cache_snapshot(),
        }

    @classmethod
    def from_state_dict(cls, game: GameSpec, d: dict[str, Any]) -> "ShapleyRun":
        run = cls(game, EstimatorConfig.from_dict(d["config"]), d["method"], d["fixed_iterations"])
        if len(d["mean"]) != game.n:
            raise ValueError(f"checkpoint has {len(d['mean'])} players, game has {game.n}")
        run.mean = np.array(d["mean"], dtype=float)
        run.m2 = np.array(d["m2"], dtype=float)
        run.count = np.array(d["count"], dtype=np.int64)
        run.evals = np.array(d["evals"], dtype=np.int64)
        run.overhead_evals = int(d["overhead_evals"])
        run.active = np.zeros(game.n, dtype=bool)
        run.active[d["active"]] = True
        run.iteration = int(d["iteration"])
        run.issued = int(d["issued"])
        run.epoch = int(d["epoch"])
        run.truncation_hits = int(d["truncation_hits"])
        run.sum_full = float(d["sum_full"])
        run.sum_empty = float(d["sum_empty"])
        run.n_empty = int(d["n_empty"])
        run.range_r = float(d["range_r"])
        run.elapsed = float(d["elapsed"])
        _set_rng_state(run.perm_rng, d["rng"]["permutation"])
        _set_rng_state(run.batch_rng, d["rng"]["batch"])
        game.restore_cache(d["cache"], d["eval_counter"])
        run._refresh_bounds()
        return run


def mc_shapley(
    game: GameSpec, config: EstimatorConfig, iterations: int | None = None, record_samples: bool = False
) -> ShapleyResult:
    """Plain Monte-Carlo permutation sampling.

    ``iterations`` fixes the number of orderings; ``None`` runs until every
    player's Bernstein half-width is at most ``config.epsilon`` (or the
    iteration cap).
    """
    return ShapleyRun(game, config, "mc", iterations, record_samples).run()


def truncated_mc_shapley(
    game: GameSpec, config: EstimatorConfig, iterations: int | None = None, record_samples: bool = False
) -> ShapleyResult:
    """Monte-Carlo sampling that stops each walk once ``V`` drops below ``config.v_T``.

    A threshold of ``-inf`` never fires and reproduces :func:`mc_shapley`.
    """
    return ShapleyRun(game, config, "truncated_mc", iterations, record_samples).run()


def tmab_shapley(game: GameSpec, config: EstimatorConfig, record_samples: bool = False) -> ShapleyResult:
    """Truncated multi-armed-bandit search for the ``config.k`` most valuable players.

    Each iteration samples only players whose confidence interval, shrunk by
    ``epsilon`` on both sides, still contains the current k-th largest
    estimate. Stops when no such player is left.
    """
    return ShapleyRun(game, config, "tmab", None, record_samples).run()
