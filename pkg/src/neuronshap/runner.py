"""Job execution: coordinator/worker sampling, checkpoints and result documents.

One coordinator owns the estimator state. It hands out rounds of orderings,
workers walk them on a thread pool, and the coordinator merges the walks in
issue order. Every assignment in a round carries the same active-set
snapshot (its epoch); a walk merged after the active set has moved on is
stale but its marginals are still valid samples.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .estimators.core import CONVERGED, METHODS, EstimatorConfig, ShapleyResult, ShapleyRun, rank_values, stream_seeds
from .exact import ExactCapError, shapley_by_subsets
from .game_core import Coalition, GameSpec
from .games import GAME_KINDS, make_game

__all__ = [
    "JobSpec",
    "RunnerError",
    "GameConstructionError",
    "OutputPathError",
    "CheckpointError",
    "build_game",
    "run_job",
    "result_document",
    "result_csv",
    "load_result",
    "ablate",
    "random_ranking",
    "RESULT_VERSION",
    "CHECKPOINT_VERSION",
]

RESULT_VERSION = 1
CHECKPOINT_VERSION = 1
JOB_METHODS = ("exact",) + METHODS


class RunnerError(RuntimeError):
    pass


class GameConstructionError(RunnerError):
    pass


class OutputPathError(RunnerError):
    pass


class CheckpointError(RunnerError):
    pass


@dataclass
class JobSpec:
    """Everything needed to run one estimation job.

    ``game`` is either ``{"kind": <analytic kind>, **params}`` or
    ``{"kind": "neuron", "bundle": <dir>, "metric": ..., ...}``; a neuron
    binding without ``bundle`` builds the default fixture from
    ``fixture_seed``. ``v_T_fraction`` sets ``v_T`` to that fraction of
    ``V(N)`` when the config leaves ``v_T`` unset.
    """

    game: dict[str, Any]
    method: str
    config: EstimatorConfig
    iterations: int | None = None
    workers: int = 1
    checkpoint_every: int = 50
    checkpoint_path: str | None = None
    output_json: str | None = None
    output_csv: str | None = None
    v_T_fraction: float | None = None
    record_wall_time: bool = False

    def __post_init__(self) -> None:
        if self.method not in JOB_METHODS:
            raise ValueError(f"method must be one of {JOB_METHODS}, got {self.method!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if "kind" not in self.game:
            raise ValueError("game binding needs a 'kind'")

    def fingerprint(self) -> dict[str, Any]:
        """The parts of the job a checkpoint must agree with to be resumable."""
        return {
            "game": self.game,
            "method": self.method,
            "config": self.config.to_dict(),
            "iterations": self.iterations,
            "v_T_fraction": self.v_T_fraction,
        }


# -- games --------------------------------------------------------------------


def build_game(binding: dict[str, Any]) -> GameSpec:
    """Construct the game named by a job's ``game`` binding."""
    params = dict(binding)
    kind = params.pop("kind")
    try:
        if kind == "neuron":
            return _build_neuron_game(params)
        if kind not in GAME_KINDS:
            raise GameConstructionError(f"unknown game kind {kind!r}; choose from {sorted(GAME_KINDS) + ['neuron']}")
        return make_game(kind, **params)
    except GameConstructionError:
        raise
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise GameConstructionError(f"cannot construct game {kind!r}: {exc}") from exc


def _build_neuron_game(params: dict[str, Any]) -> GameSpec:
    from .neuron_game import DEFAULT_ATTACK, AttackConfig, build_fixture, load_bundle, make_neuron_game

    bundle = params.pop("bundle", None)
    fixture_seed = params.pop("fixture_seed", 0)
    fixture = load_bundle(bundle) if bundle is not None else build_fixture(int(fixture_seed))
    attack = None
    attack_keys = {k: params.pop(k) for k in ("attack_epsilon", "attack_steps", "attack_step_size") if k in params}
    if attack_keys:
        attack = AttackConfig(
            epsilon=attack_keys.get("attack_epsilon", DEFAULT_ATTACK.epsilon),
            steps=attack_keys.get("attack_steps", DEFAULT_ATTACK.steps),
            step_size=attack_keys.get("attack_step_size", DEFAULT_ATTACK.step_size),
        )
    return make_neuron_game(fixture, attack=attack, **params)


# -- execution ------------------------------------------------------------------


def _check_writable(path: str | None) -> None:
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise OutputPathError(f"output directory {parent} does not exist")
    if not os.access(parent, os.W_OK):
        raise OutputPathError(f"output directory {parent} is not writable")
    if Path(path).is_dir():
        raise OutputPathError(f"output path {path} is a directory")


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputPathError(f"cannot write {path}: {exc}") from exc


def _checkpoint_text(spec: JobSpec, run: ShapleyRun) -> str:
    doc = {
        "format": "neuronshap.checkpoint",
        "version": CHECKPOINT_VERSION,
        "job": spec.fingerprint(),
        "state": run.state_dict(),
    }
    return json.dumps(doc, sort_keys=True, allow_nan=False, separators=(",", ":")) + "\n"


def _load_checkpoint(spec: JobSpec, game: GameSpec) -> ShapleyRun | None:
    path = spec.checkpoint_path
    if path is None or not Path(path).exists():
        return None
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} is unreadable: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "neuronshap.checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has version {doc.get('version')}, expected {CHECKPOINT_VERSION}")
    if doc.get("job") != json.loads(json.dumps(spec.fingerprint())):
        raise CheckpointError(f"checkpoint {path} belongs to a different job")
    try:
        return ShapleyRun.from_state_dict(game, doc["state"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from exc


def _exact_result(game: GameSpec, spec: JobSpec) -> ShapleyResult:
    try:
        phi = np.asarray(shapley_by_subsets(game), dtype=float)
    except ExactCapError as exc:
        raise GameConstructionError(str(exc)) from exc
    n = game.n
    k = min(spec.config.k, n)
    ranks = rank_values(phi)
    return ShapleyResult(
        method="exact",
        values=phi,
        variances=np.zeros(n),
        lower=phi.copy(),
        upper=phi.copy(),
        samples=np.zeros(n, dtype=np.int64),
        evals=np.zeros(n, dtype=np.int64),
        ranks=ranks,
        top_k=[int(i) for i in np.argsort(ranks)[:k]],
        iterations=0,
        eval_count=game.eval_counter,
        overhead_evals=game.eval_counter,
        truncation_hits=0,
        status=CONVERGED,
        config={"method": "exact", "iterations": None, **spec.config.to_dict()},
        v_full_mean=game.evaluate(Coalition.full(n)),
        v_empty_mean=game.evaluate(Coalition(n, 0)),
    )


def run_job(
    spec: JobSpec,
    game: GameSpec | None = None,
    on_iteration: Callable[[ShapleyRun], None] | None = None,
) -> ShapleyResult:
    """Run ``spec`` and write its checkpoint, JSON and CSV outputs.

    Resumes from ``spec.checkpoint_path`` when that file exists. With one
    worker the run is identical to calling the estimator directly; with
    more, rounds of ``workers`` orderings are walked concurrently and merged
    in issue order. ``on_iteration`` is called after every merge.
    """
    for path in (spec.checkpoint_path, spec.output_json, spec.output_csv):
        _check_writable(path)
    if game is None:
        game = build_game(spec.game)
    start = time.perf_counter()

    if spec.method == "exact":
        result = _exact_result(game, spec)
        result.wall_ms = (time.perf_counter() - start) * 1000.0
        _emit(spec, game, result)
        return result

    run = _load_checkpoint(spec, game)
    if run is None:
        config = spec.config
        setup = 0
        if spec.v_T_fraction is not None and config.v_T is None:
            v_full, setup = game.evaluate_counted(Coalition.full(game.n))
            config = EstimatorConfig.from_dict({**config.to_dict(), "v_T": spec.v_T_fraction * v_full})
        run = ShapleyRun(game, config, spec.method, spec.iterations)
        run.overhead_evals += int(setup)

    def checkpoint() -> None:
        if spec.checkpoint_path is not None:
            _write_text(spec.checkpoint_path, _checkpoint_text(spec, run))

    next_ckpt = (run.iteration // spec.checkpoint_every + 1) * spec.checkpoint_every
    session_start = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=spec.workers) if spec.workers > 1 else None
    try:
        while not run.done():
            size = spec.workers
            cap = spec.iterations if spec.iterations is not None else run.config.max_iterations
            size = max(1, min(size, cap - run.iteration))
            batch = [run.assignment() for _ in range(size)]
            walks = list(pool.map(run.walk, batch)) if pool is not None else [run.walk(a) for a in batch]
            for w in walks:
                run.merge(w)
                if on_iteration is not None:
                    on_iteration(run)
            if run.iteration >= next_ckpt:
                run.elapsed += time.perf_counter() - session_start
                session_start = time.perf_counter()
                checkpoint()
                next_ckpt = (run.iteration // spec.checkpoint_every + 1) * spec.checkpoint_every
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    run.elapsed += time.perf_counter() - session_start
    checkpoint()
    result = run.result()
    _emit(spec, game, result)
    return result


def _emit(spec: JobSpec, game: GameSpec, result: ShapleyResult) -> None:
    if spec.output_json is not None:
        doc = result_document(result, game, spec)
        _write_text(spec.output_json, json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")
    if spec.output_csv is not None:
        _write_text(spec.output_csv, result_csv(result, [game.players.label(i) for i in range(game.n)]))


# -- result documents -------------------------------------------------------------


def _finite(x: float) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def result_document(result: ShapleyResult, game: GameSpec, spec: JobSpec | None = None) -> dict[str, Any]:
    """JSON-ready result document.

    Non-finite bounds (players with fewer than two samples) are written as
    ``null``. ``wall_ms`` is ``null`` unless the job asks for wall time, so
    that equal-seed runs produce identical documents.
    """
    labels = [game.players.label(i) for i in range(game.n)]
    players = [
        {
            "index": i,
            "label": labels[i],
            "value": _finite(result.values[i]),
            "variance": _finite(result.variances[i]),
            "lb": _finite(result.lower[i]),
            "ub": _finite(result.upper[i]),
            "samples": int(result.samples[i]),
            "evals": int(result.evals[i]),
            "rank": int(result.ranks[i]),
        }
        for i in range(result.n)
    ]
    seed = result.config.get("seed")
    streams = {}
    if seed is not None:
        streams = {name: list(ss.spawn_key) for name, ss in stream_seeds(int(seed)).items()}
    record_wall = spec.record_wall_time if spec is not None else False
    return {
        "format": "neuronshap.result",
        "version": RESULT_VERSION,
        "method": result.method,
        "game": spec.game if spec is not None else {"kind": game.name, **_jsonable(game.params)},
        "players": players,
        "top_k": list(result.top_k),
        "active": list(result.active),
        "run": {
            "config": result.config,
            "seeds": {"seed": seed, "streams": streams},
            "workers": spec.workers if spec is not None else 1,
            "iterations": int(result.iterations),
            "eval_count": int(result.eval_count),
            "overhead_evals": int(result.overhead_evals),
            "truncation_hits": int(result.truncation_hits),
            "v_full_mean": _finite(result.v_full_mean),
            "v_empty_mean": _finite(result.v_empty_mean),
            "wall_ms": result.wall_ms if record_wall else None,
            "status": result.status,
        },
    }


def _jsonable(params: dict[str, Any]) -> dict[str, Any]:
    return json.loads(json.dumps(params, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


CSV_FIELDS = ("index", "label", "value", "variance", "lb", "ub", "samples", "rank")


def result_csv(result: ShapleyResult, labels: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for i in range(result.n):
        writer.writerow(
            [
                i,
                labels[i],
                repr(float(result.values[i])),
                repr(float(result.variances[i])),
                repr(float(result.lower[i])),
                repr(float(result.upper[i])),
                int(result.samples[i]),
                int(result.ranks[i]),
            ]
        )
    return buf.getvalue()


def load_result(path: str | Path) -> dict[str, Any]:
    """Read a result document, checking its format and schema version."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise OutputPathError(f"result file {path} does not exist") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise OutputPathError(f"cannot read result file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "neuronshap.result":
        raise ValueError(f"{path} is not a result document")
    if doc.get("version") != RESULT_VERSION:
        raise ValueError(f"{path} has result schema version {doc.get('version')}; this build reads version {RESULT_VERSION}")
    return doc


# -- removal curves ---------------------------------------------------------------


def random_ranking(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def ablate(
    game: GameSpec,
    ranking: Sequence[int],
    steps: Sequence[int],
    metric: str | None = None,
    target_class: int | None = None,
) -> list[tuple[int, float]]:
    """Removal curve: the metric with the top-``c`` ranked players masked, per ``c``.

    ``ranking`` lists every player, most important first. ``metric`` other
    than the game's own rebuilds the oracle on the same network and data.
    """
    oracle = game.oracle
    if not hasattr(oracle, "value") or not hasattr(oracle, "net"):
        raise TypeError(f"ablate needs a neuron game, got {game.name!r}")
    n = game.n
    ranking = np.asarray(ranking, dtype=np.int64)
    if sorted(ranking.tolist()) != list(range(n)):
        raise ValueError(f"ranking must list each of the {n} players exactly once")
    if metric is not None and (metric != oracle.metric or target_class != oracle.target_class):
        from .neuron_game import NeuronOracle

        oracle = NeuronOracle(
            oracle.net,
            oracle.masks,
            oracle.eval_set,
            metric=metric,
            target_class=target_class,
            attack=getattr(oracle, "attack", None),
            attack_seed=getattr(oracle, "attack_seed", 0),
        )
    curve = []
    for c in steps:
        c = int(c)
        if not 0 <= c <= n:
            raise ValueError(f"removal count {c} outside 0..{n}")
        absent = np.zeros(n, dtype=bool)
        absent[ranking[:c]] = True
        curve.append((c, float(oracle.value(absent))))
    return curve
