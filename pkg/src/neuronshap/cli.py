"""Command-line interface.

Exit codes: 0 success or converged, 2 iteration cap reached, 3 validation
error, 4 I/O error.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from .estimators.core import CAPPED, ConfigError, EstimatorConfig, ShapleyResult
from .runner import (
    CheckpointError,
    GameConstructionError,
    JobSpec,
    OutputPathError,
    RunnerError,
    ablate,
    build_game,
    load_result,
    random_ranking,
    run_job,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CAPPED, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4
CONFIG_VERSION = 1

SECTIONS: dict[str, dict[str, type] | None] = {
    "game": None,
    "estimator": {
        "seed": int,
        "delta": float,
        "epsilon": float,
        "k": int,
        "v_T": float,
        "v_T_fraction": float,
        "max_iterations": int,
        "iterations": int,
        "candidates": list,
        "bonferroni": bool,
        "range_r": float,
    },
    "runner": {"workers": int, "checkpoint_every": int, "checkpoint": str, "record_wall_time": bool},
    "output": {"json": str, "csv": str},
}

FIXTURE_KINDS: dict[str, dict[str, Any]] = {"default": {}, "balanced": {"skew": 0.0}}


class ValidationError(Exception):
    pass


class IOFailure(Exception):
    pass


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    raise SystemExit(code)


def handled(fn: Callable) -> Callable:
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (OutputPathError, CheckpointError, IOFailure, OSError) as exc:
            _fail(EXIT_IO, str(exc))
        except (ValidationError, ConfigError, GameConstructionError, RunnerError, ValueError, TypeError) as exc:
            _fail(EXIT_VALIDATION, str(exc))

    return wrapper


class ExitCodeGroup(click.Group):
    """Reports click usage errors with the validation exit code."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.exceptions.NoArgsIsHelpError as exc:
            click.echo(exc.ctx.get_help() if exc.ctx else str(exc))
            raise SystemExit(EXIT_OK)
        except click.ClickException as exc:
            exc.show()
            raise SystemExit(EXIT_VALIDATION)
        except click.exceptions.Abort:
            click.echo("aborted", err=True)
            raise SystemExit(1)


# -- config ----------------------------------------------------------------------


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path: str, overrides: tuple[str, ...] = ()) -> dict[str, dict[str, Any]]:
    """Read a job config and apply ``section.key=value`` overrides."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise IOFailure(f"config file {path} does not exist") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config file {path} does not parse: {exc}") from exc
    raw = dict(raw)
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValidationError(f"version: config version {version} is not supported (expected {CONFIG_VERSION})")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = _parse_value(value)
    cfg: dict[str, dict[str, Any]] = {}
    for section, body in raw.items():
        if section not in SECTIONS:
            raise ValidationError(f"{section}: unknown config section; expected one of {sorted(SECTIONS)}")
        if not isinstance(body, dict):
            raise ValidationError(f"{section}: must be a table")
        schema = SECTIONS[section]
        checked = {}
        for key, value in body.items():
            if schema is not None:
                if key not in schema:
                    raise ValidationError(f"{section}.{key}: unknown key")
                value = _coerce(f"{section}.{key}", value, schema[key])
            checked[key] = value
        cfg[section] = checked
    for section in SECTIONS:
        cfg.setdefault(section, {})
    if "kind" not in cfg["game"]:
        raise ValidationError("game.kind: required")
    return cfg


def _coerce(name: str, value: Any, kind: type) -> Any:
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind in (bool, str, list) and isinstance(value, kind):
        return value
    raise ValidationError(f"{name}: expected {kind.__name__}, got {value!r}")


def job_from_config(cfg: dict[str, dict[str, Any]], method: str, seed: int | None) -> JobSpec:
    est = dict(cfg["estimator"])
    if seed is not None:
        est["seed"] = seed
    if "seed" not in est:
        raise ValidationError("estimator.seed: a seed is required (config or --seed)")
    iterations = est.pop("iterations", None)
    v_T_fraction = est.pop("v_T_fraction", None)
    if method == "mc" and (est.get("v_T") is not None or v_T_fraction is not None):
        method = "truncated_mc"
    if "candidates" in est:
        est["candidates"] = tuple(est["candidates"])
    config = EstimatorConfig(**est)
    run = cfg["runner"]
    out = cfg["output"]
    return JobSpec(
        game=dict(cfg["game"]),
        method=method,
        config=config,
        iterations=iterations,
        workers=run.get("workers", 1),
        checkpoint_every=run.get("checkpoint_every", 50),
        checkpoint_path=run.get("checkpoint"),
        output_json=out.get("json", "result.json"),
        output_csv=out.get("csv", "result.csv"),
        v_T_fraction=v_T_fraction,
        record_wall_time=run.get("record_wall_time", False),
    )


def _summary(result: ShapleyResult, labels: list[str], limit: int) -> str:
    order = np.argsort(result.ranks, kind="stable")[:limit]
    lines = [f"{'rank':>4}  {'index':>5}  {'label':<10}  {'value':>12}  {'lb':>12}  {'ub':>12}"]
    for i in order:
        lines.append(
            f"{int(result.ranks[i]):>4}  {int(i):>5}  {labels[i]:<10}  {result.values[i]:>12.6f}  "
            f"{result.lower[i]:>12.6f}  {result.upper[i]:>12.6f}"
        )
    lines.append(
        f"method={result.method} status={result.status} iterations={result.iterations} "
        f"eval_count={result.eval_count} truncation_hits={result.truncation_hits}"
    )
    return "\n".join(lines)


def _run_estimator(config_path: str, overrides: tuple[str, ...], seed: int | None, method: str) -> None:
    cfg = load_config(config_path, overrides)
    spec = job_from_config(cfg, method, seed)
    game = build_game(spec.game)
    spec.config.validate_for(game.n)
    result = run_job(spec, game=game)
    labels = [game.players.label(i) for i in range(game.n)]
    limit = game.n if game.n <= 20 else max(spec.config.k, 20)
    click.echo(_summary(result, labels, limit))
    click.echo(f"wrote {spec.output_json} and {spec.output_csv}")
    if result.status == CAPPED:
        click.echo("warning: iteration cap reached before convergence", err=True)
        raise SystemExit(EXIT_CAPPED)


# -- commands ----------------------------------------------------------------------


@click.group(cls=ExitCodeGroup)
def cli() -> None:
    """Shapley values of cooperative-game players and of neurons in a toy network."""


_config_arg = click.argument("config", type=click.Path(dir_okay=False))
_seed_opt = click.option("--seed", type=int, default=None, help="Master seed; overrides estimator.seed.")
_set_opt = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Override a config key.")


@cli.command()
@_config_arg
@_seed_opt
@_set_opt
@handled
def exact(config: str, seed: int | None, overrides: tuple[str, ...]) -> None:
    """Exact Shapley values by subset enumeration."""
    _run_estimator(config, overrides, seed, "exact")


@cli.command()
@_config_arg
@_seed_opt
@_set_opt
@handled
def mc(config: str, seed: int | None, overrides: tuple[str, ...]) -> None:
    """Monte-Carlo permutation sampling (truncated when v_T or v_T_fraction is set)."""
    _run_estimator(config, overrides, seed, "mc")


@cli.command()
@_config_arg
@_seed_opt
@_set_opt
@handled
def tmab(config: str, seed: int | None, overrides: tuple[str, ...]) -> None:
    """Truncated multi-armed-bandit search for the top-k players."""
    _run_estimator(config, overrides, seed, "tmab")


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--kind", type=click.Choice(sorted(FIXTURE_KINDS)), default="default", show_default=True)
@click.option("--seed", type=int, required=True, help="Seed for data, initialization and training.")
@click.option("--force", is_flag=True, help="Write into a non-empty directory.")
@handled
def gen(out_dir: str, kind: str, seed: int, force: bool) -> None:
    """Generate a neuron-game bundle: dataset, trained network and masks."""
    from .neuron_game import build_fixture, masked_forward, save_bundle

    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise IOFailure(f"{out} is not empty; pass --force to overwrite")
    fixture = build_fixture(seed, **FIXTURE_KINDS[kind])
    x = fixture.dataset.features
    if not np.allclose(masked_forward(fixture.net, fixture.masks, None, x), fixture.net.forward(x), rtol=0, atol=1e-12):
        raise RunnerError("masked forward pass with nothing masked differs from the plain pass")
    acc = fixture.holdout_accuracy()
    fixture.params["kind"] = kind
    fixture.params["holdout_accuracy"] = acc
    try:
        save_bundle(fixture, out)
    except OSError as exc:
        raise IOFailure(f"cannot write bundle to {out}: {exc}") from exc
    click.echo(f"wrote {kind} bundle to {out}: {fixture.n_players} units, holdout accuracy {acc:.4f}")


@cli.command()
@click.argument("mode", type=click.Choice(["fairness", "adversarial"]))
@click.option("--bundle", type=click.Path(file_okay=False), required=True)
@click.option("--result", "result_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--count", type=int, default=None, help="Mask this many players.")
@click.option("--threshold", type=float, default=None, help="Mask every player past this value.")
@click.option("--seed", type=int, default=None, help="Attack target seed (adversarial mode).")
@click.option("--force", is_flag=True)
@handled
def repair(
    mode: str,
    bundle: str,
    result_path: str,
    out_dir: str,
    count: int | None,
    threshold: float | None,
    seed: int | None,
    force: bool,
) -> None:
    """Mask the units a Shapley result blames and write the repaired bundle."""
    from .neuron_game import load_bundle, repair_fixture, repair_report, save_bundle, select_players

    if mode == "adversarial" and seed is None:
        raise ValidationError("--seed is required in adversarial mode")
    doc = load_result(result_path)
    metric = doc.get("game", {}).get("metric")
    if metric is not None and metric != mode:
        raise ValidationError(f"result was computed for metric {metric!r}, not {mode!r}")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise IOFailure(f"{out} is not empty; pass --force to overwrite")
    try:
        fixture = load_bundle(bundle)
    except FileNotFoundError as exc:
        raise IOFailure(f"bundle {bundle} is incomplete: {exc}") from exc
    values = [p["value"] if p["value"] is not None else 0.0 for p in doc["players"]]
    if len(values) != fixture.n_players:
        raise ValidationError(f"result has {len(values)} players, bundle network has {fixture.n_players}")
    players = select_players(values, mode, count, threshold)
    report = repair_report(fixture, mode, players, attack_seed=seed or 0)
    if seed is not None:
        report["seed"] = seed
    save_bundle(repair_fixture(fixture, players), out)
    _write(out / "repair_report.json", json.dumps(report, sort_keys=True, indent=2) + "\n")
    click.echo(f"masked {len(players)} players: {players}")
    for phase in ("before", "after"):
        fields = ", ".join(
            f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={np.round(v, 4).tolist()}"
            for k, v in report[phase].items()
        )
        click.echo(f"{phase}: {fields}")


def _spearman_top(a: np.ndarray, b: np.ndarray, top: int) -> float:
    from scipy.stats import spearmanr

    union = sorted(set(np.argsort(-a, kind="stable")[:top]) | set(np.argsort(-b, kind="stable")[:top]))
    x, y = a[union], b[union]
    if np.array_equal(x, y):
        return 1.0
    rho = spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else float("nan")


def sample_histogram(doc: dict[str, Any], bins: int = 10) -> list[dict[str, Any]]:
    """Players binned by sample count, with the oracle calls charged to each bin.

    A final ``overhead`` row holds calls not charged to any player, so the
    ``evals`` column sums to the run's ``eval_count``.
    """
    samples = np.array([p["samples"] for p in doc["players"]], dtype=np.int64)
    evals = np.array([p.get("evals", 0) for p in doc["players"]], dtype=np.int64)
    hi = int(samples.max()) if samples.size else 0
    edges = np.unique(np.linspace(0, hi + 1, bins + 1).astype(np.int64))
    rows = []
    for lo, up in zip(edges[:-1], edges[1:]):
        sel = (samples >= lo) & (samples < up)
        rows.append({"bin": f"[{lo},{up})", "players": int(sel.sum()), "evals": int(evals[sel].sum())})
    rows.append({"bin": "overhead", "players": 0, "evals": int(doc["run"].get("overhead_evals", 0))})
    return rows


@cli.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--top", type=int, default=20, show_default=True, help="Correlate over the union of top-N sets.")
@handled
def report(results: tuple[str, ...], out_dir: str, top: int) -> None:
    """Compare result files: rank correlations, sample histograms, ranking files."""
    docs = [load_result(p) for p in results]
    n = {len(d["players"]) for d in docs}
    if len(n) != 1:
        raise ValidationError(f"result files cover different player counts {sorted(n)}")
    names: list[str] = []
    for p in results:
        stem = Path(p).stem
        name, k = stem, 2
        while name in names:
            name, k = f"{stem}_{k}", k + 1
        names.append(name)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {out}: {exc}") from exc
    values = [np.array([p["value"] if p["value"] is not None else 0.0 for p in d["players"]]) for d in docs]
    m = len(docs)
    corr = np.array([[_spearman_top(values[i], values[j], top) for j in range(m)] for i in range(m)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + names)
    for i in range(m):
        w.writerow([names[i]] + [repr(float(c)) for c in corr[i]])
    _write(out / "rank_correlation.csv", buf.getvalue())
    for name, doc, vals in zip(names, docs, values):
        hist = io.StringIO()
        hw = csv.DictWriter(hist, ["bin", "players", "evals"], lineterminator="\n")
        hw.writeheader()
        hw.writerows(sample_histogram(doc))
        _write(out / f"{name}.samples.csv", hist.getvalue())
        order = sorted(range(len(vals)), key=lambda i: doc["players"][i]["rank"])
        _write(out / f"{name}.ranking.txt", "\n".join(str(i) for i in order) + "\n")
    click.echo("Spearman rank correlation (union of top-%d):" % top)
    click.echo(buf.getvalue().rstrip())


@cli.command(name="ablate")
@click.option("--bundle", type=click.Path(file_okay=False), required=True)
@click.option("--ranking", "ranking_path", type=click.Path(dir_okay=False), default=None, help="Ranking file or result JSON.")
@click.option("--random", "use_random", is_flag=True, help="Use a seeded random ranking instead.")
@click.option("--seed", type=int, default=None, help="Seed for --random.")
@click.option("--metric", type=click.Choice(["accuracy", "class_recall", "fairness"]), default="accuracy")
@click.option("--target-class", type=int, default=None)
@click.option("--steps", default=None, help="Comma-separated removal counts (default 0..n).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@handled
def ablate_cmd(
    bundle: str,
    ranking_path: str | None,
    use_random: bool,
    seed: int | None,
    metric: str,
    target_class: int | None,
    steps: str | None,
    out_path: str,
) -> None:
    """Removal curve: metric with the top-c ranked units masked."""
    from .neuron_game import load_bundle, make_neuron_game

    if use_random == (ranking_path is not None):
        raise ValidationError("give exactly one of --ranking and --random")
    if use_random and seed is None:
        raise ValidationError("--random needs --seed")
    try:
        fixture = load_bundle(bundle)
    except FileNotFoundError as exc:
        raise IOFailure(f"bundle {bundle} is incomplete: {exc}") from exc
    game = make_neuron_game(fixture, metric=metric, target_class=target_class)
    n = game.n
    if use_random:
        ranking = random_ranking(n, seed)
    else:
        ranking = _read_ranking(ranking_path)
    counts = list(range(n + 1)) if steps is None else [int(s) for s in steps.split(",") if s.strip()]
    curve = ablate(game, ranking, counts)
    _write(Path(out_path), "removed,value\n" + "".join(f"{c},{v!r}\n" for c, v in curve))
    for c, v in curve:
        click.echo(f"{c:>4}  {v:.4f}")


def _read_ranking(path: str) -> list[int]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IOFailure(f"ranking file {path} does not exist") from exc
    if text.lstrip().startswith("{"):
        doc = load_result(path)
        return sorted(range(len(doc["players"])), key=lambda i: doc["players"][i]["rank"])
    try:
        return [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise ValidationError(f"ranking file {path} must list player indices: {exc}") from exc


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
