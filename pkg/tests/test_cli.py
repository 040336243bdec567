import json

import numpy as np
import pytest
from click.testing import CliRunner

from neuronshap.cli import cli, load_config
from neuronshap.neuron_game import load_bundle, masked_forward

GLOVE = """
version = 1
[game]
kind = "glove"
n_right = 2
[estimator]
seed = 1
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "glove.toml").write_text(GLOVE)
    return tmp_path


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "b0"
    result = CliRunner().invoke(cli, ["gen", str(out), "--seed", "0"])
    assert result.exit_code == 0, result.output
    return out


class TestEstimatorCommands:
    def test_exact_glove(self, runner, workdir):
        result = runner.invoke(cli, ["exact", "glove.toml"])
        assert result.exit_code == 0, result.output
        assert "0.666667" in result.output and result.output.count("0.166667") >= 2
        doc = json.loads((workdir / "result.json").read_text())
        assert [p["value"] for p in doc["players"]] == pytest.approx([2 / 3, 1 / 6, 1 / 6], abs=1e-12)

    def test_tmab_k_above_n(self, runner, workdir):
        result = runner.invoke(cli, ["tmab", "glove.toml", "--set", "estimator.k=5"])
        assert result.exit_code == 3
        assert "k" in result.output and "exceeds" in result.output

    def test_mc_repeat_identical(self, runner, workdir):
        args = ["mc", "glove.toml", "--seed", "9", "--set", "estimator.iterations=500"]
        assert runner.invoke(cli, args + ["--set", 'output.json="a.json"', "--set", 'output.csv="a.csv"']).exit_code == 0
        assert runner.invoke(cli, args + ["--set", 'output.json="b.json"', "--set", 'output.csv="b.csv"']).exit_code == 0
        assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_capped_exit(self, runner, workdir):
        result = runner.invoke(cli, ["mc", "glove.toml", "--set", "estimator.max_iterations=5", "--set", "estimator.epsilon=1e-6"])
        assert result.exit_code == 2
        doc = json.loads((workdir / "result.json").read_text())
        assert doc["run"]["status"] == "iteration-capped"

    def test_truncated_via_fraction(self, runner, workdir):
        result = runner.invoke(cli, ["mc", "glove.toml", "--set", "estimator.iterations=50", "--set", "estimator.v_T_fraction=0.5"])
        assert result.exit_code == 0, result.output
        assert "method=truncated_mc" in result.output

    def test_seed_required(self, runner, workdir):
        (workdir / "noseed.toml").write_text('[game]\nkind = "glove"\nn_right = 2\n')
        result = runner.invoke(cli, ["mc", "noseed.toml"])
        assert result.exit_code == 3 and "seed" in result.output

    @pytest.mark.parametrize(
        "override,key",
        [("estimator.delta=\"x\"", "estimator.delta"), ("estimator.colour=1", "estimator.colour"), ("extra.k=1", "extra")],
    )
    def test_bad_key_named(self, runner, workdir, override, key):
        result = runner.invoke(cli, ["mc", "glove.toml", "--set", override])
        assert result.exit_code == 3 and key in result.output

    def test_bad_game_param(self, runner, workdir):
        result = runner.invoke(cli, ["exact", "glove.toml", "--set", "game.n_left=2"])
        assert result.exit_code == 3 and "glove" in result.output

    def test_missing_config(self, runner, workdir):
        assert runner.invoke(cli, ["mc", "nope.toml"]).exit_code == 4

    def test_malformed_toml(self, runner, workdir):
        (workdir / "bad.toml").write_text("[game\n")
        assert runner.invoke(cli, ["mc", "bad.toml"]).exit_code == 3

    def test_unwritable_output(self, runner, workdir):
        result = runner.invoke(cli, ["exact", "glove.toml", "--set", 'output.json="no/such/dir/r.json"'])
        assert result.exit_code == 4

    def test_usage_error_is_validation(self, runner):
        assert runner.invoke(cli, ["mc"]).exit_code == 3

    def test_config_defaults(self, workdir):
        cfg = load_config(str(workdir / "glove.toml"))
        assert cfg["runner"] == {} and cfg["estimator"] == {"seed": 1}


class TestGen:
    def test_holdout_and_identity(self, bundle):
        fx = load_bundle(bundle)
        assert fx.params["holdout_accuracy"] >= 0.90
        x = fx.dataset.features
        assert np.array_equal(masked_forward(fx.net, fx.masks, None, x), fx.net.forward(x))

    def test_same_seed_same_bytes(self, runner, tmp_path, bundle):
        out = tmp_path / "again"
        assert runner.invoke(cli, ["gen", str(out), "--seed", "0"]).exit_code == 0
        for name in ("dataset.csv", "network.json", "masks.json", "fixture.json"):
            assert (out / name).read_bytes() == (bundle / name).read_bytes()

    def test_refuses_non_empty(self, runner, bundle):
        result = runner.invoke(cli, ["gen", str(bundle), "--seed", "0"])
        assert result.exit_code == 4 and "--force" in result.output

    def test_force(self, runner, tmp_path):
        out = tmp_path / "f"
        out.mkdir()
        (out / "junk").write_text("x")
        assert runner.invoke(cli, ["gen", str(out), "--seed", "1", "--force"]).exit_code == 0

    def test_seed_required(self, runner, tmp_path):
        assert runner.invoke(cli, ["gen", str(tmp_path / "x")]).exit_code == 3


def _neuron_result(runner, tmp_path, bundle, metric, name, extra=()):
    cfg = tmp_path / f"{name}.toml"
    cfg.write_text(
        f'[game]\nkind = "neuron"\nbundle = "{bundle}"\nmetric = "{metric}"\n'
        f'[estimator]\nseed = 0\niterations = 60\n'
        f'[output]\njson = "{tmp_path / name}.json"\ncsv = "{tmp_path / name}.csv"\n'
    )
    result = runner.invoke(cli, ["mc", str(cfg), *extra])
    assert result.exit_code == 0, result.output
    return tmp_path / f"{name}.json"


class TestRepair:
    def test_zero_count_is_identity(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "fairness", "fair")
        out = tmp_path / "rep"
        result = runner.invoke(cli, ["repair", "fairness", "--bundle", str(bundle), "--result", str(res), "--out", str(out), "--count", "0"])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "repair_report.json").read_text())
        assert report["before"] == report["after"]

    def test_fairness_writes_baked_bundle(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "fairness", "fair")
        out = tmp_path / "rep"
        args = ["repair", "fairness", "--bundle", str(bundle), "--result", str(res), "--out", str(out), "--count", "3"]
        assert runner.invoke(cli, args).exit_code == 0
        report = json.loads((out / "repair_report.json").read_text())
        fixed = load_bundle(out)
        assert fixed.net.provenance["masked_players"] == report["masked_players"]
        assert len(report["masked_players"]) == 3
        assert fixed.holdout_accuracy() == pytest.approx(report["after"]["overall_accuracy"], abs=1e-12)
        assert set(report["after"]) == {"fairness", "group_accuracies", "worst_group_accuracy", "overall_accuracy"}

    def test_threshold_mode(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "fairness", "fair")
        values = [p["value"] for p in json.loads(res.read_text())["players"]]
        out = tmp_path / "rep"
        args = ["repair", "fairness", "--bundle", str(bundle), "--result", str(res), "--out", str(out), "--threshold", "0"]
        assert runner.invoke(cli, args).exit_code == 0
        report = json.loads((out / "repair_report.json").read_text())
        assert report["masked_players"] == [i for i, v in enumerate(values) if v < 0]

    def test_adversarial_report(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "adversarial", "adv")
        out = tmp_path / "rep"
        args = ["repair", "adversarial", "--bundle", str(bundle), "--result", str(res), "--out", str(out), "--count", "2", "--seed", "0"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        report = json.loads((out / "repair_report.json").read_text())
        assert set(report["before"]) == {"attack_success_rate", "clean_accuracy"}
        assert report["before"]["attack_success_rate"] >= 0.8

    def test_missing_result(self, runner, tmp_path, bundle):
        args = ["repair", "fairness", "--bundle", str(bundle), "--result", str(tmp_path / "none.json"), "--out", str(tmp_path / "o"), "--count", "1"]
        result = runner.invoke(cli, args)
        assert result.exit_code == 4 and "does not exist" in result.output

    def test_metric_mismatch(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "accuracy", "acc")
        args = ["repair", "fairness", "--bundle", str(bundle), "--result", str(res), "--out", str(tmp_path / "o"), "--count", "1"]
        assert runner.invoke(cli, args).exit_code == 3


class TestReport:
    def test_self_correlation_and_histogram(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "accuracy", "acc")
        out = tmp_path / "rep"
        result = runner.invoke(cli, ["report", str(res), str(res), "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = (out / "rank_correlation.csv").read_text().splitlines()
        assert rows[1].split(",")[1:] == ["1.0", "1.0"]
        doc = json.loads(res.read_text())
        hist = (out / "acc.samples.csv").read_text().splitlines()[1:]
        assert sum(int(line.rsplit(",", 1)[1]) for line in hist) == doc["run"]["eval_count"]
        ranking = [int(x) for x in (out / "acc.ranking.txt").read_text().split()]
        assert sorted(ranking) == list(range(32))
        assert doc["players"][ranking[0]]["rank"] == 1

    def test_schema_mismatch(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "accuracy", "acc")
        doc = json.loads(res.read_text())
        doc["version"] = 2
        res.write_text(json.dumps(doc))
        result = runner.invoke(cli, ["report", str(res), "--out", str(tmp_path / "r")])
        assert result.exit_code == 3 and "version 2" in result.output


class TestAblate:
    def test_ranking_and_random(self, runner, tmp_path, bundle):
        res = _neuron_result(runner, tmp_path, bundle, "accuracy", "acc")
        out = tmp_path / "curve.csv"
        result = runner.invoke(cli, ["ablate", "--bundle", str(bundle), "--ranking", str(res), "--steps", "0,5", "--out", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == "removed,value" and len(lines) == 3
        assert float(lines[1].split(",")[1]) == pytest.approx(load_bundle(bundle).holdout_accuracy(), abs=1e-12)
        result = runner.invoke(cli, ["ablate", "--bundle", str(bundle), "--random", "--seed", "3", "--out", str(out)])
        assert result.exit_code == 0
        assert len(out.read_text().splitlines()) == 34

    def test_random_needs_seed(self, runner, tmp_path, bundle):
        result = runner.invoke(cli, ["ablate", "--bundle", str(bundle), "--random", "--out", str(tmp_path / "c.csv")])
        assert result.exit_code == 3

    def test_step_too_large(self, runner, tmp_path, bundle):
        args = ["ablate", "--bundle", str(bundle), "--random", "--seed", "1", "--steps", "40", "--out", str(tmp_path / "c.csv")]
        assert runner.invoke(cli, args).exit_code == 3
