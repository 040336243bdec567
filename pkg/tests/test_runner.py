import csv
import io
import json

import numpy as np
import pytest

from neuronshap.estimators import EstimatorConfig, mc_shapley, tmab_shapley
from neuronshap.game_core import Coalition
from neuronshap.games import make_sparse_synthetic
from neuronshap.neuron_game import make_neuron_game, save_bundle
from neuronshap.runner import (
    CheckpointError,
    GameConstructionError,
    JobSpec,
    OutputPathError,
    ablate,
    build_game,
    load_result,
    random_ranking,
    run_job,
)

TABLE = {"kind": "random_table", "n": 7, "seed": 4}


class Killed(Exception):
    pass


def job(tmp_path, tag, **kw):
    kw.setdefault("iterations", 170)
    return JobSpec(
        kw.pop("game", TABLE),
        kw.pop("method", "mc"),
        kw.pop("config", EstimatorConfig(seed=11)),
        checkpoint_path=str(tmp_path / f"{tag}.ckpt"),
        output_json=str(tmp_path / f"{tag}.json"),
        output_csv=str(tmp_path / f"{tag}.csv"),
        **kw,
    )


class TestJobSpec:
    def test_invariants(self):
        with pytest.raises(ValueError, match="workers"):
            JobSpec(TABLE, "mc", EstimatorConfig(seed=0), workers=0)
        with pytest.raises(ValueError, match="checkpoint_every"):
            JobSpec(TABLE, "mc", EstimatorConfig(seed=0), checkpoint_every=0)
        with pytest.raises(ValueError, match="method"):
            JobSpec(TABLE, "bogus", EstimatorConfig(seed=0))


class TestDeterminism:
    def test_byte_identical_documents(self, tmp_path):
        run_job(job(tmp_path, "a"))
        run_job(job(tmp_path, "b"))
        for ext in ("json", "csv"):
            assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()

    def test_matches_direct_estimator(self, tmp_path):
        r = run_job(job(tmp_path, "a"))
        direct = mc_shapley(build_game(TABLE), EstimatorConfig(seed=11), iterations=170)
        assert np.array_equal(r.values, direct.values)
        assert r.eval_count == direct.eval_count

    @pytest.mark.parametrize("kill_at", [1, 50, 73, 100, 151, 169])
    def test_kill_and_resume(self, tmp_path, kill_at):
        run_job(job(tmp_path, "ref"))

        def killer(run):
            if run.iteration == kill_at:
                raise Killed

        with pytest.raises(Killed):
            run_job(job(tmp_path, "cut"), on_iteration=killer)
        run_job(job(tmp_path, "cut"))
        assert (tmp_path / "cut.json").read_bytes() == (tmp_path / "ref.json").read_bytes()

    def test_resume_tmab(self, tmp_path):
        g = {"kind": "sparse_synthetic", "n": 20, "k_hot": 3, "seed": 0}
        kw = dict(game=g, method="tmab", config=EstimatorConfig(seed=0, k=3), iterations=None, checkpoint_every=10)
        run_job(job(tmp_path, "ref", **kw))

        def killer(run):
            if run.iteration == 35:
                raise Killed

        with pytest.raises(Killed):
            run_job(job(tmp_path, "cut", **kw), on_iteration=killer)
        run_job(job(tmp_path, "cut", **kw))
        assert (tmp_path / "cut.json").read_bytes() == (tmp_path / "ref.json").read_bytes()

    def test_checkpoint_roundtrip_bytes(self, tmp_path):
        from neuronshap.estimators import ShapleyRun
        from neuronshap.runner import _checkpoint_text

        spec = job(tmp_path, "a")
        run_job(spec)
        text = (tmp_path / "a.ckpt").read_text()
        doc = json.loads(text)
        back = ShapleyRun.from_state_dict(build_game(TABLE), doc["state"])
        assert _checkpoint_text(spec, back) == text

    def test_wall_time_optional(self, tmp_path):
        run_job(job(tmp_path, "a"))
        assert load_result(tmp_path / "a.json")["run"]["wall_ms"] is None
        run_job(job(tmp_path, "b", record_wall_time=True))
        assert load_result(tmp_path / "b.json")["run"]["wall_ms"] >= 0


class TestDocuments:
    def test_schema(self, tmp_path):
        r = run_job(job(tmp_path, "a"))
        doc = load_result(tmp_path / "a.json")
        rec = doc["players"][0]
        assert set(rec) >= {"index", "label", "value", "variance", "lb", "ub", "samples", "rank"}
        assert set(doc["run"]) >= {"config", "seeds", "eval_count", "truncation_hits", "wall_ms", "status"}
        assert doc["run"]["eval_count"] == r.eval_count
        assert doc["run"]["seeds"]["seed"] == 11

    def test_csv_mirrors_json(self, tmp_path):
        run_job(job(tmp_path, "a"))
        doc = load_result(tmp_path / "a.json")
        rows = list(csv.DictReader(io.StringIO((tmp_path / "a.csv").read_text())))
        assert len(rows) == len(doc["players"])
        for row, rec in zip(rows, doc["players"]):
            assert int(row["index"]) == rec["index"] and int(row["rank"]) == rec["rank"]
            assert float(row["value"]) == rec["value"]

    def test_schema_version_checked(self, tmp_path):
        run_job(job(tmp_path, "a"))
        doc = json.loads((tmp_path / "a.json").read_text())
        doc["version"] = 7
        (tmp_path / "a.json").write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="version 7"):
            load_result(tmp_path / "a.json")

    def test_exact_job(self, tmp_path):
        r = run_job(job(tmp_path, "e", game={"kind": "glove", "n_right": 2}, method="exact", iterations=None))
        assert np.allclose(r.values, [2 / 3, 1 / 6, 1 / 6])
        assert load_result(tmp_path / "e.json")["players"][0]["rank"] == 1


class TestErrors:
    def test_unconstructible_game(self, tmp_path):
        with pytest.raises(GameConstructionError, match="chess"):
            run_job(job(tmp_path, "a", game={"kind": "chess"}))
        with pytest.raises(GameConstructionError, match="glove"):
            run_job(job(tmp_path, "a", game={"kind": "glove", "n_left": 2}))

    def test_missing_bundle(self, tmp_path):
        with pytest.raises(GameConstructionError):
            build_game({"kind": "neuron", "bundle": str(tmp_path / "nothing")})

    def test_unwritable_output(self, tmp_path):
        spec = job(tmp_path, "a")
        spec.output_json = str(tmp_path / "missing" / "a.json")
        with pytest.raises(OutputPathError, match="does not exist"):
            run_job(spec)

    def test_corrupt_checkpoint(self, tmp_path):
        (tmp_path / "a.ckpt").write_text("{not json")
        with pytest.raises(CheckpointError, match="unreadable"):
            run_job(job(tmp_path, "a"))

    def test_truncated_checkpoint_state(self, tmp_path):
        run_job(job(tmp_path, "a"))
        doc = json.loads((tmp_path / "a.ckpt").read_text())
        del doc["state"]["mean"]
        (tmp_path / "a.ckpt").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="corrupt"):
            run_job(job(tmp_path, "a"))

    def test_foreign_checkpoint(self, tmp_path):
        run_job(job(tmp_path, "a"))
        with pytest.raises(CheckpointError, match="different job"):
            run_job(job(tmp_path, "a", config=EstimatorConfig(seed=12)))


class TestWorkers:
    def test_accounting_across_workers(self, tmp_path):
        g = {"kind": "random_table", "n": 9, "seed": 1}
        r = run_job(job(tmp_path, "w", game=g, workers=4, iterations=120))
        assert r.iterations == 120
        assert r.evals.sum() + r.overhead_evals == r.eval_count

    def test_neuron_accounting(self, tmp_path, fixture0):
        save_bundle(fixture0, tmp_path / "b")
        g = {"kind": "neuron", "bundle": str(tmp_path / "b"), "metric": "accuracy"}
        r = run_job(job(tmp_path, "n", game=g, workers=4, iterations=12, v_T_fraction=0.5))
        assert r.evals.sum() + r.overhead_evals == r.eval_count
        assert r.config["v_T"] == pytest.approx(0.5 * fixture0.holdout_accuracy())

    @pytest.mark.slow
    def test_eight_workers_find_same_top5(self):
        agree = 0
        for trial in range(20):
            g = {"kind": "sparse_synthetic", "n": 50, "k_hot": 5, "seed": 1000 + trial}
            cfg = dict(seed=trial, k=5, epsilon=1e-3)
            many = run_job(JobSpec(g, "tmab", EstimatorConfig(**cfg), workers=8))
            one = run_job(JobSpec(g, "tmab", EstimatorConfig(**cfg), workers=1))
            agree += set(many.top_k) == set(one.top_k)
        assert agree >= 19


class TestAblate:
    def test_endpoints(self, fixture0):
        g = make_neuron_game(fixture0)
        ranking = random_ranking(32, 0)
        curve = dict(ablate(g, ranking, [0, 32]))
        assert curve[0] == pytest.approx(fixture0.holdout_accuracy(), abs=1e-12)
        all_masked = g.evaluate(Coalition(32, 0))
        assert curve[32] == all_masked

    def test_step_above_n(self, fixture0):
        with pytest.raises(ValueError, match="33"):
            ablate(make_neuron_game(fixture0), random_ranking(32, 0), [33])

    def test_ranking_must_cover_players(self, fixture0):
        with pytest.raises(ValueError, match="exactly once"):
            ablate(make_neuron_game(fixture0), list(range(31)), [1])

    def test_other_metric(self, fixture0):
        g = make_neuron_game(fixture0)
        curve = ablate(g, random_ranking(32, 0), [0], metric="class_recall", target_class=1)
        assert 0.0 <= curve[0][1] <= 1.0

    def test_needs_neuron_game(self):
        with pytest.raises(TypeError):
            ablate(make_sparse_synthetic(10, 2, seed=0), list(range(10)), [1])

    def test_random_ranking_seeded(self):
        assert np.array_equal(random_ranking(32, 5), random_ranking(32, 5))
        assert sorted(random_ranking(32, 5).tolist()) == list(range(32))
