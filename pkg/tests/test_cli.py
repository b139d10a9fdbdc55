"""Command-line surface: subcommands, exit codes, and file contracts."""

import json

import numpy as np
import pytest

import softds as s
from softds.cli import main
from util import diagonal_spec


@pytest.fixture
def sim_dir(tmp_path):
    """A simulated dataset written through the CLI."""
    spec = diagonal_spec(4.0, 0.3, seed=80, n_items=60, n_classes=3)
    spec_path = tmp_path / "spec.json"
    spec.to_json(spec_path)
    out_dir = tmp_path / "data"
    assert main(["simulate", "--spec", str(spec_path),
                 "--out-dir", str(out_dir)]) == 0
    return spec, out_dir


class TestSimulate:
    def test_outputs_load_back(self, sim_dir):
        _, out_dir = sim_dir
        preds = s.load_predictions(out_dir / "manifest.json")
        truth = s.load_ground_truth(out_dir / "truth.csv")
        assert preds.n_items == truth.n_items == 60
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["labels"] == "truth.csv"

    def test_byte_identical_reruns(self, tmp_path):
        spec = diagonal_spec(4.0, 0.3, seed=81, n_items=25, n_classes=3)
        spec_path = tmp_path / "spec.json"
        spec.to_json(spec_path)
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert main(["simulate", "--spec", str(spec_path),
                         "--out-dir", str(d), "--bayes"]) == 0
        for name in ["manifest.json", "truth.csv", "member_0.csv",
                     "bayes_posterior.csv"]:
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_rejects_empty_dataset(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        obj = {"n_items": 0, "n_members": 1, "n_classes": 2,
               "nu_true": [0.5, 0.5], "pi_true": [[[1.0, 1.0], [1.0, 1.0]]],
               "seed": 0}
        spec_path.write_text(json.dumps(obj))
        assert main(["simulate", "--spec", str(spec_path),
                     "--out-dir", str(tmp_path / "x")]) == 1


class TestAggregate:
    def test_ensemble_average(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        out = tmp_path / "post_ea.csv"
        assert main(["aggregate", "--method", "ea",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--out", str(out)]) == 0
        post = s.load_posterior(out)
        preds = s.load_predictions(out_dir / "manifest.json")
        assert np.array_equal(post.rows, s.ensemble_average(preds).rows)

    def test_majority_vote_and_ds(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        for method in ("mv", "ds"):
            out = tmp_path / f"post_{method}.csv"
            assert main(["aggregate", "--method", method,
                         "--manifest", str(out_dir / "manifest.json"),
                         "--out", str(out)]) == 0
            assert s.load_posterior(out).n_items == 60

    def test_sds_emits_model_and_trace(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        out = tmp_path / "post.csv"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 5}))
        assert main(["aggregate", "--method", "sds",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--config", str(cfg), "--out", str(out)]) == 0
        assert s.load_posterior(out).n_items == 60
        model = s.load_model(tmp_path / "post.model.json")
        assert model.n_classes == 3
        trace = s.FitTrace.load_csv(tmp_path / "post.trace.csv")
        assert len(trace) == 5

    def test_missing_member_file_exits_2(self, tmp_path, capsys):
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"n_classes": 2,
                                        "members": ["absent.csv"]}))
        code = main(["aggregate", "--method", "ea", "--manifest",
                     str(manifest), "--out", str(tmp_path / "o.csv")])
        assert code == 2
        assert "absent.csv" in capsys.readouterr().err

    def test_bad_config_exits_1(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 0}))
        assert main(["aggregate", "--manifest", str(out_dir / "manifest.json"),
                     "--config", str(cfg),
                     "--out", str(tmp_path / "o.csv")]) == 1

    def test_thread_counts_agree(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 4}))
        outs = []
        for threads in ("1", "8"):
            out = tmp_path / f"post_t{threads}.csv"
            assert main(["aggregate", "--method", "sds",
                         "--manifest", str(out_dir / "manifest.json"),
                         "--config", str(cfg), "--threads", threads,
                         "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_env_var_thread_fallback(self, sim_dir, tmp_path, monkeypatch):
        _, out_dir = sim_dir
        monkeypatch.setenv("SOFTDS_THREADS", "2")
        assert main(["aggregate", "--method", "ea",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--out", str(tmp_path / "o.csv")]) == 0
        monkeypatch.setenv("SOFTDS_THREADS", "zero")
        assert main(["aggregate", "--method", "ea",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--out", str(tmp_path / "o2.csv")]) == 1


class TestEvaluate:
    def test_perfect_posterior(self, tmp_path, capsys):
        truth = s.GroundTruth(np.array([0, 1, 2]), ["a", "b", "c"])
        rows = np.zeros((3, 3))
        rows[np.arange(3), truth.labels] = 1.0
        post = s.PosteriorMatrix(rows, ["a", "b", "c"])
        s.save_posterior(post, tmp_path / "p.csv")
        s.save_ground_truth(truth, tmp_path / "t.csv")
        assert main(["evaluate", "--posterior", str(tmp_path / "p.csv"),
                     "--truth", str(tmp_path / "t.csv")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["accuracy"] == 1.0
        assert report["ece"] == 0.0
        assert report["brier"] == 0.0
        assert report["nll"] == 0.0
        assert report["n_items"] == 3

    def test_uniform_thousand_class_anchor(self, tmp_path, capsys):
        n = 5
        rows = np.full((n, 1000), 1.0 / 1000)
        ids = [str(i) for i in range(n)]
        s.save_posterior(s.PosteriorMatrix(rows, ids), tmp_path / "p.csv")
        s.save_ground_truth(s.GroundTruth(np.arange(n), ids), tmp_path / "t.csv")
        assert main(["evaluate", "--posterior", str(tmp_path / "p.csv"),
                     "--truth", str(tmp_path / "t.csv")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["brier"] == pytest.approx(0.999, abs=1e-12)
        assert report["nll"] == pytest.approx(np.log(1000.0), abs=1e-9)

    def test_id_mismatch_exits_1(self, tmp_path):
        rows = np.array([[1.0, 0.0]])
        s.save_posterior(s.PosteriorMatrix(rows, ["a"]), tmp_path / "p.csv")
        s.save_ground_truth(s.GroundTruth(np.array([0]), ["b"]),
                            tmp_path / "t.csv")
        assert main(["evaluate", "--posterior", str(tmp_path / "p.csv"),
                     "--truth", str(tmp_path / "t.csv")]) == 1

    def test_ood_pair(self, tmp_path, capsys):
        sharp = np.zeros((4, 3))
        sharp[:, 0] = 0.9
        sharp[:, 1:] = 0.05
        flat = np.full((4, 3), 1.0 / 3)
        s.save_posterior(s.PosteriorMatrix(sharp), tmp_path / "in.csv")
        s.save_posterior(s.PosteriorMatrix(flat), tmp_path / "out.csv")
        assert main(["evaluate", "--ood-in", str(tmp_path / "in.csv"),
                     "--ood-out", str(tmp_path / "out.csv"),
                     "--ood-score", "entropy"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["auroc"] == 1.0

    def test_ece_bins_and_confusion_outputs(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        post_path = tmp_path / "p.csv"
        assert main(["aggregate", "--method", "ea",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--out", str(post_path)]) == 0
        bins_path = tmp_path / "bins.csv"
        conf_path = tmp_path / "conf.json"
        assert main(["evaluate", "--posterior", str(post_path),
                     "--truth", str(out_dir / "truth.csv"),
                     "--bins", "20", "--ece-bins-out", str(bins_path),
                     "--confusion-out", str(conf_path),
                     "--manifest", str(out_dir / "manifest.json"),
                     "--out", str(tmp_path / "report.json")]) == 0
        assert len(bins_path.read_text().strip().splitlines()) == 21
        conf = json.loads(conf_path.read_text())
        assert len(conf["members"]) == 3  # one confusion matrix per member
        report = json.loads((tmp_path / "report.json").read_text())
        assert set(report) >= {"accuracy", "ece", "brier", "nll", "n_items"}

    def test_nothing_to_do_exits_1(self):
        assert main(["evaluate"]) == 1


class TestOnline:
    @pytest.fixture
    def fitted(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 5}))
        post_path = tmp_path / "post.csv"
        assert main(["aggregate", "--method", "sds",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--config", str(cfg), "--out", str(post_path)]) == 0
        return out_dir, tmp_path / "post.model.json"

    def make_stream(self, preds, path, item_range):
        k, j = preds.n_members, preds.n_classes
        header = ["item_id"] + [f"m{m}_p{c}" for m in range(k) for c in range(j)]
        lines = [",".join(header)]
        for i in item_range:
            vals = [repr(float(v)) for v in preds.probs[i].ravel()]
            lines.append(",".join([preds.item_ids[i]] + vals))
        path.write_text("\n".join(lines) + "\n")

    def test_stream_matches_batch(self, fitted, tmp_path):
        out_dir, model_path = fitted
        preds = s.load_predictions(out_dir / "manifest.json")
        model = s.load_model(model_path)
        stream_in = tmp_path / "stream.csv"
        self.make_stream(preds, stream_in, range(10))
        stream_out = tmp_path / "stream_post.csv"
        assert main(["online", "--model", str(model_path),
                     "--input", str(stream_in), "--out", str(stream_out)]) == 0
        got = s.load_posterior(stream_out)
        batch = s.e_step_raw(preds, model)
        assert np.array_equal(got.rows, batch.rows[:10])

    def test_empty_stream_ok(self, fitted, tmp_path):
        _, model_path = fitted
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["online", "--model", str(model_path),
                     "--input", str(empty),
                     "--out", str(tmp_path / "o.csv")]) == 0
        assert (tmp_path / "o.csv").read_text() == ""

    def test_malformed_row_skipped(self, fitted, tmp_path, capsys):
        out_dir, model_path = fitted
        preds = s.load_predictions(out_dir / "manifest.json")
        stream_in = tmp_path / "stream.csv"
        self.make_stream(preds, stream_in, range(3))
        with open(stream_in, "a", encoding="utf-8") as fh:
            fh.write("bad,0.5,0.5\n")  # wrong column count
        stream_out = tmp_path / "o.csv"
        assert main(["online", "--model", str(model_path),
                     "--input", str(stream_in), "--out", str(stream_out)]) == 1
        assert "skipped" in capsys.readouterr().err
        assert s.load_posterior(stream_out).n_items == 3


class TestExplain:
    def test_decomposition_matches_posterior(self, sim_dir, tmp_path, capsys):
        _, out_dir = sim_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 5}))
        post_path = tmp_path / "post.csv"
        assert main(["aggregate", "--method", "sds",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--config", str(cfg), "--out", str(post_path)]) == 0
        assert main(["explain", "--model", str(tmp_path / "post.model.json"),
                     "--manifest", str(out_dir / "manifest.json"),
                     "--item", "4"]) == 0
        payload = json.loads(capsys.readouterr().out)
        total = (np.array(payload["log_prior"])
                 + np.array(payload["member_evidence"]).sum(axis=0)
                 + np.array(payload["member_normalizer"]).sum(axis=0))
        np.testing.assert_allclose(total, payload["log_weights"], atol=1e-10)
        post = s.load_posterior(post_path)
        idx = post.item_ids.index("4")
        assert np.argmax(payload["posterior"]) == np.argmax(post.rows[idx])

    def test_unknown_item_exits_1(self, sim_dir, tmp_path):
        _, out_dir = sim_dir
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"em_iterations": 2}))
        assert main(["aggregate", "--method", "sds",
                     "--manifest", str(out_dir / "manifest.json"),
                     "--config", str(cfg),
                     "--out", str(tmp_path / "post.csv")]) == 0
        assert main(["explain", "--model", str(tmp_path / "post.model.json"),
                     "--manifest", str(out_dir / "manifest.json"),
                     "--item", "no-such-id"]) == 1
