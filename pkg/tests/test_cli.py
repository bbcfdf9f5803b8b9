import hashlib
import json
import pathlib

import numpy as np
import pytest

from topgraph.cli import main
from topgraph.graphio import load_graph
from topgraph.model import load_model
from topgraph.sgp import load_kappa
from topgraph.spectral import load_eigensystem


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Graph and eigensystem archives for both fixture graphs."""
    fixtures = pathlib.Path(__file__).parent / "fixtures"
    out = tmp_path_factory.mktemp("pipeline")
    paths = {}
    for name in ("g1", "g2"):
        g, e = out / f"{name}.bin", out / f"{name}.eig"
        assert main(["graph", "--in", str(fixtures / f"{name}.tsv"), "--knn-frac", "0.3",
                     "--normalize", "--out", str(g)]) == 0
        assert main(["eigen", "--graph", str(g), "--rank", "6", "--out", str(e)]) == 0
        paths[name] = (g, e)
    paths["tuples"] = fixtures / "tuples.tsv"
    return paths


def eig_args(p):
    return ["--eigen", str(p["g1"][1]), str(p["g2"][1]), "--tuples", str(p["tuples"])]


class TestGraph:
    def test_header_and_manifest(self, fixtures, tmp_path):
        out = tmp_path / "g.bin"
        assert main(["graph", "--in", str(fixtures / "g1.tsv"), "--out", str(out)]) == 0
        g = load_graph(out)
        assert g.n == 30 and not g.normalized
        manifest = json.loads((tmp_path / "g.bin.manifest.json").read_text())
        assert manifest["command"] == "graph"
        assert manifest["inputs"][str(fixtures / "g1.tsv")] == sha(fixtures / "g1.tsv")
        assert manifest["artifacts"] == [str(out)]
        assert "versions" in manifest and manifest["config"]["normalize"] is False

    @pytest.mark.parametrize("flags, normalized", [(["--knn-frac", "0.1"], False),
                                                   (["--normalize"], True),
                                                   (["--knn-frac", "0.5", "--normalize"], True)])
    def test_variants(self, fixtures, tmp_path, flags, normalized):
        out = tmp_path / "g.bin"
        assert main(["graph", "--in", str(fixtures / "g2.tsv"), "--n", "24", *flags,
                     "--out", str(out)]) == 0
        assert load_graph(out).normalized is normalized

    def test_missing_n_is_usage_error(self, tmp_path):
        (tmp_path / "e.tsv").write_text("0\t1\t1.0\n")
        assert main(["graph", "--in", str(tmp_path / "e.tsv"), "--out", str(tmp_path / "g")]) == 2

    def test_conflicting_duplicates_is_data_error(self, tmp_path, capsys):
        (tmp_path / "e.tsv").write_text("0\t1\t1.0\n1\t0\t2.0\n")
        code = main(["graph", "--in", str(tmp_path / "e.tsv"), "--n", "2",
                     "--out", str(tmp_path / "g")])
        assert code == 3
        assert "line 2" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["graph", "--in", str(tmp_path / "nope"), "--n", "2",
                     "--out", str(tmp_path / "g")]) == 3

    def test_bad_flag_is_usage_error(self):
        assert main(["graph", "--bogus"]) == 2


class TestEigen:
    @pytest.mark.parametrize("flags, d", [(["--rank", "4"], 4),
                                          (["--rank", "3", "--method", "lanczos"], 3),
                                          (["--energy", "1.0"], 30)])
    def test_ranks(self, pipeline, tmp_path, flags, d):
        out = tmp_path / "e.bin"
        assert main(["eigen", "--graph", str(pipeline["g1"][0]), *flags, "--out", str(out)]) == 0
        assert load_eigensystem(out).d == d

    def test_rank_or_energy_required(self, pipeline, tmp_path):
        assert main(["eigen", "--graph", str(pipeline["g1"][0]), "--out", str(tmp_path / "e")]) == 2
        assert main(["eigen", "--graph", str(pipeline["g1"][0]), "--rank", "2", "--energy", "0.5",
                     "--out", str(tmp_path / "e")]) == 2

    def test_non_convergence_exit_code(self, pipeline, tmp_path, monkeypatch, capsys):
        from topgraph import cli
        from topgraph.errors import ConvergenceError

        def stalled(*args, **kwargs):
            raise ConvergenceError("no convergence", {"residuals": [1.0]})

        monkeypatch.setattr(cli, "top_eigensystem", stalled)
        assert main(["eigen", "--graph", str(pipeline["g1"][0]), "--rank", "2",
                     "--out", str(tmp_path / "e")]) == 4
        assert "residuals" in capsys.readouterr().err


class TestTrain:
    @pytest.mark.parametrize("kappa", ["exp", "cartesian", "flat"])
    def test_same_seed_same_bytes(self, pipeline, tmp_path, kappa):
        args = eig_args(pipeline) + ["--kappa", kappa, "--iters", "400", "--gamma", "0.1",
                                     "--seed", "3", "--split-seed", "1"]
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        assert main(["train", *args, "--out", str(a), "--trace", str(tmp_path / "t.csv")]) == 0
        assert main(["train", *args, "--out", str(b)]) == 0
        assert sha(a) == sha(b)
        assert load_model(a).kappa_variant == ("exponential" if kappa == "exp" else kappa)
        assert (tmp_path / "t.csv").read_text().startswith("iter,objective,loss,seminorm\n")

    def test_file_kappa(self, pipeline, tmp_path):
        from topgraph.sgp import KappaTensor, save_kappa

        save_kappa(tmp_path / "k.bin", KappaTensor(np.full((6, 6), 1 / 36)))
        out = tmp_path / "m.bin"
        assert main(["train", *eig_args(pipeline), "--kappa", f"file:{tmp_path / 'k.bin'}",
                     "--iters", "50", "--out", str(out)]) == 0
        assert load_model(out).kappa_variant == "nonparametric"
        manifest = json.loads((tmp_path / "m.bin.manifest.json").read_text())
        assert str(tmp_path / "k.bin") in manifest["inputs"]

    def test_bad_tuples_is_data_error(self, pipeline, tmp_path):
        (tmp_path / "t.tsv").write_text("0\t99\n")
        args = ["--eigen", str(pipeline["g1"][1]), str(pipeline["g2"][1]),
                "--tuples", str(tmp_path / "t.tsv")]
        assert main(["train", *args, "--out", str(tmp_path / "m")]) == 3

    def test_config_file_supplies_defaults(self, pipeline, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iters": 30, "gamma": 0.5, "tuples": str(pipeline["tuples"])}))
        out = tmp_path / "m.bin"
        assert main(["--config", str(cfg), "train", "--eigen", str(pipeline["g1"][1]),
                     str(pipeline["g2"][1]), "--gamma", "0.25", "--out", str(out)]) == 0
        manifest = json.loads((tmp_path / "m.bin.manifest.json").read_text())
        assert manifest["config"]["iters"] == 30 and manifest["config"]["gamma"] == 0.25
        assert load_model(out).gamma == 0.25

    def test_thread_cap(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv("TOPGRAPH_THREADS", "1")
        assert main(["train", *eig_args(pipeline), "--iters", "10",
                     "--out", str(tmp_path / "m.bin")]) == 0


class TestAdapt:
    @pytest.mark.parametrize("flags", [["--inner-solver", "exact", "--outer-iters", "2"],
                                       ["--iters", "200", "--outer-iters", "1"],
                                       ["--inner-solver", "exact", "--outer-iters", "1",
                                        "--init-kappa", "flat", "--mass", "2.0"]])
    def test_runs_and_feasible(self, pipeline, tmp_path, flags):
        k, m, t = tmp_path / "k.bin", tmp_path / "m.bin", tmp_path / "a.csv"
        assert main(["adapt", *eig_args(pipeline), "--gamma", "0.1", "--kappa-step", "0.01",
                     *flags, "--out-kappa", str(k), "--out-model", str(m),
                     "--trace", str(t)]) == 0
        kappa = load_kappa(k).values
        mass = 2.0 if "--mass" in flags else 1.0
        assert abs(kappa.sum() - mass) < 1e-6
        assert np.all(np.diff(kappa, axis=0) <= 1e-6) and np.all(np.diff(kappa, axis=1) <= 1e-6)
        assert load_model(m).kappa_variant == "nonparametric"
        assert t.read_text().startswith("outer_iter,phi_hat,feasibility_violation\n")

    @pytest.mark.parametrize("flags", [["--dykstra-tol", "0.5"], ["--gamma", "-1"]])
    def test_bad_settings_are_usage_errors(self, pipeline, tmp_path, flags):
        code = main(["adapt", *eig_args(pipeline), *flags,
                     "--out-kappa", str(tmp_path / "k"), "--out-model", str(tmp_path / "m")])
        assert code == 2


@pytest.fixture(scope="module")
def model(pipeline, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval") / "m.bin"
    assert main(["train", *eig_args(pipeline), "--iters", "2000", "--gamma", "0.1",
                 "--split-seed", "2", "--out", str(out)]) == 0
    return out


class TestEval:
    @pytest.mark.parametrize("mode", [0, 1])
    def test_model_metrics(self, pipeline, model, tmp_path, mode):
        out, rows = tmp_path / "m.json", tmp_path / "q.csv"
        assert main(["eval", "--model", str(model), "--tuples", str(pipeline["tuples"]),
                     "--split-seed", "2", "--complete-mode", str(mode), "--out", str(out),
                     "--per-query", str(rows)]) == 0
        metrics = json.loads(out.read_text())
        assert set(metrics) == {"map", "auc", "hits_at_5", "n_queries", "method"}
        assert 0 <= metrics["auc"] <= 1 and metrics["n_queries"] == len(rows.read_text().splitlines()) - 1

    def test_nn_baseline(self, pipeline, tmp_path):
        out = tmp_path / "nn.json"
        assert main(["eval", "--baseline", "nn", "--graphs", str(pipeline["g1"][0]),
                     str(pipeline["g2"][0]), "--tuples", str(pipeline["tuples"]),
                     "--split-seed", "2", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["method"] == "nn"

    def test_usage_errors(self, pipeline, model, tmp_path):
        base = ["--tuples", str(pipeline["tuples"]), "--split-seed", "2", "--out", str(tmp_path / "x")]
        assert main(["eval", *base]) == 2
        assert main(["eval", "--baseline", "nn", *base]) == 2
        assert main(["eval", "--model", str(model), "--complete-mode", "5", *base]) == 2


class TestOracle:
    @pytest.mark.parametrize("suite", ["dense", "seminorm", "projection"])
    def test_suites(self, tmp_path, suite):
        out = tmp_path / "r.json"
        assert main(["oracle", "--suite", suite, "--seed", "7", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["passed"] and all(c["suite"] == suite for c in report["checks"])

    def test_all_to_stdout(self, capsys):
        assert main(["oracle", "--suite", "all", "--seed", "7"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert {c["suite"] for c in report["checks"]} == {"dense", "seminorm", "gradient",
                                                          "projection"}

    def test_failure_gives_nonzero_exit(self, tmp_path, monkeypatch):
        from topgraph import oracles

        monkeypatch.setattr(oracles, "run_suites",
                            lambda names, seed: [oracles.Check("dense", "forced", 1.0, 0.0)])
        assert main(["oracle", "--out", str(tmp_path / "r.json")]) == 1
        assert json.loads((tmp_path / "r.json").read_text())["passed"] is False
