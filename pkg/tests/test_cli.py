import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from flpre import io
from flpre.basis import make_basis
from flpre.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--n", 400, "--seed", 3, "--gen-basis-dim", 14, "--output", out) == 0
    return out


@pytest.fixture(scope="module")
def exact(tmp_path_factory, sim):
    """Curves from ``sim`` with noise-free responses exp(B theta*) for K=3."""
    out = tmp_path_factory.mktemp("exact")
    ids, curves = io.read_curves(sim / "curves.csv")
    b = make_basis(3)
    theta = np.linspace(-0.5, 0.5, b.dim)
    y = np.exp(curves.design(b).rows @ theta)
    io.write_responses(out / "y.csv", y, ids)
    return out, theta


class TestSimulate:
    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("simulate", "--covariate", "C1", "--error", "R1", "--n", 100, "--seed", 1,
                       "--output", tmp_path / d) == 0
        for f in ("curves.csv", "responses.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        meta = json.loads((tmp_path / "a" / "meta.json").read_text())
        assert meta["config"]["seed"] == 1 and meta["simulation"]["n"] == 100

    def test_bad_law(self, tmp_path):
        assert run("simulate", "--error", "R9", "--output", tmp_path) == EXIT_USAGE

    def test_positive(self, tmp_path):
        assert run("simulate", "--covariate", "C3", "--error", "R4", "--n", 1000,
                   "--output", tmp_path) == 0
        assert np.all(io.read_responses(tmp_path / "responses.csv") > 0)

    def test_config_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 50, "grid-size": 30, "seed": 9}))
        assert run("simulate", "--config", cfg, "--n", 60, "--output", tmp_path / "o") == 0
        meta = json.loads((tmp_path / "o" / "meta.json").read_text())["config"]
        assert (meta["n"], meta["grid_size"], meta["seed"]) == (60, 30, 9)
        assert meta["covariate"] == "C1"
        assert "config: " in capsys.readouterr().out


class TestFit:
    def test_exact_fit(self, sim, exact, tmp_path):
        out, theta = exact
        m = tmp_path / "m.json"
        assert run("fit", "--input", sim / "curves.csv", "--responses", out / "y.csv",
                   "--knots", 3, "--lambda", 1e-10, "--output", m) == EXIT_OK
        doc = json.loads(m.read_text())
        assert doc["method"] == "FLPRE" and doc["converged"]
        np.testing.assert_allclose(doc["theta"], theta, atol=1e-5)
        b = make_basis(3)
        D = np.asarray(__import__("flpre").penalty_matrix(b))
        th = np.asarray(doc["theta"])
        assert doc["loss"] == pytest.approx(0.5 * 1e-10 * th @ D @ th, rel=1e-2, abs=1e-12)

    def test_method_tag(self, sim, exact, tmp_path):
        out, _ = exact
        for method in ("FLS", "FLAD"):
            m = tmp_path / f"{method}.json"
            assert run("fit", "--input", sim / "curves.csv", "--responses", out / "y.csv",
                       "--knots", 3, "--lambda", 1e-6, "--method", method, "--output", m) == 0
            assert json.loads(m.read_text())["method"] == method

    def test_true_beta_outputs(self, sim, tmp_path, capsys):
        res = tmp_path / "res.csv"
        curve = tmp_path / "beta.csv"
        assert run("fit", "--input", sim / "curves.csv", "--responses", sim / "responses.csv",
                   "--knots", 4, "--lambda-grid", "1e-4,1e-2,1", "--true-beta",
                   "--beta-curve", curve, "--results", res, "--output", tmp_path / "m.json") == 0
        assert "IMSE=" in capsys.readouterr().out
        bc = pd.read_csv(curve)
        assert len(bc) == 1001
        assert {"t", "beta", "se", "lower", "upper", "beta_reference"} <= set(bc.columns)
        assert np.all(bc["lower"] <= bc["beta"]) and np.all(bc["beta"] <= bc["upper"])
        row = pd.read_csv(res)
        assert list(row.columns) == list(io.RESULT_COLUMNS) and row["imse"].iloc[0] > 0
        meta = json.loads((tmp_path / "m.json.meta.json").read_text())
        assert len(meta["bic_path"]) == 3

    def test_knot_rule_exclusive(self, sim, tmp_path):
        assert run("fit", "--input", sim / "curves.csv", "--responses", sim / "responses.csv",
                   "--knots", 3, "--knots-rule", "n14", "--output", tmp_path / "m.json") == EXIT_USAGE

    def test_lambda_layers(self, sim, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"lambda_grid": [0.1, 1.0], "knots": 3}))
        # a flag displaces the file's choice of the other form
        assert run("fit", "--config", cfg, "--input", sim / "curves.csv", "--responses",
                   sim / "responses.csv", "--lambda", 0.5, "--output", tmp_path / "m.json") == 0
        meta = json.loads((tmp_path / "m.json.meta.json").read_text())["config"]
        assert meta["lambda"] == 0.5 and "lambda_grid" not in meta and meta["knots"] == 3
        cfg.write_text(json.dumps({"lambda_grid": [0.1, 1.0], "lambda": 0.1}))
        assert run("fit", "--config", cfg, "--input", sim / "curves.csv", "--responses",
                   sim / "responses.csv", "--output", tmp_path / "m.json") == EXIT_USAGE

    def test_data_errors(self, sim, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,t,x\n0,0,1\n0,zz,2\n")
        assert run("fit", "--input", bad, "--responses", sim / "responses.csv",
                   "--output", tmp_path / "m.json") == EXIT_DATA
        assert "line 3" in capsys.readouterr().err
        assert run("fit", "--input", tmp_path / "missing.csv", "--responses",
                   sim / "responses.csv", "--output", tmp_path / "m.json") == EXIT_DATA


class TestSubsample:
    def test_rows_share_schema(self, sim, tmp_path):
        res = tmp_path / "res.csv"
        for kind in ("uniform", "FLopt"):
            m = tmp_path / f"{kind}.json"
            code = run("subsample", "--input", sim / "curves.csv", "--responses",
                       sim / "responses.csv", "--knots", 4, "--subsample-kind", kind, "--r0", 100,
                       "--r", 200, "--lambda", 1e-3, "--seed", 5, "--true-beta", "--results", res,
                       "--scheme-out", tmp_path / f"{kind}.pi.csv", "--output", m)
            assert code == 0
            doc = json.loads(m.read_text())
            assert doc["kind"] == kind and doc["r"] == 200
        df = pd.read_csv(res)
        assert list(df.columns) == list(io.RESULT_COLUMNS)
        assert list(df["method"]) == ["uniform", "FLopt"]
        assert df["imse"].notna().all()
        pi = pd.read_csv(tmp_path / "FLopt.pi.csv")["pi"]
        assert pi.sum() == pytest.approx(1.0, rel=1e-12)

    def test_r0_below_dim(self, sim, tmp_path):
        assert run("subsample", "--input", sim / "curves.csv", "--responses", sim / "responses.csv",
                   "--knots", 4, "--subsample-kind", "FLopt", "--r0", 5, "--r", 100,
                   "--output", tmp_path / "m.json") == EXIT_USAGE

    def test_full_model_basis_mismatch(self, sim, tmp_path, capsys):
        full = tmp_path / "full.json"
        assert run("fit", "--input", sim / "curves.csv", "--responses", sim / "responses.csv",
                   "--knots", 4, "--lambda", 1e-3, "--output", full) == 0
        assert run("subsample", "--input", sim / "curves.csv", "--responses", sim / "responses.csv",
                   "--knots", 5, "--r0", 100, "--r", 100, "--full-model", full,
                   "--output", tmp_path / "s.json") == EXIT_USAGE
        assert "differs" in capsys.readouterr().err


class TestBenchmark:
    def test_deterministic(self, tmp_path, monkeypatch):
        args = ["benchmark", "--n", 3000, "--knots", 4, "--r0", 200, "--r", "300,600",
                "--replications", 2, "--lambda", 1e-3, "--test-n", 100, "--seed", 11]
        monkeypatch.setenv("FLPRE_THREADS", "1")
        assert run(*args, "--output", tmp_path / "a") == 0
        monkeypatch.setenv("FLPRE_THREADS", "2")
        assert run(*args, "--output", tmp_path / "b") == 0
        cols = ["method", "r", "imse_mean", "imse_sd", "rpse_mean", "lambda"]
        a = pd.read_csv(tmp_path / "a" / "summary.csv")[cols]
        b = pd.read_csv(tmp_path / "b" / "summary.csv")[cols]
        pd.testing.assert_frame_equal(a, b)
        rec = pd.read_csv(tmp_path / "a" / "records.csv")
        assert len(rec) == 2 * 2 * 2
        assert set(a["method"]) == {"uniform", "FLopt", "full"}

    def test_flopt_costs_more(self, tmp_path):
        assert run("benchmark", "--n", 30000, "--knots", 10, "--r0", 500, "--r", 1000,
                   "--replications", 3, "--lambda", 1e-4, "--test-n", 0,
                   "--output", tmp_path) == 0
        s = pd.read_csv(tmp_path / "summary.csv").set_index("method")
        assert s.loc["FLopt", "fit_seconds_mean"] > s.loc["uniform", "fit_seconds_mean"]
        assert s.loc["full", "fit_seconds_mean"] > s.loc["uniform", "fit_seconds_mean"]


class TestPredict:
    def _model(self, path, theta, K=3):
        b = make_basis(K)
        doc = {"version": 1, "method": "FLPRE", "degree": b.degree, "penalty_order": b.penalty_order,
               "interior_knots": K, "knot_vector": b.knots.tolist(), "theta": list(theta),
               "lambda": 0.0, "converged": True, "n": 1, "loss": 0.0}
        path.write_text(json.dumps(doc))
        return path

    def test_zero_model(self, sim, tmp_path):
        m = self._model(tmp_path / "m.json", [0.0] * make_basis(3).dim)
        assert run("predict", "--model", m, "--input", sim / "curves.csv",
                   "--output", tmp_path / "p.csv") == 0
        p = pd.read_csv(tmp_path / "p.csv")
        assert list(p.columns) == ["id", "y_pred"]
        assert np.all(p["y_pred"] == 1.0)

    def test_saturated(self, sim, exact, tmp_path, capsys):
        out, theta = exact
        m = tmp_path / "m.json"
        assert run("fit", "--input", sim / "curves.csv", "--responses", out / "y.csv",
                   "--knots", 3, "--lambda", 1e-10, "--output", m) == 0
        assert run("predict", "--model", m, "--input", sim / "curves.csv", "--responses",
                   out / "y.csv", "--output", tmp_path / "p.csv") == 0
        p = pd.read_csv(tmp_path / "p.csv")
        assert list(p.columns) == ["id", "y_true", "y_pred"]
        mape = float(capsys.readouterr().out.split("MAPE=")[1].split()[0])
        assert mape < 1e-5

    def test_basis_mismatch(self, sim, tmp_path, capsys):
        m = self._model(tmp_path / "m.json", [0.0] * make_basis(3).dim)
        assert run("predict", "--model", m, "--input", sim / "curves.csv", "--knots", 5,
                   "--output", tmp_path / "p.csv") == EXIT_USAGE
        err = capsys.readouterr().err
        assert "'interior_knots': 3" in err and "'interior_knots': 5" in err


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "flpre.cli", "simulate", "--n", "5",
                           "--output", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "flpre.cli", "bogus"], capture_output=True)
    assert proc.returncode == EXIT_USAGE
