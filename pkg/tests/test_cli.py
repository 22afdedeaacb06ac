import filecmp
import json
import os

import numpy as np
import pytest

from mvcn.cli import (
    EXIT_BLOWUP,
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_OK,
    main,
)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestModels:
    def test_lists_builtins(self, capsys):
        code, out, _ = run(["models"], capsys)
        assert code == EXIT_OK
        for name in ("anharmonic1d", "cubic2d", "ou_meanfield", "brownian", "zero"):
            assert name in out
        assert "c3=2" in out  # anharmonic1d constants printed


class TestSimulate:
    def test_basic_run(self, tmp_path, capsys):
        code, out, _ = run(
            ["simulate", "--model", "ou_meanfield", "-N", "16", "-M", "2",
             "--dt", "0.01", "--t-end", "0.1", "--seed", "3",
             "--out-root", str(tmp_path), "--out", "run1",
             "--snapshot-times", "0.1"],
            capsys)
        assert code == EXIT_OK
        outdir = tmp_path / "run1"
        assert (outdir / "manifest.json").exists()
        assert (outdir / "moments.csv").exists()
        assert (outdir / "snapshot_0.1.csv").exists()
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert "wall_clock_seconds" in manifest

    def test_out_dir_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MVCN_OUT_DIR", str(tmp_path))
        code, out, _ = run(
            ["simulate", "--model", "ou_meanfield", "-N", "8", "-M", "2",
             "--dt", "0.01", "--t-end", "0.05"],
            capsys)
        assert code == EXIT_OK
        assert (tmp_path / "sim_ou_meanfield" / "moments.csv").exists()

    def test_manifest_replay_byte_identical(self, tmp_path, capsys):
        base = ["simulate", "--model", "anharmonic1d", "-N", "16", "-M", "2",
                "--dt", "0.01", "--t-end", "0.1", "--seed", "5",
                "--init", "gauss:0,1", "--out-root", str(tmp_path)]
        code, _, _ = run(base + ["--out", "orig"], capsys)
        assert code == EXIT_OK
        code, _, _ = run(
            ["simulate", "--from-manifest", str(tmp_path / "orig" / "manifest.json"),
             "--out", str(tmp_path / "replay")],
            capsys)
        assert code == EXIT_OK
        assert filecmp.cmp(tmp_path / "orig" / "moments.csv",
                           tmp_path / "replay" / "moments.csv", shallow=False)

    def test_missing_model_lists_builtins(self, tmp_path, capsys):
        code, _, err = run(
            ["simulate", "-N", "8", "-M", "2", "--dt", "0.01", "--t-end", "0.1",
             "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_CONFIG
        assert "anharmonic1d" in err and "ou_meanfield" in err

    def test_unknown_model(self, tmp_path, capsys):
        code, _, err = run(
            ["simulate", "--model", "nope", "-N", "8", "-M", "2", "--dt", "0.01",
             "--t-end", "0.1", "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_CONFIG

    def test_missing_flags(self, tmp_path, capsys):
        code, _, err = run(["simulate", "--model", "zero", "--out-root", str(tmp_path)],
                           capsys)
        assert code == EXIT_CONFIG
        assert "--particles" in err

    def test_blowup_exit_code(self, tmp_path, capsys):
        with pytest.warns(UserWarning):
            code, _, err = run(
                ["simulate", "--model", "anharmonic1d", "-N", "4", "-M", "1",
                 "--dt", "0.5", "--t-end", "10", "--no-taming", "--init", "point:5",
                 "--record-every", "1", "--out-root", str(tmp_path)],
                capsys)
        assert code == EXIT_BLOWUP
        assert "blow-up" in err

    def test_model_config_file(self, tmp_path, capsys):
        doc = {"builtin": "ou_meanfield", "params": {"a": 2.0}}
        cfg_path = tmp_path / "model.json"
        cfg_path.write_text(json.dumps(doc))
        code, _, _ = run(
            ["simulate", "--config", str(cfg_path), "-N", "8", "-M", "2",
             "--dt", "0.01", "--t-end", "0.05", "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_OK


class TestExperiment:
    def test_moments_pass(self, tmp_path, capsys):
        code, out, _ = run(
            ["experiment", "--exp", "moments", "--model", "ou_meanfield",
             "-N", "64", "-M", "4", "--dt", "0.01", "--t-end", "20",
             "--init", "gauss:0,1", "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_OK
        assert "moment_bound: pass" in out
        rep_dir = tmp_path / "exp_moments_ou_meanfield"
        assert (rep_dir / "report.json").exists()
        assert (rep_dir / "moments.csv").exists()

    def test_poc_bad_q(self, tmp_path, capsys):
        code, _, err = run(
            ["experiment", "--exp", "poc", "--model", "ou_meanfield",
             "-N", "8", "-M", "2", "--dt", "0.01", "--t-end", "0.1",
             "--q", "4.0", "--n-list", "8,16", "--n-ref", "4096",
             "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_CONFIG

    def test_converge_invariant_missing_dir(self, tmp_path, capsys):
        code, _, err = run(
            ["experiment", "--exp", "converge-invariant", "--model", "ou_meanfield",
             "-N", "8", "-M", "2", "--dt", "0.01", "--t-end", "0.1",
             "--q", "2.0", "--n-list", "8,16", "--invariant-dir", str(tmp_path / "none"),
             "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_CONFIG

    def test_fail_exit_code(self, tmp_path, capsys):
        code, out, _ = run(
            ["experiment", "--exp", "invariant", "--model", "brownian",
             "-N", "64", "-M", "4", "--dt", "0.01", "--t-end", "1",
             "--init-list", "point:25;point:-25", "--out-root", str(tmp_path)],
            capsys)
        assert code == EXIT_FAIL
        assert "invariant: fail" in out


class TestWasserstein:
    def write_measure(self, path, pts):
        pts = np.asarray(pts, dtype=float)
        header = ",".join(f"x{j + 1}" for j in range(pts.shape[1]))
        np.savetxt(path, pts, delimiter=",", header=header, comments="")

    def test_known_value(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self.write_measure(a, [[0.0], [2.0]])
        self.write_measure(b, [[1.0], [3.0]])
        code, out, _ = run(["wasserstein", "--a", str(a), "--b", str(b), "--p", "2"],
                           capsys)
        assert code == EXIT_OK
        assert float(out.strip()) == pytest.approx(1.0, rel=1e-12)

    def test_nested(self, tmp_path, capsys):
        rows = np.array([[0, 0.0], [0, 1.0], [1, 5.0], [1, 6.0]])
        a = tmp_path / "ens.csv"
        np.savetxt(a, rows, delimiter=",", header="block_id,x1", comments="")
        code, out, _ = run(
            ["wasserstein", "--a", str(a), "--b", str(a), "--p", "2", "--nested"],
            capsys)
        assert code == EXIT_OK
        assert float(out.strip()) == 0.0

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(
            ["wasserstein", "--a", str(tmp_path / "no.csv"), "--b", str(tmp_path / "no.csv")],
            capsys)
        assert code == EXIT_CONFIG
