import json
import os

import numpy as np
import pytest

from mvcn_plots.cli import main
from mvcn_plots.figures import fd_bins, render
from mvcn_plots.io import (
    SchemaError,
    available_snapshot_times,
    load_gap,
    load_report,
    load_snapshot,
)


def write_snapshot(indir, t, pts, blocks=2):
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    ids = np.repeat(np.arange(blocks), n // blocks)[:n, None]
    rows = np.hstack([ids, pts])
    header = "block_id," + ",".join(f"x{j + 1}" for j in range(d))
    np.savetxt(os.path.join(indir, f"snapshot_{t:g}.csv"), rows, delimiter=",",
               header=header, comments="", fmt="%.17g")


def make_run_dir(tmp_path, times=(0.0, 1.0, 2.0), n=40, d=1, seed=0):
    rng = np.random.default_rng(seed)
    for t in times:
        write_snapshot(tmp_path, t, rng.normal(size=(n, d)))
    return tmp_path


def make_contraction_dir(tmp_path):
    t = np.linspace(0, 3, 30)
    gap = 5.0 * np.exp(-2.0 * t)
    data = np.column_stack([t, gap, np.sqrt(gap), np.sqrt(gap) * 1.1])
    np.savetxt(tmp_path / "gap.csv", data, delimiter=",",
               header="t,mean_gap_p,w_p_pooled,nested_w_p", comments="")
    doc = {
        "name": "contraction", "verdict": "pass",
        "fitted": {"gap_slope": -2.0, "fit_window_end": 3.0,
                   "theoretical_law_slope": -0.625},
        "series_files": {"gap": "gap.csv"},
    }
    (tmp_path / "report.json").write_text(json.dumps(doc))
    return tmp_path


def make_poc_dir(tmp_path):
    N = np.array([16.0, 64.0, 256.0])
    data = np.column_stack([N, 1 / N, 2 / N, N**-0.5])
    np.savetxt(tmp_path / "poc.csv", data, delimiter=",", header="poc", comments="")
    doc = {
        "name": "poc", "verdict": "pass",
        "fitted": {"strong_slope": -1.0, "theoretical_slope": -0.5},
        "series_files": {"poc": "poc.csv"},
    }
    (tmp_path / "report.json").write_text(json.dumps(doc))
    return tmp_path


class TestIO:
    def test_snapshot_roundtrip(self, tmp_path):
        pts = np.arange(8.0).reshape(4, 2)
        write_snapshot(tmp_path, 1.5, pts)
        ids, got = load_snapshot(tmp_path, 1.5)
        np.testing.assert_array_equal(got, pts)
        assert set(ids) == {0, 1}

    def test_available_times(self, tmp_path):
        make_run_dir(tmp_path, times=(0.0, 2.5, 1.0))
        assert available_snapshot_times(tmp_path) == [0.0, 1.0, 2.5]

    def test_missing_snapshot_lists_times(self, tmp_path):
        make_run_dir(tmp_path, times=(1.0, 2.0))
        with pytest.raises(SchemaError, match="available times: 1, 2"):
            load_snapshot(tmp_path, 9.0)

    def test_bad_columns(self, tmp_path):
        (tmp_path / "snapshot_1.csv").write_text("foo,bar\n0,1\n")
        with pytest.raises(SchemaError, match="foo"):
            load_snapshot(tmp_path, 1.0)

    def test_gap_schema(self, tmp_path):
        (tmp_path / "gap.csv").write_text("t,wrong\n0,1\n")
        with pytest.raises(SchemaError, match="wrong"):
            load_gap(tmp_path)

    def test_report_missing_field(self, tmp_path):
        (tmp_path / "report.json").write_text(json.dumps({"name": "x"}))
        with pytest.raises(SchemaError, match="fitted"):
            load_report(tmp_path)


class TestFdBins:
    def test_reasonable_for_gaussian(self):
        rng = np.random.default_rng(0)
        b = fd_bins(rng.normal(size=2000))
        assert 10 <= b <= 80

    def test_degenerate(self):
        assert fd_bins(np.zeros(100)) == 1


class TestFigures:
    def test_paths(self, tmp_path):
        make_run_dir(tmp_path, times=(0.0, 0.5, 1.0, 1.5))
        out = render("paths", tmp_path, tmp_path / "fig.png")
        assert os.path.getsize(out) > 0

    def test_paths_needs_two_times(self, tmp_path):
        make_run_dir(tmp_path, times=(1.0,))
        with pytest.raises(SchemaError):
            render("paths", tmp_path, tmp_path / "fig.png")

    def test_density_series(self, tmp_path):
        make_run_dir(tmp_path, times=(20.0, 21.0, 22.5, 24.0, 24.9, 25.0))
        out = render("density_series", tmp_path, tmp_path / "fig.png",
                     times=[20.0, 22.5, 25.0])
        assert os.path.getsize(out) > 0

    def test_density_series_empty_filter(self, tmp_path):
        make_run_dir(tmp_path, times=(1.0, 2.0))
        with pytest.raises(SchemaError, match="available times: 1, 2"):
            render("density_series", tmp_path, tmp_path / "fig.png", times=[9.0])

    def test_density_2d(self, tmp_path):
        make_run_dir(tmp_path, times=(10.0,), n=500, d=2)
        out = render("density_2d", tmp_path, tmp_path / "fig.png")
        assert os.path.getsize(out) > 0

    def test_density_2d_rejects_1d(self, tmp_path):
        make_run_dir(tmp_path, times=(10.0,), d=1)
        with pytest.raises(SchemaError):
            render("density_2d", tmp_path, tmp_path / "fig.png")

    def test_rate_fit(self, tmp_path):
        make_contraction_dir(tmp_path)
        out = render("rate_fit", tmp_path, tmp_path / "fig.png")
        assert os.path.getsize(out) > 0

    def test_poc_loglog(self, tmp_path):
        make_poc_dir(tmp_path)
        out = render("poc_loglog", tmp_path, tmp_path / "fig.png")
        assert os.path.getsize(out) > 0

    def test_deterministic_bytes(self, tmp_path):
        make_run_dir(tmp_path, times=(0.0, 1.0))
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render("density_series", tmp_path, a)
        render("density_series", tmp_path, b)
        assert a.read_bytes() == b.read_bytes()


class TestCli:
    def test_ok(self, tmp_path, capsys):
        make_run_dir(tmp_path, times=(0.0, 1.0, 2.0))
        code = main(["density_series", "--in", str(tmp_path),
                     "--out", str(tmp_path / "fig.png")])
        assert code == 0
        assert (tmp_path / "fig.png").exists()

    def test_empty_filter_exit_1(self, tmp_path, capsys):
        make_run_dir(tmp_path, times=(1.0,))
        code = main(["density_series", "--in", str(tmp_path),
                     "--out", str(tmp_path / "fig.png"), "--times", "7"])
        assert code == 1
        assert "available" in capsys.readouterr().err

    def test_missing_dir(self, tmp_path, capsys):
        code = main(["paths", "--in", str(tmp_path / "none"),
                     "--out", str(tmp_path / "fig.png")])
        assert code == 1
