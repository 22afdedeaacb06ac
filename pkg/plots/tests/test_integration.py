"""End-to-end check: render figures from real simulator output files.

Requires the ``mvcn`` CLI on PATH; the plots package itself never imports it.
"""

import shutil
import subprocess

import pytest

pytestmark = pytest.mark.skipif(shutil.which("mvcn") is None, reason="mvcn CLI not installed")


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("mvcn_out")
    cmd = [
        "mvcn", "simulate", "--model", "anharmonic1d",
        "-N", "150", "-M", "8", "--dt", "0.01", "--t-end", "25",
        "--seed", "1", "--init", "gauss:10,1",
        "--snapshot-times", "20,21,22.5,24,24.9,25",
        "--out-root", str(root), "--out", "run1",
    ]
    res = subprocess.run(cmd, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return root / "run1"


@pytest.mark.parametrize(
    "kind,extra",
    [
        ("density_series", ["--times", "20", "22.5", "25"]),
        ("paths", []),
    ],
)
def test_render_from_simulation(run_dir, tmp_path, kind, extra):
    out = tmp_path / f"{kind}.png"
    res = subprocess.run(
        ["plot", kind, "--in", str(run_dir), "--out", str(out)] + extra,
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert out.stat().st_size > 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
