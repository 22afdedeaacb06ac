import json

import numpy as np
import pytest

from mvcn.model import anharmonic1d, brownian, ou_meanfield
from mvcn.experiments import (
    FAIL,
    INCONCLUSIVE,
    PASS,
    ExperimentReport,
    _ls_slope,
    bootstrap_floor,
    eps_theory,
    fit_decay_slope,
    nested_bootstrap_floor,
    run_contraction,
    run_convergence_to_invariant,
    run_invariant,
    run_moment_bound,
    run_poc,
    run_semigroup,
)
from mvcn.simulate import SimConfig


def cfg(**kw):
    base = dict(dt=0.01, t_end=2.0, particles=64, blocks=8, seed=7,
                initial_law="gauss:0,1")
    base.update(kw)
    return SimConfig(**base)


class TestSlopeFits:
    def test_ls_slope_exact_line(self):
        x = np.arange(10.0)
        slope, se = _ls_slope(x, 3.0 - 2.0 * x)
        assert slope == pytest.approx(-2.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-9)

    def test_fit_decay_recovers_rate(self):
        t = np.linspace(0, 5, 100)
        y = 4.0 * np.exp(-1.7 * t)
        slope, se, t_end = fit_decay_slope(t, y)
        assert slope == pytest.approx(-1.7, rel=1e-9)

    def test_fit_stops_at_floor(self):
        t = np.linspace(0, 10, 200)
        y = np.exp(-2.0 * t) + 1e-6  # flattens at the floor
        slope, _, t_end = fit_decay_slope(t, y, baseline=1e-6)
        assert t_end < 8.0
        assert slope == pytest.approx(-2.0, rel=0.15)

    def test_time_rescaling(self):
        """Relabeling t -> t/c scales the fitted slope by c."""
        t = np.linspace(0, 4, 80)
        y = np.exp(-1.0 * t)
        s1, _, _ = fit_decay_slope(t, y)
        s2, _, _ = fit_decay_slope(t / 2.0, y)
        assert s2 == pytest.approx(2.0 * s1, rel=1e-9)

    def test_too_few_points(self):
        slope, se, _ = fit_decay_slope(np.array([0.0, 1.0]), np.array([1.0, 0.5]))
        assert np.isnan(slope)


class TestEpsTheory:
    CASES = [
        # (d, p, q, N, expected)
        (1, 5.0, 2.0, 64, 64**-0.5 + 64 ** (-3 / 5)),          # q > d/2
        (1, 4.0, 3.0, 100, 100**-0.5 + 100 ** (-1 / 4)),       # q > d/2
        (2, 5.0, 2.0, 64, 64**-0.5 + 64 ** (-3 / 5)),          # q > d/2 (= 1)... q=2 > 1
        (4, 5.0, 2.0, 64, 64**-0.5 * np.log1p(64) + 64 ** (-3 / 5)),  # q = d/2
        (6, 4.0, 2.0, 32, 32 ** (-1 / 3) + 32 ** (-1 / 2)),    # q < d/2
        (8, 3.0, 2.0, 128, 128 ** (-1 / 4) + 128 ** (-1 / 3)),  # q < d/2
    ]

    @pytest.mark.parametrize("d,p,q,N,expected", CASES)
    def test_values(self, d, p, q, N, expected):
        assert eps_theory(N, d, p, q) == pytest.approx(expected, rel=1e-12)

    def test_vectorized(self):
        out = eps_theory([16, 64], 1, 5.0, 2.0)
        assert out.shape == (2,) and out[1] < out[0]

    def test_excluded_p_raises(self):
        with pytest.raises(ValueError):
            eps_theory(10, 1, 4.0, 2.0)  # p = 2q, q > d/2
        with pytest.raises(ValueError):
            eps_theory(10, 4, 4.0, 2.0)  # p = 2q, q = d/2
        with pytest.raises(ValueError):
            eps_theory(10, 6, 1.5, 2.0)  # p = d/(d-q), q < d/2

    def test_monotone_decreasing_all_branches(self):
        Ns = np.array([8, 32, 128, 512])
        for d, p, q in [(1, 5, 2), (4, 5, 2), (6, 4, 2)]:
            e = eps_theory(Ns, d, p, q)
            assert np.all(np.diff(e) < 0)


class TestBootstrapFloor:
    def test_positive_and_shrinks_with_n(self):
        rng = np.random.default_rng(0)
        small = bootstrap_floor(rng.normal(size=(100, 1)), 2.0)
        large = bootstrap_floor(rng.normal(size=(10_000, 1)), 2.0)
        assert 0 < large < small

    def test_nested_needs_blocks(self):
        rng = np.random.default_rng(1)
        assert np.isnan(nested_bootstrap_floor(rng.normal(size=(2, 50, 1)), 2.0))
        v = nested_bootstrap_floor(rng.normal(size=(8, 50, 1)), 2.0)
        assert v > 0


class TestMomentBound:
    def test_ou_passes(self):
        rep = run_moment_bound(ou_meanfield(), cfg(t_end=20.0))
        assert rep.verdict == PASS, rep.fitted

    def test_blowup_fails(self):
        rep = run_moment_bound(
            anharmonic1d(),
            cfg(dt=0.5, t_end=10.0, taming=False, initial_law="point:5",
                record_every=1),
        )
        assert rep.verdict == FAIL


class TestContraction:
    def test_anharmonic_contracts(self):
        rep = run_contraction(anharmonic1d(), cfg(t_end=4.0), "point:2", "point:-2")
        assert rep.verdict == PASS, rep.fitted
        assert rep.fitted["gap_slope"] <= 0.75 * rep.fitted["theoretical_gap_slope"]

    def test_equal_starts_vacuous_pass(self):
        rep = run_contraction(anharmonic1d(), cfg(), "gauss:0,1", "gauss:0,1")
        assert rep.verdict == PASS
        assert any("identically zero" in n for n in rep.notes)

    def test_brownian_inconclusive_or_fail(self):
        """Frozen gap under synchronous coupling: no contraction evidence."""
        rep = run_contraction(brownian(), cfg(t_end=2.0), "point:1", "point:0")
        assert rep.verdict in (FAIL, INCONCLUSIVE)


class TestInvariant:
    def test_ou_invariant(self, tmp_path):
        rep = run_invariant(
            ou_meanfield(),
            cfg(t_end=8.0, particles=256, blocks=16, dt=0.01),
            ["point:2", "gauss:0,1"],
            outdir=tmp_path,
        )
        assert rep.verdict == PASS, rep.fitted
        assert (tmp_path / "invariant_sample.csv").exists()
        assert (tmp_path / "invariant_blocks.csv").exists()

    def test_needs_two_laws(self):
        with pytest.raises(ValueError):
            run_invariant(ou_meanfield(), cfg(), ["point:0"])

    def test_brownian_fails_uniqueness(self, tmp_path):
        """No invariant measure: runs from distant starts stay far apart."""
        rep = run_invariant(brownian(), cfg(t_end=2.0, particles=128),
                            ["point:25", "point:-25"])
        assert rep.verdict == FAIL


class TestSemigroup:
    def test_ou_semigroup(self):
        rep = run_semigroup(ou_meanfield(), cfg(particles=256, blocks=16), s=1.0, t=2.0)
        assert rep.verdict == PASS, rep.fitted

    def test_bad_times(self):
        with pytest.raises(ValueError):
            run_semigroup(ou_meanfield(), cfg(), s=2.0, t=1.0)


class TestPoc:
    def test_q_validation(self):
        with pytest.raises(ValueError):
            run_poc(ou_meanfield(), cfg(), q=4.0, N_list=[8, 16], N_ref=4096)
        with pytest.raises(ValueError):
            run_poc(ou_meanfield(), cfg(), q=1.0, N_list=[8, 16], N_ref=4096)

    def test_nref_validation(self):
        with pytest.raises(ValueError):
            run_poc(ou_meanfield(), cfg(), q=2.0, N_list=[8, 600], N_ref=4096)

    def test_brownian_zero_error(self):
        """Measure-free dynamics: the N-system is a restriction of the
        reference, so the strong error is identically zero."""
        import dataclasses

        m = brownian()
        m = dataclasses.replace(m, constants=m.constants.replace_p(5.0))
        rep = run_poc(m, cfg(t_end=0.3, blocks=2, record_every=10), q=2.0,
                      N_list=[8, 16], N_ref=4096)
        assert rep.verdict == PASS
        assert any("identically zero" in n for n in rep.notes)

    def test_ou_small_sweep(self):
        rep = run_poc(ou_meanfield(p=5.0), cfg(t_end=1.0, blocks=4, record_every=20),
                      q=2.0, N_list=[8, 32, 128, 512], N_ref=4096)
        assert rep.verdict == PASS, rep.fitted


class TestConvergeInvariant:
    def test_requires_stored_estimate(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            run_convergence_to_invariant(ou_meanfield(), cfg(), 2.0, [16, 64], tmp_path)

    def test_ou_converges(self, tmp_path):
        m = ou_meanfield()
        run_invariant(m, cfg(t_end=8.0, particles=512, blocks=16, dt=0.01),
                      ["point:2", "gauss:0,1"], outdir=tmp_path)
        rep = run_convergence_to_invariant(
            m, cfg(t_end=8.0, blocks=16, dt=0.01), 2.0, [16, 64, 256], tmp_path)
        assert rep.verdict == PASS, rep.fitted


class TestReportIO:
    def test_verdict_reproducible_from_csv(self, tmp_path):
        """report.json + series CSVs round-trip: the recorded series alone
        re-produce the fitted slope and hence the verdict."""
        rep = run_contraction(anharmonic1d(), cfg(t_end=4.0), "point:2", "point:-2")
        rep.write(tmp_path)
        with open(tmp_path / "report.json") as fh:
            doc = json.load(fh)
        data = np.loadtxt(tmp_path / doc["series_files"]["gap"], delimiter=",",
                          skiprows=1)
        slope, _, _ = fit_decay_slope(data[:, 0], data[:, 1])
        assert slope == pytest.approx(doc["fitted"]["gap_slope"], rel=1e-12)
        theo = doc["fitted"]["theoretical_gap_slope"]
        assert (slope <= doc["tolerances"]["rate_fraction"] * theo) == (
            doc["verdict"] == PASS)
