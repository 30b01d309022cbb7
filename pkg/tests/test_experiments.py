"""Canned experiment recipes at miniature scale: synthetic data generators,
the tempering reference sampler, report structure, and the dispatcher."""

import numpy as np
import pytest

from multitry import experiments as ex
from multitry.errors import ConfigValidationError, InvalidParameterError
from multitry.proposals import AnchoredRWProposal, GaussianRWProposal, MixtureRWProposal
from multitry.targets import GaussianTarget
from multitry.mathcore import SpdMatrix


class TestTargetBuilders:
    def test_bimodal_plane_shape(self):
        t = ex.bimodal_plane()
        assert t.dim == 2
        np.testing.assert_allclose(t.weights, [1 / 3, 2 / 3])

    def test_bimodal_plane_mode_masses(self):
        t = ex.bimodal_plane()
        # both components share det = 0.05, so the density gap at the two
        # centers is exactly the weight ratio
        gap = t.log_density(np.array([10.0, 10.0])) - t.log_density(np.zeros(2))
        assert gap == pytest.approx(np.log(2.0), abs=1e-9)

    def test_wishart_mixture_is_reproducible(self):
        a = ex.sparse_wishart_mixture(dim=6, dof=7.0)
        b = ex.sparse_wishart_mixture(dim=6, dof=7.0)
        assert a.dim == 6
        np.testing.assert_array_equal(a.covs[0].matrix, b.covs[0].matrix)
        np.testing.assert_array_equal(a.covs[1].matrix, b.covs[1].matrix)

    def test_kernel_builders(self):
        walks = ex.trial_walk_kernels(3)
        assert len(walks) == len(ex.TRIAL_SCALES)
        assert all(isinstance(k, GaussianRWProposal) for k in walks)
        np.testing.assert_allclose(np.diag(walks[1].cov.matrix), ex.TRIAL_SCALES[1])

        mix = ex.mixture_walk_kernel(3)
        assert isinstance(mix, MixtureRWProposal)
        np.testing.assert_allclose(mix.weights, 0.25)

        ladder = ex.anchored_scale_ladder(3)
        assert all(isinstance(k, AnchoredRWProposal) for k in ladder)
        np.testing.assert_allclose(
            [np.diag(k.cov.matrix)[0] for k in ladder], [5.1, 10.1, 15.1])


class TestLohSynthetic:
    def test_shapes_and_bounds(self):
        x, n = ex.loh_synthetic(m=25, n_low=30, n_high=60)
        assert x.shape == n.shape == (25,)
        assert np.all(n >= 30) and np.all(n <= 60)
        assert np.all(x >= 0) and np.all(x <= n)

    def test_deterministic_per_seed(self):
        a = ex.loh_synthetic(seed=9)
        b = ex.loh_synthetic(seed=9)
        c = ex.loh_synthetic(seed=10)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert not np.array_equal(a[0], c[0])

    def test_pure_binomial_limit(self):
        x, n = ex.loh_synthetic(seed=3, m=200, eta=1.0, p1=0.3)
        assert abs(np.mean(x / n) - 0.3) < 0.03

    def test_pure_overdispersed_limit(self):
        x, n = ex.loh_synthetic(seed=3, m=200, eta=0.0, p2=0.8, gamma=-6.0)
        assert abs(np.mean(x / n) - 0.8) < 0.03


class TestPtReference:
    def test_matches_target_moments(self):
        target = GaussianTarget(np.array([1.0, -1.0]), SpdMatrix.scaled_identity(2, 1.0))
        draws = ex.pt_reference_run(target, ladder=(1.0, 0.5), scales=(1.0, 2.0),
                                    iterations=6000, seed=5)
        tail = draws[1000:]
        np.testing.assert_allclose(tail.mean(axis=0), [1.0, -1.0], atol=0.15)
        np.testing.assert_allclose(tail.var(axis=0), 1.0, rtol=0.2)

    def test_deterministic(self):
        target = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        a = ex.pt_reference_run(target, (1.0,), (0.5,), 100, seed=2)
        b = ex.pt_reference_run(target, (1.0,), (0.5,), 100, seed=2)
        np.testing.assert_array_equal(a, b)

    def test_thinning_row_count(self):
        target = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        draws = ex.pt_reference_run(target, (1.0, 0.4), (0.5, 1.0), 100, seed=2, thin=10)
        assert draws.shape == (10, 1)

    def test_scale_ladder_mismatch(self):
        target = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        with pytest.raises(InvalidParameterError):
            ex.pt_reference_run(target, (1.0, 0.5), (0.5,), 10, seed=1)


class TestRecipesMiniature:
    def test_e1_report_structure(self):
        rep = ex.e1_bivariate_mtmdp(seed=21, n_seeds=2, iterations=200)
        assert rep.value("comparison", "mtm_dp_wins") in (0.0, 1.0, 2.0)
        med = rep.value("mtm_dp", "iact_x1_median")
        assert np.isfinite(med) and med >= 1.0
        assert rep.csv_lines()[0] == "method,statistic,value,replicates"
        # one row per replicate and method, two medians, one verdict
        assert len(rep.rows) == 2 * 2 + 2 + 1

    def test_e2_counts_coordinate_wins(self):
        rep = ex.e2_multivariate(seed=31, n_seeds=2, iterations=120, dim=4)
        wins = rep.value("comparison", "mtm_dp_coordinate_wins")
        assert 0 <= wins <= 4
        assert len(rep.rows) == 2 * 4 + 1

    def test_e3_occupancy_and_crossings(self):
        rep = ex.e3_imtm_bimodal(seed=41, n_chains=8, n_trials=6, iterations=50)
        for tag in ("imtm_is", "imtm_ta"):
            frac = rep.value(tag, "mode2_fraction")
            assert 0.0 <= frac <= 1.0
            assert 0 <= rep.value(tag, "crossing_chains") <= 8

    def test_e4_reports_reference_and_population(self):
        rep = ex.e4_betabinomial(seed=4503, iterations_long=40, iterations_short=10,
                                 n_chains=12, n_trials=4, pt_iterations=600)
        assert rep.value("pt_reference", "separated_modes") >= 1
        assert rep.value("imtm_long", "separated_clusters") >= 1
        assert rep.value("imtm_short", "iterations") == 10

    def test_e5_row_grid(self):
        rep = ex.e5_sv(seed=51, size=60, imtm_iterations=30, mh_iterations=300)
        stats = ("sq_error_phi", "sq_error_sigma2", "final_rmse_h")
        for setting in ("daily", "weekly"):
            for method in ("imtm_gibbs", "mh_gibbs"):
                for stat in stats:
                    v = rep.value(f"{setting}.{method}", stat)
                    assert np.isfinite(v) and v >= 0.0
        assert len(rep.rows) == 12

    def test_sv_method_errors_keys(self):
        y, h, params = ex.simulate_sv_dataset("weekly", seed=8, size=50)
        out = ex.sv_method_errors(y, h, params["phi"], params["sigma2"], seed=9,
                                  imtm_chains=4, imtm_trials=2, imtm_iterations=20,
                                  mh_iterations=200)
        assert sorted(out) == sorted(
            f"{m}_{s}" for m in ("imtm_gibbs", "mh_gibbs")
            for s in ("sq_error_phi", "sq_error_sigma2", "final_rmse_h"))


class TestReproduceDispatcher:
    def test_unknown_id_lists_valid_ones(self):
        with pytest.raises(ConfigValidationError) as err:
            ex.reproduce("e7-mystery")
        message = str(err.value)
        for eid in ex.EXPERIMENT_IDS:
            assert eid in message

    def test_e4_needs_data_or_synthetic_flag(self):
        with pytest.raises(ConfigValidationError) as err:
            ex.reproduce("e4-betabinomial")
        assert "--synthetic" in str(err.value)
