import numpy as np
import pytest
from scipy import stats

from multitry.errors import DimensionMismatchError, InvalidParameterError
from multitry.mathcore import RngStream, SpdMatrix
from multitry.targets import (
    BetaBinomialPosterior,
    GaussianMixtureTarget,
    GaussianTarget,
    GridTarget,
    SVModel,
    TemperedTarget,
    grid_normalize,
    gradient_fd,
    inverse_gamma_sample,
    load_count_pairs_csv,
    load_series_csv,
    sv_beta2_params,
    sv_full_conditionals,
    sv_h_site_log_density,
    sv_phi_log_density,
    sv_sigma2_params,
    sv_simulate,
)


def two_mode_mixture():
    return GaussianMixtureTarget(
        weights=[1.0 / 3.0, 2.0 / 3.0],
        means=[[0.0, 0.0], [10.0, 10.0]],
        covs=[np.diag([0.1, 0.5]), np.diag([0.5, 0.1])],
    )


class TestGaussianMixture:
    def test_matches_scipy_oracle(self):
        mix = two_mode_mixture()
        rv1 = stats.multivariate_normal([0, 0], np.diag([0.1, 0.5]))
        rv2 = stats.multivariate_normal([10, 10], np.diag([0.5, 0.1]))
        pts = np.random.default_rng(0).uniform(-3, 13, size=(50, 2))
        expect = np.log(rv1.pdf(pts) / 3.0 + 2.0 * rv2.pdf(pts) / 3.0)
        np.testing.assert_allclose(mix.log_density_batch(pts), expect, rtol=1e-10)

    def test_single_component_reduces_to_gaussian(self):
        cov = np.array([[1.0, 0.3], [0.3, 2.0]])
        mix = GaussianMixtureTarget([1.0], [[1.0, -1.0]], [cov])
        single = GaussianTarget([1.0, -1.0], cov)
        for p in np.random.default_rng(1).standard_normal((20, 2)):
            assert mix.log_density(p) == pytest.approx(single.log_density(p), rel=1e-12)

    def test_mean(self):
        np.testing.assert_allclose(two_mode_mixture().mean(), [20.0 / 3.0, 20.0 / 3.0], rtol=1e-12)

    def test_exact_sampler_moments(self):
        mix = two_mode_mixture()
        draws = mix.sample(RngStream(17), 1_000_000)
        np.testing.assert_allclose(draws.mean(axis=0), mix.mean(), atol=0.02)
        # component occupancy of the exact sampler
        near_second = np.linalg.norm(draws - np.array([10.0, 10.0]), axis=1) < 5.0
        assert abs(near_second.mean() - 2.0 / 3.0) < 0.002

    def test_gradient_matches_finite_differences(self):
        mix = two_mode_mixture()
        rng = np.random.default_rng(2)
        for _ in range(30):
            x = rng.uniform(-2, 12, size=2)
            np.testing.assert_allclose(mix.gradient(x), gradient_fd(mix, x), rtol=1e-4, atol=1e-6)

    def test_invalid_weights(self):
        with pytest.raises(InvalidParameterError):
            GaussianMixtureTarget([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])


class TestTempered:
    def test_exponent_one_is_identity(self):
        base = GaussianTarget(np.zeros(2), SpdMatrix.identity(2))
        t = TemperedTarget(base, 1.0)
        x = np.array([0.3, -1.2])
        assert t.log_density(x) == base.log_density(x)

    def test_scales_log_density(self):
        base = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        t = TemperedTarget(base, 0.25)
        x = np.array([2.0])
        assert t.log_density(x) == pytest.approx(0.25 * base.log_density(x), rel=1e-14)

    def test_gradient_scaled(self):
        base = GaussianTarget(np.zeros(2), SpdMatrix.identity(2))
        t = TemperedTarget(base, 0.5)
        np.testing.assert_allclose(t.gradient(np.ones(2)), 0.5 * base.gradient(np.ones(2)))

    def test_bad_exponent(self):
        base = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        with pytest.raises(InvalidParameterError):
            TemperedTarget(base, 0.0)
        with pytest.raises(InvalidParameterError):
            TemperedTarget(base, 1.5)


class TestGrid:
    def test_normalize(self):
        np.testing.assert_allclose(grid_normalize([1.0, 3.0]), [0.25, 0.75])
        with pytest.raises(InvalidParameterError):
            grid_normalize([1.0, 0.0])

    def test_probabilities_and_density(self):
        g = GridTarget([1.0, 3.0])
        np.testing.assert_allclose(g.probabilities(), [0.25, 0.75])
        assert g.log_density(np.array([0.0])) == pytest.approx(np.log(0.25))
        assert g.log_density(np.array([1.0])) == pytest.approx(np.log(0.75))
        assert g.log_density(np.array([0.5])) == -np.inf
        assert g.in_support(np.array([1.0]))
        assert not g.in_support(np.array([1.5]))

    def test_state_index_tolerance(self):
        g = GridTarget([1.0, 1.0, 2.0])
        assert g.state_index(np.array([2.0 + 5e-10])) == 2
        assert g.state_index(np.array([2.0 + 1e-6])) == -1

    def test_sample_index_frequencies(self):
        g = GridTarget([1.0, 3.0, 2.0, 5.0, 1.0])
        idx = g.sample_index(RngStream(4), size=200_000)
        freq = np.bincount(idx, minlength=5) / idx.size
        np.testing.assert_allclose(freq, g.probabilities(), atol=0.005)


class TestBetaBinomialPosterior:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.n = rng.integers(20, 101, size=12)
        self.x = rng.binomial(self.n, 0.3)
        self.post = BetaBinomialPosterior(self.x, self.n)

    def test_matches_scipy_mixture_oracle(self):
        # independent computation via scipy's binom + betabinom log-pmfs
        for theta in [(0.9, 0.2, 0.8, 0.0), (0.4, 0.55, 0.3, 1.5), (0.0, 0.5, 0.7, -2.0), (1.0, 0.35, 0.5, 3.0)]:
            eta, p1, p2, gam = theta
            omega = 0.5 / (1.0 + np.exp(-gam))
            a, b = p2 / omega, (1.0 - p2) / omega
            lb = stats.binom.logpmf(self.x, self.n, p1)
            lbb = stats.betabinom.logpmf(self.x, self.n, a, b)
            with np.errstate(divide="ignore"):
                expect = np.logaddexp(np.log(eta) + lb, np.log(1 - eta) + lbb).sum()
            np.testing.assert_allclose(self.post.log_density(np.array(theta)), expect, rtol=1e-9)

    def test_single_observation_half(self):
        post = BetaBinomialPosterior([0], [1])
        val = post.log_density(np.array([1.0, 0.5, 0.5, 0.0]))
        assert val == pytest.approx(np.log(0.5), rel=1e-12)

    def test_pure_binomial_when_eta_one(self):
        theta = np.array([1.0, 0.25, 0.9, 2.0])
        expect = stats.binom.logpmf(self.x, self.n, 0.25).sum()
        np.testing.assert_allclose(self.post.log_density(theta), expect, rtol=1e-10)

    def test_out_of_box_is_zero_density(self):
        assert self.post.log_density(np.array([0.5, 0.5, 1.2, 0.0])) == -np.inf
        assert self.post.log_density(np.array([0.5, 0.5, 0.5, 31.0])) == -np.inf
        assert self.post.log_density(np.array([-0.1, 0.5, 0.5, 0.0])) == -np.inf

    def test_corner_values_finite_or_neg_inf(self):
        # p2 at the box corners must degrade gracefully, not NaN
        v0 = self.post.log_density(np.array([0.5, 0.5, 0.0, 0.0]))
        v1 = self.post.log_density(np.array([0.5, 0.5, 1.0, 0.0]))
        assert not np.isnan(v0) and not np.isnan(v1)

    def test_component_swap_when_overdispersion_vanishes(self):
        # as gamma -> -30 the second component collapses to a binomial, so at
        # eta = 1/2 swapping (p1, p2) must leave the posterior unchanged
        a = self.post.log_density(np.array([0.5, 0.3, 0.7, -30.0]))
        b = self.post.log_density(np.array([0.5, 0.7, 0.3, -30.0]))
        assert a == pytest.approx(b, abs=1e-6)

    def test_bad_data_rejected(self):
        with pytest.raises(InvalidParameterError):
            BetaBinomialPosterior([5], [4])
        with pytest.raises(DimensionMismatchError):
            BetaBinomialPosterior([1, 2], [3])

    def test_support_box(self):
        lo, hi = self.post.support_box()
        np.testing.assert_array_equal(lo, [0, 0, 0, -30])
        np.testing.assert_array_equal(hi, [1, 1, 1, 30])


def make_sv_model(seed=0, size=50, beta2=1.0, phi=0.9, sigma2=0.1):
    rng = RngStream(seed)
    y, h = sv_simulate(rng, np.log(beta2), phi, sigma2, size)
    return SVModel(y=y, beta2=beta2, phi=phi, sigma2=sigma2, h=h)


class TestSVModel:
    def test_simulate_moments(self):
        rng = RngStream(8)
        y, h = sv_simulate(rng, 0.0, 0.9, 0.1, 50_000)
        assert h.var() == pytest.approx(0.1 / (1 - 0.81), rel=0.1)
        assert np.corrcoef(h[1:], h[:-1])[0, 1] == pytest.approx(0.9, abs=0.02)
        # y_t standardized by exp(h/2) should be standard normal
        z = y / np.exp(h / 2)
        assert z.var() == pytest.approx(1.0, rel=0.05)

    def test_inverse_gamma_mean(self):
        rng = RngStream(9)
        draws = np.array([inverse_gamma_sample(rng, 3.0, 2.0) for _ in range(100_000)])
        assert draws.mean() == pytest.approx(1.0, rel=0.01)

    def test_sigma2_conditional_example(self):
        # phi=0, h=(1,1,1): shape (T-1)/2 = 1, scale = (1+1)/2 + 1 = 2
        m = SVModel(y=np.ones(3), beta2=1.0, phi=0.0, sigma2=1.0, h=np.ones(3))
        shape, scale = sv_sigma2_params(m)
        assert shape == pytest.approx(1.0)
        assert scale == pytest.approx(2.0)

    def test_beta2_conditional_scale(self):
        m = SVModel(y=np.array([1.0, 2.0, 3.0]), beta2=1.0, phi=0.5, sigma2=1.0, h=np.zeros(3))
        shape, scale = sv_beta2_params(m)
        assert shape == pytest.approx(1.0)
        assert scale == pytest.approx((1 + 4 + 9) / 2.0)

    def test_phi_conditional_matches_joint(self):
        # the phi slice must equal the log joint as a function of phi up to an
        # additive constant (checks the boundary-term cancellation)
        m = make_sv_model(seed=3, size=40)
        h, s2 = m.h, m.sigma2

        def log_joint(phi):
            out = 0.5 * np.log1p(-phi * phi) - h[0] ** 2 * (1 - phi * phi) / (2 * s2)
            resid = h[1:] - phi * h[:-1]
            return out - np.dot(resid, resid) / (2 * s2)

        grid = np.linspace(-0.95, 0.95, 41)
        ours = sv_phi_log_density(grid, h, s2)
        joint = np.array([log_joint(p) for p in grid])
        diff = ours - joint
        np.testing.assert_allclose(diff, diff[0], atol=1e-9)

    def test_phi_conditional_boundary(self):
        m = make_sv_model()
        assert sv_phi_log_density(1.0, m.h, m.sigma2) == -np.inf
        assert sv_phi_log_density(-1.0, m.h, m.sigma2) == -np.inf

    def test_h_site_matches_joint(self):
        m = make_sv_model(seed=4, size=30)
        y, h, phi, s2, b2 = m.y, m.h.copy(), m.phi, m.sigma2, 1.7
        T = m.size

        def log_joint(hvec):
            out = -hvec[0] ** 2 * (1 - phi * phi) / (2 * s2)
            resid = hvec[1:] - phi * hvec[:-1]
            out -= np.dot(resid, resid) / (2 * s2)
            out += np.sum(-hvec / 2.0 - y * y * np.exp(-hvec) / (2 * b2))
            return out

        for t in [1, 2, 15, T]:
            i = t - 1
            vals = h[i] + np.linspace(-1.5, 1.5, 11)
            ours = sv_h_site_log_density(
                vals,
                y_t=y[i],
                sigma2=s2,
                beta2=b2,
                phi=phi,
                h_prev=None if i == 0 else h[i - 1],
                h_next=None if i == T - 1 else h[i + 1],
            )
            joint = []
            for v in vals:
                hv = h.copy()
                hv[i] = v
                joint.append(log_joint(hv))
            diff = ours - np.array(joint)
            np.testing.assert_allclose(diff, diff[0], atol=1e-8)

    def test_h_site_drift_form(self):
        # interior site with a drift level: transition means shift by the
        # drift and the likelihood drops the beta2 divisor
        drift, phi, s2 = 0.4, 0.8, 0.2
        y_t, h_prev, h_next = 1.3, 0.5, 0.1
        vals = np.linspace(-1, 1, 7)
        ours = sv_h_site_log_density(
            vals, y_t=y_t, sigma2=s2, beta2=123.0, phi=phi, h_prev=h_prev, h_next=h_next, drift=drift
        )
        expect = (
            -((vals - drift - phi * h_prev) ** 2) / (2 * s2)
            - ((h_next - drift - phi * vals) ** 2) / (2 * s2)
            - vals / 2.0
            - y_t * y_t * np.exp(-vals) / 2.0
        )
        np.testing.assert_allclose(ours, expect, rtol=1e-12)

    def test_full_conditionals_bundle(self):
        m = make_sv_model(seed=5)
        cond = sv_full_conditionals(m, RngStream(6))
        assert cond.beta2 > 0 and cond.sigma2 > 0
        assert np.isfinite(cond.phi_log_density(0.5))
        assert cond.phi_log_density(1.5) == -np.inf
        assert np.isfinite(cond.h_log_density(1, 0.0))
        assert np.isfinite(cond.h_log_density(m.size, 0.0))
        with pytest.raises(InvalidParameterError):
            cond.h_log_density(0, 0.0)

    def test_model_validation(self):
        with pytest.raises(InvalidParameterError):
            SVModel(y=np.ones(5), beta2=1.0, phi=1.2, sigma2=0.1, h=np.ones(5))
        with pytest.raises(DimensionMismatchError):
            SVModel(y=np.ones(5), beta2=1.0, phi=0.5, sigma2=0.1, h=np.ones(4))


class TestCsv(object):
    def test_count_pairs_round_trip(self, tmp_path):
        p = tmp_path / "loh.csv"
        p.write_text("x,n\n3,10\n0,5\n7,7\n", encoding="utf-8")
        x, n = load_count_pairs_csv(p)
        np.testing.assert_array_equal(x, [3, 0, 7])
        np.testing.assert_array_equal(n, [10, 5, 7])

    def test_count_pairs_header_required(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(InvalidParameterError, match="header"):
            load_count_pairs_csv(p)

    def test_count_pairs_bad_row_numbered(self, tmp_path):
        p = tmp_path / "bad2.csv"
        p.write_text("x,n\n1,2\nfoo,3\n", encoding="utf-8")
        with pytest.raises(InvalidParameterError, match="row 3"):
            load_count_pairs_csv(p)

    def test_count_pairs_violates_bound(self, tmp_path):
        p = tmp_path / "bad3.csv"
        p.write_text("x,n\n5,4\n", encoding="utf-8")
        with pytest.raises(InvalidParameterError, match="0 <= x <= n"):
            load_count_pairs_csv(p)

    def test_series_sorted_by_t(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("t,y\n2,0.5\n1,-0.25\n3,1.5\n", encoding="utf-8")
        np.testing.assert_allclose(load_series_csv(p), [-0.25, 0.5, 1.5])

    def test_series_header_required(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,value\n1,2\n", encoding="utf-8")
        with pytest.raises(InvalidParameterError, match="header"):
            load_series_csv(p)
