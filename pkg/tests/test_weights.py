import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitry.errors import InvalidParameterError, StuckTrialError
from multitry.mathcore import RngStream, SpdMatrix
from multitry.proposals import AnchoredRWProposal, GaussianRWProposal, GridRWProposal, context_at
from multitry.targets import BetaBinomialPosterior, GaussianTarget, GridTarget
from multitry.weights import (
    LambdaPolicy,
    NuTracker,
    WeightDiagnostics,
    acceptance_ratio,
    acceptance_ratio_batch,
    lambda_value,
    select_trial,
    select_trial_batch,
    trial_weight,
    update_nu,
)

log_t = st.floats(min_value=-700.0, max_value=700.0, allow_nan=False)
lin_t = st.floats(min_value=1e-8, max_value=1e8, allow_nan=False)


class TestLambdaValue:
    def test_harmonic_example(self):
        assert lambda_value(LambdaPolicy.harmonic(), 0.2, 0.3) == pytest.approx(4.0, rel=1e-14)

    def test_power_product_example(self):
        assert lambda_value(LambdaPolicy.power_product(1.0), 0.5, 0.5) == pytest.approx(4.0, rel=1e-14)

    def test_population_weighted_const(self):
        assert lambda_value(LambdaPolicy.const_one(population_weighted=True), 0.9, 0.1, nu=0.25) == 0.25

    def test_const_one(self):
        assert lambda_value(LambdaPolicy.const_one(), 123.0, 1e-5) == 1.0

    def test_degenerate_zero(self):
        assert lambda_value(LambdaPolicy.harmonic(), 0.0, 0.0) == 0.0
        assert lambda_value(LambdaPolicy.power_product(), 0.0, 0.5) == 0.0

    def test_slot_coefficients(self):
        pol = LambdaPolicy.harmonic(slot_coefficients=(0.25, 0.75))
        assert lambda_value(pol, 0.2, 0.3, slot=0) == pytest.approx(1.0, rel=1e-14)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidParameterError):
            LambdaPolicy("geometric")

    @given(f=log_t, r=log_t)
    @settings(max_examples=200)
    def test_log_lambda_symmetry(self, f, r):
        for pol in (LambdaPolicy.const_one(), LambdaPolicy.harmonic(), LambdaPolicy.power_product(0.7)):
            assert pol.log_lambda(f, r) == pol.log_lambda(r, f)

    @given(tf=lin_t, tr=lin_t)
    @settings(max_examples=200)
    def test_log_matches_linear(self, tf, tr):
        for pol in (LambdaPolicy.const_one(), LambdaPolicy.harmonic(), LambdaPolicy.power_product(0.5)):
            lv = lambda_value(pol, tf, tr)
            ll = pol.log_lambda(np.log(tf), np.log(tr))
            assert np.exp(ll) == pytest.approx(lv, rel=1e-9)

    def test_degenerate_counter(self):
        diag = WeightDiagnostics()
        LambdaPolicy.harmonic().log_lambda(-np.inf, -np.inf, diag=diag)
        LambdaPolicy.power_product().log_lambda(-np.inf, 0.0, diag=diag)
        assert diag.degenerate_lambda == 2


class TestSelectTrial:
    def test_proportions(self):
        rng = RngStream(21)
        lw = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
        picks = np.array([select_trial(rng, lw) for _ in range(100_000)])
        freq = np.bincount(picks, minlength=4) / picks.size
        np.testing.assert_allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.005)

    def test_uniform_when_equal(self):
        rng = RngStream(22)
        picks = np.array([select_trial(rng, np.zeros(5)) for _ in range(50_000)])
        freq = np.bincount(picks, minlength=5) / picks.size
        np.testing.assert_allclose(freq, np.full(5, 0.2), atol=0.01)

    def test_singleton_consumes_no_randomness(self):
        rng = RngStream(23)
        assert select_trial(rng, np.array([-3.0])) == 0
        # the stream is untouched: next draw equals a fresh stream's first draw
        assert rng.random() == RngStream(23).random()

    def test_all_zero_raises(self):
        with pytest.raises(StuckTrialError):
            select_trial(RngStream(0), np.array([-np.inf, -np.inf]))

    def test_extreme_magnitudes(self):
        rng = RngStream(24)
        lw = np.array([700.0, 699.0, -700.0])
        picks = np.array([select_trial(rng, lw) for _ in range(20_000)])
        freq = np.bincount(picks, minlength=3) / picks.size
        expect = np.exp(lw - 700.0)
        expect /= expect.sum()
        np.testing.assert_allclose(freq, expect, atol=0.01)

    def test_batch_matches_scalar_law(self):
        rng = RngStream(25)
        lw = np.log(np.array([0.5, 0.25, 0.25]))
        idx, stuck = select_trial_batch(rng, np.tile(lw, (60_000, 1)))
        assert not stuck.any()
        freq = np.bincount(idx, minlength=3) / idx.size
        np.testing.assert_allclose(freq, [0.5, 0.25, 0.25], atol=0.01)

    def test_batch_stuck_mask(self):
        rng = RngStream(26)
        lw = np.array([[0.0, 0.0], [-np.inf, -np.inf]])
        idx, stuck = select_trial_batch(rng, lw)
        assert not stuck[0] and stuck[1]


class TestAcceptanceRatio:
    def test_equal_sums_accept(self):
        lw = np.log([0.2, 0.8])
        assert acceptance_ratio(lw, lw) == 1.0

    def test_half_ratio(self):
        assert acceptance_ratio(np.log([0.5]), np.log([1.0])) == pytest.approx(0.5, rel=1e-12)

    def test_degenerate_reference_accepts(self):
        diag = WeightDiagnostics()
        assert acceptance_ratio(np.log([0.5]), np.array([-np.inf]), diag) == 1.0
        assert diag.degenerate_ratios == 1

    def test_dead_forward_rejects(self):
        assert acceptance_ratio(np.array([-np.inf]), np.log([0.5])) == 0.0

    @given(
        f=st.lists(log_t, min_size=1, max_size=6),
        r=st.lists(log_t, min_size=1, max_size=6),
    )
    @settings(max_examples=200)
    def test_always_in_unit_interval(self, f, r):
        rho = acceptance_ratio(np.array(f), np.array(r))
        assert 0.0 <= rho <= 1.0

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(1)
        lf = rng.normal(size=(50, 4)) * 200
        lr = rng.normal(size=(50, 4)) * 200
        batch = acceptance_ratio_batch(lf, lr)
        for i in range(50):
            assert batch[i] == pytest.approx(acceptance_ratio(lf[i], lr[i]), rel=1e-12)

    def test_batch_degeneracies(self):
        diag = WeightDiagnostics()
        lf = np.array([[0.0], [-np.inf]])
        lr = np.array([[-np.inf], [0.0]])
        rho = acceptance_ratio_batch(lf, lr, diag)
        np.testing.assert_array_equal(rho, [1.0, 0.0])
        assert diag.degenerate_ratios == 1


class TestTrialWeight:
    def test_importance_ratio_for_anchored_kernels(self):
        # with an anchored (independence) kernel and exponent-1 product
        # lambda, the weight collapses to pi(point) / f(point)
        target = GaussianTarget(np.zeros(2), SpdMatrix.identity(2))
        kernel = AnchoredRWProposal(SpdMatrix.scaled_identity(2, 2.0))
        snap = np.array([[1.0, -1.0]])
        ctx = context_at([0.3, 0.3], snapshot=snap, anchor_index=0)
        pol = LambdaPolicy.power_product(1.0)
        rng = np.random.default_rng(2)
        for _ in range(50):
            y = rng.standard_normal(2)
            x = rng.standard_normal(2)
            w = trial_weight(target, kernel, pol, y, x, ctx)
            expect = target.log_density(y) - kernel.log_density(y, ctx)
            assert w == pytest.approx(expect, rel=1e-12)

    def test_symmetric_kernel_power_product(self):
        # symmetric kernel, exponent-1 product lambda: w = pi(y) / T(x|y)
        target = GaussianTarget(np.zeros(2), SpdMatrix.identity(2))
        kernel = GaussianRWProposal(SpdMatrix.scaled_identity(2, 0.5))
        pol = LambdaPolicy.power_product(1.0)
        rng = np.random.default_rng(3)
        for _ in range(100):
            y, x = rng.standard_normal(2), rng.standard_normal(2)
            ctx = context_at(x)
            w = trial_weight(target, kernel, pol, y, x, ctx)
            expect = target.log_density(y) - kernel.log_density(y, context_at(x))
            assert w == pytest.approx(expect, rel=1e-10)

    def test_harmonic_cancels_for_symmetric_kernel(self):
        # symmetric kernel, harmonic lambda: w = pi(y)
        target = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        kernel = GaussianRWProposal(SpdMatrix.identity(1))
        pol = LambdaPolicy.harmonic()
        y, x = np.array([0.7]), np.array([-0.2])
        w = trial_weight(target, kernel, pol, y, x, context_at(x))
        assert w == pytest.approx(target.log_density(y), rel=1e-12)

    def test_m1_reduces_to_hastings_ratio(self):
        # the ratio of two single-candidate weights must equal the classic
        # Metropolis-Hastings ratio, including for an asymmetric kernel
        grid = GridTarget([1.0, 3.0, 2.0, 5.0, 1.0])
        kernel = GridRWProposal(grid, sigma=1.5)
        pol = LambdaPolicy.harmonic()
        rng = np.random.default_rng(4)
        for _ in range(100):
            i, j = rng.integers(0, 5, size=2)
            x = np.array([float(i)])
            y = np.array([float(j)])
            ctx = context_at(x)
            w_fwd = trial_weight(grid, kernel, pol, y, x, ctx)
            w_ref = trial_weight(grid, kernel, pol, x, y, ctx)
            rho = acceptance_ratio(np.array([w_fwd]), np.array([w_ref]))
            direct = min(
                1.0,
                np.exp(
                    grid.log_density(y)
                    + kernel.log_density(x, context_at(y))
                    - grid.log_density(x)
                    - kernel.log_density(y, context_at(x))
                ),
            )
            assert rho == pytest.approx(direct, rel=1e-10)

    def test_off_support_point_is_zero_weight(self):
        post = BetaBinomialPosterior([3], [10])
        kernel = GaussianRWProposal(SpdMatrix.scaled_identity(4, 0.1))
        theta = np.array([0.5, 0.5, 0.5, 0.0])
        bad = np.array([0.5, 1.4, 0.5, 0.0])
        w = trial_weight(post, kernel, LambdaPolicy.const_one(), bad, theta, context_at(theta))
        assert w == -np.inf

    def test_population_weighted_requires_nu(self):
        target = GaussianTarget(np.zeros(1), SpdMatrix.identity(1))
        kernel = GaussianRWProposal(SpdMatrix.identity(1))
        pol = LambdaPolicy.harmonic(population_weighted=True)
        with pytest.raises(InvalidParameterError):
            trial_weight(target, kernel, pol, np.ones(1), np.zeros(1), context_at(np.zeros(1)))
        w = trial_weight(target, kernel, pol, np.ones(1), np.zeros(1), context_at(np.zeros(1)), nu_j=0.5)
        assert np.isfinite(w)


class TestNuTracker:
    def test_initial_uniform(self):
        t = NuTracker(4)
        np.testing.assert_allclose(t.nu, np.full(4, 0.25))

    def test_update_example(self):
        t = NuTracker(4)
        nu = update_nu(t, np.array([0, 1, 0, 2]))
        np.testing.assert_allclose(nu, [0.5, 0.25, 0.25, 0.0])
        assert nu.sum() == pytest.approx(1.0)

    def test_always_normalized(self):
        t = NuTracker(6)
        rng = np.random.default_rng(5)
        for _ in range(20):
            sel = rng.integers(0, 6, size=17)
            assert update_nu(t, sel).sum() == pytest.approx(1.0, rel=1e-12)

    def test_bad_index_rejected(self):
        t = NuTracker(3)
        with pytest.raises(InvalidParameterError):
            t.update(np.array([0, 3]))
