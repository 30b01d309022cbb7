"""Canned experiment recipes: target builders, synthetic data generators, a
parallel-tempering reference sampler, and the five named comparison studies
the CLI can reproduce.

Every recipe takes an explicit seed, pushes all randomness through
``RngStream``, and reports through ``ComparisonReport`` so artifacts are
byte-stable across reruns.
"""

from __future__ import annotations

import numpy as np

from .diagnostics import (
    ComparisonReport,
    cumulative_rmse,
    mode_occupancy,
    separated_clusters,
)
from .errors import ConfigValidationError, InvalidParameterError
from .mathcore import RngStream, SpdMatrix, iact, wishart_sample
from .proposals import AnchoredRWProposal, GaussianRWProposal, MixtureRWProposal
from .samplers import STRATEGY_RANDOM, SamplerConfig, run, sv_imtm_gibbs, sv_mh_gibbs
from .targets import BetaBinomialPosterior, GaussianMixtureTarget, sv_simulate
from .weights import LambdaPolicy

EXPERIMENT_IDS = (
    "e1-bivariate-mtmdp",
    "e2-multivariate",
    "e3-imtm-bimodal",
    "e4-betabinomial",
    "e5-sv",
)

TRIAL_SCALES = (0.1, 5.0, 50.0, 100.0)

_MODE_A = np.zeros(2)
_MODE_B = np.array([10.0, 10.0])
_COV_A = np.diag([0.1, 0.5])
_COV_B = np.diag([0.5, 0.1])


def bimodal_plane() -> GaussianMixtureTarget:
    """Two well-separated planar modes with weights 1/3 and 2/3."""
    return GaussianMixtureTarget(
        [1.0 / 3.0, 2.0 / 3.0], [_MODE_A, _MODE_B],
        [SpdMatrix(_COV_A), SpdMatrix(_COV_B)],
    )


def sparse_wishart_mixture(dim=20, dof=21.0, seed=77) -> GaussianMixtureTarget:
    """High-dimensional two-component mixture whose covariances are Wishart
    draws, giving an unstructured but reproducible correlation pattern."""
    rng = RngStream(seed, 0)
    covs = [wishart_sample(rng, dof, np.eye(dim)) for _ in range(2)]
    means = [3.0 * np.ones(dim), 10.0 * np.ones(dim)]
    return GaussianMixtureTarget([1.0 / 3.0, 2.0 / 3.0], means, covs)


def trial_walk_kernels(dim, scales=TRIAL_SCALES):
    return [GaussianRWProposal(SpdMatrix.scaled_identity(dim, s)) for s in scales]


def mixture_walk_kernel(dim, scales=TRIAL_SCALES):
    covs = [SpdMatrix.scaled_identity(dim, s) for s in scales]
    return MixtureRWProposal([1.0 / len(scales)] * len(scales), covs)


def anchored_scale_ladder(count, dim=2):
    """Anchored kernels with covariances (0.1 + 5j) * I for j = 1..count."""
    return [AnchoredRWProposal(SpdMatrix.scaled_identity(dim, 0.1 + 5.0 * j))
            for j in range(1, count + 1)]


def _mode_labels(positions):
    d_b = np.linalg.norm(positions - _MODE_B, axis=-1)
    d_a = np.linalg.norm(positions - _MODE_A, axis=-1)
    return d_b < d_a


def _per_chain_iact(trace, coord=0):
    return np.array([iact(trace.positions[:, i, coord])
                     for i in range(trace.n_chains)])


def e1_bivariate_mtmdp(seed=4201, n_seeds=10, iterations=20_000):
    """Per-slot trial kernels against one mixture kernel on the planar
    bimodal target: compares first-coordinate autocorrelation times over
    independent replicate chains."""
    target = bimodal_plane()
    multi = SamplerConfig("mtm_dp", n_seeds, len(TRIAL_SCALES), LambdaPolicy.harmonic(),
                          trial_walk_kernels(2), iterations, seed)
    mixed = SamplerConfig("mtm", n_seeds, len(TRIAL_SCALES), LambdaPolicy.harmonic(),
                          [mixture_walk_kernel(2)], iterations, seed + 1)
    iact_multi = _per_chain_iact(run(multi, target))
    iact_mixed = _per_chain_iact(run(mixed, target))

    report = ComparisonReport(seeds=tuple(range(seed, seed + n_seeds)))
    for k in range(n_seeds):
        report.add("mtm_dp", f"iact_x1_rep{k}", iact_multi[k], 1)
        report.add("mtm_mixture", f"iact_x1_rep{k}", iact_mixed[k], 1)
    report.add("mtm_dp", "iact_x1_median", float(np.median(iact_multi)), n_seeds)
    report.add("mtm_mixture", "iact_x1_median", float(np.median(iact_mixed)), n_seeds)
    report.add("comparison", "mtm_dp_wins", int(np.sum(iact_multi < iact_mixed)), n_seeds)
    return report


def e2_multivariate(seed=4301, n_seeds=5, iterations=20_000, dim=20):
    """Same comparison in high dimension; the verdict counts coordinates on
    which the per-slot variant has the lower median autocorrelation time."""
    target = sparse_wishart_mixture(dim=dim)
    multi = SamplerConfig("mtm_dp", n_seeds, len(TRIAL_SCALES), LambdaPolicy.harmonic(),
                          trial_walk_kernels(dim), iterations, seed)
    mixed = SamplerConfig("mtm", n_seeds, len(TRIAL_SCALES), LambdaPolicy.harmonic(),
                          [mixture_walk_kernel(dim)], iterations, seed + 1)
    trace_multi = run(multi, target)
    trace_mixed = run(mixed, target)

    report = ComparisonReport(seeds=tuple(range(seed, seed + n_seeds)))
    wins = 0
    for d in range(dim):
        med_multi = float(np.median(_per_chain_iact(trace_multi, coord=d)))
        med_mixed = float(np.median(_per_chain_iact(trace_mixed, coord=d)))
        report.add("mtm_dp", f"iact_median_x{d + 1}", med_multi, n_seeds)
        report.add("mtm_mixture", f"iact_median_x{d + 1}", med_mixed, n_seeds)
        wins += med_multi < med_mixed
    report.add("comparison", "mtm_dp_coordinate_wins", wins, n_seeds)
    return report


def e3_imtm_bimodal(seed=4401, n_chains=50, n_trials=50, iterations=1000):
    """Interacting population on the planar bimodal target under both weight
    policies: importance-sampling-like and trial-averaged."""
    target = bimodal_plane()
    kernels = anchored_scale_ladder(n_trials)
    report = ComparisonReport(seeds=(seed,))
    for tag, policy in (("imtm_is", LambdaPolicy.power_product(1.0)),
                        ("imtm_ta", LambdaPolicy.harmonic())):
        cfg = SamplerConfig("imtm", n_chains, n_trials, policy, kernels,
                            iterations, seed)
        trace = run(cfg, target)
        last_quarter = trace.positions[3 * iterations // 4:]
        occ = mode_occupancy(last_quarter, [_MODE_A, _MODE_B], [_COV_A, _COV_B],
                             radius=8.0)
        labels = _mode_labels(trace.positions)
        crossing = int(np.sum(np.any(labels[1:] != labels[:-1], axis=0)))
        mean = last_quarter.reshape(-1, 2).mean(axis=0)
        report.add(tag, "mode2_fraction", occ.fractions[1], iterations // 4)
        report.add(tag, "crossing_chains", crossing, n_chains)
        report.add(tag, "pooled_mean_x1", mean[0], iterations // 4)
        report.add(tag, "pooled_mean_x2", mean[1], iterations // 4)
    return report


def loh_synthetic(seed=4503, m=40, eta=0.9, p1=0.2, p2=0.8, gamma=-4.0,
                  n_low=40, n_high=120):
    """Paired counts from the two-part model: most pairs are plain binomial,
    the rest beta-binomial.  With a tight minority component (strongly
    negative gamma) the swapped labeling fits almost as well as the true one,
    so the posterior over (eta, p1, p2, gamma) carries two separated modes in
    the (p1, p2) plane."""
    rng = RngStream(seed, 0)
    n = rng.integers(n_low, n_high + 1, size=m)
    omega = 0.5 / (1.0 + np.exp(-gamma))
    a, b = p2 / omega, (1.0 - p2) / omega
    x = np.empty(m, dtype=int)
    for j in range(m):
        p = p1 if rng.random() < eta else rng.generator.beta(a, b)
        x[j] = rng.generator.binomial(n[j], p)
    return x, n


def pt_reference_run(target, ladder, scales, iterations, seed, thin=1):
    """Plain parallel tempering with per-rung random-walk scales and one
    adjacent swap attempt per sweep; returns the cold chain's thinned path.

    Used as a slow-but-trusted oracle for posterior mode counts.
    """
    if len(ladder) != len(scales):
        raise InvalidParameterError("one proposal scale per ladder rung")
    rungs = len(ladder)
    dim = target.dim
    rng = RngStream(seed, 0)
    lo, hi = target.support_box() if hasattr(target, "support_box") else (
        -5.0 * np.ones(dim), 5.0 * np.ones(dim))
    states = lo + (hi - lo) * rng.random((rungs, dim))
    logps = np.array([target.log_density(states[r]) for r in range(rungs)])
    out = []
    for it in range(iterations):
        for r in range(rungs):
            prop = states[r] + scales[r] * rng.standard_normal(dim)
            lp = target.log_density(prop)
            if np.log(rng.random()) < ladder[r] * (lp - logps[r]):
                states[r] = prop
                logps[r] = lp
        if rungs > 1:
            k = int(rng.integers(0, rungs - 1))
            swap_log = (ladder[k] - ladder[k + 1]) * (logps[k + 1] - logps[k])
            if np.log(rng.random()) < swap_log:
                states[[k, k + 1]] = states[[k + 1, k]]
                logps[[k, k + 1]] = logps[[k + 1, k]]
        if it % thin == 0:
            out.append(states[0].copy())
    return np.array(out)


def e4_betabinomial(seed=4503, counts=None, iterations_long=1000,
                    iterations_short=100, n_chains=100, n_trials=4,
                    pt_iterations=20_000):
    """Bimodal posterior exploration on paired-count data: a long parallel
    tempering run first establishes how many posterior modes exist in the
    (p1, p2) plane, then the interacting population is scored on reaching
    >= that many separated clusters."""
    if counts is None:
        x, n = loh_synthetic(seed=seed)
    else:
        x, n = counts
    target = BetaBinomialPosterior(x, n)

    step = np.array([1.0, 1.0, 1.0, 40.0])  # gamma's support is ~40x wider
    pt_draws = pt_reference_run(
        target, ladder=(1.0, 0.55, 0.3, 0.17, 0.09),
        scales=tuple(s * step for s in (0.04, 0.06, 0.1, 0.16, 0.25)),
        iterations=pt_iterations, seed=seed + 1)
    cold = pt_draws[pt_iterations // 2:, 1:3]
    pt_modes = separated_clusters(cold, min_separation=0.2,
                                  min_size=max(2, cold.shape[0] // 50))

    # the top slots must be able to cross between the two labelings in one
    # jump, so the scale ladder spans ~0.1 .. ~0.8 in the probability axes
    base = np.array([0.02, 0.02, 0.02, 1.0])
    kernels = [AnchoredRWProposal(SpdMatrix.diagonal(base * f))
               for f in (0.5, 2.0, 8.0, 32.0)]
    report = ComparisonReport(seeds=(seed,))
    report.add("pt_reference", "separated_modes", pt_modes, pt_iterations // 2)
    for tag, iters in (("short", iterations_short), ("long", iterations_long)):
        cfg = SamplerConfig("imtm", n_chains, n_trials, LambdaPolicy.power_product(1.0),
                            kernels, iters, seed + 2, strategy=STRATEGY_RANDOM)
        trace = run(cfg, target)
        final = trace.positions[-1][:, 1:3]
        clusters = separated_clusters(final, min_separation=0.2,
                                      min_size=max(2, n_chains // 33))
        report.add(f"imtm_{tag}", "iterations", iters, 1)
        report.add(f"imtm_{tag}", "separated_clusters", clusters, n_chains)
    return report


SV_SETTINGS = {
    "daily": {"alpha": 0.0, "phi": 0.99, "sigma2": 0.01},
    "weekly": {"alpha": 0.0, "phi": 0.9, "sigma2": 0.1},
}


def simulate_sv_dataset(setting, seed, size=200):
    params = SV_SETTINGS[setting]
    y, h = sv_simulate(RngStream(seed, 0), params["alpha"], params["phi"],
                       params["sigma2"], size)
    return y, h, params


def sv_method_errors(y, h_true, phi_true, sigma2_true, seed,
                     imtm_chains=20, imtm_trials=5, imtm_iterations=1000,
                     mh_iterations=100_000):
    """Squared posterior-mean errors for (phi, sigma2) and the final
    cumulative RMSE of the latent path, for the interacting sweep versus the
    long single-site baseline on one dataset."""
    out = {}
    im = sv_imtm_gibbs(y, n_chains=imtm_chains, n_trials=imtm_trials,
                       iterations=imtm_iterations, seed=seed)
    mh = sv_mh_gibbs(y, iterations=mh_iterations, seed=seed + 1)
    for tag, res in (("imtm_gibbs", im), ("mh_gibbs", mh)):
        means = res.posterior_means()
        out[f"{tag}_sq_error_phi"] = (means["phi"] - phi_true) ** 2
        out[f"{tag}_sq_error_sigma2"] = (means["sigma2"] - sigma2_true) ** 2
        out[f"{tag}_final_rmse_h"] = float(cumulative_rmse(res.h_mean, h_true)[-1])
    return out


def e5_sv(seed=4601, size=200, imtm_iterations=1000, mh_iterations=100_000):
    """Stochastic volatility parameter recovery under both canned parameter
    settings, one simulated dataset each."""
    report = ComparisonReport(seeds=(seed,))
    for setting in ("daily", "weekly"):
        y, h, params = simulate_sv_dataset(setting, seed, size)
        errs = sv_method_errors(y, h, params["phi"], params["sigma2"], seed + 7,
                                imtm_iterations=imtm_iterations,
                                mh_iterations=mh_iterations)
        for key, value in errs.items():
            method, stat = key.split("_", 2)[0] + "_gibbs", key.split("_", 2)[2]
            report.add(f"{setting}.{method}", stat, value, 1)
    return report


def reproduce(experiment_id, seed=None, synthetic=False, counts=None):
    """Dispatch a canned experiment by its public id."""
    if experiment_id not in EXPERIMENT_IDS:
        raise ConfigValidationError(
            [f"unknown experiment id '{experiment_id}'; valid ids: {', '.join(EXPERIMENT_IDS)}"])
    if experiment_id == "e1-bivariate-mtmdp":
        return e1_bivariate_mtmdp(**({"seed": seed} if seed is not None else {}))
    if experiment_id == "e2-multivariate":
        return e2_multivariate(**({"seed": seed} if seed is not None else {}))
    if experiment_id == "e3-imtm-bimodal":
        return e3_imtm_bimodal(**({"seed": seed} if seed is not None else {}))
    if experiment_id == "e4-betabinomial":
        if counts is None and not synthetic:
            raise ConfigValidationError(
                ["e4-betabinomial needs --synthetic or a counts CSV (--data)"])
        kwargs = {"counts": counts}
        if seed is not None:
            kwargs["seed"] = seed
        return e4_betabinomial(**kwargs)
    return e5_sv(**({"seed": seed} if seed is not None else {}))
