"""Config-file parsing: happy paths for every target/kernel kind, collect-all
validation, and the resolved-text fixed point."""

import numpy as np
import pytest

from multitry.config import (
    DiagnosticsSpec,
    parse_diagnostics_file,
    parse_diagnostics_text,
    parse_experiment_file,
    parse_experiment_text,
)
from multitry.errors import ConfigValidationError
from multitry.proposals import (
    AnchoredRWProposal,
    GaussianRWProposal,
    GridRWProposal,
    MixtureRWProposal,
)
from multitry.targets import (
    BetaBinomialPosterior,
    GaussianMixtureTarget,
    GaussianTarget,
    GridTarget,
)


def make_text(experiment="seed = 7", target="kind = standard_normal\ndim = 2",
              sampler="algorithm = mh\niterations = 50\nscales = 1.0",
              diagnostics=None):
    parts = [f"[experiment]\n{experiment}", f"[target]\n{target}",
             f"[sampler]\n{sampler}"]
    if diagnostics is not None:
        parts.append(f"[diagnostics]\n{diagnostics}")
    return "\n\n".join(parts) + "\n"


def violations_of(text):
    with pytest.raises(ConfigValidationError) as err:
        parse_experiment_text(text)
    return err.value.violations


class TestHappyPaths:
    def test_minimal_config(self):
        spec = parse_experiment_text(make_text())
        assert spec.seed == 7
        assert spec.replicates == 1
        assert spec.output_dir is None
        assert spec.sampler.algorithm == "mh"
        assert spec.sampler.iterations == 50
        assert spec.sampler.n_chains == 1
        assert isinstance(spec.target, GaussianTarget)
        assert spec.target.dim == 2

    def test_gaussian_target(self):
        spec = parse_experiment_text(make_text(
            target="kind = gaussian\nmean = 1.0, -2.0\ncov_diag = 4.0, 9.0"))
        assert isinstance(spec.target, GaussianTarget)
        np.testing.assert_allclose(spec.target.mean, [1.0, -2.0])
        np.testing.assert_allclose(np.diag(spec.target.cov.matrix), [4.0, 9.0])

    def test_mixture_target(self):
        spec = parse_experiment_text(make_text(
            target=("kind = gaussian_mixture\nweights = 0.25, 0.75\n"
                    "means = 0, 0; 5, 5\ncov_diags = 1, 1; 2, 2")))
        assert isinstance(spec.target, GaussianMixtureTarget)
        np.testing.assert_allclose(spec.target.weights, [0.25, 0.75])
        assert len(spec.target.means) == 2

    def test_grid_target_with_grid_kernel(self):
        spec = parse_experiment_text(make_text(
            target="kind = grid\nmasses = 1, 2, 3",
            sampler="algorithm = mh\niterations = 20\nkernel = grid\nscales = 1.5"))
        assert isinstance(spec.target, GridTarget)
        assert spec.target.n_states == 3
        assert isinstance(spec.sampler.kernels[0], GridRWProposal)

    def test_beta_binomial_target(self):
        spec = parse_experiment_text(make_text(
            target="kind = beta_binomial\nx = 3, 4\nn = 10, 12\ngamma_bound = 12",
            sampler="algorithm = mh\niterations = 20\nscales = 0.1"))
        assert isinstance(spec.target, BetaBinomialPosterior)
        assert spec.target.dim == 4

    def test_kernel_kinds(self):
        walk = parse_experiment_text(make_text()).sampler.kernels
        assert isinstance(walk[0], GaussianRWProposal)

        anch = parse_experiment_text(make_text(
            sampler=("algorithm = imtm\nn_chains = 4\nn_trials = 2\niterations = 10\n"
                     "kernel = anchored\nscales = 0.5, 2.0"))).sampler.kernels
        assert len(anch) == 2
        assert all(isinstance(k, AnchoredRWProposal) for k in anch)

        mix = parse_experiment_text(make_text(
            sampler=("algorithm = mtm\nn_trials = 3\niterations = 10\n"
                     "kernel = mixture\nscales = 0.5, 2.0\n"
                     "mixture_weights = 0.3, 0.7"))).sampler.kernels
        assert len(mix) == 1 and isinstance(mix[0], MixtureRWProposal)
        np.testing.assert_allclose(mix[0].weights, [0.3, 0.7])

    def test_random_ray_defaults_to_no_kernel(self):
        spec = parse_experiment_text(make_text(
            sampler="algorithm = random_ray\nn_chains = 8\niterations = 10\nray_scale = 2.0"))
        assert spec.sampler.kernels == []
        assert spec.sampler.ray_scale == 2.0

    def test_policy_variants(self):
        harm = parse_experiment_text(make_text(
            sampler=("algorithm = imtm\nn_chains = 4\nn_trials = 2\niterations = 10\n"
                     "kernel = anchored\nscales = 1, 2\n"
                     "policy = harmonic\npopulation_weighted = true")))
        assert harm.sampler.policy.population_weighted

        power = parse_experiment_text(make_text(
            sampler=("algorithm = mtm\nn_trials = 2\niterations = 10\nscales = 1\n"
                     "policy = power_product\nalpha = 0.5")))
        assert power.sampler.policy.alpha == 0.5

    def test_ladder_and_strategy(self):
        spec = parse_experiment_text(make_text(
            sampler=("algorithm = aimtm1\nn_chains = 3\nn_trials = 2\niterations = 10\n"
                     "kernel = anchored\nscales = 1, 2\n"
                     "strategy = anchored-random-indices\nladder = 1.0, 0.5, 0.25")))
        assert spec.sampler.ladder.exponents == (1.0, 0.5, 0.25)
        assert spec.sampler.strategy == "anchored-random-indices"

    def test_init_overrides(self):
        spec = parse_experiment_text(make_text(
            sampler=("algorithm = mh\niterations = 10\nscales = 1\n"
                     "init_center = 3, -1\ninit_scale = 0.5")))
        np.testing.assert_allclose(spec.sampler.init_center, [3.0, -1.0])
        assert spec.sampler.init_scale == 0.5

    def test_replicates_and_output_dir(self):
        spec = parse_experiment_text(make_text(
            experiment="seed = 3\nreplicates = 4\noutput_dir = results"))
        assert spec.replicates == 4
        assert spec.output_dir == "results"


class TestResolvedText:
    def test_round_trip_is_identity(self):
        spec = parse_experiment_text(make_text(
            diagnostics="burn_in = 5\nacf = true\nhpd_level = 0.9"))
        again = parse_experiment_text(spec.resolved_text)
        assert again.resolved_text == spec.resolved_text
        assert again.seed == spec.seed
        assert again.sampler.algorithm == spec.sampler.algorithm
        assert again.sampler.iterations == spec.sampler.iterations
        assert again.diagnostics == spec.diagnostics

    def test_defaults_become_explicit(self):
        spec = parse_experiment_text(make_text())
        assert "policy = const_one" in spec.resolved_text
        assert "n_chains = 1" in spec.resolved_text
        assert "replicates = 1" in spec.resolved_text

    def test_occupancy_block_survives(self):
        spec = parse_experiment_text(make_text(
            diagnostics=("occupancy_centers = 0, 0; 5, 5\n"
                         "occupancy_cov_diags = 1, 1; 1, 1\n"
                         "occupancy_radius = 2.5")))
        again = parse_experiment_text(spec.resolved_text)
        assert again.diagnostics.occupancy_radius == 2.5
        np.testing.assert_allclose(again.diagnostics.occupancy_centers[1], [5.0, 5.0])


class TestCollectAllValidation:
    def test_multiple_problems_reported_together(self):
        text = make_text(experiment="seed = 7\nbogus_key = 1",
                         target="kind = nonsense",
                         sampler="algorithm = mh\niterations = 50\nscales = 1.0")
        text += "\n[mystery]\nfoo = 1\n"
        vs = violations_of(text)
        assert any(v.startswith("[experiment] unknown key 'bogus_key'") for v in vs)
        assert any(v.startswith("[target] kind must be one of") for v in vs)
        assert any(v.startswith("[mystery] unknown section") for v in vs)
        assert len(vs) >= 3

    def test_missing_sections(self):
        with pytest.raises(ConfigValidationError) as err:
            parse_experiment_text("[experiment]\nseed = 1\n")
        vs = err.value.violations
        assert "[target] section is required" in vs
        assert "[sampler] section is required" in vs

    def test_seed_rules(self):
        assert any("missing required key 'seed'" in v
                   for v in violations_of(make_text(experiment="replicates = 2")))
        assert any("seed must be non-negative" in v
                   for v in violations_of(make_text(experiment="seed = -4")))
        assert any("bad value for 'seed'" in v
                   for v in violations_of(make_text(experiment="seed = pi")))

    def test_replicates_must_be_positive(self):
        vs = violations_of(make_text(experiment="seed = 1\nreplicates = 0"))
        assert any("replicates must be >= 1" in v for v in vs)

    def test_target_key_applicability(self):
        vs = violations_of(make_text(target="kind = standard_normal\ndim = 2\nmean = 0, 0"))
        assert any("key 'mean' does not apply to kind 'standard_normal'" in v for v in vs)

    def test_target_missing_requirements(self):
        vs = violations_of(make_text(target="kind = gaussian_mixture"))
        assert any("requires key 'weights'" in v for v in vs)
        assert any("requires key 'means'" in v for v in vs)
        assert any("requires key 'cov_diags'" in v for v in vs)

    def test_target_build_failure_is_one_message(self):
        vs = violations_of(make_text(
            target="kind = gaussian_mixture\nweights = 1.0\nmeans = 0, 0; 1, 1\ncov_diags = 1, 1"))
        assert any("could not build 'gaussian_mixture' target" in v for v in vs)

    def test_kernel_rules(self):
        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nkernel = warp\nscales = 1"))
        assert any("kernel must be one of" in v for v in vs)

        vs = violations_of(make_text(sampler="algorithm = mh\niterations = 10"))
        assert any("needs a non-empty 'scales' list" in v for v in vs)

        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nscales = 1, -2"))
        assert any("every kernel scale must be positive" in v for v in vs)

        vs = violations_of(make_text(
            sampler="algorithm = random_ray\nn_chains = 4\niterations = 10\nkernel = none\nscales = 1"))
        assert any("does not take scales" in v for v in vs)

    def test_grid_kernel_needs_grid_target(self):
        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nkernel = grid\nscales = 1"))
        assert any("grid kernels need a grid target" in v for v in vs)

    def test_policy_rules(self):
        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nscales = 1\npolicy = fancy"))
        assert any("policy must be one of" in v for v in vs)

        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nscales = 1\npolicy = harmonic\nalpha = 2"))
        assert any("'alpha' only applies to the power_product policy" in v for v in vs)

    def test_sampler_cross_validation_bubbles_up(self):
        vs = violations_of(make_text(
            sampler=("algorithm = imtm\nn_chains = 2\nn_trials = 8\niterations = 10\n"
                     "kernel = anchored\nscales = 1, 1, 1, 1, 1, 1, 1, 1")))
        assert any(v.startswith("[sampler]") and "M <= N" in v for v in vs)

    def test_ladder_parse_failure(self):
        vs = violations_of(make_text(
            sampler="algorithm = mh\niterations = 10\nscales = 1\nladder = 1.0, warm"))
        assert any("bad value for 'ladder'" in v for v in vs)

    def test_unparseable_ini(self):
        with pytest.raises(ConfigValidationError) as err:
            parse_experiment_text("not an ini file at all")
        assert any("config does not parse" in v for v in err.value.violations)

    def test_diagnostics_rules(self):
        vs = violations_of(make_text(diagnostics="burn_in = -1"))
        assert any("burn_in must be non-negative" in v for v in vs)

        vs = violations_of(make_text(diagnostics="hpd_level = 1.5"))
        assert any("hpd_level must lie in (0, 1)" in v for v in vs)

        vs = violations_of(make_text(diagnostics="acf_max_lag = 0"))
        assert any("acf_max_lag must be >= 1" in v for v in vs)

        vs = violations_of(make_text(diagnostics="occupancy_radius = 2.0"))
        assert any("occupancy needs centers, cov_diags, and radius together" in v for v in vs)

    def test_burn_in_cannot_exceed_iterations(self):
        vs = violations_of(make_text(diagnostics="burn_in = 51"))
        assert any("burn_in exceeds the iteration count" in v for v in vs)


class TestDiagnosticsOnlyParsing:
    def test_full_config_doubles_as_diag_spec(self):
        spec = parse_diagnostics_text(make_text(diagnostics="burn_in = 3\nacf = true"))
        assert spec == DiagnosticsSpec(burn_in=3, acf=True)

    def test_standalone_diagnostics_file(self):
        spec = parse_diagnostics_text("[diagnostics]\nhpd_level = 0.95\n")
        assert spec.hpd_level == 0.95
        assert spec.burn_in == 0

    def test_missing_section_complains(self):
        with pytest.raises(ConfigValidationError) as err:
            parse_diagnostics_text("[experiment]\nseed = 1\n")
        assert "[diagnostics] section is required" in err.value.violations

    def test_unknown_key_complains(self):
        with pytest.raises(ConfigValidationError) as err:
            parse_diagnostics_text("[diagnostics]\nsmoothing = 3\n")
        assert any("unknown key 'smoothing'" in v for v in err.value.violations)


class TestFileParsing:
    def test_missing_experiment_file_names_path(self, tmp_path):
        path = tmp_path / "nope.ini"
        with pytest.raises(ConfigValidationError) as err:
            parse_experiment_file(path)
        assert any(str(path) in v for v in err.value.violations)

    def test_missing_diag_file_names_path(self, tmp_path):
        path = tmp_path / "gone.ini"
        with pytest.raises(ConfigValidationError) as err:
            parse_diagnostics_file(path)
        assert any(str(path) in v for v in err.value.violations)

    def test_round_trip_through_disk(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(make_text(diagnostics="acf = yes\nacf_max_lag = 8"))
        spec = parse_experiment_file(path)
        assert spec.diagnostics.acf and spec.diagnostics.acf_max_lag == 8
        echo = tmp_path / "resolved.ini"
        echo.write_text(spec.resolved_text)
        assert parse_experiment_file(echo).resolved_text == spec.resolved_text
