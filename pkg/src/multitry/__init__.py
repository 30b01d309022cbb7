"""Multiple-try Metropolis samplers with interacting chain populations.

The package is organized by role:

- ``mathcore``: RNG streams, SPD matrices, Gaussian/Wishart sampling, ACF/IACT
- ``targets``: log densities (mixtures, tempered, beta-binomial, grids, volatility model)
- ``proposals``: proposal kernels and conditioning contexts
- ``weights``: trial-weight policies, candidate selection, acceptance ratios
- ``samplers``: single-chain and population transition steps plus run drivers
- ``diagnostics``: flow-symmetry testing, mode occupancy, error reports
- ``experiments`` / ``cli``: canned experiment recipes and the command line
"""

__version__ = "0.1.0"

from .config import (
    DiagnosticsSpec,
    ExperimentSpec,
    parse_diagnostics_file,
    parse_diagnostics_text,
    parse_experiment_file,
    parse_experiment_text,
)
from .diagnostics import (
    AcfReport,
    ComparisonReport,
    DetailedBalanceResult,
    FlowEstimate,
    ModeOccupancy,
    MseReport,
    acf_report,
    cumulative_rmse,
    detailed_balance_test,
    hpd_interval,
    mode_occupancy,
    mse_report,
    separated_clusters,
)
from .errors import (
    ConfigValidationError,
    ConstantSeriesError,
    DecompositionError,
    DegenerateDensityError,
    DegenerateDirectionError,
    DimensionMismatchError,
    InvalidParameterError,
    MultitryError,
    NumericalOverflowError,
    OverlappingModesError,
    SamplerRuntimeError,
    StuckTrialError,
)
from .experiments import EXPERIMENT_IDS, loh_synthetic, pt_reference_run, reproduce
from .mathcore import RngStream, SpdMatrix, acf, cholesky, iact, mvn_logpdf, mvn_sample, streams, wishart_sample
from .proposals import (
    AnchoredRWProposal,
    ConditioningContext,
    GaussianRWProposal,
    GridRWProposal,
    MixtureRWProposal,
    RayProposal,
    context_at,
    line_search_mode,
    ray_direction,
)
from .samplers import (
    STRATEGY_FIXED,
    STRATEGY_NU,
    STRATEGY_RANDOM,
    STRATEGY_SELF,
    AnnealEstimate,
    ChainTrace,
    GridBatchMh,
    GridBatchMtm,
    SamplerConfig,
    TemperatureLadder,
    anneal_estimate,
    imtm_step,
    initial_population,
    mh_step,
    mtm_dp_step,
    mtm_step,
    read_trace_csv,
    run,
    sv_imtm_gibbs,
    sv_mh_gibbs,
    write_trace_csv,
)
from .targets import (
    BetaBinomialPosterior,
    GaussianMixtureTarget,
    GaussianTarget,
    GridTarget,
    SVModel,
    TemperedTarget,
    load_count_pairs_csv,
    load_series_csv,
    sv_simulate,
)
from .weights import LambdaPolicy, NuTracker, WeightDiagnostics, select_trial, trial_weight

__all__ = [
    "__version__",
    # errors
    "ConfigValidationError",
    "ConstantSeriesError",
    "DecompositionError",
    "DegenerateDensityError",
    "DegenerateDirectionError",
    "DimensionMismatchError",
    "InvalidParameterError",
    "MultitryError",
    "NumericalOverflowError",
    "OverlappingModesError",
    "SamplerRuntimeError",
    "StuckTrialError",
    # mathcore
    "RngStream",
    "SpdMatrix",
    "acf",
    "cholesky",
    "iact",
    "mvn_logpdf",
    "mvn_sample",
    "streams",
    "wishart_sample",
    # targets
    "BetaBinomialPosterior",
    "GaussianMixtureTarget",
    "GaussianTarget",
    "GridTarget",
    "SVModel",
    "TemperedTarget",
    "load_count_pairs_csv",
    "load_series_csv",
    "sv_simulate",
    # proposals
    "AnchoredRWProposal",
    "ConditioningContext",
    "GaussianRWProposal",
    "GridRWProposal",
    "MixtureRWProposal",
    "RayProposal",
    "context_at",
    "line_search_mode",
    "ray_direction",
    # weights
    "LambdaPolicy",
    "NuTracker",
    "WeightDiagnostics",
    "select_trial",
    "trial_weight",
    # samplers
    "STRATEGY_FIXED",
    "STRATEGY_NU",
    "STRATEGY_RANDOM",
    "STRATEGY_SELF",
    "AnnealEstimate",
    "ChainTrace",
    "GridBatchMh",
    "GridBatchMtm",
    "SamplerConfig",
    "TemperatureLadder",
    "anneal_estimate",
    "imtm_step",
    "initial_population",
    "mh_step",
    "mtm_dp_step",
    "mtm_step",
    "read_trace_csv",
    "run",
    "sv_imtm_gibbs",
    "sv_mh_gibbs",
    "write_trace_csv",
    # diagnostics
    "AcfReport",
    "ComparisonReport",
    "DetailedBalanceResult",
    "FlowEstimate",
    "ModeOccupancy",
    "MseReport",
    "acf_report",
    "cumulative_rmse",
    "detailed_balance_test",
    "hpd_interval",
    "mode_occupancy",
    "mse_report",
    "separated_clusters",
    # config
    "DiagnosticsSpec",
    "ExperimentSpec",
    "parse_diagnostics_file",
    "parse_diagnostics_text",
    "parse_experiment_file",
    "parse_experiment_text",
    # experiments
    "EXPERIMENT_IDS",
    "loh_synthetic",
    "pt_reference_run",
    "reproduce",
]
