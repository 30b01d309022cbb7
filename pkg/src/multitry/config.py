"""Flat key = value experiment configs: parsing, exhaustive validation, and
canonical re-emission.

The format is INI with four sections -- [experiment], [target], [sampler],
and an optional [diagnostics].  Validation is collect-all: every unknown
section, unknown key, missing requirement, and malformed value is reported in
one ConfigValidationError, each message prefixed with its section so the user
can fix the file in a single pass.  ``resolved_text`` re-emits the parsed
state with all defaults made explicit; feeding that file back produces an
identical run.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigValidationError
from .mathcore import SpdMatrix
from .proposals import (
    AnchoredRWProposal,
    GaussianRWProposal,
    GridRWProposal,
    MixtureRWProposal,
)
from .samplers import STRATEGY_FIXED, SamplerConfig, TemperatureLadder
from .targets import (
    BetaBinomialPosterior,
    GaussianMixtureTarget,
    GaussianTarget,
    GridTarget,
)
from .weights import LambdaPolicy

_TARGET_KINDS = ("standard_normal", "gaussian", "gaussian_mixture", "grid", "beta_binomial")
_KERNEL_KINDS = ("walk", "anchored", "mixture", "grid", "none")
_POLICIES = ("const_one", "harmonic", "power_product")

_KEYS = {
    "experiment": {"seed", "output_dir", "replicates"},
    "target": {"kind", "dim", "mean", "cov_diag", "weights", "means", "cov_diags",
               "masses", "x", "n", "gamma_bound"},
    "sampler": {"algorithm", "n_chains", "n_trials", "iterations", "policy", "alpha",
                "population_weighted", "strategy", "ladder", "kernel", "scales",
                "mixture_weights", "ray_scale", "init_center", "init_scale"},
    "diagnostics": {"burn_in", "acf", "acf_max_lag", "hpd_level",
                    "occupancy_centers", "occupancy_cov_diags", "occupancy_radius"},
}

_TARGET_REQUIRED = {
    "standard_normal": {"dim"},
    "gaussian": {"mean", "cov_diag"},
    "gaussian_mixture": {"weights", "means", "cov_diags"},
    "grid": {"masses"},
    "beta_binomial": {"x", "n"},
}
_TARGET_ALLOWED = {
    "standard_normal": {"kind", "dim"},
    "gaussian": {"kind", "mean", "cov_diag"},
    "gaussian_mixture": {"kind", "weights", "means", "cov_diags"},
    "grid": {"kind", "masses"},
    "beta_binomial": {"kind", "x", "n", "gamma_bound"},
}


@dataclass
class DiagnosticsSpec:
    burn_in: int = 0
    acf: bool = False
    acf_max_lag: int = 30
    hpd_level: float | None = None
    occupancy_centers: list | None = None
    occupancy_cov_diags: list | None = None
    occupancy_radius: float | None = None

    @property
    def wants_occupancy(self) -> bool:
        return self.occupancy_centers is not None


@dataclass
class ExperimentSpec:
    """A fully validated experiment: ready-to-run objects plus the canonical
    text that reproduces them."""

    seed: int
    output_dir: str | None
    replicates: int
    target: object
    sampler: SamplerConfig
    diagnostics: DiagnosticsSpec
    resolved_text: str
    raw: dict = field(repr=False, default_factory=dict)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _ints(text):
    out = []
    for v in text.split(","):
        v = v.strip()
        if v:
            if float(v) != int(float(v)):
                raise ValueError(f"{v} is not an integer")
            out.append(int(float(v)))
    return out


def _vectors(text):
    return [np.array(_floats(chunk)) for chunk in text.split(";") if chunk.strip() != ""]


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class _Collector:
    """Accumulates violations and guards typed reads of one section."""

    def __init__(self):
        self.problems = []

    def complain(self, section, message):
        self.problems.append(f"[{section}] {message}")

    def read(self, section, values, key, parse, default=None, required=False):
        if key not in values:
            if required:
                self.complain(section, f"missing required key '{key}'")
            return default
        try:
            return parse(values[key])
        except (ValueError, TypeError) as exc:
            self.complain(section, f"bad value for '{key}': {exc}")
            return default


def _check_keys(col, parser):
    for section in parser.sections():
        if section not in _KEYS:
            col.complain(section, "unknown section")
            continue
        for key in parser[section]:
            if key not in _KEYS[section]:
                col.complain(section, f"unknown key '{key}'")


def _build_target(col, values):
    kind = values.get("kind", "").strip()
    if kind not in _TARGET_KINDS:
        col.complain("target", f"kind must be one of {', '.join(_TARGET_KINDS)}, got '{kind}'")
        return None
    for key in values:
        if key in _KEYS["target"] and key not in _TARGET_ALLOWED[kind]:
            col.complain("target", f"key '{key}' does not apply to kind '{kind}'")
    missing = _TARGET_REQUIRED[kind] - set(values)
    for key in sorted(missing):
        col.complain("target", f"kind '{kind}' requires key '{key}'")
    if missing:
        return None
    try:
        if kind == "standard_normal":
            dim = int(values["dim"])
            if dim < 1:
                raise ValueError("dim must be >= 1")
            return GaussianTarget(np.zeros(dim), SpdMatrix(np.eye(dim)))
        if kind == "gaussian":
            mean = np.array(_floats(values["mean"]))
            diag = _floats(values["cov_diag"])
            if len(diag) != mean.size:
                raise ValueError("mean and cov_diag lengths differ")
            return GaussianTarget(mean, SpdMatrix.diagonal(diag))
        if kind == "gaussian_mixture":
            weights = _floats(values["weights"])
            means = _vectors(values["means"])
            diags = _vectors(values["cov_diags"])
            if not (len(weights) == len(means) == len(diags)):
                raise ValueError("weights, means, cov_diags must have equal counts")
            covs = [SpdMatrix.diagonal(d) for d in diags]
            return GaussianMixtureTarget(weights, means, covs)
        if kind == "grid":
            return GridTarget(tuple(_floats(values["masses"])))
        x = _ints(values["x"])
        n = _ints(values["n"])
        bound = float(values.get("gamma_bound", 30.0))
        return BetaBinomialPosterior(x, n, gamma_bound=bound)
    except Exception as exc:  # surfaced as one positional message
        col.complain("target", f"could not build '{kind}' target: {exc}")
        return None


def _build_kernels(col, values, target, algorithm):
    kind = values.get("kernel", "").strip() or ("none" if algorithm == "random_ray" else "walk")
    if kind not in _KERNEL_KINDS:
        col.complain("sampler", f"kernel must be one of {', '.join(_KERNEL_KINDS)}, got '{kind}'")
        return kind, []
    if kind == "none":
        if values.get("scales", "").strip():
            col.complain("sampler", "kernel 'none' does not take scales")
        return kind, []
    scales_text = values.get("scales", "")
    try:
        scales = _floats(scales_text)
    except ValueError as exc:
        col.complain("sampler", f"bad value for 'scales': {exc}")
        return kind, []
    if not scales:
        col.complain("sampler", f"kernel '{kind}' needs a non-empty 'scales' list")
        return kind, []
    if any(s <= 0 for s in scales):
        col.complain("sampler", "every kernel scale must be positive")
        return kind, []
    dim = getattr(target, "dim", None)
    if dim is None:
        return kind, []
    try:
        if kind == "grid":
            if not isinstance(target, GridTarget):
                raise ValueError("grid kernels need a grid target")
            return kind, [GridRWProposal(target, s) for s in scales]
        if kind == "mixture":
            wtext = values.get("mixture_weights", "")
            weights = _floats(wtext) if wtext.strip() else [1.0 / len(scales)] * len(scales)
            covs = [SpdMatrix.scaled_identity(dim, s) for s in scales]
            return kind, [MixtureRWProposal(weights, covs)]
        cls = AnchoredRWProposal if kind == "anchored" else GaussianRWProposal
        return kind, [cls(SpdMatrix.scaled_identity(dim, s)) for s in scales]
    except Exception as exc:
        col.complain("sampler", f"could not build '{kind}' kernels: {exc}")
        return kind, []


def _build_policy(col, values):
    name = values.get("policy", "const_one").strip()
    if name not in _POLICIES:
        col.complain("sampler", f"policy must be one of {', '.join(_POLICIES)}, got '{name}'")
        return None
    pw = False
    if "population_weighted" in values:
        try:
            pw = _bool(values["population_weighted"])
        except ValueError as exc:
            col.complain("sampler", str(exc))
    if name == "power_product":
        try:
            alpha = float(values.get("alpha", 1.0))
        except ValueError:
            col.complain("sampler", f"bad value for 'alpha': {values.get('alpha')!r}")
            return None
        return LambdaPolicy.power_product(alpha, population_weighted=pw)
    if "alpha" in values:
        col.complain("sampler", "'alpha' only applies to the power_product policy")
    if name == "harmonic":
        return LambdaPolicy.harmonic(population_weighted=pw)
    return LambdaPolicy.const_one(population_weighted=pw)


def _read_diagnostics(col, dvals):
    diag = DiagnosticsSpec()
    diag.burn_in = col.read("diagnostics", dvals, "burn_in", int, default=0)
    diag.acf = col.read("diagnostics", dvals, "acf", _bool, default=False)
    diag.acf_max_lag = col.read("diagnostics", dvals, "acf_max_lag", int, default=30)
    diag.hpd_level = col.read("diagnostics", dvals, "hpd_level", float)
    occ_keys = ("occupancy_centers", "occupancy_cov_diags", "occupancy_radius")
    present = [k for k in occ_keys if k in dvals]
    if present and len(present) != len(occ_keys):
        col.complain("diagnostics", "occupancy needs centers, cov_diags, and radius together")
    elif present:
        diag.occupancy_centers = col.read("diagnostics", dvals, "occupancy_centers", _vectors)
        diag.occupancy_cov_diags = col.read("diagnostics", dvals, "occupancy_cov_diags", _vectors)
        diag.occupancy_radius = col.read("diagnostics", dvals, "occupancy_radius", float)
    if diag.burn_in is not None and diag.burn_in < 0:
        col.complain("diagnostics", "burn_in must be non-negative")
    if diag.hpd_level is not None and not 0.0 < diag.hpd_level < 1.0:
        col.complain("diagnostics", "hpd_level must lie in (0, 1)")
    if diag.acf_max_lag is not None and diag.acf_max_lag < 1:
        col.complain("diagnostics", "acf_max_lag must be >= 1")
    return diag


def parse_diagnostics_text(text: str) -> DiagnosticsSpec:
    """Parse a config that carries a [diagnostics] section, ignoring any
    experiment/target/sampler sections so a run config can double as the spec
    for post-hoc trace analysis."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    col = _Collector()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigValidationError([f"config does not parse: {exc}"]) from None
    for section in parser.sections():
        if section not in _KEYS:
            col.complain(section, "unknown section")
    if parser.has_section("diagnostics"):
        for key in parser["diagnostics"]:
            if key not in _KEYS["diagnostics"]:
                col.complain("diagnostics", f"unknown key '{key}'")
        diag = _read_diagnostics(col, dict(parser["diagnostics"]))
    else:
        col.complain("diagnostics", "section is required")
        diag = None
    if col.problems:
        raise ConfigValidationError(col.problems)
    return diag


def parse_diagnostics_file(path) -> DiagnosticsSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigValidationError([f"cannot read config file {path}: {exc.strerror}"]) from None
    return parse_diagnostics_text(text)


def parse_experiment_text(text: str) -> ExperimentSpec:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    col = _Collector()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigValidationError([f"config does not parse: {exc}"]) from None

    _check_keys(col, parser)
    for section in ("experiment", "target", "sampler"):
        if not parser.has_section(section):
            col.complain(section, "section is required")
    if col.problems and not all(parser.has_section(s) for s in ("experiment", "target", "sampler")):
        raise ConfigValidationError(col.problems)

    exp = dict(parser["experiment"])
    seed = col.read("experiment", exp, "seed", int, required=True)
    output_dir = exp.get("output_dir", "").strip() or None
    replicates = col.read("experiment", exp, "replicates", int, default=1)
    if replicates is not None and replicates < 1:
        col.complain("experiment", "replicates must be >= 1")
    if seed is not None and seed < 0:
        col.complain("experiment", "seed must be non-negative")

    target = _build_target(col, dict(parser["target"]))

    samp = dict(parser["sampler"])
    algorithm = samp.get("algorithm", "").strip()
    if not algorithm:
        col.complain("sampler", "missing required key 'algorithm'")
    n_chains = col.read("sampler", samp, "n_chains", int, default=1)
    iterations = col.read("sampler", samp, "iterations", int, required=True)
    n_trials = col.read("sampler", samp, "n_trials", lambda t: _ints(t), default=[1])
    policy = _build_policy(col, samp)
    strategy = samp.get("strategy", STRATEGY_FIXED).strip()
    kernel_kind, kernels = _build_kernels(col, samp, target, algorithm)
    ladder = None
    if samp.get("ladder", "").strip():
        try:
            ladder = TemperatureLadder(tuple(_floats(samp["ladder"])))
        except Exception as exc:
            col.complain("sampler", f"bad value for 'ladder': {exc}")
    ray_scale = col.read("sampler", samp, "ray_scale", float, default=1.0)
    init_scale = col.read("sampler", samp, "init_scale", float)
    init_center = None
    if samp.get("init_center", "").strip():
        try:
            init_center = np.array(_floats(samp["init_center"]))
        except ValueError as exc:
            col.complain("sampler", f"bad value for 'init_center': {exc}")

    diag = DiagnosticsSpec()
    if parser.has_section("diagnostics"):
        diag = _read_diagnostics(col, dict(parser["diagnostics"]))

    config = None
    if not col.problems and target is not None and policy is not None:
        counts = n_trials[0] if len(n_trials) == 1 else list(n_trials)
        config = SamplerConfig(
            algorithm=algorithm, n_chains=n_chains, n_trials=counts, policy=policy,
            kernels=kernels, iterations=iterations, seed=seed, strategy=strategy,
            ladder=ladder, init_center=init_center, init_scale=init_scale,
            ray_scale=ray_scale,
        )
        for message in config.validate():
            col.complain("sampler", message)
        if iterations is not None and diag.burn_in is not None and diag.burn_in > iterations:
            col.complain("diagnostics", "burn_in exceeds the iteration count")

    if col.problems:
        raise ConfigValidationError(col.problems)

    resolved = _resolved_text(parser, seed, output_dir, replicates, samp, diag,
                              algorithm, kernel_kind)
    return ExperimentSpec(
        seed=seed, output_dir=output_dir, replicates=replicates, target=target,
        sampler=config, diagnostics=diag, resolved_text=resolved,
        raw={s: dict(parser[s]) for s in parser.sections()},
    )


def parse_experiment_file(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigValidationError([f"cannot read config file {path}: {exc.strerror}"]) from None
    return parse_experiment_text(text)


def _resolved_text(parser, seed, output_dir, replicates, samp, diag,
                   algorithm, kernel_kind):
    """Canonical re-emission with defaults explicit; parsing it again yields
    the same experiment."""
    out = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    out["experiment"] = {"seed": str(seed), "replicates": str(replicates)}
    if output_dir:
        out["experiment"]["output_dir"] = output_dir
    out["target"] = dict(parser["target"])
    resolved_sampler = {"algorithm": algorithm}
    resolved_sampler.update(samp)
    resolved_sampler.setdefault("policy", "const_one")
    resolved_sampler.setdefault("n_chains", "1")
    resolved_sampler.setdefault("n_trials", "1")
    if kernel_kind != "none":
        resolved_sampler.setdefault("kernel", kernel_kind)
    out["sampler"] = resolved_sampler
    if parser.has_section("diagnostics"):
        dsec = {"burn_in": str(diag.burn_in), "acf": str(diag.acf).lower(),
                "acf_max_lag": str(diag.acf_max_lag)}
        if diag.hpd_level is not None:
            dsec["hpd_level"] = "%.17g" % diag.hpd_level
        if diag.wants_occupancy:
            dsec["occupancy_centers"] = "; ".join(
                ",".join("%.17g" % v for v in c) for c in diag.occupancy_centers)
            dsec["occupancy_cov_diags"] = "; ".join(
                ",".join("%.17g" % v for v in c) for c in diag.occupancy_cov_diags)
            dsec["occupancy_radius"] = "%.17g" % diag.occupancy_radius
        out["diagnostics"] = dsec
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()
