"""Console entry point: run configured samplers, reproduce the canned
comparison studies, and post-process saved traces.

Exit codes: 0 on success, 2 for configuration or input-validation problems,
3 when sampling itself fails.  Artifacts are written atomically (temporary
sibling + rename) and a command that fails removes whatever partial outputs
it had already produced, so an output directory never holds a half-written
run.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import parse_diagnostics_file, parse_experiment_file
from .diagnostics import ComparisonReport, acf_report, hpd_interval, mode_occupancy
from .errors import (
    ConfigValidationError,
    DimensionMismatchError,
    InvalidParameterError,
    MultitryError,
    OverlappingModesError,
)
from .experiments import EXPERIMENT_IDS, reproduce
from .samplers import read_trace_csv, run, write_trace_csv
from .targets import load_count_pairs_csv

OUT_ENV = "MULTITRY_OUT"

_VALIDATION_ERRORS = (
    ConfigValidationError,
    InvalidParameterError,
    DimensionMismatchError,
    OverlappingModesError,
)


class _Artifacts:
    """Tracks every file a command writes so a failure can undo all of them."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.written = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write_text(self, name, text):
        os.makedirs(self.out_dir, exist_ok=True)
        final = self.path(name)
        tmp = final + ".tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, final)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(final)
        return final

    def write_trace(self, name, trace):
        os.makedirs(self.out_dir, exist_ok=True)
        final = self.path(name)
        write_trace_csv(trace, final)
        self.written.append(final)
        return final

    def discard_all(self):
        for path in self.written:
            try:
                os.unlink(path)
            except OSError:
                pass
        self.written.clear()


def _out_dir(flag_value, spec_value=None):
    return flag_value or spec_value or os.environ.get(OUT_ENV) or "."


def _check_burn_in(dspec, trace):
    if dspec.burn_in >= trace.positions.shape[0]:
        raise ConfigValidationError(
            [f"[diagnostics] burn_in {dspec.burn_in} leaves no draws; trace has "
             f"{trace.positions.shape[0]} rows per chain"])


def _diagnostic_files(art, base, trace, dspec, report, method):
    """Write the optional per-trace diagnostic CSVs and fold the headline
    numbers into ``report``."""
    _check_burn_in(dspec, trace)
    pts = trace.positions[dspec.burn_in:]
    pooled = pts.reshape(-1, trace.dim)
    paths = []

    if dspec.acf:
        per_chain = [acf_report(pts[:, c, :], dspec.acf_max_lag)
                     for c in range(trace.n_chains)]
        rho = np.mean([r.acf for r in per_chain], axis=0)
        times = np.median([r.iact for r in per_chain], axis=0)
        lines = ["coordinate,lag,acf"]
        for d in range(trace.dim):
            for lag in range(rho.shape[0]):
                lines.append(f"{d + 1},{lag},{'%.17g' % rho[lag, d]}")
        paths.append(art.write_text(f"{base}-acf.csv", "\n".join(lines) + "\n"))
        for d in range(trace.dim):
            report.add(method, f"iact_x{d + 1}", times[d], trace.n_chains)
        report.add(method, "median_iact", float(np.median(times)), trace.n_chains)

    if dspec.hpd_level is not None:
        lines = ["coordinate,lower,upper"]
        for d in range(trace.dim):
            lo, hi = hpd_interval(pooled[:, d], dspec.hpd_level)
            lines.append(f"{d + 1},{'%.17g' % lo},{'%.17g' % hi}")
        paths.append(art.write_text(f"{base}-hpd.csv", "\n".join(lines) + "\n"))

    if dspec.wants_occupancy:
        covs = [np.diag(np.asarray(d, dtype=float))
                for d in dspec.occupancy_cov_diags]
        occ = mode_occupancy(pts, dspec.occupancy_centers, covs,
                             dspec.occupancy_radius)
        lines = ["mode,fraction,count"]
        for k, (frac, cnt) in enumerate(zip(occ.fractions, occ.counts), start=1):
            lines.append(f"{k},{'%.17g' % frac},{int(cnt)}")
        lines.append(f"remainder,{'%.17g' % occ.remainder},"
                     f"{int(occ.n_samples - occ.counts.sum())}")
        paths.append(art.write_text(f"{base}-occupancy.csv", "\n".join(lines) + "\n"))
        for k, frac in enumerate(occ.fractions, start=1):
            report.add(method, f"mode{k}_fraction", frac, occ.n_samples)

    return paths


def _run_report(trace, dspec, method):
    report = ComparisonReport()
    report.add(method, "acceptance_rate", trace.acceptance_rate(), trace.n_chains)
    pooled = trace.positions[dspec.burn_in:].reshape(-1, trace.dim)
    for d in range(trace.dim):
        report.add(method, f"mean_x{d + 1}", float(pooled[:, d].mean()), pooled.shape[0])
        report.add(method, f"sd_x{d + 1}", float(pooled[:, d].std()), pooled.shape[0])
    return report


def cmd_run(args):
    spec = parse_experiment_file(args.config)
    art = _Artifacts(_out_dir(args.out, spec.output_dir))
    try:
        written = [art.write_text("resolved-config.ini", spec.resolved_text)]
        for r in range(spec.replicates):
            cfg = dataclasses.replace(spec.sampler, seed=spec.seed + r)
            trace = run(cfg, spec.target)
            base = f"{cfg.algorithm}-seed{cfg.seed}"
            report = ComparisonReport(seeds=(cfg.seed,))
            report.rows.extend(_run_report(trace, spec.diagnostics, cfg.algorithm).rows)
            written.append(art.write_trace(f"{base}-trace.csv", trace))
            written.extend(_diagnostic_files(art, base, trace, spec.diagnostics,
                                             report, cfg.algorithm))
            written.append(art.write_text(f"{base}-report.csv",
                                          "\n".join(report.csv_lines()) + "\n"))
            written.append(art.write_text(f"{base}-summary.txt", report.summary_text()))
    except BaseException:
        art.discard_all()
        raise
    for path in written:
        print(f"wrote {path}")
    return 0


def _load_counts(path):
    try:
        return load_count_pairs_csv(path)
    except OSError as exc:
        raise ConfigValidationError(
            [f"cannot read counts file {path}: {exc.strerror}"]) from None


def cmd_reproduce(args):
    counts = _load_counts(args.data) if args.data else None
    report = reproduce(args.experiment_id, seed=args.seed,
                       synthetic=args.synthetic, counts=counts)
    art = _Artifacts(_out_dir(args.out))
    try:
        paths = [
            art.write_text(f"{args.experiment_id}-report.csv",
                           "\n".join(report.csv_lines()) + "\n"),
            art.write_text(f"{args.experiment_id}-summary.txt", report.summary_text()),
        ]
    except BaseException:
        art.discard_all()
        raise
    sys.stdout.write(report.summary_text())
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_diag(args):
    try:
        trace = read_trace_csv(args.trace)
    except OSError as exc:
        raise ConfigValidationError(
            [f"cannot read trace file {args.trace}: {exc.strerror}"]) from None
    dspec = parse_diagnostics_file(args.spec)
    _check_burn_in(dspec, trace)
    base = os.path.splitext(os.path.basename(args.trace))[0]
    art = _Artifacts(_out_dir(args.out))
    try:
        report = ComparisonReport()
        report.rows.extend(_run_report(trace, dspec, "trace").rows)
        paths = _diagnostic_files(art, base, trace, dspec, report, "trace")
        paths.append(art.write_text(f"{base}-diag-summary.txt", report.summary_text()))
    except BaseException:
        art.discard_all()
        raise
    for path in paths:
        print(f"wrote {path}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="multitry",
        description="Multiple-try and interacting-population MCMC runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sampler described by an INI config")
    p_run.add_argument("config", help="experiment config file")
    p_run.add_argument("--out", default=None,
                       help=f"output directory (default: config output_dir, then ${OUT_ENV}, then .)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("reproduce", help="rerun one of the canned comparison studies")
    p_rep.add_argument("experiment_id", metavar="id",
                       help=f"one of: {', '.join(EXPERIMENT_IDS)}")
    p_rep.add_argument("--seed", type=int, default=None, help="override the canned seed")
    p_rep.add_argument("--out", default=None, help="output directory")
    p_rep.add_argument("--synthetic", action="store_true",
                       help="generate the paired-count dataset instead of reading one")
    p_rep.add_argument("--data", default=None, metavar="CSV",
                       help="paired-count CSV with rows 'x,n'")
    p_rep.set_defaults(func=cmd_reproduce)

    p_diag = sub.add_parser("diag", help="compute diagnostics for a saved trace")
    p_diag.add_argument("trace", help="trace CSV written by the run command")
    p_diag.add_argument("spec", help="config file with a [diagnostics] section")
    p_diag.add_argument("--out", default=None, help="output directory")
    p_diag.set_defaults(func=cmd_diag)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for message in exc.violations:
            print(f"error: {message}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MultitryError as exc:
        print(f"sampling failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
