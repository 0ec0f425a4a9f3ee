#!/usr/bin/env python3
"""Starpath CLI - reshuffled SGD runs and star-convex path diagnostics.

Commands:
    starpath train   -c <config>                 # run SGD, write the trace
    starpath analyze -t <trace> -c <config>      # residuals, audits, CSV report
    starpath plot    -d <report dir>             # SVG charts from the report

Exit codes: 0 ok, 1 failure, 2 config error, 3 divergence,
4 fingerprint mismatch, 5 missing report input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from starpath.analyzer import (
    PathReport,
    alternate_reference_residuals,
    analyze,
    make_reference,
    resolve_lipschitz,
)
from starpath.config_loader import ExperimentConfig, build_problem, build_x0, load_experiment
from starpath.constants import (
    AUDIT_TOLERANCE,
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_FAILURE,
    EXIT_FINGERPRINT,
    EXIT_MISSING_REPORT,
    EXIT_OK,
)
from starpath.errors import (
    ConfigError,
    CoverageError,
    DivergenceError,
    FingerprintMismatchError,
    MissingReportError,
    TraceFormatError,
)
from starpath.plots import write_plots
from starpath.report import write_alternate, write_report
from starpath.sgdrun import load_trace, run, save_trace
from starpath.utils import VERSION, Style, print_check, print_error, print_success, print_warning, setup_logging

# ── Help text ────────────────────────────────────────────────────────

HELP_TEXT = f"""\
Starpath v{VERSION} - star-convex path diagnostics for reshuffled SGD

Commands:
  starpath train -c CONFIG              Run SGD and write the trace file
  starpath analyze -t TRACE -c CONFIG   Compute residuals, distances, audits; write CSVs
  starpath plot -d REPORT_DIR           Render SVG charts from a report directory
  starpath help                         Show this help text

Options:
  --verbose, -v         Enable debug logging
  --version             Show version

Environment:
  STARPATH_OUT                 Override output.dir
  STARPATH_<SECTION>_<KEY>     Override any config value
  STARPATH_MNIST_DIR           Directory holding the MNIST IDX files
"""


def _load_config(path: str) -> ExperimentConfig:
    try:
        return load_experiment(path)
    except ConfigError as exc:
        print_error(f"Config error: {exc}")
        sys.exit(EXIT_CONFIG)


# ── Command handlers ─────────────────────────────────────────────────


def cmd_train(args: argparse.Namespace) -> None:
    """Train on the configured problem and write the trace."""
    cfg = _load_config(args.config)
    try:
        problem = build_problem(cfg)
        x0 = build_x0(cfg, problem)
        run_cfg = cfg.run_config()
    except ConfigError as exc:
        print_error(f"Config error: {exc}")
        sys.exit(EXIT_CONFIG)

    trace_path = Path(args.output) if args.output else cfg.output.trace_path
    print(f"{Style.BOLD}Training{Style.RESET} {problem!r}")
    print(f"  eta={run_cfg.eta:g}  epochs={run_cfg.epochs}  seed={run_cfg.seed}  "
          f"record={run_cfg.record_policy.kind}")

    def on_epoch(B: int, mean_loss: float) -> None:
        print(f"  epoch {B:>6}  loss {mean_loss:.6e}")

    try:
        trace = run(problem, x0, run_cfg, on_epoch=on_epoch)
    except DivergenceError as exc:
        if exc.trace is not None:
            save_trace(exc.trace, trace_path)
            print_warning(f"Partial trace written to {trace_path}")
        print_error(f"Diverged: {exc}")
        sys.exit(EXIT_DIVERGED)

    save_trace(trace, trace_path)
    print_success(f"Trace written to {trace_path} ({len(trace.checkpoints)} checkpoints)")
    sys.exit(EXIT_OK)


def _print_summary(report: PathReport) -> None:
    epochs = report.epochs
    nonpositive = sum(1 for row in epochs if row.e_B <= 0.0)
    print_check(nonpositive == len(epochs),
                f"e_B <= 0 in {nonpositive}/{len(epochs)} epochs", warn_only=True)

    dists = [d for _, d in report.distance_series]
    increases = sum(1 for a, b in zip(dists, dists[1:]) if b > a + AUDIT_TOLERANCE)
    print_check(increases == 0, f"distance to x* increased in {increases} epochs", warn_only=True)

    for audit in (report.epoch_audit, report.step_audit):
        if audit is None:
            continue
        total = audit.total
        print_check(
            total.violated == 0,
            f"{audit.name} audit: {total.checked} checked, {total.vacuous} vacuous, "
            f"{total.violated} violated ({total.violated_raw} without slack)",
            warn_only=True,
        )
    if report.sc_fraction:
        mean = sum(f for _, f in report.sc_fraction) / len(report.sc_fraction)
        print(f"  mean star-convex fraction over {len(report.sc_fraction)} recorded epochs: {mean:.3f}")
    print(f"  L_hat = {report.lipschitz:.6g} ({report.lipschitz_source}); "
          f"reference {report.reference.origin}, f(x*) = {report.reference.achieved_loss:.3e}")


def cmd_analyze(args: argparse.Namespace) -> None:
    """Analyze a trace against the configured problem and write the report."""
    cfg = _load_config(args.config)
    try:
        problem = build_problem(cfg)
    except ConfigError as exc:
        print_error(f"Config error: {exc}")
        sys.exit(EXIT_CONFIG)

    try:
        trace = load_trace(args.trace)
    except (OSError, TraceFormatError) as exc:
        print_error(f"Cannot read trace {args.trace}: {exc}")
        sys.exit(EXIT_FAILURE)

    if trace.fingerprint != problem.fingerprint:
        print_error(str(FingerprintMismatchError(trace.fingerprint, problem.fingerprint)))
        sys.exit(EXIT_FINGERPRINT)
    if trace.diverged:
        print_warning("Trace is from a diverged run; analyzing the completed epochs only")

    analysis = cfg.analysis
    out_dir = Path(args.output) if args.output else cfg.output.report_dir
    workers = args.workers or analysis.workers
    try:
        ref = make_reference(trace, problem, analysis.reference_mode, eps_loss=analysis.eps_loss)
        lipschitz = resolve_lipschitz(trace, problem, trials=analysis.lipschitz_trials, seed=cfg.run.seed)
        report = analyze(
            trace, problem, ref,
            eps_loss=analysis.eps_loss,
            audits=analysis.audits,
            subsequences=analysis.subsequences,
            lipschitz=lipschitz,
            workers=workers,
        )
        write_report(report, out_dir)
        if analysis.alternate_epochs:
            alternates = alternate_reference_residuals(
                trace, problem, analysis.alternate_epochs, eps_loss=analysis.eps_loss,
            )
            write_alternate(alternates, out_dir)
    except (CoverageError, ValueError) as exc:
        print_error(f"Analysis failed: {exc}")
        sys.exit(EXIT_FAILURE)

    print(f"{Style.BOLD}Path diagnostics{Style.RESET} ({trace.epochs_completed} epochs)")
    _print_summary(report)
    print_success(f"Report written to {out_dir}")
    sys.exit(EXIT_OK)


def cmd_plot(args: argparse.Namespace) -> None:
    """Render SVG charts from a report directory."""
    try:
        written, notices = write_plots(args.dir)
    except MissingReportError as exc:
        print_error(str(exc))
        sys.exit(EXIT_MISSING_REPORT)
    for note in notices:
        print_warning(note)
    for path in written:
        print(f"  {path}")
    print_success(f"{len(written)} charts written to {args.dir}")
    sys.exit(EXIT_OK)


def cmd_help(args: argparse.Namespace) -> None:
    print(HELP_TEXT)
    sys.exit(EXIT_OK)


# ── Main ─────────────────────────────────────────────────────────────


def main(argv: Optional[List[str]] = None) -> None:
    parser = argparse.ArgumentParser(
        prog="starpath",
        description="Reshuffled SGD with star-convex path diagnostics.",
        add_help=True,
    )
    parser.add_argument(
        "--verbose", "-v", action="store_true",
        help="Enable debug logging",
    )
    parser.add_argument(
        "--version", action="version", version=f"starpath {VERSION}",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # train
    p_train = subparsers.add_parser("train", help="Run SGD and write the trace")
    p_train.add_argument("--config", "-c", required=True, help="Experiment config file")
    p_train.add_argument("--output", "-o", default=None, help="Trace path (default: from config)")
    p_train.set_defaults(func=cmd_train)

    # analyze
    p_analyze = subparsers.add_parser("analyze", help="Compute diagnostics and write the CSV report")
    p_analyze.add_argument("--trace", "-t", required=True, help="Trace file written by train")
    p_analyze.add_argument("--config", "-c", required=True, help="Experiment config file")
    p_analyze.add_argument("--output", "-o", default=None, help="Report directory (default: from config)")
    p_analyze.add_argument("--workers", "-w", type=int, default=None,
                           help="Threads for per-epoch analysis (overrides analysis.workers)")
    p_analyze.set_defaults(func=cmd_analyze)

    # plot
    p_plot = subparsers.add_parser("plot", help="Render SVG charts from a report directory")
    p_plot.add_argument("--dir", "-d", required=True, help="Report directory")
    p_plot.set_defaults(func=cmd_plot)

    # help
    p_help = subparsers.add_parser("help", help="Show this help text")
    p_help.set_defaults(func=cmd_help)

    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    if not args.command:
        print(HELP_TEXT)
        sys.exit(EXIT_OK)

    args.func(args)


if __name__ == "__main__":
    main()
