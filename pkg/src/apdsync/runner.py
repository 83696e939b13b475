"""
Command-line entry point for apdsync.

    simulate  --config PATH --out DIR [--t-end S] [--fixed-dt S]
    sweep     --config PATH --out DIR [--workers N]
    classify  --config PATH [--out DIR]
    embed     --config PATH --tau S --dim K --out PATH
    summarize --grid PATH

Exit status is 0 on success, 1 for usage and validation errors and 2 when a
simulation fails numerically.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .analyzer import EmbeddingConfig, delay_embed, uniform_grid
from .config import SweepSpec, load_config, with_overrides
from .errors import ApdSyncError, ConfigError
from .result_logger import ResultLogger, RunManifest, summarize_grid, write_portrait_csv
from .sweep import label_counts, regime_observable, run_sweep, simulate_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

WORKERS_ENV = "APD_SYNC_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports bad usage as an exception instead of exiting with 2."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="apdsync", description="Synchronize two dissipative quantum oscillators "
                                                 "through a common classical drive")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one scenario and write its time series")
    p.add_argument("--config", required=True, help="scenario YAML")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--t-end", type=float, default=None, help="override run.t_end (s)")
    p.add_argument("--fixed-dt", type=float, default=None, help="use fixed-step RK4 with this step (s)")

    p = sub.add_parser("sweep", help="run a detuning scan or a mismatch grid")
    p.add_argument("--config", required=True, help="sweep YAML")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: ${WORKERS_ENV}, else CPU count)")

    p = sub.add_parser("classify", help="print the dynamical regime of a scenario")
    p.add_argument("--config", required=True, help="scenario YAML")
    p.add_argument("--out", default=".", help="directory for classify.manifest.json (default: current)")

    p = sub.add_parser("embed", help="write the delay-embedded portrait of a scenario")
    p.add_argument("--config", required=True, help="scenario YAML")
    p.add_argument("--tau", type=float, required=True, help="embedding delay (s)")
    p.add_argument("--dim", type=int, required=True, help="embedding dimension")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("summarize", help="print E_avg range and regime counts of a grid CSV")
    p.add_argument("--grid", required=True, help="grid.csv written by sweep")
    return parser


def resolve_workers(flag: Optional[int]) -> int:
    if flag is not None:
        workers = flag
    elif os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer (got {os.environ[WORKERS_ENV]!r})")
    else:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise ConfigError(f"workers must be >= 1 (got {workers})")
    return workers


def _scenario(path: str, **overrides):
    cfg = load_config(path)
    if any(v is not None for v in overrides.values()):
        cfg = with_overrides(cfg, **overrides)
    if isinstance(cfg, SweepSpec):
        logger.warning("%s describes a sweep; using its base scenario", path)
        cfg = cfg.base
    return cfg


def cmd_simulate(args) -> int:
    cfg = _scenario(args.config, t_end=args.t_end, fixed_dt=args.fixed_dt)
    outcome = simulate_scenario(cfg)
    out = ResultLogger(args.out)
    out.timeseries(outcome, cfg.run.output_dt)
    if outcome.portrait is not None:
        out.portrait(outcome.portrait)
    out.manifest("simulate", cfg, outcome.drive.digest())

    report = outcome.report
    print(f"{cfg.label}: E_avg={report.E_avg:.6g} "
          f"t_sync={'never' if report.t_sync is None else f'{report.t_sync:.6g} s'} "
          f"regime={report.regime} status={report.status}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    if not isinstance(spec, SweepSpec):
        raise ConfigError(f"{args.config} has no 'sweep' section")
    grid = run_sweep(spec, resolve_workers(args.workers))
    out = ResultLogger(args.out)
    out.grid(grid)
    out.manifest("sweep", spec, grid.provenance.drive_digest if grid.provenance else None)

    failed = sum(1 for c in grid.cells if c.status != "ok")
    print(f"{spec.base.label}: {len(grid)} cells, {failed} not ok, regimes {label_counts(grid)}")
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = _scenario(args.config)
    outcome = simulate_scenario(cfg)
    regime = outcome.report.regime
    if regime.lyapunov_estimate is not None:
        logger.info("Lyapunov estimate %.6g 1/s", regime.lyapunov_estimate)
    result = {"regime": str(regime), "lyapunov_per_s": regime.lyapunov_estimate,
              "levels": list(regime.levels), "n_clusters": regime.n_clusters}
    manifest = RunManifest("classify", cfg.config_hash(), cfg.resolved(), drive_digest=outcome.drive.digest(),
                           result=result)
    manifest.write(Path(args.out) / "classify.manifest.json")
    print(regime)
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _scenario(args.config)
    base = cfg.run.embedding.resample_dt
    samples_per_tau = max(1, round(args.tau / base)) if args.tau > 0 else 1
    embedding = EmbeddingConfig(args.tau, args.dim, args.tau / samples_per_tau)

    outcome = simulate_scenario(cfg)
    observable = regime_observable(cfg.analysis.regime_observable, outcome.controller, outcome.moments, outcome.drive)
    window = min(cfg.analysis.steady_window, cfg.run.t_end)
    grid = uniform_grid(cfg.run.t_end - window, cfg.run.t_end, embedding.resample_dt)
    portrait = delay_embed(observable(grid), embedding)

    path = write_portrait_csv(portrait, args.out, times=grid)
    manifest = RunManifest("embed", cfg.config_hash(), cfg.resolved(), drive_digest=outcome.drive.digest(),
                           outputs=[path.name])
    manifest.write(path.with_suffix(".manifest.json"))
    print(f"{path}: {portrait.shape[0]} points, dim={args.dim}, observable={cfg.analysis.regime_observable}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    summary = summarize_grid(args.grid)
    print(f"Grid summary: {args.grid}")
    print(f"   - cells: {summary['cells']} ({summary['ok']} ok)")
    print(f"   - E_avg range: {summary['e_avg_min']:.6g} - {summary['e_avg_max']:.6g}")
    if "worst_cell" in summary:
        worst = ", ".join(f"{k}={v:g}" for k, v in summary["worst_cell"].items())
        print(f"   - largest E_avg at: {worst}")
    for regime, count in summary["regimes"].items():
        print(f"   - {regime}: {count}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "classify": cmd_classify,
    "embed": cmd_embed,
    "summarize": cmd_summarize,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit status."""
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"apdsync: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except ApdSyncError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
