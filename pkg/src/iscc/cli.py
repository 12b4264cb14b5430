"""Command line entry point: ``iscc run | validate | trace``.

Exit codes: 0 success, 2 validation failure, 3 infeasible or unusable config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import harness, waveform
from .aircomp import DesignVariables
from .channel import draw_comm_channel
from .config import ConfigError, SystemConfig, derive_sensing_budget, load_config, rng_substream
from .optimizer import SolverOptions, solve

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3

logger = logging.getLogger("iscc")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _methods(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = set(names) - set(harness.METHODS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods: {', '.join(sorted(bad))}")
    return names


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iscc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML config file (defaults if omitted)")
        sp.add_argument("--seed", type=_seed, help="override the config seed")

    run = sub.add_parser("run", help="run an experiment and write <out>/<experiment>.csv")
    run.add_argument("experiment", choices=harness.EXPERIMENTS)
    common(run)
    run.add_argument("--draws", type=int, default=200)
    run.add_argument("--out", type=Path, default=Path("results"))
    run.add_argument("--methods", type=_methods, default=harness.METHODS)
    run.add_argument("--grid", type=_floats, default=())
    run.add_argument("--timing", action="store_true", help="add a runtime column (not reproducible)")
    run.add_argument("--trials", type=int, default=10_000, help="Monte Carlo trials for validate")

    val = sub.add_parser("validate", help="run the oracle validation suite")
    common(val)
    val.add_argument("--out", type=Path, help="optional CSV report")
    val.add_argument("--trials", type=int, default=10_000)
    val.add_argument("--corrupt-aggregation", action="store_true",
                     help="negative control: use a wrong aggregator in the optimality check")
    val.add_argument("--export-traces", type=Path,
                     help="write per-trial (F, F_hat) pairs from the uplink Monte Carlo")

    tr = sub.add_parser("trace", help="write the two-phase convergence trace of one draw")
    common(tr)
    tr.add_argument("--out", type=Path, required=True)
    return p


def _load(args) -> tuple[SystemConfig, SolverOptions]:
    if args.config is None:
        cfg, rest = SystemConfig(), {}
    else:
        cfg, rest = load_config(args.config)
    options = SolverOptions.from_mapping(rest)
    unknown = set(rest) - set(asdict(options))
    if unknown:
        logger.warning("ignoring unknown config keys: %s", ", ".join(sorted(unknown)))
    if args.seed is not None:
        cfg = cfg.with_(rng_seed=args.seed)
    return cfg, options


def _cmd_run(args, cfg, options) -> int:
    if args.experiment == "validate":
        return _validate(cfg, options, args.trials, False, args.out / "validate.csv", None)
    if args.experiment == "convergence":
        args.out.mkdir(parents=True, exist_ok=True)
        harness.run_convergence_trace(cfg, options, out=args.out / "convergence.csv")
        return EXIT_OK
    spec = harness.ExperimentSpec(args.experiment, args.grid, args.draws, args.methods)
    table = harness.run_experiment(spec, cfg, options)
    path = harness.write_table(spec, table, cfg, cfg.rng_seed, options, args.out, timing=args.timing)
    logger.info("wrote %s", path)
    if all(r.status == "infeasible" for r in table.rows):
        logger.error("every grid point is infeasible")
        return EXIT_INFEASIBLE
    return EXIT_OK


def _validate(cfg, options, trials, corrupt, out, export) -> int:
    report = harness.run_validation_suite(cfg, n_trials=trials, corrupt_aggregation=corrupt,
                                          options=options)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured={c.measured:.6g} "
              f"threshold={c.threshold:.6g} {c.detail}".rstrip())
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(out, harness.metadata_lines(cfg, cfg.rng_seed, options=asdict(options)))
    if export is not None:
        comm = draw_comm_channel(cfg, rng_substream(cfg.rng_seed, "validate/channel"))
        sol = solve(comm, cfg, derive_sensing_budget(cfg), options)
        design = DesignVariables.aligned(sol.amplitudes, comm.response, sol.aggregation)
        _, pairs = waveform.empirical_aircomp_mse(design, comm, cfg, min(trials, 100),
                                                  rng_substream(cfg.rng_seed, "export"), keep=100)
        waveform.write_uplink_traces(export, pairs, harness.metadata_lines(cfg, cfg.rng_seed))
    return EXIT_OK if report.passed else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, options = _load(args)
        if args.command == "run":
            return _cmd_run(args, cfg, options)
        if args.command == "validate":
            return _validate(cfg, options, args.trials, args.corrupt_aggregation, args.out,
                             args.export_traces)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        harness.run_convergence_trace(cfg, options, out=args.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"iscc: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
