"""Command-line entry point: ``graphfl {run,compare,budget,graph-check,export-data,default-config}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .experiment import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    emit_budget_table,
    format_summary,
    run_comparison,
)
from .task import ConvergenceError, estimate_theory_constants
from .topology import GraphSpec, TopologyError, build_combination_matrix, validate

logger = logging.getLogger("graphfl")


def _config(args, extra=()) -> ExperimentConfig:
    overrides = list(args.set or ()) + list(extra)
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _add_config_flags(parser):
    parser.add_argument("-c", "--config", help="config file (defaults apply to unset keys)")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key; repeatable"
    )


def _output_dir(args, config: ExperimentConfig) -> Path:
    return Path(args.out or config.output_dir)


def cmd_run(args) -> int:
    config = _config(args, [f"scheme={args.scheme}"] if args.scheme else [])
    config = parse_config(serialize_config(config), [f"schemes={config.scheme}"])
    result = run_comparison(config, _output_dir(args, config))
    print(format_summary(result))
    return result.exit_code


def cmd_compare(args) -> int:
    config = _config(args)
    result = run_comparison(config, _output_dir(args, config))
    print(format_summary(result))
    print(f"outputs written to {_output_dir(args, config)}")
    return result.exit_code


def cmd_budget(args) -> int:
    config = _config(args)
    mu = args.mu if args.mu is not None else config.mu
    sigma_g = args.sigma_g if args.sigma_g is not None else config.sigma_g
    bound = args.gradient_bound
    if bound is None:
        bound = estimate_theory_constants(config.make_dataset(), config.rho).gradient_bound
        logger.info("measured gradient bound B = %.6g", bound)
    rows = emit_budget_table(mu, bound, sigma_g, args.i_max, args.out)
    if args.out is None:
        print("i,delta,epsilon")
        for i, delta, epsilon in rows:
            print(f"{i},{delta!r},{epsilon!r}")
    return EXIT_OK


def cmd_graph_check(args) -> int:
    if args.edges is not None or args.preset is not None:
        nodes = args.nodes or 10
        spec = GraphSpec.from_preset(
            "edges" if args.edges is not None else args.preset,
            nodes,
            edge_prob=args.edge_prob,
            seed=args.graph_seed,
            edges=args.edges or "",
        )
    else:
        spec = _config(args).graph_spec()
    matrix = build_combination_matrix(spec)
    report = validate(matrix)
    print(f"nodes={spec.node_count} edges={len(spec.edges)} spectral_gap={matrix.spectral_gap:.12g}")
    print(report.format())
    return EXIT_OK if report.passed else EXIT_CONFIG_ERROR


def cmd_export_data(args) -> int:
    config = _config(args)
    config.make_dataset().to_csv(args.out)
    return EXIT_OK


def cmd_default_config(args) -> int:
    sys.stdout.write(serialize_config(_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per run")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a single scheme")
    _add_config_flags(run)
    run.add_argument("--scheme", choices=("none", "iid", "hybrid"))
    run.add_argument("-o", "--out", help="output directory (default: output_dir from config)")
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="simulate every scheme listed in the config")
    _add_config_flags(compare)
    compare.add_argument("-o", "--out", help="output directory (default: output_dir from config)")
    compare.set_defaults(func=cmd_compare)

    budget = sub.add_parser("budget", help="privacy budget table")
    _add_config_flags(budget)
    budget.add_argument("--mu", type=float)
    budget.add_argument("--sigma-g", type=float)
    budget.add_argument("--gradient-bound", type=float, help="B; measured from the config's dataset if omitted")
    budget.add_argument("--i-max", type=int, default=100)
    budget.add_argument("-o", "--out", help="CSV path (default: stdout)")
    budget.set_defaults(func=cmd_budget)

    check = sub.add_parser("graph-check", help="validate a server graph's combination matrix")
    _add_config_flags(check)
    check.add_argument("--preset", choices=("ring", "path", "complete", "random"))
    check.add_argument("--nodes", type=int)
    check.add_argument("--edges", help="explicit edge list, e.g. '0-1, 1-2'")
    check.add_argument("--edge-prob", type=float, default=0.3)
    check.add_argument("--graph-seed", type=int, default=0)
    check.set_defaults(func=cmd_graph_check)

    export = sub.add_parser("export-data", help="write the synthetic dataset as CSV")
    _add_config_flags(export)
    export.add_argument("-o", "--out", required=True)
    export.set_defaults(func=cmd_export_data)

    defaults = sub.add_parser("default-config", help="print the fully expanded config")
    _add_config_flags(defaults)
    defaults.set_defaults(func=cmd_default_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ConvergenceError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
