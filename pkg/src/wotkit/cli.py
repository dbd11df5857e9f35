"""Command line entry point.

Usage::

    wotkit --experiment brenier_strassen --n-points 200 --epsilon 0.01 --out runs/bs
    wotkit --config sweep.json --seed 3
    wotkit check-order mu.csv nu.csv

Exit status: 0 on success, 2 if any cell did not converge, 3 on invalid
configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, WotkitError
from .experiments import EXPERIMENTS, ExperimentConfig, run_check_order, run_experiment

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3


def _t_grid(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad t grid {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wotkit", description="Entropic weak transport with moment constraints.")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--n-points", type=int, dest="n_points")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--t-grid", type=_t_grid, dest="t_grid", help="comma separated, e.g. 0,0.5,1")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--spec", help="problem JSON for the solve experiment")
    p.add_argument("--mu", help="measure CSV (check_order)")
    p.add_argument("--nu", help="measure CSV (check_order)")
    p.add_argument("--max-iters", type=int, dest="max_outer_iters")
    p.add_argument("--polish", choices=("newton", "none"))
    p.add_argument("--samples", type=int, help="number of random couplings (sliced_test)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if "out" in data:
            data["output_dir"] = data.pop("out")
    for key in (
        "experiment",
        "n_points",
        "epsilon",
        "zeta",
        "t_grid",
        "seed",
        "output_dir",
        "spec",
        "mu",
        "nu",
        "max_outer_iters",
        "samples",
    ):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.polish is not None:
        data["polish"] = None if args.polish == "none" else args.polish
    return ExperimentConfig.from_dict(data)


def _check_order_main(argv) -> int:
    p = _Parser(prog="wotkit check-order", description="Convex order test for two 1D measures.")
    p.add_argument("mu")
    p.add_argument("nu")
    args = p.parse_args(argv)
    try:
        cfg = ExperimentConfig("check_order", mu=args.mu, nu=args.nu)
        rep = run_check_order(cfg).summary
    except (ConfigError, WotkitError, OSError, ValueError) as exc:
        print(f"wotkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(rep, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "check-order":
        return _check_order_main(argv[1:])
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        config = _config_from_args(args)
    except ConfigError as exc:
        print(f"wotkit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"wotkit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.experiment == "check_order":
        print(json.dumps(result.summary, indent=2, sort_keys=True))
    if not result.converged:
        print("wotkit: some cells did not converge; see summary.json", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
