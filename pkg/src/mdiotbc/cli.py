"""Command-line entry point.

    mdiotbc <protocol> --config <file> [--seed S] [--trials T] [--out DIR]
            [--emit-traces] [--jobs J]

Exit codes: 0 on completion, 2 on infeasible parameters, 1 on invalid
configuration or internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback

from .config import PROTOCOLS, ConfigError, load_config
from .runner import InfeasibleParameters, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdiotbc",
        description="Simulator and finite-size security-parameter engine for "
                    "measurement-device-independent bit commitment and oblivious transfer "
                    "in the bounded quantum storage model.")
    parser.add_argument("protocol", choices=PROTOCOLS, help="experiment to run")
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--trials", type=int, default=None, help="override trial count")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--emit-traces", action="store_true", help="write trace.jsonl")
    parser.add_argument("--jobs", type=int, default=None, help="parallel trial workers")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, protocol_override=args.protocol)
    except ConfigError as bad:
        print(f"invalid config: {bad}", file=sys.stderr)
        return 1
    except OSError as bad:
        print(f"cannot read config: {bad}", file=sys.stderr)
        return 1
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.emit_traces:
        overrides["emit_traces"] = True
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        config = dataclasses.replace(config, **overrides)
    try:
        result = run_experiment(config, out_dir=args.out)
    except InfeasibleParameters as bad:
        print(f"infeasible parameters: {bad}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
