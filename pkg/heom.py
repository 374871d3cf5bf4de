"""
Command-line front end for the HEOM solver.

    python heom.py run configs/decay.json
    python heom.py converge configs/spin_boson_converge.json --output sweep.json
    python heom.py bcf configs/dephasing.json
    python heom.py stochastic configs/spin_boson.json --threads 4 --seed 7
    python heom.py validate
    python heom.py validate --profile quick

Exit codes: 0 success, 1 the workflow failed (including a depth sweep that
did not converge or a failed acceptance criterion), 2 the run document could
not be parsed or validated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from config import ConfigError, ParseError, ValidationError, load_config
from services import SimulationService
from validation import PROFILES, format_table, run_validation, validation_report

LOG_LEVEL_ENV = "HEOM_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
COMMANDS = ("run", "converge", "bcf", "stochastic")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_CONFIG = 2


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Hierarchical equations of motion for a qubit coupled to a bosonic bath")
    parser.add_argument(
        "--log-level",
        default=os.environ.get(LOG_LEVEL_ENV, "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help=f"Logging level (default from {LOG_LEVEL_ENV}, else INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for command in COMMANDS:
        p = sub.add_parser(command, help=f"{command} workflow for a JSON run document")
        p.add_argument("config", type=Path, help="Path to the JSON run document")
        p.add_argument("--output", type=Path, default=None, help="Override output.path of the document")
        p.add_argument(
            "--threads", type=int, default=1, help="Worker threads for stochastic ensembles; other commands ignore it"
        )
        p.add_argument("--seed", type=int, default=None, help="Override stochastic.seed of the document")

    p = sub.add_parser("validate", help="Run the built-in acceptance suite")
    p.add_argument(
        "--profile",
        choices=sorted(PROFILES),
        default="full",
        help="full runs the acceptance suite; quick is a reduced-size development run",
    )
    p.add_argument("--output", type=Path, default=None, help="Write the JSON report here")
    p.add_argument("--no-stochastic", action="store_true", help="Skip the stochastic cross-method checks")
    return parser.parse_args(argv)


def _run_workflow(args: argparse.Namespace) -> int:
    try:
        spec = load_config(args.config)
    except ParseError as e:
        print(f"[ERROR] {args.config}: malformed document at {e}")
        return EXIT_BAD_CONFIG
    except ValidationError as e:
        print(f"[ERROR] {args.config}: invalid field {e.field}: {e}")
        return EXIT_BAD_CONFIG
    except ConfigError as e:
        print(f"[ERROR] {e}")
        return EXIT_BAD_CONFIG

    if args.threads < 1:
        print(f"[ERROR] --threads must be >= 1, got {args.threads}")
        return EXIT_BAD_CONFIG
    if args.threads > 1 and args.command != "stochastic":
        print(f"[WARN] --threads only applies to the stochastic command; {args.command} runs single-threaded")

    service = SimulationService(output=args.output, threads=args.threads, seed=args.seed)
    print(f"[INFO] {args.command}: {spec.model.kind} with a {spec.bath.kind} bath")
    result = getattr(service, f"cmd_{args.command}")(spec)

    if not result["success"]:
        if "path" in result:
            print(f"[WARN] {result['message']} (report written to {result['path']})")
        else:
            print(f"[ERROR] {result['message']}")
        return EXIT_FAILED
    print(f"[DONE] {result['message']} -> {result['path']}")
    return EXIT_OK


def _run_validation(args: argparse.Namespace) -> int:
    print(f"[INFO] Running the {args.profile} acceptance profile...")
    results = run_validation(args.profile, include_stochastic=not args.no_stochastic)
    print(format_table(results))
    report = validation_report(results, args.profile)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text + "\n", encoding="utf-8")
        print(f"[INFO] Saved report to {args.output}")
    else:
        print(text)

    failed = [c.name for c in results if not c.passed]
    if failed:
        print(f"[WARN] {len(failed)} criteria failed: {', '.join(failed)}")
        return EXIT_FAILED
    print(f"[DONE] All {len(results)} criteria passed")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    if args.command == "validate":
        return _run_validation(args)
    return _run_workflow(args)


if __name__ == "__main__":
    sys.exit(main())
