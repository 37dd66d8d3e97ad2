"""``attack``: drive attack documents against a live plant, assess impact.

Exit codes: 0 on success (including an attack whose start condition failed;
the outcome says so), 2 on configuration problems, 1 on transport failures.
"""
from __future__ import annotations

import argparse
import json
import sys

from .attacks import AttackSpecError, assess_impact, load_spec, run_attack
from .configs import attack_names
from .plant import ConfigError
from .protocol import default_port
from .runner import ScenarioLog


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attack",
        description="Attack toolkit for the water-plant twin's open protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an attack document over the network")
    p_run.add_argument("spec", help="shipped attack name or JSON path")
    p_run.add_argument(
        "--endpoint", default=f"127.0.0.1:{default_port()}",
        metavar="HOST:PORT", help="live engine to attack",
    )
    p_run.add_argument(
        "--lenient", action="store_true",
        help="execute even if the start condition does not hold",
    )
    p_run.add_argument(
        "--launch-offset", type=float, default=None, metavar="S",
        help="wait until the plant clock reaches S before launching",
    )
    p_run.add_argument(
        "--watch", type=float, default=None, metavar="S",
        help="keep watching the end condition for S plant seconds",
    )
    p_run.add_argument(
        "--timeout", type=float, default=120.0, metavar="S",
        help="wall-clock budget (default 120)",
    )

    p_show = sub.add_parser("show", help="print an attack document")
    p_show.add_argument("spec")

    sub.add_parser("list-builtin", help="list shipped attack documents")

    p_assess = sub.add_parser(
        "assess", help="diff an attacked run log against a baseline log"
    )
    p_assess.add_argument("attacked", help="CSV log of the attacked run")
    p_assess.add_argument("baseline", help="CSV log of the matching clean run")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = load_spec(args.spec)
            outcome = run_attack(
                spec,
                args.endpoint,
                lenient=args.lenient,
                launch_offset_s=args.launch_offset,
                watch_s=args.watch,
                wall_timeout_s=args.timeout,
            )
            json.dump(outcome.as_dict(), sys.stdout, indent=2)
            print()
            return 0
        if args.command == "show":
            json.dump(load_spec(args.spec).as_doc(), sys.stdout, indent=2)
            print()
            return 0
        if args.command == "list-builtin":
            rows = []
            for name in attack_names():
                spec = load_spec(name)
                rows.append({
                    "id": spec.id,
                    "name": spec.name,
                    "points": list(spec.points),
                    "kind": "single-point" if spec.single_point else "multi-point",
                })
            json.dump(rows, sys.stdout, indent=2)
            print()
            return 0
        if args.command == "assess":
            attacked = ScenarioLog.from_csv(args.attacked)
            baseline = ScenarioLog.from_csv(args.baseline)
            impact = assess_impact(attacked, baseline)
            json.dump(impact.as_dict(), sys.stdout, indent=2)
            print()
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except (AttackSpecError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
