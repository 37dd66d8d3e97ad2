"""``wadi``: run scenarios, export logs, plot them, serve a live plant.

Exit codes: 0 on success, 2 on configuration problems (unknown scenario,
bad document, unresolvable references), 1 on unexpected runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .configs import attack_names, scenario_names
from .plant import ConfigError
from .plotting import plot_run
from .runner import RunResult, ScenarioLog, load_scenario, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wadi",
        description="Deterministic water-plant twin: scenarios, logs, plots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="play a scenario to the end")
    p_run.add_argument("scenario", help="shipped scenario name or JSON path")
    p_run.add_argument("--csv", metavar="PATH", help="write the run log here")
    p_run.add_argument(
        "--serve", metavar="PORT", type=int, default=None,
        help="expose the live engine on this TCP port (0 picks one)",
    )
    p_run.add_argument(
        "--pace-ms", metavar="MS", type=float, default=None,
        help="hold each tick to MS wall milliseconds (for live clients)",
    )
    p_run.add_argument(
        "--serve-ui", metavar="DIR", default=None,
        help="serve this directory plus a /ws bridge over HTTP",
    )
    p_run.add_argument(
        "--http-port", metavar="PORT", type=int, default=8070,
        help="HTTP port for --serve-ui (default 8070)",
    )
    p_run.add_argument(
        "--summary", action="store_true",
        help="print the JSON run summary to stdout",
    )

    p_base = sub.add_parser("baseline", help="shorthand: run the baseline scenario")
    p_base.add_argument("--csv", metavar="PATH")

    p_plot = sub.add_parser("plot", help="render SVG charts from a run log")
    p_plot.add_argument("csv", help="run log written by `wadi run --csv`")
    p_plot.add_argument("--out", metavar="DIR", default="plots")

    sub.add_parser("list", help="print shipped scenarios and attack documents")
    return parser


def _summary(result: RunResult) -> dict:
    return {
        "scenario": result.scenario.name,
        "ticks": len(result.log) - 1,
        "duration_s": result.scenario.duration_s,
        "violations": [v.as_dict() for v in result.violations],
        "attacks": [o.as_dict() for o in result.outcomes],
        "final_levels": {
            tag: round(level, 4)
            for tag, level in sorted(result.final_state.levels.items())
        },
        "consumer_delivered_l": round(
            result.final_state.consumer_totalizer_liters, 3
        ),
        "spilled_l": round(result.final_state.spilled_liters, 3),
    }


def _cmd_run(args: argparse.Namespace, scenario_name: str) -> int:
    scenario = load_scenario(scenario_name)
    bridge = None
    if getattr(args, "serve_ui", None) is not None:
        from .bridge import HmiBridge
        from .runner import build_engine

        # The bridge needs the engine before the run starts; run() builds its
        # own, so surface the live one through on_tick's engine argument by
        # starting the bridge lazily on the first tick.
        holder: dict = {}

        def on_tick(tick: int, time_s: float, engine) -> None:
            if "bridge" not in holder:
                holder["bridge"] = HmiBridge(
                    engine, host="127.0.0.1",
                    port=args.http_port, ui_dir=args.serve_ui,
                ).start()
                print(
                    f"ui: http://127.0.0.1:{holder['bridge'].port}/ "
                    f"(ws at /ws)", file=sys.stderr,
                )
    else:
        holder = {}

        def on_tick(tick: int, time_s: float, engine) -> None:
            return None

    try:
        result = run(
            scenario,
            port=getattr(args, "serve", None),
            pace_s=(
                None if getattr(args, "pace_ms", None) is None
                else args.pace_ms / 1000.0
            ),
            on_tick=on_tick,
        )
    finally:
        bridge = holder.get("bridge")
        if bridge is not None:
            bridge.stop()

    if args.csv:
        result.log.save(args.csv)
        print(f"log: {args.csv}", file=sys.stderr)
    summary = _summary(result)
    if getattr(args, "summary", False) or not args.csv:
        json.dump(summary, sys.stdout, indent=2)
        print()
    else:
        opened = {v.invariant_id for v in result.violations}
        print(
            f"{scenario.name}: {len(result.log) - 1} ticks, "
            f"{len(result.violations)} violations"
            + (f" ({', '.join(sorted(opened))})" if opened else ""),
            file=sys.stderr,
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, args.scenario)
        if args.command == "baseline":
            args.serve = None
            args.pace_ms = None
            args.serve_ui = None
            args.summary = False
            return _cmd_run(args, "baseline")
        if args.command == "plot":
            log = ScenarioLog.from_csv(Path(args.csv))
            for path in plot_run(log, args.out):
                print(path)
            return 0
        if args.command == "list":
            listing = {"scenarios": scenario_names(), "attacks": attack_names()}
            json.dump(listing, sys.stdout, indent=2)
            print()
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
