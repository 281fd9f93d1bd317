# ABOUTME: CLI entry point for selforg-sim.
# ABOUTME: Provides 'run', 'replay', 'validate' and 'demo-theorem1' commands.

import argparse
import json
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from .config import ConfigError, SchemaError, load_scenario
from .criteria.library import resolve_criterion
from .demons import ChurnSchedule, DemonClass, check_schedule, read_schedule
from .engine import RunResult, build_report, run_scenario, run_divergence_demo
from .logging_config import JsonLogFormatter
from .model import SimulationError
from .monitors import KernelKind, OrgClass
from .report import FORMATS, emit_report
from .tracefile import TraceFormatError, replay

EXIT_OK = 0
EXIT_BELOW_EXPECTED = 1
EXIT_ERROR = 2

CLASS_CHOICES = [k.value for k in OrgClass]


def setup_logging(log_path: Path | None = None, verbose: bool = False) -> None:
    """Configure logging for the application.

    Args:
        log_path: Optional path for log file. If provided, enables rotating file logging.
        verbose: Log at DEBUG instead of INFO.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(JsonLogFormatter())
    root_logger.addHandler(console_handler)

    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_path,
            maxBytes=10 * 1024 * 1024,  # 10 MB
            backupCount=5,
            encoding="utf-8",
        )
        file_handler.setFormatter(JsonLogFormatter())
        root_logger.addHandler(file_handler)


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _gate(org_class: OrgClass, expect: str | None) -> int:
    if expect is None or org_class.rank >= OrgClass(expect).rank:
        return EXIT_OK
    logging.getLogger(__name__).info(f"Verdict {org_class.value} is below the expected {expect}")
    return EXIT_BELOW_EXPECTED


def cmd_run(args: argparse.Namespace) -> int:
    """Run a scenario file and write its outputs."""
    logger = logging.getLogger(__name__)

    scenario = load_scenario(args.scenario).with_overrides(
        seed=args.seed, horizon=args.horizon, snapshot_interval=args.snapshot_interval
    )
    logger.info(f"Loaded scenario '{scenario.name}' ({scenario.protocol})", extra={"scenario": scenario.name})

    report = run_scenario(scenario, args.out, args.format)
    _emit(
        {
            "scenario": scenario.name,
            "class": report.org_class.value,
            "pending": list(report.verdict.pending),
            "demon_promise_kept": report.demon_promise_kept,
        }
    )
    if not report.demon_promise_kept:
        return EXIT_BELOW_EXPECTED
    return _gate(report.org_class, args.expect)


def cmd_replay(args: argparse.Namespace) -> int:
    """Verify a trace file by re-execution and classify it."""
    replayed = replay(args.trace)
    scenario = replayed.scenario or {}
    criterion = args.criterion or scenario.get("criterion")
    if not criterion:
        raise ConfigError("Trace header names no criterion; pass --criterion")
    protocol = replayed.header["protocol"]
    gc = resolve_criterion(criterion, protocol)
    demon = DemonClass(scenario.get("demon", {}).get("class", DemonClass.ARBITRARY.value))
    kernel = KernelKind(scenario.get("kernel", KernelKind.TOPOLOGICAL.value))

    result = RunResult(replayed.trace, ChurnSchedule(demon))
    name = scenario.get("name", args.trace.stem)
    report = build_report(name, result, gc, replayed.trace.model, demon, kernel)
    report.trace_path = args.trace
    if args.out:
        if args.format == "both":
            emit_report(report, args.out, "both")
        else:
            target = "report.jsonl" if args.format == "records" else "summary.csv"
            emit_report(report, args.out / target, args.format)
    _emit(
        {
            "trace": str(args.trace),
            "class": report.org_class.value,
            "verified_hashes": replayed.checked_hashes,
            "verified_snapshots": replayed.checked_snapshots,
            "pending": list(report.verdict.pending),
        }
    )
    return _gate(report.org_class, args.expect)


def cmd_validate(args: argparse.Namespace) -> int:
    """Check a schedule file against a scenario's demon specification."""
    logger = logging.getLogger(__name__)

    scenario = load_scenario(args.scenario)
    schedule = read_schedule(args.schedule)
    problems = check_schedule(scenario.demon_spec(), schedule, scenario.initial_nodes)
    for problem in problems:
        logger.warning(f"Schedule problem: {problem}")
    _emit({"schedule": str(args.schedule), "valid": not problems, "problems": problems})
    return EXIT_OK if not problems else EXIT_BELOW_EXPECTED


def cmd_demo_divergence(args: argparse.Namespace) -> int:
    """Run the adversarial divergence construction and print its witness."""
    demo = run_divergence_demo(horizon=args.horizon or 10_000, seed=args.seed or 0, out_dir=args.out)
    _emit(
        {
            "diverged": demo.diverged,
            "actions": len(demo.trace),
            "churn_events": demo.churn_events,
            "stable_configurations": demo.stable_configurations,
            "converged_without_churn": demo.converged_without_churn,
            "liveness_witness": demo.witness,
        }
    )
    return EXIT_OK if demo.diverged else EXIT_BELOW_EXPECTED


COMMANDS = {
    "run": cmd_run,
    "replay": cmd_replay,
    "validate": cmd_validate,
    "demo-theorem1": cmd_demo_divergence,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selforg-sim",
        description="Simulate protocols under churn and classify their self-organization",
    )
    parser.add_argument("--log-file", type=Path, help="Also write JSON logs to this rotating file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log every executed action")

    subparsers = parser.add_subparsers(dest="command", required=True)

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, help="Override the scenario seed")
        p.add_argument("--horizon", type=int, help="Override the event budget")

    run_parser = subparsers.add_parser("run", help="Run a scenario file")
    run_parser.add_argument("scenario", type=Path, help="Scenario YAML file")
    run_parser.add_argument("out", type=Path, help="Output directory")
    run_flags(run_parser)
    run_parser.add_argument("--snapshot-interval", type=int, help="Actions between trace snapshots")
    run_parser.add_argument("--format", choices=FORMATS, default="both", help="Report format (default: both)")
    run_parser.add_argument("--expect", choices=CLASS_CHOICES, help="Exit 1 when the verdict is below this class")

    replay_parser = subparsers.add_parser("replay", help="Verify a trace file and classify it")
    replay_parser.add_argument("trace", type=Path, help="Trace file written by 'run'")
    replay_parser.add_argument("--criterion", nargs="+", help="Criterion names (default: from the trace header)")
    replay_parser.add_argument("--out", type=Path, help="Directory for the replayed report")
    replay_parser.add_argument("--format", choices=FORMATS, default="both", help="Report format (default: both)")
    replay_parser.add_argument("--expect", choices=CLASS_CHOICES, help="Exit 1 when the verdict is below this class")

    validate_parser = subparsers.add_parser("validate", help="Check a schedule file against a scenario's demon")
    validate_parser.add_argument("schedule", type=Path, help="Schedule file")
    validate_parser.add_argument("scenario", type=Path, help="Scenario YAML file")

    demo_parser = subparsers.add_parser("demo-theorem1", help="Run the adversarial divergence construction")
    run_flags(demo_parser)
    demo_parser.add_argument("--out", type=Path, help="Directory for the demo trace")

    return parser


def main(argv: list[str] | None = None) -> None:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file, args.verbose)
    logger = logging.getLogger(__name__)

    try:
        code = COMMANDS[args.command](args)
    except SchemaError as e:
        logger.error(f"Schema error: {e}")
        code = EXIT_ERROR
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        code = EXIT_ERROR
    except TraceFormatError as e:
        logger.error(f"Trace format error: {e}")
        code = EXIT_ERROR
    except SimulationError as e:
        logger.error(f"Simulation error: {e}")
        code = EXIT_ERROR
    sys.exit(code)


if __name__ == "__main__":
    main()
