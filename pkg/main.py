"""Command-line entry point for the adaptive process engine."""

import argparse
import json
import sys
from typing import List, Optional

import numpy as np
from loguru import logger

from config.settings import settings
from services.context_store import context_from_runtime
from services.model_io import load_model
from services.qos import block_qos_table, bound_profiles, monte_carlo_qos
from services.tactics import default_library
from services.transform import transform
from tasks.mape_loop import run_scenario
from utils.errors import EngineError, ModelSyntaxError, ModelValidationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ERROR = 2


def configure_logging() -> None:
    """Send log records to stderr at the configured level."""
    logger.remove()
    logger.add(sys.stderr, level=settings.LOG_LEVEL.upper(),
               format="{time:HH:mm:ss} | {level: <8} | {name}:{function} - {message}")


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))


def cmd_validate(args) -> int:
    load_model(args.path)
    print(f"{args.path}: valid")
    return EXIT_OK


def cmd_run(args) -> int:
    model = load_model(args.path)
    report, trace, engine = run_scenario(
        model,
        seed=args.seed,
        horizon_ms=args.horizon_ms,
        adaptation=not args.no_adaptation,
        verify=True if args.verify else None,
    )
    if args.trace:
        trace.write(args.trace)
        logger.info(f"Wrote {len(trace)} trace events to {args.trace}")
    data = report.to_dict()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"Wrote report to {args.report}")
    else:
        _print_json(data)
    if engine.mismatches:
        logger.error(f"Causal connection broken in {len(engine.mismatches)} ticks")
        return EXIT_ERROR
    return EXIT_OK


def cmd_qos(args) -> int:
    model = load_model(args.path)
    analytic = block_qos_table(model)
    output = {label: {"analytic": qos.to_dict()} for label, qos in sorted(analytic.items())}
    if args.monte_carlo:
        rng = np.random.default_rng(args.seed)
        profiles = bound_profiles(model)
        for label, (_, node) in sorted(model.labeled_nodes().items()):
            sampled = monte_carlo_qos(node, profiles, args.monte_carlo, rng)
            output[label]["monte_carlo"] = sampled.to_dict()
    _print_json(output)
    return EXIT_OK


def cmd_dump_runtime_model(args) -> int:
    _print_json(transform(load_model(args.path)).to_dict())
    return EXIT_OK


def cmd_dump_context(args) -> int:
    ctx = context_from_runtime(transform(load_model(args.path)))
    for fact in ctx.to_dict()["facts"]:
        print(json.dumps(fact, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_dump_tactics(args) -> int:
    _print_json(default_library().to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-engine", description=__doc__)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. tradeoff.lambda=0.5")
    parser.add_argument("--log-level", help="override LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="check a model file")
    validate.add_argument("path")
    validate.set_defaults(handler=cmd_validate)

    run = commands.add_parser("run", help="simulate a model's scenario with adaptation")
    run.add_argument("path")
    run.add_argument("--seed", type=int)
    run.add_argument("--horizon-ms", type=int)
    run.add_argument("--trace", help="write the JSON-lines trace here")
    run.add_argument("--report", help="write the run report here instead of stdout")
    run.add_argument("--no-adaptation", action="store_true", help="monitor only, for baselines")
    run.add_argument("--verify", action="store_true", help="check the causal connection every tick")
    run.set_defaults(handler=cmd_run)

    qos = commands.add_parser("qos", help="structural QoS of every labeled block")
    qos.add_argument("path")
    qos.add_argument("--analytic", action="store_true", help="analytic values only (default)")
    qos.add_argument("--monte-carlo", type=int, default=0, metavar="N",
                     help="also estimate by simulating N executions")
    qos.add_argument("--seed", type=int, default=0)
    qos.set_defaults(handler=cmd_qos)

    for name, handler, text in (
        ("dump-runtime-model", cmd_dump_runtime_model, "print the runtime model as JSON"),
        ("dump-context", cmd_dump_context, "print the initial context facts as JSON lines"),
    ):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("path")
        sub.set_defaults(handler=handler)

    tactics = commands.add_parser("dump-tactics", help="print the tactic library as JSON")
    tactics.set_defaults(handler=cmd_dump_tactics)
    return parser


def _parse_overrides(pairs: List[str]) -> dict:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got '{pair}'")
        overrides[key.strip()] = value.strip()
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, apply configuration and dispatch to a command."""
    args = build_parser().parse_args(argv)

    # Validate settings
    try:
        if args.config:
            settings.load_file(args.config)
        settings.apply_overrides(_parse_overrides(args.set))
        if args.log_level:
            settings.LOG_LEVEL = args.log_level
        settings.validate()
    except (OSError, ValueError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_ERROR
    configure_logging()

    try:
        return args.handler(args)
    except ModelSyntaxError as e:
        print(f"{getattr(args, 'path', '')}:{e.line}:{e.column}: {e.reason}", file=sys.stderr)
        return EXIT_INVALID
    except ModelValidationError as e:
        for element, message in getattr(e, "problems", [(e.element, e.message)]):
            print(f"{element}: {message}", file=sys.stderr)
        return EXIT_INVALID
    except EngineError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
