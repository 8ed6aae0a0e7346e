"""
mctailor Command Line

Entry point for the tailoring pipeline:

    mctailor fixture --name oracle --out fixtures/oracle
    mctailor run --config config/oracle.env
    mctailor sample --config config/benchmark.env --set algorithm=rs

Exit codes: 0 success, 1 usage, 2 data, 3 starvation or budget,
4 verification failure.
"""

from __future__ import annotations
from typing import Any, Dict, List, NoReturn, Optional, Sequence
import argparse
import json
import logging
import sys

from .config import load_config, set_config
from .core.fixtures import FIXTURES, write_fixture
from .core.pipeline import PipelineRunner, parse_stages
from .schemas.errors import MCTailorError, UsageError
from .schemas.pipeline import Stage


logger = logging.getLogger("mctailor")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_USAGE = UsageError.exit_code
EXIT_INTERNAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def configure_logging(level: str = "INFO") -> None:
    """Logs go to stderr; stdout carries only command output."""
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--json", action="store_true", default=None, help="JSON on stdout")
    parser.add_argument("--workers", type=int, help="sampler worker threads")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config field (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mctailor", description="Tailor n-gram models with ratio estimators.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for stage in Stage:
        _add_common(sub.add_parser(stage.value, help=f"run the {stage.value} stage"))

    run = sub.add_parser("run", help="run several stages in dependency order")
    _add_common(run)
    run.add_argument(
        "--stages",
        default=",".join(s.value for s in Stage),
        help="comma-separated stage names (default: all)",
    )

    fixture = sub.add_parser("fixture", help="write a shipped fixture's corpora")
    fixture.add_argument("--name", required=True, choices=sorted(FIXTURES))
    fixture.add_argument("--out", required=True, help="directory for general.txt and domain.txt")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """--set pairs first, then the dedicated flags on top."""
    out: Dict[str, Any] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError("E_SET_SYNTAX", f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip().lower()] = value.strip()
    flags = {
        "seed": args.seed,
        "out_dir": args.out,
        "json_output": args.json,
        "workers": args.workers,
    }
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _emit(outputs: Dict[Stage, Any], as_json: bool) -> None:
    if as_json:
        payload = {stage.value: out.payload for stage, out in outputs.items()}
        if len(payload) == 1:
            payload = next(iter(payload.values()))
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return
    many = len(outputs) > 1
    for stage, out in outputs.items():
        if many:
            sys.stdout.write(f"== {stage.value} ==\n")
        sys.stdout.write(out.text)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "fixture":
        for role, path in write_fixture(args.name, args.out).items():
            sys.stdout.write(f"{role}: {path}\n")
        return EXIT_OK

    config = load_config(args.config, _overrides(args))
    set_config(config)
    configure_logging(config.log_level)

    stages: List[Stage] = (
        parse_stages(args.stages) if args.command == "run" else [Stage(args.command)]
    )
    _, outputs = PipelineRunner(config).run(stages)
    _emit(outputs, config.json_output)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    try:
        code = run_command(argv)
    except MCTailorError as e:
        sys.stderr.write(f"mctailor: error [{e.code}]: {e.message}\n")
        code = e.exit_code
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else EXIT_USAGE
    except Exception:
        logger.exception("Unexpected failure")
        code = EXIT_INTERNAL
    return code


if __name__ == "__main__":
    sys.exit(main())
