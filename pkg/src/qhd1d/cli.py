"""Command line: ``qhd1d <subcommand> --config FILE``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 acceptance
violation (``selftest``, or a sufficiency counterexample in ``sweep``).
Errors are one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import config
from .errors import ConfigError, NumericalFailure, QHDError, ValidationError
from .pipelines import COMMANDS, EXIT_ACCEPTANCE, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION

SUBCOMMANDS = tuple(COMMANDS) + ("selftest",)
SELFTEST_DIR = "qhd1d_selftest"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qhd1d", description="1-D viscous QHD-Poisson numerical lab")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="run configuration file")
    return p


def _error_line(code: str, message, kind: str) -> str:
    msg = str(message).replace("\n", " ")
    return json.dumps({"error": code, "kind": kind, "message": msg}, sort_keys=True)


def write_acceptance(results, out: str) -> list:
    from .report import emit_report
    rows = [{"criterion": r.number, "title": r.title, "passed": r.passed} for r in results]
    summary = {str(r.number): {"title": r.title, "passed": r.passed, "metrics": r.metrics} for r in results}
    return emit_report(out, "acceptance", ("csv", "json"), (("criterion", "title", "passed"), rows), summary)


def selftest(out: str, stream=None) -> int:
    """Run the acceptance suite; PASS/FAIL lines to ``stream``, timings to stderr."""
    from .acceptance import run_all

    results = run_all(log=lambda line: print(line, file=sys.stderr))
    write_acceptance(results, out)
    for r in results:
        print(r.line(), file=stream or sys.stdout)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.command == "selftest":
            if args.config:
                out = config.load(args.config, "selftest").output_dir
            else:
                out = os.environ.get(config.OUT_ENV) or SELFTEST_DIR
            return selftest(out)
        if not args.config:
            raise ConfigError(f"{args.command} needs --config")
        cfg = config.load(args.config, args.command)
        code, summary = COMMANDS[args.command](cfg, cfg.output_dir)
        if code == EXIT_NUMERICAL:
            code_, _, msg = (summary.get("failure") or "truncated: trajectory truncated").partition(": ")
            print(_error_line(code_, msg, "Truncated"), file=sys.stderr)
        elif code == EXIT_ACCEPTANCE:
            print(_error_line("counterexample", f"sufficiency counterexamples {summary['counterexamples']}",
                              "AuditViolation"), file=sys.stderr)
        return code
    except ValidationError as exc:
        print(_error_line(exc.code, exc, type(exc).__name__), file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(_error_line(exc.code, exc, type(exc).__name__), file=sys.stderr)
        return EXIT_NUMERICAL
    except QHDError as exc:  # output I/O: an unusable output directory is a configuration error
        print(_error_line(exc.code, exc, type(exc).__name__), file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run())
