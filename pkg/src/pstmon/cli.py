"""Command-line entry point: ``pstmon {check,dual,table,proxy,replay,simulate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pst, sim, transport

EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (FileNotFoundError, IsADirectoryError):
        raise _Fail(EX_NOINPUT, f"cannot open {path}") from None


def _load_type(path: str) -> pst.SessionType:
    try:
        return pst.load(_read(path))
    except pst.PSTSyntaxError as exc:
        raise _Fail(EX_DATAERR, f"{path}:{exc}") from None
    except pst.InvalidSessionType as exc:
        raise _Fail(EX_DATAERR, "\n".join(f"{path}:{d}" for d in exc.diagnostics)) from None


def _level(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("confidence must lie in [0, 1)")
    return value


def cmd_check(args) -> int:
    try:
        t = pst.parse(_read(args.file))
    except pst.PSTSyntaxError as exc:
        print(f"{args.file}:{exc}")
        return 1
    diagnostics = pst.validate(t)
    for d in diagnostics:
        print(f"{args.file}:{d}")
    return 1 if diagnostics else 0


def cmd_dual(args) -> int:
    print(pst.pretty(pst.dual(_load_type(args.file)), indent=2))
    return 0


def cmd_table(args) -> int:
    print(pst.build_table(_load_type(args.file)).format())
    return 0


def cmd_replay(args) -> int:
    t = _load_type(args.file)
    try:
        records = transport.parse_trace(_read(args.trace))
    except transport.TraceError as exc:
        raise _Fail(EX_DATAERR, f"{args.trace}: {exc}") from None
    out = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        result = transport.replay_records(t, args.confidence, records, transport.EventLog(out))
    finally:
        if args.log:
            out.close()
    for rec in result.unreachable:
        print(f"{args.trace}:{rec.lineno}: unreachable after the session stopped: {rec}", file=sys.stderr)
    if result.status == transport.EXIT_INCOMPLETE:
        print("session incomplete: trace ended before the session terminated", file=sys.stderr)
    return result.status


def cmd_proxy(args) -> int:
    _load_type(args.file)
    try:
        cfg = transport.SessionConfig(args.file, args.confidence, args.listen, args.forward, args.log,
                                      not args.no_halt_on_violation, args.capture)
    except ValueError as exc:
        raise _Fail(EX_USAGE, str(exc)) from None
    return transport.run_proxy(cfg)


def cmd_simulate(args) -> int:
    _read(args.config)
    try:
        cfg = sim.load_config(args.config)
    except FileNotFoundError as exc:
        raise _Fail(EX_NOINPUT, str(exc)) from None
    except (KeyError, ValueError, pst.PSTSyntaxError) as exc:
        raise _Fail(EX_DATAERR, f"{args.config}: {exc}") from None
    try:
        result = cfg.run()
    except sim.ModelError as exc:
        raise _Fail(EX_DATAERR, f"{args.config}: {exc}") from None
    if args.out:
        sim.write_results(result, args.out)
    print(json.dumps(result.summary(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pstmon", description="Probabilistic session type monitor.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("check", help="validate a session type file")
    s.add_argument("file")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("dual", help="print the dual type")
    s.add_argument("file")
    s.set_defaults(func=cmd_dual)

    s = sub.add_parser("table", help="print the choice point table")
    s.add_argument("file")
    s.set_defaults(func=cmd_table)

    s = sub.add_parser("replay", help="run a recorded trace through the monitor")
    s.add_argument("file")
    s.add_argument("trace")
    s.add_argument("--confidence", type=_level, required=True)
    s.add_argument("--log", help="write the event log here instead of stdout")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("proxy", help="monitor a live session between a client and a server")
    s.add_argument("file")
    s.add_argument("--confidence", type=_level, required=True)
    s.add_argument("--listen", required=True, help="host:port the client connects to")
    s.add_argument("--forward", required=True, help="host:port of the server")
    s.add_argument("--log")
    s.add_argument("--no-halt-on-violation", action="store_true")
    s.add_argument("--capture", help="record a replayable trace of the session")
    s.set_defaults(func=cmd_proxy)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    s.add_argument("config")
    s.add_argument("--out", help="directory for runs.csv and summary.json")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EX_USAGE
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"pstmon: {exc}", file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        # the reader went away (e.g. piped into head); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1


if __name__ == "__main__":
    sys.exit(main())
