"""``mavsession`` command line: dialect compile, check, scenarios, proxy, bench.

Exit codes: 0 success (or expected outcome matched), 1 violations found or
outcome mismatch, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CONFIG_ENV = "MAVSESSION_CONFIG"


class UsageError(Exception):
    pass


def _parse_params(pairs: Sequence[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {pair!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _config(args):
    from .proxy import config_from_document, load_config

    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    overrides = {
        "mode": getattr(args, "mode", None),
        "report_path": getattr(args, "report", None),
    }
    if getattr(args, "no_retransmission", False):
        overrides["retransmission"] = False
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} does not exist")
        return load_config(path, **overrides)
    return config_from_document({}, **overrides)


def _emit(args, human: str, data: Any) -> None:
    if args.json:
        print(json.dumps(data, sort_keys=True))
    elif not args.quiet and human:
        print(human)


def cmd_dialect_compile(args) -> int:
    from .dialect import emit_schema, load_dialect_file

    src = Path(args.xml)
    if not src.is_file():
        raise UsageError(f"dialect file {src} does not exist")
    dialect = load_dialect_file(src)
    if args.out:
        emit_schema(dialect, Path(args.out))
    else:
        sys.stdout.write(emit_schema(dialect))
    for w in dialect.warnings:
        print(f"warning: {w}", file=sys.stderr)
    info = {"messages": len(dialect.messages), "enums": len(dialect.enums), "out": args.out,
            "warnings": len(dialect.warnings)}
    if args.out:
        _emit(args, f"{len(dialect.messages)} messages, {len(dialect.enums)} enums -> {args.out}", info)
    return EXIT_OK


def cmd_check(args) -> int:
    from .harness import ALL_FORWARDED, load_trace, replay_trace

    if not Path(args.trace).is_file():
        raise UsageError(f"trace file {args.trace} does not exist")
    scenario = load_trace(args.trace)
    config = _config(args)
    report = replay_trace(scenario, config)
    expected = ALL_FORWARDED if args.expect == "clean" else scenario.expected
    outcome = report.outcome()
    ok = outcome == expected
    if args.decisions:
        Path(args.decisions).write_text("".join(line + "\n" for line in report.decision_lines()),
                                        encoding="utf-8")
    lines = []
    for v in report.violations:
        lines.append(f"violation: {v.protocol} {v.reason.value} at {v.label} ({v.direction})"
                     + (f" refinement `{v.refinement}`" if v.refinement else "")
                     + (f" env {{{', '.join(f'{k}={val}' for k, val in v.env.items())}}}" if v.env else ""))
    lines.append(f"{len(report.decisions)} decisions, {len(report.violations)} violation(s); "
                 f"outcome {outcome}, expected {expected}: {'ok' if ok else 'MISMATCH'}")
    data = dict(report.to_json(), expected=expected.to_json(), ok=ok)
    if not args.json and not args.quiet:
        print("\n".join(lines))
    elif args.json:
        print(json.dumps(data, sort_keys=True))
    elif not ok:
        print(lines[-1], file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scenarios(args) -> int:
    from .harness import SCENARIOS, dump_trace, generate_scenario

    if args.list or not args.kind:
        _emit(args, "\n".join(SCENARIOS), sorted(SCENARIOS))
        return EXIT_OK
    scenario = generate_scenario(args.kind, _parse_params(args.param), args.seed)
    text = dump_trace(scenario)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit(args, f"{len(scenario.records)} records, expected {scenario.expected} -> {args.out}",
              {"records": len(scenario.records), "expected": scenario.expected.to_json(), "out": args.out})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_proxy(args) -> int:
    from .proxy import run_proxy

    config = _config(args)
    summary = run_proxy(config, out=sys.stderr if args.json else sys.stdout, decisions_path=args.decisions)
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .harness import bench, generate_scenario, load_trace

    config = _config(args)
    if args.trace:
        scenario = load_trace(args.trace)
    else:
        scenario = generate_scenario(args.scenario, _parse_params(args.param) or {"N": 100}, args.seed)
    report = bench(config, scenario, args.reps)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, report.table(), report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting flags given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("-q", "--quiet", action="store_true", help="suppress human-readable output")
    common.add_argument("--json", action="store_true", help="print a machine-readable result on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    def with_config(p):
        p.add_argument("-c", "--config", help=f"proxy config file (default: ${CONFIG_ENV} or builtins)")
        p.add_argument("--mode", choices=["enforce", "warn"], help="override the enforcement mode")
        p.add_argument("--no-retransmission", action="store_true", help="disable retransmission tolerance")

    parser = argparse.ArgumentParser(prog="mavsession", parents=[common],
                                     description="Session-type attestation for MAVLink links.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    dialect = sub.add_parser("dialect", parents=[common], help="dialect tools")
    dsub = dialect.add_subparsers(dest="dialect_command", metavar="ACTION")
    dsub.required = True
    comp = dsub.add_parser("compile", parents=[common], help="compile dialect XML to a schema document")
    comp.add_argument("xml")
    comp.add_argument("-o", "--out")
    comp.set_defaults(func=cmd_dialect_compile)

    check = sub.add_parser("check", parents=[common], help="replay a trace through the monitors")
    check.add_argument("trace")
    with_config(check)
    check.add_argument("--expect", choices=["declared", "clean"], default="declared",
                       help="compare against the trace's declared outcome or require no violations")
    check.add_argument("--decisions", help="write the decision sequence as JSON lines")
    check.set_defaults(func=cmd_check, report=None)

    scen = sub.add_parser("scenarios", parents=[common], help="generate scenario traces")
    scen.add_argument("kind", nargs="?")
    scen.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE")
    scen.add_argument("--seed", type=int, default=0)
    scen.add_argument("-o", "--out")
    scen.add_argument("--list", action="store_true")
    scen.set_defaults(func=cmd_scenarios)

    proxy = sub.add_parser("proxy", parents=[common], help="run the UDP enforcement proxy")
    with_config(proxy)
    proxy.add_argument("--report", help="override the report log path")
    proxy.add_argument("--decisions", help="write every routing decision as JSON lines")
    proxy.set_defaults(func=cmd_proxy)

    b = sub.add_parser("bench", parents=[common], help="measure per-message decision latency")
    with_config(b)
    b.add_argument("--scenario", default="good_mission")
    b.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE")
    b.add_argument("--trace", help="bench a trace file instead of a generated scenario")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("-o", "--out", help="write the structured report here")
    b.set_defaults(func=cmd_bench, report=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .dialect import DialectError
    from .harness import InvalidParams, TraceParseError
    from .proxy import BindFailure, ConfigError
    from .session import IllFormedProtocol

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    # parent parsers share Action objects, so flag defaults are filled in here
    for flag in ("quiet", "json", "verbose"):
        if not hasattr(args, flag):
            setattr(args, flag, False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, BindFailure, DialectError, IllFormedProtocol, InvalidParams,
            TraceParseError, OSError) as exc:
        print(f"mavsession: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
