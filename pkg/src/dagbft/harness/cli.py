"""Command line entry point: run, sweep, check, replay."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from ..simnet import RunTrace
from .checks import run_checks
from .scenario import OUT_ENV, ScenarioConfig, load_scenario, run_scenario, simulate, sweep, trace_digest


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text: str):
        return None if text.lower() in ("none", "null") else conv(text)
    return parse


_CONVERTERS = {
    "str": str, "int": int, "float": float, "bool": _bool,
    "int | None": _optional(int), "float | None": _optional(float),
    "list[int]": json.loads, "list[int] | None": _optional(json.loads), "dict | None": _optional(json.loads),
}


def add_scenario_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("scenario fields (override the file)")
    for f in fields(ScenarioConfig):
        conv = _CONVERTERS[str(f.type)]
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"sc_{f.name}", type=conv, default=None,
                           metavar=str(f.type).split()[0].upper())


def scenario_from_args(args) -> ScenarioConfig:
    doc = load_scenario(args.scenario) if args.scenario else {}
    for f in fields(ScenarioConfig):
        value = getattr(args, f"sc_{f.name}")
        if value is not None:
            doc[f.name] = value
    return ScenarioConfig.from_dict(doc)


def out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "dagbft-out")) / name


def cmd_run(args) -> int:
    sc = scenario_from_args(args)
    target = out_dir(args, sc.name)
    report, trace, checks = run_scenario(sc, target)
    for r in checks.results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    print(f"latency {report.latency_rounds_mean:.3f} rounds, {report.latency_time_mean:.1f} ms; "
          f"commit rate {report.commit_rate:.3f}; timeouts {report.timeouts}")
    print(f"artifacts in {target}")
    if not checks.passed:
        print(f"counterexample in {target / 'report.json'}", file=sys.stderr)
    return 0 if checks.passed else 1


def cmd_sweep(args) -> int:
    doc = load_scenario(args.sweep)
    name = doc.get("base", {}).get("name", Path(args.sweep).stem)
    target = out_dir(args, name)
    reports, rows = sweep(doc, target, workers=args.workers)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports)} runs, {len(rows)} rows written to {target / 'results.csv'}")
    for r in failed:
        print(f"FAIL n={r.n} delta={r.delta} seed={r.seed}", file=sys.stderr)
    return 0 if not failed else 1


def _read_trace(path: str) -> RunTrace:
    return RunTrace.from_jsonl(Path(path).read_text())


def cmd_check(args) -> int:
    trace = _read_trace(args.trace)
    checks = run_checks(trace)
    for r in checks.results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        if not r.passed and r.counterexample is not None:
            print(json.dumps(r.counterexample, sort_keys=True))
    return 0 if checks.passed else 1


def cmd_replay(args) -> int:
    stored = _read_trace(args.trace)
    scenario = stored.header.get("scenario")
    if scenario is None:
        print("trace header has no scenario; cannot replay", file=sys.stderr)
        return 2
    fresh = simulate(ScenarioConfig.from_dict(scenario))
    a, b = trace_digest(stored), trace_digest(fresh)
    same = a == b
    print(f"{'identical' if same else 'DIVERGED'}: stored {a[:16]} replayed {b[:16]}")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagbft", description="Simulate and verify DAG atomic broadcast runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and check it")
    p.add_argument("scenario", nargs="?", help="scenario JSON file")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name>)")
    add_scenario_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid and write one CSV")
    p.add_argument("sweep", help="sweep JSON file with 'base' and 'grid'")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="re-run the checkers on a stored trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("replay", help="re-simulate a stored trace and compare digests")
    p.add_argument("trace")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
