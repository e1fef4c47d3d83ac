"""Command-line interface.

Exit codes: 0 ok, 1 configuration error, 2 liveness violation, 3 property
failure, 4 replay divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checker, library, replay
from .checker import PreconditionError
from .protocol import ConfigError
from .reasoning import IncompleteOracleError, ScenarioError
from .scenario import ScenarioConfig
from .serve import ServeSimulation, round_metrics, serve_metrics
from .sim import ProtocolSimulation, run_metrics
from .trace import Trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_LIVENESS = 2
EXIT_PROPERTY = 3
EXIT_DIVERGED = 4

METRICS_COLUMNS = ["scenario", "seed", "mode", "query_id", "rounds", "t_complete", "p_round_max", "work_units", "forced"]
ROUND_COLUMNS = ["ensemble_id", "round", "mode", "t_round_end", "cancelled_count", "work_units"]


def load_scenario(ref: str) -> ScenarioConfig:
    """A scenario JSON file, or the name of a built-in scenario."""
    if Path(ref).exists():
        return ScenarioConfig.load(ref)
    if ref in library.BUILTIN:
        return library.BUILTIN[ref]()
    raise ConfigError([f"{ref}: no such file or built-in scenario"])


def resolve_seed(cli_seed: int | None, scenario: ScenarioConfig) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("AEGEAN_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError([f"AEGEAN_SEED must be an integer, got {env!r}"]) from None
    return scenario.seed


def parse_mode(spec: str) -> tuple[str, int | None]:
    if spec == "aegean":
        return "aegean", None
    kind, _, rounds = spec.partition(":")
    if kind == "barrier" and rounds.isdigit():
        return "barrier", int(rounds)
    raise ConfigError([f"mode must be 'aegean' or 'barrier:<rounds>', got {spec!r}"])


def simulate(scenario: ScenarioConfig, seed: int, engine: str) -> Trace:
    if engine == "serve":
        return ServeSimulation(scenario, seed).run()
    return ProtocolSimulation(scenario, seed).run()


def metrics_rows(trace: Trace) -> list[dict]:
    if trace.header["engine"] == "serve":
        return serve_metrics(trace)
    return [run_metrics(trace)]


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def _fail_config(exc: Exception) -> int:
    violations = getattr(exc, "violations", None) or [str(exc)]
    print("configuration error:", file=sys.stderr)
    for v in violations:
        print(f"  - {v}", file=sys.stderr)
    return EXIT_CONFIG


# -- subcommands ---------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.config)
        if args.mode:
            scenario = scenario.with_mode(*parse_mode(args.mode))
        seed = resolve_seed(args.seed, scenario)
        scenario.check()
        trace = simulate(scenario, seed, args.engine)
    except (ConfigError, ScenarioError) as exc:
        return _fail_config(exc)
    if args.out:
        trace.write(args.out)
    rows = metrics_rows(trace)
    if args.metrics:
        write_csv(args.metrics, rows, METRICS_COLUMNS)
    if args.round_metrics and args.engine == "serve":
        write_csv(args.round_metrics, round_metrics(trace), ROUND_COLUMNS)
    for o in trace.outputs:
        tag = " (forced)" if o["forced"] else ""
        who = f"query {o['query']}" if "query" in o else f"agent {o['agent']} term {o['term']}"
        print(f"t={o['t']:.3f} {who} round {o['round']}: output {o['solution']['answer']!r}{tag}")
    end = trace.records[-1]
    print(f"end: {end['reason']} at t={end['t']:.3f}, work units {end['work_units']:.3f}")
    if end["liveness_violation"]:
        print("liveness violation: no output although failures stayed within the tolerated bound", file=sys.stderr)
        return EXIT_LIVENESS
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        trace = Trace.read(args.trace)
        scenario = load_scenario(args.config) if args.config else ScenarioConfig.from_dict(trace.config)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail_config(exc)
    oracle, cfg = scenario.oracle, scenario.protocol_config()
    if trace.header.get("engine") == "serve":
        cfg = replace(cfg, alpha=scenario.serve_alpha)
    reports, refused = [], []
    try:
        reports.append(checker.check_monotonicity(trace, oracle, strict=args.strict))
        reports.append(checker.check_validity(trace, oracle, strict=args.strict))
        try:
            reports.append(checker.check_termination(trace, args.deadline))
        except PreconditionError as exc:
            refused.append(("termination", str(exc)))
        reports.append(checker.check_election_safety(trace))
        reports.append(checker.check_commit_discipline(trace, cfg))
    except IncompleteOracleError as exc:
        return _fail_config(ConfigError([f"incomplete oracle: {exc}"]))
    if args.json:
        print(json.dumps({
            "reports": [r.to_dict() for r in reports],
            "refused": [{"property": p, "reason": why} for p, why in refused],
        }, indent=2, sort_keys=True))
    else:
        print(checker.format_reports(reports))
        for p, why in refused:
            print(f"{p}: not checked, precondition violated ({why})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY


def cmd_compare(args) -> int:
    try:
        base = load_scenario(args.config)
        modes = [parse_mode(m.strip()) for m in args.modes.split(",") if m.strip()]
        first_seed = resolve_seed(args.seed, base)
        if args.seeds < 1:
            raise ConfigError(["--seeds must be >= 1"])
        for kind, rounds in modes:
            base.with_mode(kind, rounds).check()
    except (ConfigError, ScenarioError) as exc:
        return _fail_config(exc)
    header = ["mode", "runs", "mean_latency", "p99_latency", "mean_round", "total_work"]
    table = []
    all_rows = []
    liveness = False
    for kind, rounds in modes:
        scenario = base.with_mode(kind, rounds)
        latencies, round_times, work = [], [], 0.0
        for seed in range(first_seed, first_seed + args.seeds):
            trace = simulate(scenario, seed, args.engine)
            liveness |= trace.records[-1]["liveness_violation"]
            rows = metrics_rows(trace)
            all_rows += rows
            latencies += [r["t_complete"] for r in rows if r["t_complete"] is not None]
            round_times += [d["t_round"] for d in trace.of_kind("decision")]
            work += trace.records[-1]["work_units"]
        label = "aegean" if kind == "aegean" else f"barrier:{rounds}"
        lat = np.asarray(latencies, dtype=float)
        table.append([
            label,
            str(args.seeds),
            f"{lat.mean():.3f}" if lat.size else "-",
            f"{np.percentile(lat, 99):.3f}" if lat.size else "-",
            f"{np.mean(round_times):.3f}" if round_times else "-",
            f"{work:.3f}",
        ])
    widths = [max(len(r[i]) for r in [header] + table) for i in range(len(header))]
    for row in [header] + table:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    if args.metrics:
        write_csv(args.metrics, all_rows, METRICS_COLUMNS)
    return EXIT_LIVENESS if liveness else EXIT_OK


def cmd_replay(args) -> int:
    config = None
    if args.config:
        try:
            config = load_scenario(args.config)
        except ConfigError as exc:
            return _fail_config(exc)
    try:
        result = replay.replay_file(args.trace, config)
    except OSError as exc:
        return _fail_config(exc)
    stream = sys.stdout if result.ok else sys.stderr
    print(result.message, file=stream)
    if result.record is not None:
        rec = result.record if isinstance(result.record, str) else json.dumps(result.record, sort_keys=True)
        print(f"  {rec[:400]}", file=stream)
    return result.code


def cmd_scenarios(args) -> int:
    if args.export:
        out = Path(args.export)
        out.mkdir(parents=True, exist_ok=True)
        for name, build in library.BUILTIN.items():
            build().save(out / f"{name}.json")
    for name in library.BUILTIN:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aegean", description="Simulate and check refinement consensus runs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("config", help="scenario JSON file or built-in name")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="trace JSONL path")
    r.add_argument("--metrics", help="append per-query metrics to this CSV")
    r.add_argument("--round-metrics", help="append per-round metrics (serve engine) to this CSV")
    r.add_argument("--mode", help="override mode: aegean or barrier:<rounds>")
    r.add_argument("--engine", choices=("protocol", "serve"), default="protocol")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="run the property checkers on a trace")
    c.add_argument("trace")
    c.add_argument("config", nargs="?", help="scenario (defaults to the one embedded in the trace)")
    c.add_argument("--deadline", type=float)
    c.add_argument("--strict", action="store_true", help="include forced outputs")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("compare", help="compare modes across seeds")
    m.add_argument("config")
    m.add_argument("--modes", default="aegean,barrier:4,barrier:5,barrier:6")
    m.add_argument("--seeds", type=int, default=10)
    m.add_argument("--seed", type=int, help="first seed")
    m.add_argument("--metrics")
    m.add_argument("--engine", choices=("protocol", "serve"), default="protocol")
    m.set_defaults(func=cmd_compare)

    y = sub.add_parser("replay", help="re-execute a trace and verify it is reproduced exactly")
    y.add_argument("trace")
    y.add_argument("--config", help="fail with a config mismatch unless the trace came from this scenario")
    y.set_defaults(func=cmd_replay)

    s = sub.add_parser("scenarios", help="list built-in scenarios")
    s.add_argument("--export", metavar="DIR", help="write them as JSON files into DIR")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
