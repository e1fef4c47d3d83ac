"""Trace replay: integrity, state-machine re-execution and full re-simulation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import agent as am
from .protocol import ConfigError
from .scenario import ScenarioConfig
from .trace import SCHEMA_VERSION, Trace, canonical_json, config_hash

OK = 0
CONFIG_ERROR = 1
DIVERGED = 4


@dataclass(frozen=True)
class ReplayResult:
    code: int
    message: str
    record: dict | str | None = None

    @property
    def ok(self) -> bool:
        return self.code == OK


def simulate(config: dict, seed: int, engine: str) -> Trace:
    from .serve import ServeSimulation
    from .sim import ProtocolSimulation

    scenario = ScenarioConfig.from_dict(config)
    if engine == "serve":
        return ServeSimulation(scenario, seed).run()
    if engine == "protocol":
        return ProtocolSimulation(scenario, seed).run()
    raise ConfigError([f"unknown engine {engine!r}"])


def step_replay(trace: Trace) -> ReplayResult:
    """Feed every recorded agent event back through ``agent.step`` and compare state digests."""
    from .sim import state_digest

    cfg = ScenarioConfig.from_dict(trace.config).protocol_config()
    states = [am.init(i, cfg) for i in range(cfg.n_agents)]
    for rec in trace.of_kind("state"):
        a = rec["agent"]
        st, _ = am.step(states[a], am.decode_event(rec["event"]), cfg)
        states[a] = st
        if state_digest(st) != rec["digest"]:
            return ReplayResult(DIVERGED, f"agent {a} state differs at seq {rec['seq']}", rec)
    return ReplayResult(OK, f"{len(trace.of_kind('state'))} agent steps reproduced")


def replay_text(text: str, config: ScenarioConfig | None = None) -> ReplayResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        trace = Trace.from_jsonl(text)
        header = trace.header
        version = header.get("schema_version")
        if version != SCHEMA_VERSION:
            return ReplayResult(CONFIG_ERROR, f"unsupported trace schema_version {version!r}")
        if config_hash(header["config"]) != header["config_hash"]:
            return ReplayResult(DIVERGED, "embedded config does not match its hash", lines[0])
        if config is not None and config.hash != header["config_hash"]:
            return ReplayResult(
                CONFIG_ERROR,
                f"config mismatch: trace was produced from {header['config_hash'][:12]}, "
                f"given config hashes to {config.hash[:12]}",
            )
        engine, seed = header["engine"], header["seed"]
        if engine == "protocol":
            stepped = step_replay(trace)
            if not stepped.ok:
                return stepped
        fresh = simulate(header["config"], seed, engine)
    except ConfigError as exc:
        return ReplayResult(DIVERGED, f"embedded config unusable: {exc}")
    except (ValueError, KeyError, TypeError, AttributeError, IndexError) as exc:
        return ReplayResult(DIVERGED, f"trace unreadable: {exc!r}")

    expected = fresh.lines()
    for i, (got, want) in enumerate(zip(lines, expected)):
        try:
            same = canonical_json(json.loads(got)) == want
        except ValueError:
            same = False
        if not same:
            return ReplayResult(DIVERGED, f"first divergence at line {i + 1}", got)
    if len(lines) != len(expected):
        return ReplayResult(DIVERGED, f"trace has {len(lines)} lines, re-simulation {len(expected)}")
    return ReplayResult(OK, f"{len(lines)} lines reproduced bit-identically")


def replay_file(path, config: ScenarioConfig | None = None) -> ReplayResult:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        return ReplayResult(DIVERGED, f"trace is not valid UTF-8: {exc}")
    return replay_text(text, config)
