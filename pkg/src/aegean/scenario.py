"""Scenario configuration: the JSON document read by the simulators and the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .network import FaultPlan, LatencyModel, NetworkModel
from .protocol import ConfigError, ProtocolConfig, tolerated_failures, validate_config
from .reasoning import AgentProfile, QualityOracle
from .trace import SCHEMA_VERSION, config_hash


@dataclass(frozen=True)
class ServeSettings:
    """Knobs of the simulated serving layer."""

    total_slots: int = 64
    reservation_hints: bool = True
    heartbeat_misses: int = 3
    # agreement threshold used by the serving layer; None means protocol.alpha.
    # Unlike the protocol's alpha it may exceed the majority quorum.
    alpha: int | None = None

    def to_dict(self) -> dict:
        return {
            "total_slots": self.total_slots,
            "reservation_hints": self.reservation_hints,
            "heartbeat_misses": self.heartbeat_misses,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    task: str
    protocol: ProtocolConfig
    agents: tuple[AgentProfile, ...]
    oracle: QualityOracle
    network: NetworkModel = field(default_factory=NetworkModel)
    faults: FaultPlan = field(default_factory=FaultPlan)
    latency: LatencyModel = field(default_factory=LatencyModel)
    mode: str = "aegean"
    max_rounds: int | None = None
    arrivals: tuple[float, float] | None = None
    serve: ServeSettings = field(default_factory=ServeSettings)
    max_time: float = 10_000.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def n(self) -> int:
        return self.protocol.n_agents

    @property
    def barrier(self) -> bool:
        return self.mode == "barrier"

    def protocol_config(self) -> ProtocolConfig:
        if self.barrier:
            return replace(self.protocol, barrier_rounds=self.max_rounds)
        return self.protocol

    def latency_values(self) -> tuple[float, ...]:
        """Per-agent latency constant (or median), after profile overrides."""
        vals = self.latency.values
        return tuple(
            p.latency if p.latency is not None else vals[i % len(vals)] for i, p in enumerate(self.agents)
        )

    @property
    def serve_alpha(self) -> int:
        return self.protocol.alpha if self.serve.alpha is None else self.serve.alpha

    def with_mode(self, mode: str, max_rounds: int | None = None) -> ScenarioConfig:
        return replace(self, mode=mode, max_rounds=max_rounds if mode == "barrier" else None)

    @property
    def respects_failure_bound(self) -> bool:
        return len(self.faults.failed_agents) <= tolerated_failures(self.n)

    def validate(self) -> list[str]:
        errors = list(validate_config(self.protocol))
        if len(self.agents) != self.n:
            errors.append(f"{len(self.agents)} agent profiles for n_agents={self.n}")
        if self.mode not in ("aegean", "barrier"):
            errors.append(f"mode must be 'aegean' or 'barrier', got {self.mode!r}")
        if self.barrier and (self.max_rounds is None or self.max_rounds < 4):
            errors.append("barrier mode requires max_rounds >= 4")
        errors += self.network.validate()
        errors += self.latency.validate()
        for a, t in self.faults.crashes:
            if not 0 <= a < self.n:
                errors.append(f"crash of unknown agent {a}")
            if t < 0:
                errors.append("crash time must be >= 0")
        for a, _, _ in self.faults.stalls:
            if not 0 <= a < self.n:
                errors.append(f"stall of unknown agent {a}")
        for i, p in enumerate(self.agents):
            if p.latency is not None and p.latency < 0:
                errors.append(f"agent {i} latency must be >= 0")
        try:
            self.oracle.alphabet(self.task)
        except KeyError:
            errors.append(f"oracle has no table for task {self.task!r}")
        else:
            known = {a for a in self.oracle.alphabet(self.task)}
            for i, p in enumerate(self.agents):
                for ans in p.answers:
                    try:
                        self.oracle.evaluate(self.task, ans)
                    except KeyError:
                        errors.append(f"agent {i} answer {ans!r} missing from oracle table")
            if not known:
                errors.append("oracle table is empty")
        if self.arrivals is not None:
            rate, duration = self.arrivals
            if rate <= 0 or duration <= 0:
                errors.append("arrivals need a positive rate and duration")
        if self.serve.total_slots < 1:
            errors.append("serve.total_slots must be >= 1")
        if self.serve.heartbeat_misses < 1:
            errors.append("serve.heartbeat_misses must be >= 1")
        if self.serve.alpha is not None and not 1 <= self.serve.alpha <= self.n:
            errors.append(f"serve.alpha must be in [1, {self.n}], got {self.serve.alpha}")
        if self.max_time <= 0:
            errors.append("max_time must be positive")
        return errors

    def check(self) -> ScenarioConfig:
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        return self

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "task": self.task,
            "protocol": self.protocol.to_dict(),
            "agents": [p.to_dict() for p in self.agents],
            "oracle": self.oracle.to_dict(),
            "network": self.network.to_dict(),
            "faults": self.faults.to_dict(),
            "latency": self.latency.to_dict(),
            "mode": {"kind": self.mode, "max_rounds": self.max_rounds} if self.barrier else {"kind": "aegean"},
            "arrivals": None if self.arrivals is None else {"rate": self.arrivals[0], "duration": self.arrivals[1]},
            "serve": self.serve.to_dict(),
            "max_time": self.max_time,
            "seed": self.seed,
        }
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError([f"unsupported schema_version {version}"])
        try:
            task = d["task"]
            protocol = ProtocolConfig.from_dict(d["protocol"])
            agents = tuple(AgentProfile.from_dict(a) for a in d["agents"])
            table = d["oracle"]
            if table and all(not isinstance(v, dict) for v in table.values()):
                table = {task: table}
            mode = d.get("mode", {"kind": "aegean"})
            if isinstance(mode, str):
                mode = {"kind": mode}
            arrivals = d.get("arrivals")
            serve = d.get("serve", {})
            return cls(
                task=task,
                protocol=protocol,
                agents=agents,
                oracle=QualityOracle(table),
                network=NetworkModel.from_dict(d.get("network", {})),
                faults=FaultPlan.from_dict(d.get("faults", {})),
                latency=LatencyModel.from_dict(d.get("latency", {})),
                mode=mode["kind"],
                max_rounds=mode.get("max_rounds"),
                arrivals=None if arrivals is None else (arrivals["rate"], arrivals["duration"]),
                serve=ServeSettings(**serve),
                max_time=d.get("max_time", 10_000.0),
                seed=d.get("seed", 0),
                name=d.get("name", ""),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError([f"malformed scenario: {exc!r}"]) from exc

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
