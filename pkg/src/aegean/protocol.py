"""Identifiers, wire messages, configuration and quorum arithmetic.

Everything here is an immutable value. Messages encode to JSON objects with a
``kind`` discriminator and snake_case fields, which is the form used in traces.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Any, ClassVar, Union

AgentId = int
TermNum = int
RoundNum = int


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class Role(str, enum.Enum):
    WORKER = "worker"
    CANDIDATE = "candidate"
    LEADER = "leader"


def quorum_size(n: int) -> int:
    if n <= 0:
        raise ConfigError([f"n_agents must be >= 1, got {n}"])
    return n // 2 + 1


def max_failures(n: int) -> int:
    """Largest number of fail-stop agents tolerated by ``n`` agents."""
    if n <= 0:
        raise ConfigError([f"n_agents must be >= 1, got {n}"])
    return math.ceil((n - 1) / 2)


def tolerated_failures(n: int) -> int:
    """Failures after which a live quorum still exists: ``n - quorum_size(n)``.

    Equals ``max_failures`` for odd ``n`` and is one less for even ``n``.
    """
    return n - quorum_size(n)


@dataclass(frozen=True)
class Solution:
    answer: str
    trace: str = ""
    author: AgentId = 0

    def __post_init__(self):
        if not isinstance(self.answer, str) or not self.answer.strip():
            raise ValueError("solution answer must be a non-empty string")

    def to_dict(self) -> dict:
        return {"answer": self.answer, "trace": self.trace, "author": self.author}

    @classmethod
    def from_dict(cls, d: dict) -> Solution:
        return cls(answer=d["answer"], trace=d.get("trace", ""), author=d["author"])


@dataclass(frozen=True)
class RefinementSet:
    """Solutions gathered from distinct agents in one round of one term.

    Round 0 is the initial-solution (Soln) collection.
    """

    entries: tuple[Solution, ...]
    term: TermNum
    round: RoundNum

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        authors = [s.author for s in self.entries]
        if len(set(authors)) != len(authors):
            raise ValueError(f"refinement set has duplicate authors: {authors}")

    def __len__(self):
        return len(self.entries)

    def authors(self) -> list[AgentId]:
        return [s.author for s in self.entries]

    def to_dict(self) -> dict:
        return {
            "entries": [s.to_dict() for s in self.entries],
            "term": self.term,
            "round": self.round,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RefinementSet:
        return cls(
            entries=tuple(Solution.from_dict(e) for e in d["entries"]),
            term=d["term"],
            round=d["round"],
        )


# -- wire messages -----------------------------------------------------------


@dataclass(frozen=True)
class Task:
    kind: ClassVar[str] = "Task"
    term: TermNum
    task: str


@dataclass(frozen=True)
class Soln:
    kind: ClassVar[str] = "Soln"
    term: TermNum
    id: AgentId
    solution: Solution


@dataclass(frozen=True)
class RefmSet:
    kind: ClassVar[str] = "RefmSet"
    term: TermNum
    round: RoundNum
    refinement_set: RefinementSet


@dataclass(frozen=True)
class Refm:
    kind: ClassVar[str] = "Refm"
    term: TermNum
    id: AgentId
    round: RoundNum
    solution: Solution


@dataclass(frozen=True)
class RequestVote:
    kind: ClassVar[str] = "RequestVote"
    term: TermNum


@dataclass(frozen=True)
class Vote:
    kind: ClassVar[str] = "Vote"
    term: TermNum
    id: AgentId


@dataclass(frozen=True)
class NewTerm:
    kind: ClassVar[str] = "NewTerm"
    term: TermNum


@dataclass(frozen=True)
class NewTermAck:
    """Reply to NewTerm.

    ``prior_term`` and ``round`` describe when the stored ``refinement_set`` was
    accepted, which is what the new leader's selection rule orders on.
    """

    kind: ClassVar[str] = "NewTermAck"
    new_term: TermNum
    prior_term: TermNum
    id: AgentId
    round: RoundNum
    refinement_set: RefinementSet | None

    @property
    def term(self) -> TermNum:
        return self.new_term


@dataclass(frozen=True)
class Heartbeat:
    kind: ClassVar[str] = "Heartbeat"
    term: TermNum


ProtocolMessage = Union[
    Task, Soln, RefmSet, Refm, RequestVote, Vote, NewTerm, NewTermAck, Heartbeat
]

MESSAGE_TYPES: dict[str, type] = {
    cls.kind: cls
    for cls in (Task, Soln, RefmSet, Refm, RequestVote, Vote, NewTerm, NewTermAck, Heartbeat)
}


def _encode_value(v: Any) -> Any:
    if isinstance(v, (Solution, RefinementSet)):
        return v.to_dict()
    return v


def encode_message(msg: ProtocolMessage) -> dict:
    out = {"kind": msg.kind}
    for f in fields(msg):
        out[f.name] = _encode_value(getattr(msg, f.name))
    return out


def decode_message(d: dict) -> ProtocolMessage:
    try:
        cls = MESSAGE_TYPES[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown message kind: {d.get('kind')!r}") from None
    kwargs = {}
    for f in fields(cls):
        v = d[f.name]
        if f.name == "solution":
            v = Solution.from_dict(v)
        elif f.name == "refinement_set" and v is not None:
            v = RefinementSet.from_dict(v)
        kwargs[f.name] = v
    return cls(**kwargs)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters.

    ``alpha`` defaults to the majority quorum. ``barrier_rounds`` switches the
    leader into the barrier baseline: wait for every agent each round, run a
    fixed number of rounds, then answer by plurality. ``quorum_grace`` lets a
    leader that already holds a quorum wait a little longer for stragglers
    before closing a round (0 closes immediately).
    """

    n_agents: int
    alpha: int | None = None
    beta: int = 2
    t_max: int = 5
    election_timeout: tuple[float, float] = (3.0, 6.0)
    heartbeat_interval: float = 1.0
    round_timeout: float = 60.0
    leader_mode: str = "predetermined"
    quorum_grace: float = 0.0
    barrier_rounds: int | None = None

    def __post_init__(self):
        if self.alpha is None and isinstance(self.n_agents, int) and self.n_agents >= 1:
            object.__setattr__(self, "alpha", quorum_size(self.n_agents))
        object.__setattr__(self, "election_timeout", tuple(self.election_timeout))

    @property
    def quorum(self) -> int:
        return quorum_size(self.n_agents)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["election_timeout"] = list(self.election_timeout)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ProtocolConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown protocol field(s): {sorted(unknown)}"])
        return cls(**d)


def validate_config(cfg: ProtocolConfig) -> list[str]:
    """Return every violated invariant of ``cfg``; an empty list means ok."""
    errors = []
    n = cfg.n_agents
    if not isinstance(n, int) or n < 1:
        errors.append(f"n_agents must be an integer >= 1, got {n!r}")
        q = None
    else:
        q = quorum_size(n)
    if cfg.alpha is None or cfg.alpha < 1:
        errors.append(f"alpha must be >= 1, got {cfg.alpha!r}")
    elif q is not None and cfg.alpha > q:
        errors.append(f"alpha exceeds quorum ({cfg.alpha} > {q})")
    if cfg.beta < 1:
        errors.append(f"beta must be >= 1, got {cfg.beta}")
    if cfg.t_max < 2:
        errors.append(f"t_max must be >= 2, got {cfg.t_max}")
    lo, hi = cfg.election_timeout
    if not 0 < lo <= hi:
        errors.append(f"election_timeout must satisfy 0 < low <= high, got {cfg.election_timeout}")
    if cfg.heartbeat_interval <= 0:
        errors.append("heartbeat_interval must be positive")
    elif cfg.heartbeat_interval >= lo:
        errors.append("heartbeat_interval must be shorter than the election timeout")
    if cfg.round_timeout <= 0:
        errors.append("round_timeout must be positive")
    if cfg.leader_mode not in ("predetermined", "election"):
        errors.append(f"leader_mode must be 'predetermined' or 'election', got {cfg.leader_mode!r}")
    if cfg.quorum_grace < 0:
        errors.append("quorum_grace must be >= 0")
    if cfg.barrier_rounds is not None and cfg.barrier_rounds < 1:
        errors.append("barrier_rounds must be >= 1")
    return errors


def check_config(cfg: ProtocolConfig) -> ProtocolConfig:
    errors = validate_config(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg
