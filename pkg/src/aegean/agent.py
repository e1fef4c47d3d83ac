"""Per-agent protocol state machine.

``step(state, event, cfg)`` is a pure function returning the next state and a
``StepOutput`` describing messages to send, timers to (re)arm, reasoning to
start or abandon, decision-engine records and client outputs. The simulator
(or any other driver) turns those outputs into events.

Timers: a timer entry ``(kind, delay)`` re-arms ``kind``, replacing any earlier
instance; ``delay`` may be a ``(low, high)`` range the driver samples from, or
``None`` to disarm.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

from . import decision
from .decision import DecisionState, decision_record, force_output, ingest_round, partition
from .protocol import (
    AgentId,
    Heartbeat,
    NewTerm,
    NewTermAck,
    ProtocolConfig,
    ProtocolMessage,
    RefinementSet,
    Refm,
    RefmSet,
    RequestVote,
    Role,
    RoundNum,
    Soln,
    Solution,
    Task,
    TermNum,
    Vote,
    check_config,
    decode_message,
    encode_message,
)

ELECTION = "election"
HEARTBEAT = "heartbeat"
ROUND = "round"
GRACE = "grace"


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class Deliver:
    msg: ProtocolMessage
    sender: AgentId


@dataclass(frozen=True)
class TimerFired:
    timer: str


@dataclass(frozen=True)
class ReasoningDone:
    request_id: str
    solution: Solution


@dataclass(frozen=True)
class Start:
    task: str


AgentEvent = Union[Deliver, TimerFired, ReasoningDone, Start]


def encode_event(ev: AgentEvent) -> dict:
    if isinstance(ev, Deliver):
        return {"type": "deliver", "from": ev.sender, "msg": encode_message(ev.msg)}
    if isinstance(ev, TimerFired):
        return {"type": "timer", "timer": ev.timer}
    if isinstance(ev, ReasoningDone):
        return {"type": "reasoning_done", "request_id": ev.request_id, "solution": ev.solution.to_dict()}
    return {"type": "start", "task": ev.task}


def decode_event(d: dict) -> AgentEvent:
    kind = d["type"]
    if kind == "deliver":
        return Deliver(decode_message(d["msg"]), d["from"])
    if kind == "timer":
        return TimerFired(d["timer"])
    if kind == "reasoning_done":
        return ReasoningDone(d["request_id"], Solution.from_dict(d["solution"]))
    if kind == "start":
        return Start(d["task"])
    raise ValueError(f"unknown event type {kind!r}")


# -- state and outputs -------------------------------------------------------


@dataclass(frozen=True)
class ReasoningRequest:
    request_id: str
    kind: str  # "initial" | "refine"
    term: TermNum
    round: RoundNum
    input: str | RefinementSet


@dataclass(frozen=True)
class Output:
    solution: Solution
    round: RoundNum
    term: TermNum
    forced: bool = False
    mode: str = "aegean"


@dataclass
class StepOutput:
    sends: list[tuple[AgentId, ProtocolMessage]] = field(default_factory=list)
    broadcasts: list[ProtocolMessage] = field(default_factory=list)
    timers: list[tuple[str, object]] = field(default_factory=list)
    reasoning_requests: list[ReasoningRequest] = field(default_factory=list)
    cancels: list[str] = field(default_factory=list)
    client_outputs: list[Output] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class AgentState:
    id: AgentId
    term: TermNum = 0
    role: Role = Role.WORKER
    round: RoundNum = 0
    refmset: RefinementSet | None = None
    refmset_term: TermNum = 0
    refmset_round: RoundNum = 0
    voted_for: tuple[TermNum, AgentId] | None = None
    leader: AgentId | None = None
    task: str | None = None
    # leader phase within its term: idle | solns | acks | refine | done
    phase: str = "idle"
    votes: frozenset = frozenset()
    pending_solns: dict = field(default_factory=dict)
    pending_refms: dict = field(default_factory=dict)
    pending_acks: dict = field(default_factory=dict)
    decision: DecisionState | None = None
    outputs: tuple[Output, ...] = ()
    initial_solution: Solution | None = None
    last_refm: tuple[TermNum, RoundNum, Solution] | None = None
    outstanding: dict = field(default_factory=dict)
    next_request: int = 0


def init(agent_id: AgentId, cfg: ProtocolConfig) -> AgentState:
    check_config(cfg)
    if not 0 <= agent_id < cfg.n_agents:
        raise ValueError(f"agent id {agent_id} outside [0, {cfg.n_agents})")
    if cfg.leader_mode == "predetermined":
        # everyone starts in term 1 with agent 0 already elected, so a worker
        # timing out campaigns for term 2 and cannot contest term 1
        role = Role.LEADER if agent_id == 0 else Role.WORKER
        return AgentState(id=agent_id, term=1, role=role, leader=0, voted_for=(1, 0))
    return AgentState(id=agent_id)


def current_outputs(st: AgentState) -> list[Solution]:
    return [o.solution for o in st.outputs]


# -- helpers -----------------------------------------------------------------


def _quorum_target(cfg: ProtocolConfig) -> int:
    return cfg.n_agents if cfg.barrier_rounds is not None else cfg.quorum


def _request(st: AgentState, out: StepOutput, kind: str, rnd: RoundNum, payload) -> AgentState:
    rid = f"{st.id}:{st.next_request}"
    req = ReasoningRequest(rid, kind, st.term, rnd, payload)
    out.reasoning_requests.append(req)
    outstanding = dict(st.outstanding)
    outstanding[rid] = (kind, st.term, rnd)
    return replace(st, outstanding=outstanding, next_request=st.next_request + 1)


def _cancel_refines(st: AgentState, out: StepOutput) -> AgentState:
    stale = [rid for rid, (kind, _, _) in st.outstanding.items() if kind == "refine"]
    if not stale:
        return st
    out.cancels.extend(stale)
    return replace(st, outstanding={k: v for k, v in st.outstanding.items() if k not in stale})


def _arm_election(out: StepOutput, cfg: ProtocolConfig):
    out.timers.append((ELECTION, tuple(cfg.election_timeout)))


def _adopt_term(st: AgentState, term: TermNum, out: StepOutput) -> AgentState:
    st = _cancel_refines(st, out)
    if st.role == Role.LEADER:
        out.timers.append((HEARTBEAT, None))
        out.timers.append((ROUND, None))
        out.timers.append((GRACE, None))
    return replace(
        st,
        term=term,
        role=Role.WORKER,
        round=0,
        leader=None,
        phase="idle",
        votes=frozenset(),
        pending_solns={},
        pending_refms={},
        pending_acks={},
        decision=None,
    )


def _own_ack(st: AgentState) -> NewTermAck:
    return NewTermAck(
        new_term=st.term,
        prior_term=st.refmset_term,
        id=st.id,
        round=st.refmset_round,
        refinement_set=st.refmset,
    )


# -- leader actions ----------------------------------------------------------


def _become_leader(st: AgentState, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    st = replace(
        st,
        role=Role.LEADER,
        leader=st.id,
        decision=DecisionState(),
        pending_solns={},
        pending_refms={},
        pending_acks={},
        round=0,
    )
    out.timers.append((ELECTION, None))
    out.timers.append((HEARTBEAT, cfg.heartbeat_interval))
    if st.term == 1:
        return _start_solns(st, cfg, out)
    st = replace(st, phase="acks", pending_acks={st.id: _own_ack(st)})
    out.broadcasts.append(NewTerm(st.term))
    out.timers.append((ROUND, cfg.round_timeout))
    return _maybe_finish_acks(st, cfg, out)


def _start_solns(st: AgentState, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    st = replace(st, phase="solns", pending_solns={})
    out.broadcasts.append(Task(st.term, st.task))
    out.timers.append((ROUND, cfg.round_timeout))
    if st.initial_solution is not None:
        return _add_soln(st, st.id, st.initial_solution, cfg, out)
    if not any(kind == "initial" for kind, _, _ in st.outstanding.values()):
        st = _request(st, out, "initial", 0, st.task)
    return st


def _add_soln(st: AgentState, author: AgentId, sol: Solution, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    pending = dict(st.pending_solns)
    pending[author] = sol
    st = replace(st, pending_solns=pending)
    if len(pending) >= _quorum_target(cfg):
        rset = RefinementSet(
            tuple(pending[a] for a in sorted(pending)), term=st.term, round=0
        )
        return _start_round(st, 1, rset, cfg, out)
    return st


def _start_round(st: AgentState, rnd: RoundNum, rset: RefinementSet, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    st = _cancel_refines(st, out)
    st = replace(
        st,
        phase="refine",
        round=rnd,
        refmset=rset,
        refmset_term=st.term,
        refmset_round=rnd,
        pending_refms={},
    )
    out.broadcasts.append(RefmSet(st.term, rnd, rset))
    out.timers.append((ROUND, cfg.round_timeout))
    out.timers.append((GRACE, None))
    return _request(st, out, "refine", rnd, rset)


def _add_refm(st: AgentState, author: AgentId, sol: Solution, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    pending = dict(st.pending_refms)
    pending[author] = sol
    st = replace(st, pending_refms=pending)
    need = _quorum_target(cfg)
    if len(pending) < need:
        return st
    if cfg.quorum_grace > 0 and len(pending) < cfg.n_agents:
        if len(pending) == need:
            out.timers.append((GRACE, cfg.quorum_grace))
        return st
    return _close_round(st, cfg, out)


def _close_round(st: AgentState, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    rnd = st.round
    pending = st.pending_refms
    rset = RefinementSet(tuple(pending[a] for a in sorted(pending)), term=st.term, round=rnd)
    engine, outcome = ingest_round(st.decision, rset, rnd, cfg)
    record = decision_record(engine, rset, rnd, outcome, cfg)
    record["term"] = st.term
    out.timers.append((GRACE, None))

    if cfg.barrier_rounds is not None:
        if rnd >= cfg.barrier_rounds:
            top = partition(rset)[0].representative
            record["outcome"] = {"kind": "barrier", "answer": top.answer, "from_round": rnd}
            out.decisions.append(record)
            return _emit(replace(st, decision=engine), Output(top, rnd, st.term, True, "barrier"), out)
        out.decisions.append(record)
        return _start_round(replace(st, decision=engine), rnd + 1, rset, cfg, out)

    if outcome.kind == "finalize":
        out.decisions.append(record)
        return _emit(replace(st, decision=engine), Output(outcome.solution, outcome.from_round, st.term), out)
    if rnd >= cfg.t_max:
        # st.refmset is the set collected in round t_max - 1
        forced = force_output(engine, st.refmset)
        record["outcome"] = forced.to_dict()
        out.decisions.append(record)
        return _emit(replace(st, decision=engine), Output(forced.solution, forced.from_round, st.term, True), out)
    out.decisions.append(record)
    return _start_round(replace(st, decision=engine), rnd + 1, rset, cfg, out)


def _emit(st: AgentState, output: Output, out: StepOutput) -> AgentState:
    out.client_outputs.append(output)
    out.timers.append((ROUND, None))
    st = _cancel_refines(st, out)
    return replace(st, phase="done", outputs=st.outputs + (output,), pending_refms={})


def _maybe_finish_acks(st: AgentState, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    if len(st.pending_acks) < cfg.quorum:
        return st
    acks = [a for a in st.pending_acks.values() if a.refinement_set is not None]
    st = replace(st, pending_acks={})
    if not acks:
        # no agent in the quorum stored a set, so nothing can have been output
        return _start_solns(st, cfg, out)
    best = max(acks, key=lambda a: (a.prior_term, a.round, -a.id))
    return _start_round(st, 1, best.refinement_set, cfg, out)


def _retransmit(st: AgentState, cfg: ProtocolConfig, out: StepOutput):
    if st.phase == "solns":
        out.broadcasts.append(Task(st.term, st.task))
    elif st.phase == "acks":
        out.broadcasts.append(NewTerm(st.term))
    elif st.phase == "refine":
        out.broadcasts.append(RefmSet(st.term, st.round, st.refmset))
    else:
        return
    out.timers.append((ROUND, cfg.round_timeout))


# -- step --------------------------------------------------------------------


def step(st: AgentState, ev: AgentEvent, cfg: ProtocolConfig) -> tuple[AgentState, StepOutput]:
    out = StepOutput()
    if isinstance(ev, Start):
        st = replace(st, task=ev.task)
        if st.role == Role.LEADER:
            st = _become_leader(st, cfg, out)
        else:
            _arm_election(out, cfg)
        return st, out
    if isinstance(ev, TimerFired):
        return _on_timer(st, ev.timer, cfg, out), out
    if isinstance(ev, ReasoningDone):
        return _on_reasoning(st, ev, cfg, out), out
    return _on_message(st, ev.msg, ev.sender, cfg, out), out


def _start_election(st: AgentState, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    st = _adopt_term(st, st.term + 1, out)
    st = replace(
        st, role=Role.CANDIDATE, voted_for=(st.term, st.id), votes=frozenset({st.id})
    )
    if len(st.votes) >= cfg.quorum:
        return _become_leader(st, cfg, out)
    out.broadcasts.append(RequestVote(st.term))
    _arm_election(out, cfg)
    return st


def _on_timer(st: AgentState, timer: str, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    if timer == ELECTION:
        if st.role == Role.LEADER:
            return st
        return _start_election(st, cfg, out)
    if st.role != Role.LEADER:
        return st
    if timer == HEARTBEAT:
        out.broadcasts.append(Heartbeat(st.term))
        out.timers.append((HEARTBEAT, cfg.heartbeat_interval))
    elif timer == ROUND:
        _retransmit(st, cfg, out)
    elif timer == GRACE:
        if st.phase == "refine" and len(st.pending_refms) >= _quorum_target(cfg):
            return _close_round(st, cfg, out)
    return st


def _on_reasoning(st: AgentState, ev: ReasoningDone, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    info = st.outstanding.get(ev.request_id)
    if info is None:
        out.notes.append(f"discarded unknown or abandoned reasoning {ev.request_id}")
        return st
    kind, term, rnd = info
    st = replace(st, outstanding={k: v for k, v in st.outstanding.items() if k != ev.request_id})
    sol = ev.solution
    if kind == "initial":
        st = replace(st, initial_solution=sol)
        if st.role == Role.LEADER and st.phase == "solns":
            return _add_soln(st, st.id, sol, cfg, out)
        if st.role == Role.WORKER and st.leader is not None and st.term >= 1:
            out.sends.append((st.leader, Soln(st.term, st.id, sol)))
        return st
    if term != st.term or rnd != st.round:
        out.notes.append(f"discarded stale refinement for term {term} round {rnd}")
        return st
    st = replace(st, last_refm=(term, rnd, sol))
    if st.role == Role.LEADER:
        if st.phase == "refine":
            return _add_refm(st, st.id, sol, cfg, out)
        return st
    if st.leader is not None:
        out.sends.append((st.leader, Refm(st.term, st.id, rnd, sol)))
    return st


def _on_message(st: AgentState, msg: ProtocolMessage, sender: AgentId, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    if msg.term < st.term:
        out.notes.append(f"dropped stale {msg.kind} (term {msg.term} < {st.term})")
        return st
    if msg.term > st.term:
        st = _adopt_term(st, msg.term, out)

    if isinstance(msg, RequestVote):
        if st.role == Role.WORKER and (st.voted_for is None or st.voted_for[0] != msg.term or st.voted_for[1] == sender):
            st = replace(st, voted_for=(msg.term, sender))
            out.sends.append((sender, Vote(msg.term, st.id)))
            _arm_election(out, cfg)
        return st

    if isinstance(msg, Vote):
        if st.role == Role.CANDIDATE:
            st = replace(st, votes=st.votes | {msg.id})
            if len(st.votes) >= cfg.quorum:
                return _become_leader(st, cfg, out)
        return st

    if isinstance(msg, (Soln, Refm, NewTermAck)):
        return _leader_receive(st, msg, cfg, out)

    # Task, RefmSet, NewTerm, Heartbeat come from the leader of msg.term
    if st.role == Role.LEADER:
        out.notes.append(f"ignored {msg.kind} from {sender} while leading term {st.term}")
        return st
    if st.role == Role.CANDIDATE:
        st = replace(st, role=Role.WORKER, votes=frozenset())
    st = replace(st, leader=sender)
    _arm_election(out, cfg)

    if isinstance(msg, Task):
        st = replace(st, task=msg.task)
        if st.initial_solution is not None:
            out.sends.append((sender, Soln(st.term, st.id, st.initial_solution)))
        elif not any(kind == "initial" for kind, _, _ in st.outstanding.values()):
            st = _request(st, out, "initial", 0, msg.task)
        return st

    if isinstance(msg, RefmSet):
        return _worker_refmset(st, msg, sender, out)

    if isinstance(msg, NewTerm):
        out.sends.append((sender, _own_ack(st)))
        return st

    return st  # Heartbeat


def _worker_refmset(st: AgentState, msg: RefmSet, sender: AgentId, out: StepOutput) -> AgentState:
    if msg.round < st.round:
        out.notes.append(f"dropped RefmSet round {msg.round} < {st.round}")
        return st
    if msg.round == st.round and st.refmset_term == st.term and st.refmset_round == msg.round:
        # duplicate delivery: answer from cache, or wait for reasoning in flight
        if st.last_refm is not None and st.last_refm[:2] == (st.term, st.round):
            out.sends.append((sender, Refm(st.term, st.id, st.round, st.last_refm[2])))
        return st
    st = _cancel_refines(st, out)
    st = replace(
        st,
        refmset=msg.refinement_set,
        refmset_term=st.term,
        refmset_round=msg.round,
        round=msg.round,
    )
    return _request(st, out, "refine", msg.round, msg.refinement_set)


def _leader_receive(st: AgentState, msg, cfg: ProtocolConfig, out: StepOutput) -> AgentState:
    if st.role != Role.LEADER:
        return st
    if isinstance(msg, Soln):
        if st.phase == "solns":
            return _add_soln(st, msg.id, msg.solution, cfg, out)
    elif isinstance(msg, Refm):
        if st.phase == "refine" and msg.round == st.round:
            return _add_refm(st, msg.id, msg.solution, cfg, out)
        out.notes.append(f"discarded late Refm from {msg.id} for round {msg.round}")
    elif isinstance(msg, NewTermAck):
        if st.phase == "acks" and msg.new_term == st.term:
            acks = dict(st.pending_acks)
            acks[msg.id] = msg
            return _maybe_finish_acks(replace(st, pending_acks=acks), cfg, out)
    return st
