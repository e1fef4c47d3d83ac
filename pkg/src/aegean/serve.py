"""Simulated consensus-aware serving layer.

A query is answered by an *ensemble*: one reasoning call per agent per round,
scheduled on a shared pool of slots. The coordinator watches completions as
they arrive, closes a round the moment some answer class reaches the agreement
threshold, cancels the stragglers, and hands the round's set to the decision
engine. Barrier mode instead waits for every member, runs a fixed number of
rounds and answers by plurality.

Everything runs inside the discrete-event loop from ``sim``; directives are
applied synchronously in the event that produced them.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field, replace

from .decision import DecisionState, decision_record, force_output, ingest_round, partition
from .network import sample_latency
from .protocol import AgentId, ProtocolConfig, RefinementSet, RoundNum, Solution, quorum_size
from .reasoning import AgentContext, make_context, reason_initial, reason_refine
from .scenario import ScenarioConfig
from .sim import EventLoop, LivenessViolation, stream
from .trace import Trace, make_header

STATUSES = ("queued", "running", "done", "cancelled", "failed", "idle")


class AdmissionError(RuntimeError):
    pass


class FinalizedEnsembleError(AdmissionError):
    pass


@dataclass
class ResourceBudget:
    total_slots: int
    used_slots: int = 0

    def __post_init__(self):
        if not 0 <= self.used_slots <= self.total_slots:
            raise ValueError(f"used_slots {self.used_slots} outside [0, {self.total_slots}]")

    @property
    def free(self) -> int:
        return self.total_slots - self.used_slots

    def reserve(self, n: int) -> None:
        if n > self.free:
            raise AdmissionError(f"cannot reserve {n} slots, {self.free} free")
        self.used_slots += n

    def release(self, n: int) -> None:
        self.used_slots = max(0, self.used_slots - n)


@dataclass(frozen=True)
class DispatchHandle:
    handle_id: int
    ensemble_id: int
    agent: AgentId


@dataclass(frozen=True)
class ConsensusCtx:
    """What a member is asked to do: answer from scratch (round 0) or refine a set."""

    agent: AgentId
    round: RoundNum
    refinement_set: RefinementSet | None = None

    @property
    def kind(self) -> str:
        return "initial" if self.refinement_set is None else "refine"


@dataclass(frozen=True)
class Directive:
    kind: str  # advance | finalize | output | cancel | continue | restart | fresh_ensemble
    ensemble_id: int
    agents: tuple[AgentId, ...] = ()
    solution: Solution | None = None
    round: RoundNum | None = None


@dataclass
class EnsembleState:
    """Aggregate state of one ensemble.

    ``members`` maps each agent to one of ``STATUSES``: ``idle`` marks a live
    member left out of the current round by a reservation hint. ``support``
    counts completed members of the current round per answer class.
    """

    ensemble_id: int
    query: int
    members: dict[AgentId, str]
    round: RoundNum = 0
    support: dict[str, int] = field(default_factory=dict)
    candidate: Solution | None = None
    stability: int = 0
    generation: int = 0
    finalized: bool = False
    decision: DecisionState = field(default_factory=DecisionState)
    completions: list[Solution] = field(default_factory=list)
    last_set: RefinementSet | None = None
    prev_order: list[AgentId] = field(default_factory=list)
    round_started: float = 0.0
    arrival: float = 0.0
    work_units: float = 0.0


def _estimate(values: tuple[float, ...], n: int, k: int) -> float:
    return sorted(values[i % len(values)] for i in range(n))[k - 1]


def admit_ensemble(
    n: int,
    budget: ResourceBudget,
    cfg: ProtocolConfig,
    latency_values: tuple[float, ...] | None = None,
    alpha: int | None = None,
) -> str:
    """All-or-nothing admission: "admitted" or "deferred".

    Admits only when ``n`` slots are free and, given per-agent latency
    estimates, the ``alpha``-th fastest member is expected to finish within
    the round timeout. Never reserves anything itself.
    """
    if n < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n}")
    if budget.free < n:
        return "deferred"
    alpha = cfg.alpha if alpha is None else alpha
    if latency_values and _estimate(tuple(latency_values), n, min(alpha, n)) > cfg.round_timeout:
        return "deferred"
    return "admitted"


def handle_agent_failure(
    eid: int, failed: AgentId, st: EnsembleState, cfg: ProtocolConfig, alpha: int | None = None
) -> Directive:
    """Policy for a member declared failed.

    Continue while at least ``alpha`` healthy members remain; otherwise restart
    from scratch if nothing is held, or keep the candidate and carry on with a
    fresh ensemble.
    """
    alpha = cfg.alpha if alpha is None else alpha
    healthy = [a for a, s in st.members.items() if a != failed and s != "failed"]
    if len(healthy) >= alpha:
        return Directive("continue", eid, (failed,))
    if st.candidate is None:
        return Directive("restart", eid, (failed,))
    return Directive("fresh_ensemble", eid, (failed,), solution=st.candidate, round=st.round)


@dataclass
class _Handle:
    handle: DispatchHandle
    round: RoundNum
    generation: int
    start: float
    latency: float | None
    event_id: int | None
    timeout_id: int | None
    status: str = "running"


class Coordinator:
    """Ensemble dispatch, incremental agreement detection, cancellation and admission."""

    def __init__(self, scenario: ScenarioConfig, loop: EventLoop, trace: Trace, seed: int):
        self.scenario = scenario
        self.loop = loop
        self.trace = trace
        self.seed = seed
        self.alpha = scenario.serve_alpha
        self.cfg = replace(scenario.protocol, alpha=self.alpha)
        self.n = scenario.n
        self.budget = ResourceBudget(scenario.serve.total_slots)
        self.latency_rng = stream(seed, "latency")
        self.queue: deque[int] = deque()
        self.deferred_logged: set[int] = set()
        self.ensembles: dict[int, EnsembleState] = {}
        self.by_query: dict[int, int] = {}
        self.contexts: dict[tuple[int, AgentId], AgentContext] = {}
        self.initial: dict[tuple[int, AgentId], Solution] = {}
        self.handles: dict[int, _Handle] = {}
        self.live: dict[tuple[int, AgentId], int] = {}
        # (ensemble, agent) pairs served by replacement instances, which the
        # scenario's fault plan no longer touches
        self.replaced: set[tuple[int, AgentId]] = set()
        self.work_units = 0.0
        self.arrivals: dict[int, float] = {}

    # -- records ---------------------------------------------------------------

    def _record(self, kind: str, **payload) -> dict:
        return self.trace.add(self.loop.now, kind, **payload)

    # -- admission -------------------------------------------------------------

    def submit(self, query: int) -> None:
        self.arrivals[query] = self.loop.now
        self._record("arrival", query=query)
        self.queue.append(query)
        self._admit_waiting()

    def _admit_waiting(self) -> None:
        while self.queue:
            query = self.queue[0]
            verdict = admit_ensemble(self.n, self.budget, self.cfg, self.scenario.latency_values(), self.alpha)
            if verdict != "admitted":
                if query not in self.deferred_logged:
                    self.deferred_logged.add(query)
                    self._record("admission", query=query, verdict="deferred", free_slots=self.budget.free)
                return
            self.queue.popleft()
            self.budget.reserve(self.n)
            eid = len(self.ensembles)
            st = EnsembleState(eid, query, {a: "queued" for a in range(self.n)}, arrival=self.arrivals[query])
            self.ensembles[eid] = st
            self.by_query[query] = eid
            self._record("admission", query=query, ensemble=eid, verdict="admitted", free_slots=self.budget.free)
            for a, profile in enumerate(self.scenario.agents):
                ctx = make_context(a, profile, self.scenario.oracle, f"{self.seed}:q{query}")
                ctx, sol = reason_initial(ctx, self.scenario.task)
                self.contexts[(eid, a)] = ctx
                self.initial[(eid, a)] = sol
                self._record("initial", query=query, agent=a, solution=sol.to_dict())
            self._start_round(st, 0, None)

    # -- engine interface ------------------------------------------------------

    def dispatch(self, query: str, ctx: ConsensusCtx, eid: int) -> DispatchHandle:
        st = self.ensembles.get(eid)
        if st is None:
            raise AdmissionError(f"ensemble {eid} was not admitted")
        if st.finalized:
            raise FinalizedEnsembleError(f"ensemble {eid} already finalized")
        if query != self.scenario.task:
            raise ValueError("query text does not match the ensemble's task")
        a = ctx.agent
        if (eid, a) in self.live:
            raise AdmissionError(f"agent {a} already has a live handle in ensemble {eid}")
        extra = 0.0 if (eid, a) in self.replaced else self.scenario.faults.stall_for(a, ctx.round)
        latency = None
        eid_evt = None
        if extra is not None:
            latency = sample_latency(self.scenario.latency, a, self.latency_rng, self.scenario.agents[a].latency) + extra
        hid = len(self.handles)
        handle = DispatchHandle(hid, eid, a)
        if latency is not None:
            eid_evt = self.loop.schedule(self.loop.now + latency, ("complete", hid, ctx))
        timeout = self.loop.schedule(self.loop.now + self.cfg.round_timeout, ("timeout", hid))
        self.handles[hid] = _Handle(handle, ctx.round, st.generation, self.loop.now, latency, eid_evt, timeout)
        self.live[(eid, a)] = hid
        st.members[a] = "running"
        self._record(
            "dispatch", query=st.query, ensemble=eid, agent=a, round=ctx.round,
            handle=hid, input_kind=ctx.kind, hang=latency is None,
        )
        return handle

    def on_complete(self, h: DispatchHandle, answer: Solution) -> list[Directive]:
        rec = self.handles.get(h.handle_id)
        st = self.ensembles.get(h.ensemble_id)
        if rec is None or rec.status != "running" or st is None or st.finalized:
            self._record("stale", handle=h.handle_id, agent=h.agent)
            return []
        self._retire(rec, "done")
        self.work_units += rec.latency
        st.work_units += rec.latency
        st.members[h.agent] = "done"
        st.completions.append(answer)
        classes = partition(RefinementSet(tuple(sorted(st.completions, key=lambda s: s.author)), term=st.generation, round=st.round))
        st.support = {c.key: c.support for c in classes}
        self._record(
            "complete", query=st.query, ensemble=st.ensemble_id, agent=h.agent,
            round=rec.round, handle=h.handle_id, solution=answer.to_dict(),
        )
        return self._evaluate(st)

    def cancel(self, h: DispatchHandle, reason: str = "cancelled") -> bool:
        rec = self.handles.get(h.handle_id)
        if rec is None or rec.status != "running":
            return False
        self._retire(rec, "cancelled")
        if rec.event_id is not None:
            self.loop.cancel(rec.event_id)
        spent = self.loop.now - rec.start
        self.work_units += spent
        st = self.ensembles[h.ensemble_id]
        st.work_units += spent
        if st.members.get(h.agent) == "running":
            st.members[h.agent] = "cancelled"
        self._record(
            "cancel", query=st.query, ensemble=st.ensemble_id, agent=h.agent,
            round=rec.round, handle=h.handle_id, reason=reason,
        )
        return True

    def query_ensemble(self, eid: int) -> EnsembleState:
        return copy.deepcopy(self.ensembles[eid])

    # -- internals -------------------------------------------------------------

    def _retire(self, rec: _Handle, status: str) -> None:
        rec.status = status
        self.live.pop((rec.handle.ensemble_id, rec.handle.agent), None)
        if rec.timeout_id is not None:
            self.loop.cancel(rec.timeout_id)

    def _running(self, st: EnsembleState) -> list[_Handle]:
        out = []
        for a in sorted(st.members):
            hid = self.live.get((st.ensemble_id, a))
            if hid is not None:
                out.append(self.handles[hid])
        return out

    def _healthy(self, st: EnsembleState) -> list[AgentId]:
        return [a for a, s in sorted(st.members.items()) if s != "failed"]

    def _start_round(self, st: EnsembleState, rnd: RoundNum, rset: RefinementSet | None) -> None:
        st.round = rnd
        st.completions = []
        st.support = {}
        st.round_started = self.loop.now
        healthy = self._healthy(st)
        chosen = healthy
        hint = (
            rnd > 0
            and not self.scenario.barrier
            and self.scenario.serve.reservation_hints
            and st.decision.stability_counter >= 1
        )
        if hint:
            k = max(quorum_size(self.n) + 1, self.alpha)
            if k < len(healthy):
                order = [a for a in st.prev_order if a in healthy]
                order += [a for a in healthy if a not in order]
                chosen = sorted(order[:k])
        for a in healthy:
            st.members[a] = "idle"
        for a in chosen:
            ctx = ConsensusCtx(a, rnd, rset)
            self.dispatch(self.scenario.task, ctx, st.ensemble_id)

    def _evaluate(self, st: EnsembleState) -> list[Directive]:
        running = self._running(st)
        top = max(st.support.values(), default=0)
        if running and (self.scenario.barrier or top < self.alpha):
            return []
        return self._close_round(st)

    def _close_round(self, st: EnsembleState) -> list[Directive]:
        directives: list[Directive] = []
        rnd = st.round
        cancelled = [rec.handle.agent for rec in self._running(st)]
        for rec in self._running(st):
            self.cancel(rec.handle, "round closed")
        if cancelled:
            directives.append(Directive("cancel", st.ensemble_id, tuple(cancelled)))
        st.prev_order = [s.author for s in st.completions]
        if not st.completions:
            # nobody answered this round: start over with fresh members
            directives.append(self._restart(st))
            return directives
        rset = RefinementSet(
            tuple(sorted(st.completions, key=lambda s: s.author)), term=st.generation, round=rnd
        )
        metrics = dict(
            query=st.query, ensemble=st.ensemble_id, round=rnd,
            mode=self._mode_label(), t_round_end=self.loop.now, cancelled_count=len(cancelled),
        )
        if rnd == 0:
            st.last_set = rset
            self._record("round_end", **metrics, work_units=round(st.work_units, 9))
            directives.append(Directive("advance", st.ensemble_id, round=1))
            self._start_round(st, 1, rset)
            return directives

        engine, outcome = ingest_round(st.decision, rset, rnd, self.cfg)
        record = decision_record(engine, rset, rnd, outcome, self.cfg)
        st.decision = engine
        st.candidate = engine.candidate
        st.stability = engine.stability_counter
        output = None
        if self.scenario.barrier:
            if rnd >= self.scenario.max_rounds:
                top = partition(rset)[0].representative
                record["outcome"] = {"kind": "barrier", "answer": top.answer, "from_round": rnd}
                output = (top, rnd, True, "barrier")
        elif outcome.kind == "finalize":
            output = (outcome.solution, outcome.from_round, False, "aegean")
        elif rnd >= self.cfg.t_max:
            forced = force_output(engine, st.last_set)
            record["outcome"] = forced.to_dict()
            output = (forced.solution, forced.from_round, True, "aegean")
        self._record(
            "decision", query=st.query, ensemble=st.ensemble_id, term=st.generation,
            t_round=round(self.loop.now - st.round_started, 9), **record,
        )
        self._record("round_end", **metrics, work_units=round(st.work_units, 9))
        if output is not None:
            directives.append(self._finalize(st, *output))
            return directives
        st.last_set = rset
        directives.append(Directive("advance", st.ensemble_id, round=rnd + 1))
        self._start_round(st, rnd + 1, rset)
        return directives

    def _mode_label(self) -> str:
        return f"barrier:{self.scenario.max_rounds}" if self.scenario.barrier else "aegean"

    def _finalize(self, st: EnsembleState, sol: Solution, rnd: RoundNum, forced: bool, mode: str) -> Directive:
        st.finalized = True
        self._record(
            "output", query=st.query, ensemble=st.ensemble_id, term=st.generation, round=rnd,
            solution=sol.to_dict(), forced=forced, mode=mode,
        )
        # eager reclamation in the same event
        self.budget.release(self.n)
        self._record("release", ensemble=st.ensemble_id, slots=self.n, free_slots=self.budget.free)
        self._admit_waiting()
        return Directive("output" if forced else "finalize", st.ensemble_id, solution=sol, round=rnd)

    def _replace_members(self, st: EnsembleState, calls: int) -> None:
        for a, profile in enumerate(self.scenario.agents):
            ctx = make_context(a, profile, self.scenario.oracle, f"{self.seed}:q{st.query}")
            self.contexts[(st.ensemble_id, a)] = replace(ctx, calls=calls)
            st.members[a] = "idle"
            self.replaced.add((st.ensemble_id, a))

    def _restart(self, st: EnsembleState) -> Directive:
        for rec in self._running(st):
            self.cancel(rec.handle, "restart")
        st.generation += 1
        st.decision = DecisionState()
        st.candidate = None
        st.stability = 0
        st.last_set = None
        self._replace_members(st, 0)
        self._record("restart", query=st.query, ensemble=st.ensemble_id, generation=st.generation)
        self._start_round(st, 0, None)
        return Directive("restart", st.ensemble_id)

    def fail_member(self, eid: int, a: AgentId, how: str) -> Directive | None:
        st = self.ensembles[eid]
        if st.finalized or st.members.get(a) == "failed":
            return None
        hid = self.live.get((eid, a))
        if hid is not None:
            self.cancel(self.handles[hid].handle, f"{how} failure")
        d = handle_agent_failure(eid, a, st, self.cfg, self.alpha)
        st.members[a] = "failed"
        self._record("failure", query=st.query, ensemble=eid, agent=a, detection=how, directive=d.kind)
        if d.kind == "continue":
            self._evaluate(st)
        elif d.kind == "restart":
            self._restart(st)
        else:
            # keep the engine state, redo the interrupted round with new members
            for rec in self._running(st):
                self.cancel(rec.handle, "fresh ensemble")
            self._replace_members(st, st.round)
            self._record("fresh_ensemble", query=st.query, ensemble=eid, round=st.round)
            self._start_round(st, st.round, st.last_set)
        return d

    # -- event handling --------------------------------------------------------

    def handle(self, event) -> None:
        kind = event[0]
        if kind == "complete":
            _, hid, ctx = event
            rec = self.handles[hid]
            eid, a = rec.handle.ensemble_id, rec.handle.agent
            if ctx.refinement_set is None:
                sol = self.initial[(eid, a)]
                self.contexts[(eid, a)] = replace(self.contexts[(eid, a)], calls=max(1, self.contexts[(eid, a)].calls))
            else:
                c, sol = reason_refine(self.contexts[(eid, a)], ctx.refinement_set, self.scenario.task)
                self.contexts[(eid, a)] = c
            self.on_complete(rec.handle, sol)
        elif kind == "timeout":
            rec = self.handles[event[1]]
            if rec.status == "running":
                self.fail_member(rec.handle.ensemble_id, rec.handle.agent, "soft")
        elif kind == "crash":
            a = event[1]
            self._record("crash", agent=a)
            delay = self.cfg.heartbeat_interval * self.scenario.serve.heartbeat_misses
            for eid, st in self.ensembles.items():
                if st.finalized or (eid, a) in self.replaced:
                    continue
                hid = self.live.get((eid, a))
                if hid is not None:
                    # the instance is gone: its pending completion never happens
                    rec = self.handles[hid]
                    if rec.event_id is not None:
                        self.loop.cancel(rec.event_id)
                        rec.event_id = None
                    rec.latency = None
                self.loop.schedule(self.loop.now + delay, ("detect", eid, a))
        elif kind == "detect":
            _, eid, a = event
            if (eid, a) not in self.replaced:
                self.fail_member(eid, a, "hard")
        elif kind == "arrival":
            self.submit(event[1])


class ServeSimulation:
    def __init__(self, scenario: ScenarioConfig, seed: int | None = None):
        scenario.check()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.loop = EventLoop()
        self.trace = Trace(make_header("serve", scenario.to_dict(), self.seed))
        self.coord = Coordinator(scenario, self.loop, self.trace, self.seed)
        self.queries: list[float] = []

    def _arrival_times(self) -> list[float]:
        if self.scenario.arrivals is None:
            return [0.0]
        rate, duration = self.scenario.arrivals
        rng = stream(self.seed, "arrivals")
        times, t = [], 0.0
        while True:
            t += rng.expovariate(rate)
            if t >= duration:
                break
            times.append(t)
        return times or [0.0]

    def run(self) -> Trace:
        self.queries = self._arrival_times()
        for q, t in enumerate(self.queries):
            self.loop.schedule(t, ("arrival", q))
        for a, t in self.scenario.faults.crashes:
            self.loop.schedule(t, ("crash", a))
        reason = "quiescent"
        while True:
            nxt = self.loop.peek_time()
            if nxt is None:
                break
            if nxt > self.scenario.max_time:
                reason = "cap"
                break
            _, event = self.loop.pop()
            self.coord.handle(event)
            if len(self.trace.outputs) == len(self.queries):
                reason = "output"
                break
        self._finish(reason)
        return self.trace

    def _finish(self, reason: str) -> None:
        c = self.coord
        now = self.loop.now
        for rec in c.handles.values():
            if rec.status == "running":
                spent = now - rec.start
                c.work_units += spent
                c.ensembles[rec.handle.ensemble_id].work_units += spent
                rec.status = "abandoned"
        answered = {o["query"] for o in self.trace.outputs}
        missing = [q for q in range(len(self.queries)) if q not in answered]
        self.trace.add(
            now, "end", reason=reason, outputs=len(answered), work_units=round(c.work_units, 9),
            unanswered=missing,
            liveness_violation=bool(missing) and self.scenario.respects_failure_bound,
        )


def run_serve(scenario: ScenarioConfig, seed: int | None = None) -> Trace:
    """Simulate the serving layer; raises LivenessViolation like ``sim.run``."""
    trace = ServeSimulation(scenario, seed).run()
    if trace.records[-1]["liveness_violation"]:
        raise LivenessViolation(f"unanswered queries {trace.records[-1]['unanswered']}", trace)
    return trace


def serve_metrics(trace: Trace) -> list[dict]:
    """One metrics row per query, same columns as ``sim.run_metrics``."""
    cfg = trace.config
    mode = cfg["mode"]["kind"]
    if mode == "barrier":
        mode = f"barrier:{cfg['mode']['max_rounds']}"
    arrivals = {r["query"]: r["t"] for r in trace.of_kind("arrival")}
    rows = []
    for q in sorted(arrivals):
        out = next((o for o in trace.outputs if o["query"] == q), None)
        decisions = [d for d in trace.of_kind("decision") if d["query"] == q]
        ends = [r for r in trace.of_kind("round_end") if r["query"] == q]
        rows.append({
            "scenario": trace.header.get("scenario", ""),
            "seed": trace.header["seed"],
            "mode": mode,
            "query_id": q,
            "rounds": len(decisions),
            "t_complete": None if out is None else round(out["t"] - arrivals[q], 9),
            "p_round_max": max((d["t_round"] for d in decisions), default=None),
            "work_units": ends[-1]["work_units"] if ends else 0.0,
            "forced": None if out is None else bool(out["forced"]),
        })
    return rows


def round_metrics(trace: Trace) -> list[dict]:
    """Per-round rows: ensemble_id, round, mode, t_round_end, cancelled_count, work_units."""
    return [
        {
            "ensemble_id": r["ensemble"],
            "round": r["round"],
            "mode": r["mode"],
            "t_round_end": r["t_round_end"],
            "cancelled_count": r["cancelled_count"],
            "work_units": r["work_units"],
        }
        for r in trace.of_kind("round_end")
    ]
