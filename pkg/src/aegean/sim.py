"""Deterministic discrete-event simulation of an agent deployment.

One event loop, totally ordered by ``(time, sequence number)``, drives every
agent's state machine. Randomness (network delays, election timeouts, latency
draws, agent reasoning) comes from separate seeded streams, so identical
``(scenario, seed)`` pairs yield identical traces.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

from . import agent as am
from .agent import Deliver, ReasoningDone, Start, TimerFired, encode_event
from .network import sample_latency
from .protocol import Role, encode_message, max_failures
from .reasoning import make_context, reason_initial, reason_refine
from .scenario import ScenarioConfig
from .trace import Trace, make_header


class LivenessViolation(RuntimeError):
    """No output before the time cap although the run met the termination conditions."""

    def __init__(self, message: str, trace: Trace):
        super().__init__(message)
        self.trace = trace


def stream(seed: int, label: str) -> random.Random:
    return random.Random(f"{seed}:{label}")


class EventLoop:
    """Min-heap of scheduled events with lazy cancellation."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self.now = 0.0

    def schedule(self, at: float, event) -> int:
        eid = self._seq
        heapq.heappush(self._heap, (at, eid, event))
        self._seq += 1
        return eid

    def cancel(self, eid: int) -> None:
        self._cancelled.add(eid)

    def pop(self):
        while self._heap:
            at, eid, event = heapq.heappop(self._heap)
            if eid in self._cancelled:
                self._cancelled.discard(eid)
                continue
            self.now = at
            return at, event
        return None

    def peek_time(self) -> float | None:
        while self._heap and self._heap[0][1] in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._heap)[1])
        return self._heap[0][0] if self._heap else None

    def __bool__(self):
        return self.peek_time() is not None


def state_digest(st) -> str:
    return hashlib.sha256(repr(st).encode()).hexdigest()[:16]


@dataclass
class _Reasoning:
    agent: int
    request: am.ReasoningRequest
    start: float
    latency: float | None
    event_id: int | None
    done: bool = False


class ProtocolSimulation:
    def __init__(self, scenario: ScenarioConfig, seed: int | None = None):
        scenario.check()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.cfg = scenario.protocol_config()
        self.n = scenario.n
        self.loop = EventLoop()
        self.trace = Trace(make_header("protocol", scenario.to_dict(), self.seed))
        self.net_rng = stream(self.seed, "network")
        self.timer_rng = stream(self.seed, "timers")
        self.latency_rng = stream(self.seed, "latency")
        self.states = [am.init(i, self.cfg) for i in range(self.n)]
        self.contexts = [
            make_context(i, p, scenario.oracle, self.seed) for i, p in enumerate(scenario.agents)
        ]
        self.alive = [True] * self.n
        self.timer_events: dict[tuple[int, str], int] = {}
        self.reasoning: dict[str, _Reasoning] = {}
        self.round_start: dict[tuple[int, int, int], float] = {}
        self.work_units = 0.0
        self.pending_crashes = sorted(t for _, t in scenario.faults.crashes)
        self.initial: list = []

    # -- bookkeeping ---------------------------------------------------------

    def _record(self, kind: str, **payload) -> dict:
        return self.trace.add(self.loop.now, kind, **payload)

    def _precompute_initial(self):
        # each agent's individual solution, fixed up front so the validity bound
        # covers agents that crash before answering
        for i in range(self.n):
            ctx, sol = reason_initial(self.contexts[i], self.scenario.task)
            self.initial.append((ctx, sol))
            self._record("initial", agent=i, solution=sol.to_dict())

    # -- main loop -----------------------------------------------------------

    def run(self) -> Trace:
        self._precompute_initial()
        for i in range(self.n):
            self.loop.schedule(0.0, ("start", i))
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
            self._handle(event)
            if self._done():
                reason = "output"
                break
        self._finish(reason)
        return self.trace

    def _done(self) -> bool:
        if any(t > self.loop.now for t in self.pending_crashes):
            return False
        for i, st in enumerate(self.states):
            if self.alive[i] and st.role == Role.LEADER and any(o.term == st.term for o in st.outputs):
                return True
        return False

    def _finish(self, reason: str):
        end = self.loop.now
        for r in self.reasoning.values():
            if not r.done:
                self.work_units += max(0.0, end - r.start)
                r.done = True
        outputs = self.trace.outputs
        violation = (
            not outputs
            and self.scenario.respects_failure_bound
            and all(e <= self.scenario.max_time for _, _, _, e in self.scenario.network.partitions)
        )
        self._record(
            "end",
            reason=reason,
            outputs=len(outputs),
            work_units=round(self.work_units, 9),
            liveness_violation=violation,
        )

    def _handle(self, event):
        kind = event[0]
        if kind == "start":
            self._feed(event[1], Start(self.scenario.task))
        elif kind == "deliver":
            _, to, frm, msg = event
            if not self.alive[to]:
                self._record("drop", agent=to, **{"from": frm}, msg=encode_message(msg), reason="crashed")
                return
            self._record("deliver", agent=to, **{"from": frm}, msg=encode_message(msg))
            self._feed(to, Deliver(msg, frm))
        elif kind == "timer":
            _, a, timer = event
            self.timer_events.pop((a, timer), None)
            if self.alive[a]:
                self._feed(a, TimerFired(timer))
        elif kind == "reason":
            self._complete_reasoning(event[1])
        elif kind == "crash":
            self._crash(event[1])

    def _crash(self, a: int):
        if not self.alive[a]:
            return
        self.alive[a] = False
        self._record("crash", agent=a)
        for rid, r in self.reasoning.items():
            if r.agent == a and not r.done:
                self._abandon(rid, "crash")
        for (agent, timer), eid in list(self.timer_events.items()):
            if agent == a:
                self.loop.cancel(eid)
                del self.timer_events[(agent, timer)]

    def _abandon(self, rid: str, why: str):
        r = self.reasoning[rid]
        if r.done:
            return
        r.done = True
        self.work_units += self.loop.now - r.start
        if r.event_id is not None:
            self.loop.cancel(r.event_id)
        self._record("reason_cancel", agent=r.agent, request_id=rid, reason=why)

    def _complete_reasoning(self, rid: str):
        r = self.reasoning[rid]
        if r.done or not self.alive[r.agent]:
            return
        r.done = True
        self.work_units += r.latency
        a = r.agent
        req = r.request
        if req.kind == "initial":
            ctx, sol = self.initial[a]
        else:
            ctx, sol = reason_refine(self.contexts[a], req.input, self.scenario.task)
        self.contexts[a] = ctx
        self._record("reason_done", agent=a, request_id=rid, input_kind=req.kind, round=req.round, solution=sol.to_dict())
        self._feed(a, ReasoningDone(rid, sol))

    # -- agent interaction ---------------------------------------------------

    def _feed(self, a: int, ev):
        st, out = am.step(self.states[a], ev, self.cfg)
        self.states[a] = st
        rec = dict(
            agent=a,
            event=encode_event(ev),
            role=st.role.value,
            term=st.term,
            round=st.round,
            phase=st.phase,
            digest=state_digest(st),
        )
        if out.notes:
            rec["notes"] = out.notes
        self._record("state", **rec)
        self._apply(a, st, out)

    def _apply(self, a: int, st, out: am.StepOutput):
        for rid in out.cancels:
            if rid in self.reasoning:
                self._abandon(rid, "superseded")
        for d in out.decisions:
            start = self.round_start.get((a, d["term"], d["round"]), self.loop.now)
            self._record("decision", agent=a, t_round=round(self.loop.now - start, 9), **d)
        for o in out.client_outputs:
            self._record(
                "output",
                agent=a,
                term=o.term,
                round=o.round,
                solution=o.solution.to_dict(),
                forced=o.forced,
                mode=o.mode,
            )
        for to, msg in out.sends:
            self._send(a, to, msg)
        for msg in out.broadcasts:
            if msg.kind == "RefmSet":
                self.round_start.setdefault((a, msg.term, msg.round), self.loop.now)
            for b in range(self.n):
                if b != a:
                    self._send(a, b, msg)
        for timer, delay in out.timers:
            self._arm(a, timer, delay)
        for req in out.reasoning_requests:
            self._start_reasoning(a, req)

    def _send(self, frm: int, to: int, msg):
        enc = encode_message(msg)
        self._record("send", agent=frm, to=to, msg=enc)
        net = self.scenario.network
        if net.partitioned(frm, to, self.loop.now):
            self._record("drop", agent=to, **{"from": frm}, msg=enc, reason="partition")
            return
        arrival = net.transit(self.loop.now, self.net_rng)
        if arrival is None:
            self._record("drop", agent=to, **{"from": frm}, msg=enc, reason="pre_gst_loss")
            return
        self.loop.schedule(arrival, ("deliver", to, frm, msg))

    def _arm(self, a: int, timer: str, delay):
        old = self.timer_events.pop((a, timer), None)
        if old is not None:
            self.loop.cancel(old)
        if delay is None:
            return
        if isinstance(delay, tuple):
            delay = self.timer_rng.uniform(*delay)
        self.timer_events[(a, timer)] = self.loop.schedule(self.loop.now + delay, ("timer", a, timer))

    def _start_reasoning(self, a: int, req: am.ReasoningRequest):
        extra = self.scenario.faults.stall_for(a, req.round)
        latency = None
        eid = None
        if extra is not None:
            latency = sample_latency(self.scenario.latency, a, self.latency_rng, self.scenario.agents[a].latency) + extra
            eid = self.loop.schedule(self.loop.now + latency, ("reason", req.request_id))
        self.reasoning[req.request_id] = _Reasoning(a, req, self.loop.now, latency, eid)
        self._record(
            "reason_start",
            agent=a,
            request_id=req.request_id,
            input_kind=req.kind,
            term=req.term,
            round=req.round,
            latency=latency,
        )


def run(scenario: ScenarioConfig, seed: int | None = None) -> Trace:
    """Simulate ``scenario`` until an output settles, the event queue drains, or the time cap.

    Raises LivenessViolation (carrying the trace) when no output was produced
    although the fault plan stayed within the tolerated failures and every
    partition healed before the cap.
    """
    trace = ProtocolSimulation(scenario, seed).run()
    end = trace.records[-1]
    if end["liveness_violation"]:
        raise LivenessViolation(
            f"no output by t={trace.records[-1]['t']} (cap {scenario.max_time})", trace
        )
    return trace


def run_metrics(trace: Trace) -> dict:
    """One metrics row summarizing a protocol trace."""
    outputs = trace.outputs
    first = outputs[0] if outputs else None
    decisions = trace.of_kind("decision")
    if first is not None:
        rounds_for = [d for d in decisions if d["agent"] == first["agent"] and d["term"] == first["term"]]
    else:
        rounds_for = decisions
    cfg = trace.config
    mode = cfg["mode"]["kind"]
    if mode == "barrier":
        mode = f"barrier:{cfg['mode']['max_rounds']}"
    return {
        "scenario": trace.header.get("scenario", ""),
        "seed": trace.header["seed"],
        "mode": mode,
        "query_id": 0,
        "rounds": len(rounds_for),
        "t_complete": first["t"] if first else None,
        "p_round_max": max((d["t_round"] for d in rounds_for), default=None),
        "work_units": trace.records[-1]["work_units"],
        "forced": bool(first["forced"]) if first else None,
    }
