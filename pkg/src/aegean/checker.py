"""Correctness properties as predicates over traces.

Every checker is a pure function of its inputs and returns a ``CheckReport``.
A failing report carries a witness: the smallest subsequence of trace records
that shows the violation on its own.

Traces from the serving layer tag records with ``query``; protocol traces have
a single implicit query 0. Properties are evaluated per query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import groupby

from .decision import normalize_answer
from .protocol import ProtocolConfig, Solution, tolerated_failures
from .reasoning import IncompleteOracleError, QualityOracle, majority_optimal_bound
from .trace import Trace


class PreconditionError(ValueError):
    """The trace lies outside the model the property is stated for."""


@dataclass(frozen=True)
class CheckReport:
    property: str
    verdict: str  # pass | fail
    witness: tuple[dict, ...] = ()
    stats: dict = field(default_factory=dict)
    detail: str = ""

    def __post_init__(self):
        if self.verdict not in ("pass", "fail"):
            raise ValueError(f"verdict must be pass or fail, got {self.verdict!r}")
        if self.verdict == "fail" and not self.witness:
            raise ValueError("a failing report needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "verdict": self.verdict,
            "witness": list(self.witness),
            "stats": self.stats,
            "detail": self.detail,
        }


def _query(rec: dict) -> int:
    return rec.get("query", 0)


def _task(trace: Trace) -> str:
    return trace.config["task"]


def trace_stats(trace: Trace) -> dict:
    states = trace.of_kind("state")
    leaders = {(r["term"], r["agent"]) for r in states if r["role"] == "leader"}
    return {
        "outputs": len(trace.outputs),
        "rounds": len(trace.of_kind("decision")),
        "terms": len({r["term"] for r in states}),
        "elections": len(leaders),
    }


def _quality(oracle: QualityOracle, task: str, rec: dict) -> float:
    try:
        return oracle.evaluate(task, rec["solution"]["answer"])
    except KeyError as exc:
        raise IncompleteOracleError(f"answer {rec['solution']['answer']!r} not in oracle table") from exc


def _eligible(trace: Trace, strict: bool) -> list[dict]:
    return [o for o in trace.outputs if strict or not o.get("forced", False)]


def check_monotonicity(trace: Trace, oracle: QualityOracle, strict: bool = False) -> CheckReport:
    """Later outputs are never worse than earlier ones (per query)."""
    task = _task(trace)
    outputs = sorted(_eligible(trace, strict), key=lambda o: (_query(o), o["seq"]))
    for _, group in groupby(outputs, key=_query):
        best: dict | None = None
        for o in group:
            q = _quality(oracle, task, o)
            if best is not None and q < _quality(oracle, task, best):
                return CheckReport(
                    "monotonicity",
                    "fail",
                    (best, o),
                    trace_stats(trace),
                    f"Q={q} after Q={_quality(oracle, task, best)}",
                )
            if best is None or q > _quality(oracle, task, best):
                best = o
    return CheckReport("monotonicity", "pass", stats=trace_stats(trace))


def initial_solutions(trace: Trace) -> dict[int, list[Solution]]:
    by_query: dict[int, list[Solution]] = {}
    for r in trace.of_kind("initial"):
        by_query.setdefault(_query(r), []).append(Solution.from_dict(r["solution"]))
    return by_query


def validity_bound(trace: Trace, oracle: QualityOracle, query: int = 0) -> float:
    sols = initial_solutions(trace).get(query, [])
    if not sols:
        raise PreconditionError(f"trace has no initial solutions for query {query}")
    return majority_optimal_bound(_task(trace), sols, oracle, trace.config["protocol"]["n_agents"])


def check_validity(trace: Trace, oracle: QualityOracle, bound: float | None = None, strict: bool = False) -> CheckReport:
    """Every output is at least as good as some majority-optimal solution.

    ``bound`` defaults to the majority-optimal bound over the trace's recorded
    initial solutions, computed per query.
    """
    task = _task(trace)
    for o in _eligible(trace, strict):
        b = bound if bound is not None else validity_bound(trace, oracle, _query(o))
        q = _quality(oracle, task, o)
        if q < b:
            return CheckReport("validity", "fail", (o,), trace_stats(trace), f"Q={q} < bound {b}")
    return CheckReport("validity", "pass", stats=trace_stats(trace))


def check_termination(trace: Trace, deadline: float | None = None) -> CheckReport:
    """Each query produces an output by ``deadline`` (default: the scenario's time cap).

    Raises PreconditionError when the fault plan exceeds the tolerated number
    of failures: no output is promised there.
    """
    cfg = trace.config
    n = cfg["protocol"]["n_agents"]
    faults = cfg.get("faults", {})
    failed = {c[0] for c in faults.get("crashes", ())} | {
        s[0] for s in faults.get("stalls", ()) if s[2] is None
    }
    if len(failed) > tolerated_failures(n):
        raise PreconditionError(
            f"{len(failed)} failed agents exceeds the {tolerated_failures(n)} tolerated for N={n}"
        )
    deadline = cfg.get("max_time", float("inf")) if deadline is None else deadline
    queries = {_query(r) for r in trace.of_kind("initial", "arrival")} or {0}
    answered = {_query(o) for o in trace.outputs if o["t"] <= deadline}
    missing = sorted(queries - answered)
    if missing:
        end = trace.records[-1] if trace.records else {"kind": "end", "t": 0.0, "seq": -1}
        return CheckReport(
            "termination", "fail", (end,), trace_stats(trace), f"no output by t={deadline} for queries {missing}"
        )
    return CheckReport("termination", "pass", stats=trace_stats(trace))


def check_election_safety(trace: Trace) -> CheckReport:
    """At most one agent becomes leader in any term."""
    first: dict[tuple[int, int], dict] = {}
    for r in trace.of_kind("state"):
        if r["role"] == "leader":
            first.setdefault((_query(r), r["term"], r["agent"]), r)
    by_term: dict[tuple[int, int], dict] = {}
    for (q, term, _), rec in sorted(first.items(), key=lambda kv: kv[1]["seq"]):
        other = by_term.setdefault((q, term), rec)
        if other["agent"] != rec["agent"]:
            return CheckReport(
                "election_safety",
                "fail",
                (other, rec),
                trace_stats(trace),
                f"agents {other['agent']} and {rec['agent']} both lead term {term}",
            )
    return CheckReport("election_safety", "pass", stats=trace_stats(trace))


def _winner_matches(d: dict, answer: str, alpha: int) -> bool:
    w = d.get("winner")
    return w is not None and w["support"] >= alpha and normalize_answer(w["answer"]) == normalize_answer(answer)


def check_commit_discipline(trace: Trace, cfg: ProtocolConfig) -> CheckReport:
    """Every output follows beta consecutive winning rounds for its class and a later-round ingest.

    For an output of round ``r`` by leader ``p`` in term ``t``, the decision
    records of ``(p, t)`` written before the output must contain a run of
    ``beta`` consecutive rounds, including ``r``, whose winning class (support
    at least ``alpha``) is equivalent to the output, plus a record for a round
    greater than ``r``.
    """
    decisions = trace.of_kind("decision")
    for o in trace.outputs:
        if o.get("forced", False):
            continue
        key = (_query(o), o.get("agent"), o.get("term"))
        before = [d for d in decisions if (_query(d), d.get("agent"), d.get("term")) == key and d["seq"] < o["seq"]]
        rounds = {d["round"]: d for d in before}
        answer = o["solution"]["answer"]
        r = o["round"]
        ok = False
        for start in range(r - cfg.beta + 1, r + 1):
            window = [rounds.get(k) for k in range(start, start + cfg.beta)]
            if all(d is not None and _winner_matches(d, answer, cfg.alpha) for d in window):
                ok = True
                break
        later = any(k > r for k in rounds)
        if not (ok and later):
            why = "no beta-round winning window" if not ok else f"no ingest after round {r}"
            return CheckReport("commit_discipline", "fail", tuple(before) + (o,), trace_stats(trace), why)
    return CheckReport("commit_discipline", "pass", stats=trace_stats(trace))


def protocol_config_of(trace: Trace) -> ProtocolConfig:
    """Protocol parameters of the trace's scenario; serve traces use the serving layer's alpha."""
    cfg = ProtocolConfig.from_dict(trace.config["protocol"])
    alpha = trace.config.get("serve", {}).get("alpha")
    if trace.header.get("engine") == "serve" and alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    return cfg


def oracle_of(trace: Trace) -> QualityOracle:
    return QualityOracle(trace.config["oracle"])


def check_all(
    trace: Trace,
    oracle: QualityOracle | None = None,
    cfg: ProtocolConfig | None = None,
    deadline: float | None = None,
) -> list[CheckReport]:
    """Run all five checkers with inputs defaulting to the trace's embedded scenario."""
    oracle = oracle_of(trace) if oracle is None else oracle
    cfg = protocol_config_of(trace) if cfg is None else cfg
    return [
        check_monotonicity(trace, oracle),
        check_validity(trace, oracle),
        check_termination(trace, deadline),
        check_election_safety(trace),
        check_commit_discipline(trace, cfg),
    ]


def format_reports(reports: list[CheckReport]) -> str:
    rows = [("property", "verdict", "outputs", "rounds", "terms", "elections", "detail")]
    for r in reports:
        s = r.stats
        rows.append(
            (r.property, r.verdict, str(s.get("outputs", "")), str(s.get("rounds", "")),
             str(s.get("terms", "")), str(s.get("elections", "")), r.detail)
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    for r in reports:
        if not r.passed:
            lines.append(f"witness for {r.property}:")
            lines.extend("  " + json.dumps(w, sort_keys=True) for w in r.witness)
    return "\n".join(lines)
