"""Refinement decision engine: when to output, and which solution.

A round's refinement set is partitioned into equivalence classes. The top class
becomes the candidate when its support reaches ``alpha``; the candidate is
output once it has won ``beta`` consecutive rounds, and never before a set from
a strictly later round than the output solution's round has been ingested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .protocol import ProtocolConfig, RefinementSet, RoundNum, Solution


class ProtocolOrderError(RuntimeError):
    pass


def normalize_answer(answer: str) -> str:
    """Canonical form used for equivalence: trimmed, lowercased, numbers unified."""
    text = answer.strip().lower()
    try:
        value = float(text)
    except ValueError:
        return text
    if not math.isfinite(value):
        return text
    if value == int(value):
        return str(int(value))
    return repr(value)


def equivalent(a: Solution, b: Solution) -> bool:
    return normalize_answer(a.answer) == normalize_answer(b.answer)


@dataclass(frozen=True)
class EquivalenceClass:
    representative: Solution
    members: tuple[Solution, ...]

    @property
    def support(self) -> int:
        return len(self.members)

    @property
    def key(self) -> str:
        return normalize_answer(self.representative.answer)

    def to_dict(self) -> dict:
        return {"answer": self.representative.answer, "support": self.support}


def partition(rset: RefinementSet) -> list[EquivalenceClass]:
    groups: dict[str, list[Solution]] = {}
    for s in sorted(rset.entries, key=lambda s: s.author):
        groups.setdefault(normalize_answer(s.answer), []).append(s)
    classes = [EquivalenceClass(members[0], tuple(members)) for members in groups.values()]
    classes.sort(key=lambda c: (-c.support, c.representative.author))
    return classes


def winning_class(classes: list[EquivalenceClass], alpha: int) -> tuple[EquivalenceClass | None, bool]:
    """Top class if it reaches ``alpha``; second item flags a tie among such classes."""
    if not classes or classes[0].support < alpha:
        return None, False
    top = [c for c in classes if c.support == classes[0].support]
    if len(top) == 1:
        return top[0], False
    return min(top, key=lambda c: c.key), True


@dataclass(frozen=True)
class DecisionOutcome:
    kind: str  # no_change | new_candidate | reset | finalize | forced
    solution: Solution | None = None
    from_round: RoundNum | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "answer": self.solution.answer if self.solution else None,
            "from_round": self.from_round,
        }


@dataclass(frozen=True)
class DecisionState:
    candidate: Solution | None = None
    candidate_round: RoundNum | None = None
    stability_counter: int = 0
    last_round_seen: RoundNum = 0
    history: tuple[tuple[RoundNum, EquivalenceClass | None], ...] = ()
    pending: tuple[Solution, RoundNum] | None = None
    finalized: bool = False

    def winner_at(self, rnd: RoundNum) -> EquivalenceClass | None:
        for r, w in self.history:
            if r == rnd:
                return w
        return None


def ingest_round(
    st: DecisionState, rset: RefinementSet, rnd: RoundNum, cfg: ProtocolConfig
) -> tuple[DecisionState, DecisionOutcome]:
    if rnd != st.last_round_seen + 1:
        raise ProtocolOrderError(
            f"expected round {st.last_round_seen + 1}, got {rnd}"
        )
    if st.finalized:
        return replace(st, last_round_seen=rnd), DecisionOutcome("no_change")

    winner, _ = winning_class(partition(rset), cfg.alpha)
    history = st.history + ((rnd, winner),)
    base = replace(st, last_round_seen=rnd, history=history)

    # beta == 1: the previous round's candidate is released by this ingest,
    # whatever this set says.
    if st.pending is not None:
        sol, from_round = st.pending
        done = replace(base, pending=None, finalized=True)
        return done, DecisionOutcome("finalize", sol, from_round)

    if winner is None:
        outcome = DecisionOutcome("no_change" if st.candidate is None else "reset")
        return (
            replace(base, candidate=None, candidate_round=None, stability_counter=0),
            outcome,
        )

    if st.candidate is not None and equivalent(winner.representative, st.candidate):
        counter = st.stability_counter + 1
        nxt = replace(base, stability_counter=counter)
        outcome = DecisionOutcome("no_change", st.candidate)
    else:
        counter = 1
        nxt = replace(
            base,
            candidate=winner.representative,
            candidate_round=rnd,
            stability_counter=1,
        )
        outcome = DecisionOutcome("new_candidate", winner.representative)

    if counter >= cfg.beta:
        if cfg.beta == 1:
            return replace(nxt, pending=(winner.representative, rnd)), outcome
        prev = st.winner_at(rnd - 1)
        return (
            replace(nxt, finalized=True),
            DecisionOutcome("finalize", prev.representative, rnd - 1),
        )
    return nxt, outcome


def force_output(st: DecisionState, last_set: RefinementSet) -> DecisionOutcome:
    """Round-cap fallback: plurality of the latest output-eligible set.

    Ties in support go to the class whose representative has the lowest author id.
    """
    classes = partition(last_set)
    return DecisionOutcome("forced", classes[0].representative, last_set.round)


def decision_record(
    st: DecisionState, rset: RefinementSet, rnd: RoundNum, outcome: DecisionOutcome, cfg: ProtocolConfig
) -> dict:
    """JSON-ready summary of one ingest, as written to traces."""
    classes = partition(rset)
    winner, tie = winning_class(classes, cfg.alpha)
    return {
        "round": rnd,
        "classes": [c.to_dict() for c in classes],
        "winner": winner.to_dict() if winner else None,
        "tie": tie,
        "candidate": st.candidate.answer if st.candidate else None,
        "counter": st.stability_counter,
        "outcome": outcome.to_dict(),
    }
