"""Quality oracle and mock reasoning agents.

Agents never see quality values directly. Profiles that model a capable
reasoner (``max_adopter``, ``noisy_flipper``) consult the oracle's ranking to
behave as if they could recognize the better solution; ``adversarial_degrader``
deliberately returns worse answers and exists for negative tests.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from .decision import normalize_answer
from .protocol import AgentId, RefinementSet, Solution, quorum_size


class ScenarioError(ValueError):
    pass


class IncompleteOracleError(KeyError):
    pass


class QualityOracle:
    """Deterministic lookup from (task, answer) to a real quality score."""

    def __init__(self, table: dict[str, dict[str, float]]):
        self._table = {
            task: {normalize_answer(a): float(q) for a, q in answers.items()}
            for task, answers in table.items()
        }
        self._raw = {task: dict(answers) for task, answers in table.items()}

    def evaluate(self, task: str, answer: str) -> float:
        try:
            return self._table[task][normalize_answer(answer)]
        except KeyError:
            raise IncompleteOracleError(f"no quality for answer {answer!r} on task {task!r}") from None

    def __call__(self, task: str, answer: str) -> float:
        return self.evaluate(task, answer)

    def alphabet(self, task: str) -> list[str]:
        """Answers known for ``task``, best first; equal qualities in string order.

        Independent of the table's key order, so a scenario behaves the same
        after a round trip through canonical (key-sorted) JSON.
        """
        answers = sorted(self._raw[task])
        return sorted(answers, key=lambda a: -self._table[task][normalize_answer(a)])

    def to_dict(self) -> dict:
        return {task: dict(answers) for task, answers in self._raw.items()}

    def __eq__(self, other) -> bool:
        return isinstance(other, QualityOracle) and self._table == other._table

    def __hash__(self) -> int:
        return hash(tuple(sorted((t, tuple(sorted(a.items()))) for t, a in self._table.items())))


@dataclass(frozen=True)
class AgentProfile:
    """How a mock agent reasons.

    kind is one of ``max_adopter``, ``noisy_flipper``, ``scripted`` or
    ``adversarial_degrader``. ``answers`` holds the scripted sequence (index 0 is
    the initial answer, index k the k-th refinement call). ``max_adopter`` only
    uses the initial answer; ``adversarial_degrader`` follows the script and then
    keeps answering the worst solution it knows. ``latency``, when set,
    replaces this agent's entry in the scenario's latency model.
    """

    kind: str
    p_flip: float = 0.0
    q_base: float | None = None
    answers: tuple[str, ...] = ()
    latency: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        if self.kind not in PROFILE_KINDS:
            raise ScenarioError(f"unknown agent profile kind {self.kind!r}")
        if not 0.0 <= self.p_flip <= 1.0:
            raise ScenarioError(f"p_flip must be a probability, got {self.p_flip}")

    @property
    def conforming(self) -> bool:
        return self.kind in ("max_adopter", "noisy_flipper")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "noisy_flipper":
            d["p_flip"] = self.p_flip
            if self.q_base is not None:
                d["q_base"] = self.q_base
        if self.answers:
            d["answers"] = list(self.answers)
        if self.latency is not None:
            d["latency"] = self.latency
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AgentProfile:
        return cls(
            kind=d["kind"],
            p_flip=d.get("p_flip", 0.0),
            q_base=d.get("q_base"),
            answers=tuple(d.get("answers", ())),
            latency=d.get("latency"),
        )


PROFILE_KINDS = ("max_adopter", "noisy_flipper", "scripted", "adversarial_degrader")


@dataclass(frozen=True)
class AgentContext:
    """Per-agent reasoning context. Advanced only by ``reason_*`` calls."""

    agent: AgentId
    profile: AgentProfile
    oracle: QualityOracle
    rng_seed: int | str
    calls: int = 0
    history: tuple[str, ...] = ()

    def _rng(self) -> random.Random:
        return random.Random(f"{self.rng_seed}:{self.agent}:{self.calls}")


def make_context(agent: AgentId, profile: AgentProfile, oracle: QualityOracle, seed: int | str) -> AgentContext:
    return AgentContext(agent=agent, profile=profile, oracle=oracle, rng_seed=seed)


def _advance(ctx: AgentContext, answer: str) -> AgentContext:
    return replace(ctx, calls=ctx.calls + 1, history=ctx.history + (answer,))


def _scripted(ctx: AgentContext, index: int) -> str:
    answers = ctx.profile.answers
    if index >= len(answers):
        raise ScenarioError(
            f"scripted agent {ctx.agent} has no answer for call {index} "
            f"(script length {len(answers)})"
        )
    return answers[index]


def _base_answer(ctx: AgentContext, task: str) -> str:
    ranked = ctx.oracle.alphabet(task)
    if ctx.profile.q_base is None:
        return ranked[0]
    capped = [a for a in ranked if ctx.oracle.evaluate(task, a) <= ctx.profile.q_base]
    return capped[0] if capped else ranked[-1]


def reason_initial(ctx: AgentContext, task: str) -> tuple[AgentContext, Solution]:
    profile = ctx.profile
    if profile.kind == "scripted":
        answer = _scripted(ctx, 0)
    elif profile.kind == "max_adopter" and profile.answers:
        answer = profile.answers[0]
    elif profile.kind == "adversarial_degrader" and profile.answers:
        answer = profile.answers[0]
    else:
        answer = _base_answer(ctx, task)
        if profile.kind == "noisy_flipper":
            rng = ctx._rng()
            if rng.random() < profile.p_flip:
                others = [a for a in ctx.oracle.alphabet(task) if normalize_answer(a) != normalize_answer(answer)]
                if others:
                    answer = rng.choice(others)
    sol = Solution(answer=answer, trace=f"agent {ctx.agent}: initial reasoning", author=ctx.agent)
    return _advance(ctx, answer), sol


def best_entry(entries: Sequence[Solution], task: str, oracle: QualityOracle) -> Solution:
    """Highest-quality entry; equal quality goes to the lowest author id."""
    return min(entries, key=lambda s: (-oracle.evaluate(task, s.answer), s.author))


def reason_refine(ctx: AgentContext, rset: RefinementSet, task: str) -> tuple[AgentContext, Solution]:
    if not rset.entries:
        raise ValueError("cannot refine over an empty refinement set")
    profile = ctx.profile
    index = ctx.calls
    if profile.kind == "scripted":
        answer = _scripted(ctx, index)
        note = "scripted"
    elif profile.kind == "adversarial_degrader":
        if index < len(profile.answers):
            answer = profile.answers[index]
        else:
            answer = ctx.oracle.alphabet(task)[-1]
        note = "degraded"
    else:
        best = best_entry(rset.entries, task, ctx.oracle)
        answer = best.answer
        note = f"adopted reasoning of agent {best.author}"
        if profile.kind == "noisy_flipper" and ctx._rng().random() < 0.5:
            answer = _restate(answer)
    sol = Solution(answer=answer, trace=f"agent {ctx.agent} round {index}: {note}", author=ctx.agent)
    return _advance(ctx, answer), sol


def _restate(answer: str) -> str:
    # numeric answers get an equivalent spelling
    try:
        value = float(answer)
    except ValueError:
        return answer
    if value == int(value) and "." not in answer:
        return f"{answer}.0"
    return answer


def majority_optimal_bound(task: str, initial_solutions: Sequence[Solution], oracle: QualityOracle, n: int | None = None) -> float:
    """Weakest majority-optimal quality over the agents' individual solutions.

    Equals the minimum, over all majority subsets, of the best quality in the
    subset: the value at ascending rank ``quorum_size(n) - 1``.
    """
    n = len(initial_solutions) if n is None else n
    if len(initial_solutions) != n:
        raise ValueError(f"expected {n} initial solutions, got {len(initial_solutions)}")
    qualities = sorted(oracle.evaluate(task, s.answer) for s in initial_solutions)
    return qualities[quorum_size(n) - 1]

