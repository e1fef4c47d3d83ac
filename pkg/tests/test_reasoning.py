from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aegean.decision import normalize_answer
from aegean.protocol import RefinementSet, Solution, quorum_size
from aegean.reasoning import (
    AgentProfile,
    IncompleteOracleError,
    QualityOracle,
    ScenarioError,
    best_entry,
    majority_optimal_bound,
    make_context,
    reason_initial,
    reason_refine,
)

TASK = "t"
ORACLE = QualityOracle({TASK: {"13": 1.0, "17": 0.0, "19": 0.5}})


def sols(*answers):
    return [Solution(a, author=i) for i, a in enumerate(answers)]


def brute_force_bound(qualities):
    # min over every simple-majority subset of the best quality in it
    n = len(qualities)
    q = quorum_size(n)
    return min(
        max(qualities[i] for i in subset)
        for k in range(q, n + 1)
        for subset in combinations(range(n), k)
    )


def test_oracle_lookup_normalizes():
    assert ORACLE(TASK, " 13.0 ") == 1.0


def test_oracle_unknown_answer():
    with pytest.raises(IncompleteOracleError):
        ORACLE.evaluate(TASK, "42")


def test_oracle_alphabet_best_first():
    assert ORACLE.alphabet(TASK) == ["13", "19", "17"]


def test_bound_example_zero_zero_one():
    oracle = QualityOracle({TASK: {"a": 0.0, "b": 0.0, "c": 1.0}})
    assert majority_optimal_bound(TASK, sols("a", "b", "c"), oracle) == 0.0


def test_bound_two_of_three_correct():
    assert majority_optimal_bound(TASK, sols("13", "17", "13"), ORACLE) == 1.0


@given(st.lists(st.sampled_from(["13", "17", "19"]), min_size=1, max_size=8))
def test_bound_matches_enumeration(answers):
    qualities = [ORACLE(TASK, a) for a in answers]
    assert majority_optimal_bound(TASK, sols(*answers), ORACLE) == brute_force_bound(qualities)


def test_bound_requires_one_solution_per_agent():
    with pytest.raises(ValueError):
        majority_optimal_bound(TASK, sols("13"), ORACLE, n=3)


def test_max_adopter_adopts_best_ties_to_lowest_author():
    ctx = make_context(5, AgentProfile("max_adopter", answers=("17",)), ORACLE, 0)
    entries = (Solution("19", author=3), Solution("13", author=2), Solution("13.0", author=1))
    _, sol = reason_refine(ctx, RefinementSet(entries, 1, 1), TASK)
    assert sol.answer == "13.0" and sol.author == 5


def test_best_entry():
    assert best_entry(sols("17", "19"), TASK, ORACLE).answer == "19"


@given(st.lists(st.sampled_from(["13", "17", "19"]), min_size=1, max_size=5), st.integers(0, 100))
def test_conforming_profiles_never_refine_below_best(answers, seed):
    # every non-adversarial profile except scripted satisfies the refinement assumption
    rset = RefinementSet(tuple(sols(*answers)), 1, 1)
    best = max(ORACLE(TASK, a) for a in answers)
    for profile in (AgentProfile("max_adopter"), AgentProfile("noisy_flipper", p_flip=0.9)):
        ctx = make_context(0, profile, ORACLE, seed)
        _, sol = reason_refine(ctx, rset, TASK)
        assert ORACLE(TASK, sol.answer) >= best


def test_noisy_flipper_flip_rate():
    profile = AgentProfile("noisy_flipper", p_flip=0.3)
    flips = 0
    trials = 4000
    for seed in range(trials):
        _, sol = reason_initial(make_context(0, profile, ORACLE, seed), TASK)
        flips += normalize_answer(sol.answer) != "13"
    assert abs(flips / trials - 0.3) <= 0.03


def test_noisy_flipper_q_base_caps_quality():
    profile = AgentProfile("noisy_flipper", p_flip=0.0, q_base=0.6)
    _, sol = reason_initial(make_context(0, profile, ORACLE, 0), TASK)
    assert sol.answer == "19"


def test_scripted_sequence_and_exhaustion():
    ctx = make_context(0, AgentProfile("scripted", answers=("17", "13")), ORACLE, 0)
    ctx, first = reason_initial(ctx, TASK)
    ctx, second = reason_refine(ctx, RefinementSet(tuple(sols("17")), 1, 1), TASK)
    assert (first.answer, second.answer) == ("17", "13")
    with pytest.raises(ScenarioError):
        reason_refine(ctx, RefinementSet(tuple(sols("17")), 1, 2), TASK)


def test_adversarial_degrader_turns_worst_after_script():
    ctx = make_context(0, AgentProfile("adversarial_degrader", answers=("13", "13")), ORACLE, 0)
    ctx, _ = reason_initial(ctx, TASK)
    rset = RefinementSet(tuple(sols("13", "13")), 1, 1)
    ctx, a = reason_refine(ctx, rset, TASK)
    ctx, b = reason_refine(ctx, rset, TASK)
    assert a.answer == "13" and b.answer == "17"


def test_reasoning_is_deterministic_per_seed():
    profile = AgentProfile("noisy_flipper", p_flip=0.5)
    runs = [reason_initial(make_context(1, profile, ORACLE, 42), TASK)[1] for _ in range(2)]
    assert runs[0] == runs[1]


def test_profile_round_trip_and_unknown_kind():
    p = AgentProfile("noisy_flipper", p_flip=0.2, q_base=0.5, latency=2.0)
    assert AgentProfile.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        AgentProfile("oracle_reader")


def test_conforming_flag():
    assert AgentProfile("max_adopter").conforming
    assert not AgentProfile("adversarial_degrader").conforming


def test_alphabet_ignores_table_key_order():
    a = QualityOracle({TASK: {"42": 1.0, "7": 0.0, "12": 0.0}})
    b = QualityOracle({TASK: {"12": 0.0, "42": 1.0, "7": 0.0}})
    assert a.alphabet(TASK) == b.alphabet(TASK) == ["42", "12", "7"]
    assert a == b
