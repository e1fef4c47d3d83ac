from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aegean import library
from aegean.checker import check_commit_discipline, check_validity, oracle_of, protocol_config_of
from aegean.network import FaultPlan, LatencyModel, round_latency
from aegean.protocol import ProtocolConfig, Solution
from aegean.reasoning import AgentProfile
from aegean.scenario import ServeSettings
from aegean.serve import (
    AdmissionError,
    ConsensusCtx,
    Coordinator,
    EnsembleState,
    FinalizedEnsembleError,
    ResourceBudget,
    admit_ensemble,
    handle_agent_failure,
    round_metrics,
    run_serve,
    serve_metrics,
)
from aegean.sim import EventLoop
from aegean.trace import Trace, make_header

CFG = ProtocolConfig(n_agents=3, alpha=2, beta=2)


def coordinator(scenario, seed=0):
    loop = EventLoop()
    trace = Trace(make_header("serve", scenario.to_dict(), seed))
    return Coordinator(scenario, loop, trace, seed), loop


def drain(coord, loop):
    while loop:
        _, event = loop.pop()
        coord.handle(event)


def handle_of(coord, eid, agent):
    return coord.handles[coord.live[(eid, agent)]].handle


# -- admission ---------------------------------------------------------------------


def test_admit_with_room():
    assert admit_ensemble(3, ResourceBudget(10), CFG) == "admitted"


def test_no_partial_admission():
    budget = ResourceBudget(10, used_slots=8)
    assert admit_ensemble(3, budget, CFG) == "deferred"
    assert budget.used_slots == 8


def test_admission_defers_when_alpha_th_member_cannot_meet_timeout():
    cfg = replace(CFG, round_timeout=5.0)
    assert admit_ensemble(3, ResourceBudget(10), cfg, (1.3, 4.4, 15.2)) == "admitted"
    assert admit_ensemble(3, ResourceBudget(10), cfg, (1.3, 6.0, 15.2)) == "deferred"


def test_admission_rejects_empty_ensemble():
    with pytest.raises(ValueError):
        admit_ensemble(0, ResourceBudget(10), CFG)


def test_budget_reserve_release():
    b = ResourceBudget(3)
    b.reserve(3)
    with pytest.raises(AdmissionError):
        b.reserve(1)
    b.release(3)
    assert b.free == 3
    with pytest.raises(ValueError):
        ResourceBudget(3, used_slots=4)


def test_two_ensembles_racing_for_three_slots_fifo():
    scenario = replace(library.straggler("gsm8k"), serve=ServeSettings(total_slots=3))
    coord, loop = coordinator(scenario)
    coord.submit(0)
    coord.submit(1)
    adm = coord.trace.of_kind("admission")
    assert [(r["query"], r["verdict"]) for r in adm] == [(0, "admitted"), (1, "deferred")]
    drain(coord, loop)
    adm = coord.trace.of_kind("admission")
    assert [(r["query"], r["verdict"]) for r in adm] == [(0, "admitted"), (1, "deferred"), (1, "admitted")]
    out0 = coord.trace.outputs[0]
    release = coord.trace.of_kind("release")[0]
    # eager reclamation: release and the waiting admission happen in the finalizing event
    assert out0["t"] == release["t"] == adm[-1]["t"]
    assert out0["seq"] < release["seq"] < adm[-1]["seq"]


def test_dispatch_to_unadmitted_ensemble_rejected():
    scenario = replace(library.straggler("gsm8k"), serve=ServeSettings(total_slots=3))
    coord, _ = coordinator(scenario)
    coord.submit(0)
    coord.submit(1)  # no free slots: deferred
    with pytest.raises(AdmissionError):
        coord.dispatch(scenario.task, ConsensusCtx(0, 0), 1)


def test_dispatch_after_finalization_rejected():
    scenario = library.straggler("gsm8k")
    coord, loop = coordinator(scenario)
    coord.submit(0)
    drain(coord, loop)
    with pytest.raises(FinalizedEnsembleError):
        coord.dispatch(scenario.task, ConsensusCtx(0, 3), 0)


def test_fresh_ensemble_has_three_running_members():
    coord, _ = coordinator(library.straggler("gsm8k"))
    coord.submit(0)
    st_ = coord.query_ensemble(0)
    assert st_.members == {0: "running", 1: "running", 2: "running"}


def test_no_partial_admission_under_poisson_load():
    scenario = replace(
        library.straggler("gsm8k", sigma=0.3), arrivals=(0.5, 40.0), serve=ServeSettings(total_slots=7)
    )
    trace = run_serve(scenario, 3)
    admitted = {r["query"]: r for r in trace.of_kind("admission") if r["verdict"] == "admitted"}
    assert len(admitted) == len(trace.of_kind("arrival")) > 2
    for q, adm in admitted.items():
        first = [d for d in trace.of_kind("dispatch") if d["query"] == q and d["round"] == 0]
        # all members start together, in the admitting event
        assert len(first) == 3 and {d["t"] for d in first} == {adm["t"]}
    for r in trace.of_kind("admission", "release"):
        assert 0 <= r["free_slots"] <= 7


# -- incremental agreement ----------------------------------------------------------


def test_gsm8k_round_closes_at_second_completion_and_cancels_straggler():
    trace = run_serve(library.straggler("gsm8k"))
    (end0, *_) = round_metrics(trace)
    assert end0["t_round_end"] == 4.4 and end0["cancelled_count"] == 1
    (cancel,) = [r for r in trace.of_kind("cancel") if r["round"] == 0]
    assert cancel["agent"] == 2 and cancel["t"] == 4.4
    # the cancelled member's completion at 15.2 never happens
    assert not [r for r in trace.of_kind("complete") if r["agent"] == 2 and r["round"] == 0]
    assert all(r["t"] != 15.2 for r in trace.records)


def test_first_completion_emits_nothing_and_split_vote_waits():
    coord, _ = coordinator(library.straggler("gsm8k"))
    coord.submit(0)
    assert coord.on_complete(handle_of(coord, 0, 0), Solution("13", author=0)) == []
    assert coord.on_complete(handle_of(coord, 0, 1), Solution("17", author=1)) == []
    st_ = coord.query_ensemble(0)
    assert st_.members[2] == "running" and st_.support == {"13": 1, "17": 1}
    directives = coord.on_complete(handle_of(coord, 0, 2), Solution("13", author=2))
    assert [d.kind for d in directives] == ["advance"]
    assert coord.trace.of_kind("cancel") == []


def test_cancel_running_then_done():
    coord, _ = coordinator(library.straggler("gsm8k"))
    coord.submit(0)
    h2 = handle_of(coord, 0, 2)
    h0 = handle_of(coord, 0, 0)
    assert coord.cancel(h2) is True
    assert coord.query_ensemble(0).members[2] == "cancelled"
    assert coord.cancel(h2) is False
    coord.on_complete(h0, Solution("13", author=0))
    assert coord.cancel(h0) is False


def test_stale_completion_ignored_and_logged():
    coord, _ = coordinator(library.straggler("gsm8k"))
    coord.submit(0)
    h = handle_of(coord, 0, 2)
    coord.cancel(h)
    assert coord.on_complete(h, Solution("13", author=2)) == []
    assert coord.trace.of_kind("stale")[0]["handle"] == h.handle_id


def test_support_counts_only_done_members():
    coord, _ = coordinator(library.straggler("gsm8k"))
    coord.submit(0)
    coord.on_complete(handle_of(coord, 0, 0), Solution("13", author=0))
    st_ = coord.query_ensemble(0)
    done = sum(1 for s in st_.members.values() if s == "done")
    assert sum(st_.support.values()) == done == 1


# -- failure policy -----------------------------------------------------------------


def ensemble(statuses, candidate=None):
    return EnsembleState(0, 0, dict(enumerate(statuses)), round=2, candidate=candidate, stability=1)


def test_one_crash_continues():
    d = handle_agent_failure(0, 2, ensemble(["running"] * 3), CFG)
    assert d.kind == "continue"


def test_two_crashes_without_candidate_restart():
    d = handle_agent_failure(0, 1, ensemble(["failed", "running", "running"]), CFG)
    assert d.kind == "restart"


def test_two_crashes_with_candidate_keep_it_in_fresh_ensemble():
    cand = Solution("13", author=0)
    d = handle_agent_failure(0, 1, ensemble(["failed", "running", "running"], cand), CFG)
    assert d.kind == "fresh_ensemble" and d.solution == cand and d.round == 2


@pytest.mark.parametrize("crash_at,expected", [(5.0, "restart"), (9.0, "fresh_ensemble")])
def test_crashes_mid_run_follow_policy_and_still_commit_after_beta_rounds(crash_at, expected):
    scenario = replace(library.straggler("gsm8k"), faults=FaultPlan(crashes=((0, crash_at), (1, crash_at))))
    trace = run_serve(scenario)
    assert [r["directive"] for r in trace.of_kind("failure")] == ["continue", expected]
    assert trace.of_kind(expected)
    out = trace.outputs[0]
    assert out["solution"]["answer"] == "13" and not out["forced"]
    assert check_commit_discipline(trace, protocol_config_of(trace)).passed


def test_soft_failure_from_round_timeout():
    # the live members disagree, so the round waits on the hung one until it times out
    base = library.straggler("gsm8k")
    scenario = replace(
        base,
        protocol=replace(base.protocol, round_timeout=5.0),
        agents=(
            AgentProfile("scripted", answers=("13",) * 6),
            AgentProfile("scripted", answers=("17", "17") + ("13",) * 4),
            AgentProfile("scripted", answers=("13",) * 6),
        ),
        latency=LatencyModel("fixed", (1.0,)),
        faults=FaultPlan(stalls=((2, 1, None),)),
    )
    trace = run_serve(scenario)
    (fail,) = trace.of_kind("failure")
    assert (fail["agent"], fail["detection"], fail["directive"], fail["t"]) == (2, "soft", "continue", 6.0)
    assert trace.outputs[0]["solution"]["answer"] == "13"
    assert not [d for d in trace.of_kind("dispatch") if d["agent"] == 2 and d["round"] > 1]


# -- dominance and accounting --------------------------------------------------------


@given(st.lists(st.floats(0.01, 500), min_size=2, max_size=9), st.data())
def test_quorum_round_never_slower_than_barrier(samples, data):
    k = data.draw(st.integers(1, len(samples)))
    q, b = round_latency("quorum", samples, k), round_latency("barrier", samples)
    assert q <= b
    # equality exactly when the straggler is among the first k completions
    assert (q == b) == (sorted(samples)[k - 1] == max(samples))


@pytest.mark.parametrize("bench", ["gsm8k", "aime"])
def test_serve_round_latency_and_work_never_exceed_barrier(bench):
    for seed in range(20):
        aeg = run_serve(library.straggler(bench, sigma=0.3), seed)
        bar = run_serve(library.straggler(bench, "barrier", 4, sigma=0.3), seed)
        a_rounds = [d["t_round"] for d in aeg.of_kind("decision")]
        b_rounds = [d["t_round"] for d in bar.of_kind("decision")]
        assert max(a_rounds) <= max(b_rounds)
        assert aeg.records[-1]["work_units"] < bar.records[-1]["work_units"]


def test_metrics_rows():
    trace = run_serve(library.straggler("gsm8k"))
    (row,) = serve_metrics(trace)
    assert row["rounds"] == 2 and row["t_complete"] == 13.2 and row["p_round_max"] == 4.4
    assert not row["forced"]
    assert [r["round"] for r in round_metrics(trace)] == [0, 1, 2]


def test_quorum_ablation_alpha_one_commits_to_weak_agents():
    trace = run_serve(library.quorum_ablation(1), 0)
    assert trace.outputs
    # the two fast weak agents decide alone; strong agents are cancelled each round
    assert all(r["cancelled_count"] >= 3 for r in round_metrics(trace))


def test_serve_validity_uses_per_query_initials():
    scenario = replace(library.quorum_ablation(3), arrivals=(0.2, 30.0))
    trace = run_serve(scenario, 1)
    assert len(trace.outputs) > 1
    assert check_validity(trace, oracle_of(trace)).passed


def test_replacement_latency_profile_override():
    scenario = library.straggler("gsm8k")
    fast = replace(scenario.agents[2], latency=0.5)
    trace = run_serve(replace(scenario, agents=scenario.agents[:2] + (fast,), latency=LatencyModel("fixed", (1.3, 4.4, 15.2))))
    assert round_metrics(trace)[0]["t_round_end"] == 1.3
