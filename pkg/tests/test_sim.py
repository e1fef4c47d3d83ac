from dataclasses import replace

import pytest

from aegean import checker, library
from aegean.network import FaultPlan, LatencyModel
from aegean.protocol import ProtocolConfig
from aegean.reasoning import AgentProfile, QualityOracle
from aegean.scenario import ScenarioConfig
from aegean.sim import EventLoop, LivenessViolation, ProtocolSimulation, run, run_metrics, state_digest, stream


def five_agents(crashed: int) -> ScenarioConfig:
    return ScenarioConfig(
        task=library.TASK,
        protocol=ProtocolConfig(n_agents=5, alpha=3, beta=2, t_max=5, round_timeout=10.0, leader_mode="election"),
        agents=tuple(AgentProfile("max_adopter", answers=("13",)) for _ in range(5)),
        oracle=QualityOracle(library.ARITH_ORACLE),
        faults=FaultPlan(crashes=tuple((a, 0.0) for a in range(crashed))),
        max_time=500.0,
    )


def test_event_loop_orders_by_time_then_insertion():
    loop = EventLoop()
    loop.schedule(2.0, "c")
    loop.schedule(1.0, "a")
    loop.schedule(1.0, "b")
    dropped = loop.schedule(1.5, "x")
    loop.cancel(dropped)
    assert [loop.pop()[1] for _ in range(3)] == ["a", "b", "c"]
    assert not loop


def test_streams_are_independent_and_reproducible():
    assert stream(1, "net").random() == stream(1, "net").random()
    assert stream(1, "net").random() != stream(1, "lat").random()


def test_same_seed_same_trace():
    cfg = library.lemma_sweep(11)
    assert run(cfg, 5).to_jsonl() == run(cfg, 5).to_jsonl()


def test_different_seeds_change_random_scenarios():
    cfg = library.lemma_sweep(11)
    assert run(cfg, 5).to_jsonl() != run(cfg, 6).to_jsonl()


def test_fast_path_output_and_metrics():
    trace = run(library.fig6_case1())
    (out,) = trace.outputs
    assert out["solution"]["answer"] == "13" and out["round"] == 1 and not out["forced"]
    m = run_metrics(trace)
    assert m["rounds"] == 2 and m["t_complete"] == 3.0 and m["work_units"] == 9.0


def test_slow_path_waits_for_stability():
    trace = run(library.fig6_case2())
    decisions = [d["outcome"]["kind"] for d in trace.of_kind("decision")]
    assert decisions == ["new_candidate", "new_candidate", "finalize"]
    assert trace.outputs[0]["solution"]["answer"] == "13" and trace.outputs[0]["round"] == 2


def test_leader_crash_elects_new_leader_and_outputs():
    trace = run(library.leader_crash())
    out = trace.outputs[0]
    assert out["term"] > 1 and out["agent"] != 0
    assert checker.check_election_safety(trace).passed


@pytest.mark.parametrize("crashed", [0, 1, 2])
def test_up_to_tolerated_crashes_still_output(crashed):
    trace = run(five_agents(crashed))
    assert trace.outputs and trace.outputs[0]["solution"]["answer"] == "13"


def test_beyond_tolerated_crashes_is_not_a_liveness_violation():
    cfg = five_agents(3)
    assert not cfg.respects_failure_bound
    trace = run(cfg)
    assert not trace.outputs
    assert trace.records[-1]["liveness_violation"] is False
    with pytest.raises(checker.PreconditionError):
        checker.check_termination(trace)


def test_tiny_cap_raises_liveness_violation_with_trace():
    cfg = replace(library.fig6_case1(), max_time=0.5)
    with pytest.raises(LivenessViolation) as exc:
        run(cfg)
    assert exc.value.trace.records[-1]["reason"] == "cap"


def test_forced_output_at_t_max():
    # answers never repeat, so no class ever reaches alpha twice in a row
    oracle = QualityOracle({"t": {"a": 1.0, "b": 0.5, "c": 0.0}})
    agents = (
        AgentProfile("scripted", answers=("a", "a", "b", "c", "a", "b")),
        AgentProfile("scripted", answers=("b", "b", "c", "a", "b", "c")),
        AgentProfile("scripted", answers=("c", "c", "a", "b", "c", "a")),
    )
    cfg = ScenarioConfig(
        task="t",
        protocol=ProtocolConfig(n_agents=3, alpha=2, beta=2, t_max=4, quorum_grace=0.5),
        agents=agents,
        oracle=oracle,
        latency=LatencyModel("fixed", (1.0,)),
    )
    out = run(cfg).outputs[0]
    assert out["forced"] and out["round"] == 3


def test_state_digest_is_order_insensitive_to_reruns():
    a = ProtocolSimulation(library.fig6_case2(), 0)
    b = ProtocolSimulation(library.fig6_case2(), 0)
    a.run(), b.run()
    assert [state_digest(s) for s in a.states] == [state_digest(s) for s in b.states]


def test_barrier_mode_runs_fixed_rounds():
    trace = run(library.straggler("gsm8k", "barrier", 4))
    assert run_metrics(trace)["rounds"] == 4
    assert run_metrics(trace)["mode"] == "barrier:4"


def test_sweep_sample_satisfies_all_properties():
    for i in range(40):
        cfg = library.lemma_sweep(i)
        trace = run(cfg, cfg.seed)
        reports = checker.check_all(trace, checker.oracle_of(trace))
        assert all(r.passed for r in reports), (i, checker.format_reports(reports))
