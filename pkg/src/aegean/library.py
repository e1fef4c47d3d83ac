"""Ready-made scenarios.

Answers "13" (correct) and "17" (wrong) follow the running arithmetic example;
qualities are 1.0 and 0.0.
"""

from __future__ import annotations

import random

from .network import FaultPlan, LatencyModel, NetworkModel
from .protocol import ProtocolConfig, max_failures
from .reasoning import AgentProfile, QualityOracle
from .scenario import ScenarioConfig, ServeSettings

TASK = "Natalia sold clips to 48 of her friends ... how many clips are left?"
ARITH_ORACLE = {TASK: {"13": 1.0, "17": 0.0}}


def _scripted(*answers: str) -> AgentProfile:
    return AgentProfile(kind="scripted", answers=answers)


def _fig_protocol(beta: int = 2, **kw) -> ProtocolConfig:
    # the grace window lets equal-latency agents all land in the same set,
    # so each round shows three answers
    return ProtocolConfig(n_agents=3, alpha=2, beta=beta, t_max=5, quorum_grace=0.5, **kw)


def fig6_case1() -> ScenarioConfig:
    """Fast path: 13 wins round 1 and holds through round 2."""
    return ScenarioConfig(
        name="fig6_case1",
        task=TASK,
        protocol=_fig_protocol(),
        agents=(
            _scripted("13", "13", "13"),
            _scripted("13", "13", "13"),
            _scripted("17", "17", "13"),
        ),
        oracle=QualityOracle(ARITH_ORACLE),
        latency=LatencyModel("fixed", (1.0,)),
    )


def fig6_case2() -> ScenarioConfig:
    """Slow path: 17 leads round 1, 13 overturns it in round 2 and holds in round 3."""
    return ScenarioConfig(
        name="fig6_case2",
        task=TASK,
        protocol=_fig_protocol(),
        agents=(
            _scripted("17", "17", "13", "13"),
            _scripted("17", "17", "17", "13"),
            _scripted("13", "13", "13", "17"),
        ),
        oracle=QualityOracle(ARITH_ORACLE),
        latency=LatencyModel("fixed", (1.0,)),
    )


def majority_flip(beta: int) -> ScenarioConfig:
    """Round 1 majority 17 (wrong), round 2 majority 13, round 3 unanimous 13.

    Two of three agents start with 13, so the majority-optimal bound is 1.0.
    """
    return ScenarioConfig(
        name=f"majority_flip_beta{beta}",
        task=TASK,
        protocol=_fig_protocol(beta=beta),
        agents=(
            _scripted("13", "17", "13", "13"),
            _scripted("17", "17", "17", "13"),
            _scripted("13", "13", "13", "13"),
        ),
        oracle=QualityOracle(ARITH_ORACLE),
        latency=LatencyModel("fixed", (1.0,)),
    )


def straggler(benchmark: str = "gsm8k", mode: str = "aegean", max_rounds: int | None = None, sigma: float = 0.0) -> ScenarioConfig:
    """Three agents answering correctly with the benchmark's fast/median/slow latencies."""
    # AIME calls take minutes: a slower heartbeat keeps the event count down
    # without changing any round timing
    tick = 50.0 if benchmark == "aime" else 1.0
    return ScenarioConfig(
        name=f"{benchmark}_straggler",
        task=TASK,
        protocol=ProtocolConfig(
            n_agents=3, alpha=2, beta=2, t_max=5, round_timeout=1000.0,
            heartbeat_interval=tick, election_timeout=(3.0 * tick, 6.0 * tick),
        ),
        agents=tuple(AgentProfile(kind="max_adopter", answers=("13",)) for _ in range(3)),
        oracle=QualityOracle(ARITH_ORACLE),
        latency=LatencyModel.benchmark_profile(benchmark, sigma),
        mode=mode,
        max_rounds=max_rounds if mode == "barrier" else None,
    )


def leader_crash(crash_at: float = 2.5) -> ScenarioConfig:
    """The predetermined leader crashes mid-round; the survivors elect a new one."""
    return ScenarioConfig(
        name="leader_crash",
        task=TASK,
        protocol=ProtocolConfig(n_agents=3, alpha=2, beta=2, t_max=5, round_timeout=20.0),
        agents=(
            AgentProfile(kind="max_adopter", answers=("17",)),
            AgentProfile(kind="max_adopter", answers=("17",)),
            AgentProfile(kind="max_adopter", answers=("13",)),
        ),
        oracle=QualityOracle(ARITH_ORACLE),
        network=NetworkModel(base_delay=(0.01, 0.05), post_gst_bound=0.5),
        faults=FaultPlan(crashes=((0, crash_at),)),
        latency=LatencyModel("fixed", (1.4, 1.2, 1.0)),
    )


def crash_after_output(profile: str = "max_adopter") -> ScenarioConfig:
    """Leader outputs in term 1, then crashes; the next leader outputs again.

    With ``profile="adversarial_degrader"`` the agents stop honoring the
    refinement assumption after their second refinement, so the second output
    is worse than the first.
    """
    if profile == "adversarial_degrader":
        agents = tuple(
            AgentProfile(kind="adversarial_degrader", answers=("13", "13", "13")) for _ in range(3)
        )
    else:
        agents = (
            AgentProfile(kind="max_adopter", answers=("17",)),
            AgentProfile(kind="max_adopter", answers=("13",)),
            AgentProfile(kind="max_adopter", answers=("17",)),
        )
    return ScenarioConfig(
        name=f"crash_after_output_{profile}",
        task=TASK,
        protocol=ProtocolConfig(n_agents=3, alpha=2, beta=2, t_max=5, round_timeout=20.0),
        agents=agents,
        oracle=QualityOracle(ARITH_ORACLE),
        network=NetworkModel(base_delay=(0.01, 0.05), post_gst_bound=0.5),
        faults=FaultPlan(crashes=((0, 3.5),)),
        latency=LatencyModel("fixed", (1.0,)),
    )


ABLATION_TASK = "IMO-style problem"
ABLATION_ORACLE = {ABLATION_TASK: {"42": 1.0, "7": 0.0, "12": 0.0, "19": 0.0, "23": 0.0, "31": 0.0, "36": 0.0}}


def quorum_ablation(alpha: int) -> ScenarioConfig:
    """Five agents: two fast weak models and three slow strong ones.

    The serving layer closes a round as soon as ``alpha`` completions agree, so
    small ``alpha`` commits to whatever the fast weak agents say.
    """
    weak = AgentProfile(kind="noisy_flipper", p_flip=0.1, q_base=0.0)
    strong = AgentProfile(kind="noisy_flipper", p_flip=0.01)
    return ScenarioConfig(
        name=f"quorum_ablation_alpha{alpha}",
        task=ABLATION_TASK,
        # alpha above the majority is allowed by the serving layer only
        protocol=ProtocolConfig(n_agents=5, alpha=min(alpha, 3), beta=2, t_max=5, round_timeout=1000.0),
        serve=ServeSettings(alpha=alpha),
        agents=(weak, weak, strong, strong, strong),
        oracle=QualityOracle(ABLATION_ORACLE),
        latency=LatencyModel("lognormal", (2.0, 3.0, 10.0, 12.0, 15.0), sigma=0.3),
    )


SWEEP_TASK = "sweep task"
SWEEP_ORACLE = {SWEEP_TASK: {"a": 1.0, "b": 0.7, "c": 0.4, "d": 0.1, "e": 0.0}}


def lemma_sweep(index: int) -> ScenarioConfig:
    """Randomized conforming scenario for the safety/liveness sweep.

    Varies N over 3, 5, 7, crashes or hung reasoning calls up to the tolerated
    number (some after the first output), pre-GST loss and delay, partitions, and agent profiles.
    """
    rng = random.Random(f"lemma-sweep:{index}")
    n = rng.choice((3, 5, 7))
    f = max_failures(n)
    crashes, stalls = [], []
    victims = rng.sample(range(n), rng.randint(0, f))
    for a in victims:
        if rng.random() < 0.25:
            stalls.append((a, rng.randint(0, 2), None))
        else:
            crashes.append((a, round(rng.uniform(0.0, 40.0), 3)))
    gst = round(rng.choice((0.0, rng.uniform(0.0, 30.0))), 3)
    partitions = []
    if rng.random() < 0.3:
        side = frozenset(rng.sample(range(n), rng.randint(1, n // 2)))
        rest = frozenset(range(n)) - side
        start = round(rng.uniform(0.0, 20.0), 3)
        partitions.append((side, rest, start, round(start + rng.uniform(1.0, 15.0), 3)))
    alphabet = list(SWEEP_ORACLE[SWEEP_TASK])
    agents = []
    for _ in range(n):
        if rng.random() < 0.5:
            agents.append(AgentProfile(kind="max_adopter", answers=(rng.choice(alphabet),)))
        else:
            agents.append(AgentProfile(kind="noisy_flipper", p_flip=round(rng.uniform(0.0, 0.9), 3), q_base=rng.choice((None, 0.7, 0.4, 0.0))))
    return ScenarioConfig(
        name=f"lemma_sweep_{index}",
        task=SWEEP_TASK,
        protocol=ProtocolConfig(
            n_agents=n,
            alpha=rng.randint(1, n // 2 + 1),
            beta=rng.choice((1, 2, 3)),
            t_max=rng.choice((3, 5)),
            election_timeout=(3.0, 6.0),
            heartbeat_interval=1.0,
            round_timeout=8.0,
            leader_mode=rng.choice(("predetermined", "election")),
        ),
        agents=tuple(agents),
        oracle=QualityOracle(SWEEP_ORACLE),
        network=NetworkModel(
            base_delay=(0.01, 0.2),
            gst=gst,
            pre_gst_drop_rate=round(rng.uniform(0.0, 0.3), 3) if gst > 0 else 0.0,
            pre_gst_extra_delay=round(rng.uniform(0.0, 2.0), 3) if gst > 0 else 0.0,
            partitions=tuple(partitions),
            post_gst_bound=0.5,
        ),
        faults=FaultPlan(crashes=tuple(crashes), stalls=tuple(stalls)),
        latency=LatencyModel("lognormal", tuple(round(rng.uniform(0.5, 3.0), 3) for _ in range(n)), sigma=0.3),
        max_time=5_000.0,
        seed=index,
    )


BUILTIN = {
    "fig6_case1": fig6_case1,
    "fig6_case2": fig6_case2,
    "majority_flip_beta1": lambda: majority_flip(1),
    "majority_flip_beta2": lambda: majority_flip(2),
    "gsm8k_straggler": lambda: straggler("gsm8k"),
    "gsm8k_straggler_barrier": lambda: straggler("gsm8k", "barrier", 4),
    "aime_straggler": lambda: straggler("aime"),
    "leader_crash": leader_crash,
    "crash_after_output": crash_after_output,
    "degrader_crash": lambda: crash_after_output("adversarial_degrader"),
}
