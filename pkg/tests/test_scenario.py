import json
from dataclasses import replace

import pytest

from aegean import library
from aegean.protocol import ConfigError
from aegean.reasoning import AgentProfile
from aegean.scenario import ScenarioConfig, ServeSettings
from aegean.serve import run_serve
from aegean.sim import run

SCENARIOS = [build() for build in library.BUILTIN.values()] + [
    library.quorum_ablation(a) for a in (1, 5)
] + [library.lemma_sweep(i) for i in range(5)]


@pytest.mark.parametrize("cfg", SCENARIOS, ids=lambda c: c.name)
def test_round_trip_through_canonical_json_preserves_behaviour(cfg):
    back = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict(), sort_keys=True)))
    assert back == cfg and back.hash == cfg.hash
    assert run_serve(back, 1).to_jsonl() == run_serve(cfg, 1).to_jsonl()
    if cfg.protocol.alpha == cfg.serve_alpha:
        assert run(back, 1).to_jsonl() == run(cfg, 1).to_jsonl()


def test_builtin_scenarios_validate():
    for cfg in SCENARIOS:
        assert cfg.validate() == [], cfg.name


def test_validation_collects_errors():
    cfg = library.fig6_case1()
    bad = replace(
        cfg,
        agents=cfg.agents[:2] + (AgentProfile("scripted", answers=("99",), latency=-1.0),),
        mode="barrier",
        max_rounds=3,
        serve=ServeSettings(total_slots=0, heartbeat_misses=0, alpha=7),
        max_time=0.0,
    )
    errors = bad.validate()
    for needle in ("barrier mode", "latency must be", "missing from oracle", "total_slots", "heartbeat_misses", "serve.alpha", "max_time"):
        assert any(needle in e for e in errors), needle
    with pytest.raises(ConfigError):
        bad.check()


def test_wrong_profile_count_rejected():
    cfg = library.fig6_case1()
    assert replace(cfg, agents=cfg.agents[:2]).validate()


def test_schema_version_and_malformed_documents():
    d = library.fig6_case1().to_dict()
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**d, "schema_version": 2})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"task": "t"})


def test_flat_oracle_table_and_benchmark_latency():
    d = library.straggler("aime").to_dict()
    d["oracle"] = {"13": 1.0, "17": 0.0}
    d["latency"] = {"benchmark": "aime"}
    cfg = ScenarioConfig.from_dict(d)
    assert cfg.oracle(cfg.task, "13") == 1.0
    assert cfg.latency.values == (5.8, 29.4, 370.6)


def test_latency_values_apply_profile_overrides():
    cfg = library.straggler("gsm8k")
    fast = replace(cfg.agents[2], latency=0.5)
    assert replace(cfg, agents=cfg.agents[:2] + (fast,)).latency_values() == (1.3, 4.4, 0.5)


def test_with_mode():
    cfg = library.straggler("gsm8k").with_mode("barrier", 5)
    assert cfg.barrier and cfg.protocol_config().barrier_rounds == 5
    assert cfg.with_mode("aegean").max_rounds is None
