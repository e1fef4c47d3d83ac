import csv
import json
import subprocess
import sys
from dataclasses import replace

import pytest

from aegean import library
from aegean.cli import main, parse_mode
from aegean.network import FaultPlan
from aegean.protocol import ConfigError
from aegean.serve import run_serve
from aegean.sim import run
from aegean.trace import Trace, make_header


@pytest.fixture
def scen(tmp_path):
    def save(cfg, name="s.json"):
        path = tmp_path / name
        cfg.save(path)
        return str(path)

    return save


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_trace_and_metrics(tmp_path, capsys):
    out, metrics = tmp_path / "t.jsonl", tmp_path / "m.csv"
    assert main(["run", "fig6_case1", "--out", str(out), "--metrics", str(metrics)]) == 0
    assert "output '13'" in capsys.readouterr().out
    (row,) = read_csv(metrics)
    assert list(row) == ["scenario", "seed", "mode", "query_id", "rounds", "t_complete", "p_round_max", "work_units", "forced"]
    assert row["rounds"] == "2"
    trace = Trace.read(out)
    fin = [d for d in trace.of_kind("decision") if d["outcome"]["kind"] == "finalize"]
    assert fin[0]["round"] == 2 and fin[0]["outcome"]["answer"] == "13"


@pytest.mark.parametrize("mode,round_time", [("barrier:4", 15.2), ("aegean", 4.4)])
def test_straggler_round_time_by_mode(tmp_path, scen, mode, round_time):
    metrics = tmp_path / "m.csv"
    path = scen(library.straggler("gsm8k"), "gsm8k_straggler.json")
    assert main(["run", path, "--mode", mode, "--metrics", str(metrics)]) == 0
    assert float(read_csv(metrics)[0]["p_round_max"]) == pytest.approx(round_time)


def test_cli_trace_equals_library_trace(tmp_path, scen):
    # thin shell: the CLI adds nothing to what the library produces
    cfg = library.lemma_sweep(3)
    path = scen(cfg)
    out = tmp_path / "cli.jsonl"
    assert main(["run", path, "--seed", "9", "--out", str(out)]) == 0
    assert out.read_text() == run(cfg, 9).to_jsonl()
    out_s = tmp_path / "cli_serve.jsonl"
    assert main(["run", path, "--seed", "9", "--engine", "serve", "--out", str(out_s)]) == 0
    assert out_s.read_text() == run_serve(cfg, 9).to_jsonl()


def test_seed_precedence(tmp_path, monkeypatch):
    out = tmp_path / "t.jsonl"
    monkeypatch.setenv("AEGEAN_SEED", "7")
    main(["run", "leader_crash", "--out", str(out)])
    assert Trace.read(out).header["seed"] == 7
    main(["run", "leader_crash", "--seed", "8", "--out", str(out)])
    assert Trace.read(out).header["seed"] == 8
    monkeypatch.setenv("AEGEAN_SEED", "x")
    assert main(["run", "leader_crash"]) == 1


def test_malformed_config_exit_one_with_all_violations(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    cfg = library.fig6_case1().to_dict()
    cfg["protocol"].update(alpha=4, beta=0)
    bad.write_text(json.dumps(cfg))
    assert main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "alpha exceeds quorum" in err and "beta" in err
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 1
    assert main(["run", "no_such_scenario"]) == 1


def test_liveness_violation_exit_two(scen):
    assert main(["run", scen(replace(library.fig6_case1(), max_time=0.5))]) == 2


def test_check_passing_trace(tmp_path):
    out = tmp_path / "t.jsonl"
    main(["run", "fig6_case2", "--out", str(out)])
    assert main(["check", str(out)]) == 0


def test_check_degrader_exit_three_with_monotonicity_witness(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    main(["run", "degrader_crash", "--out", str(out)])
    capsys.readouterr()
    assert main(["check", str(out)]) == 3
    assert "witness for monotonicity" in capsys.readouterr().out


def test_check_double_leader_fixture(tmp_path, capsys):
    trace = Trace(make_header("protocol", library.fig6_case1().to_dict(), 0))
    trace.add(1.0, "state", agent=0, term=2, role="leader")
    trace.add(2.0, "state", agent=1, term=2, role="leader")
    path = tmp_path / "forged.jsonl"
    trace.write(path)
    assert main(["check", str(path), "--json"]) == 3
    reports = {r["property"]: r for r in json.loads(capsys.readouterr().out)["reports"]}
    assert reports["election_safety"]["verdict"] == "fail"
    assert [w["agent"] for w in reports["election_safety"]["witness"]] == [0, 1]


def test_check_incomplete_oracle_exit_one(tmp_path):
    trace = Trace(make_header("protocol", library.fig6_case1().to_dict(), 0))
    trace.add(1.0, "output", agent=0, term=1, round=1, solution={"answer": "99", "trace": "", "author": 0}, forced=False)
    path = tmp_path / "t.jsonl"
    trace.write(path)
    assert main(["check", str(path)]) == 1


def test_check_refuses_termination_beyond_tolerated_failures(tmp_path, scen, capsys):
    cfg = replace(library.fig6_case1(), faults=FaultPlan(crashes=((1, 0.0), (2, 0.0))), max_time=50.0)
    out = tmp_path / "t.jsonl"
    assert main(["run", scen(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["check", str(out)]) == 0
    assert "termination: not checked" in capsys.readouterr().out


def test_replay_codes(tmp_path, scen):
    out = tmp_path / "t.jsonl"
    main(["run", "leader_crash", "--out", str(out)])
    assert main(["replay", str(out)]) == 0
    other = scen(library.fig6_case1())
    assert main(["replay", str(out), "--config", other]) == 1
    data = bytearray(out.read_bytes())
    data[len(data) // 2] ^= 1
    bad = tmp_path / "bad.jsonl"
    bad.write_bytes(bytes(data))
    assert main(["replay", str(bad)]) == 4


def test_compare_table(capsys, tmp_path):
    metrics = tmp_path / "m.csv"
    assert main(["compare", "gsm8k_straggler", "--modes", "aegean,barrier:4", "--seeds", "2", "--metrics", str(metrics)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:2] == ["mode", "runs"]
    rows = {ln.split()[0]: ln.split() for ln in lines[1:]}
    assert float(rows["aegean"][4]) == pytest.approx(4.4)
    assert float(rows["barrier:4"][4]) == pytest.approx(15.2)
    assert len(read_csv(metrics)) == 4
    assert main(["compare", "gsm8k_straggler", "--modes", "barrier:x"]) == 1


def test_scenarios_export(tmp_path, capsys):
    assert main(["scenarios", "--export", str(tmp_path)]) == 0
    names = capsys.readouterr().out.split()
    assert set(names) == set(library.BUILTIN)
    assert main(["run", str(tmp_path / "fig6_case1.json")]) == 0


def test_serve_round_metrics(tmp_path):
    rm = tmp_path / "r.csv"
    assert main(["run", "gsm8k_straggler", "--engine", "serve", "--round-metrics", str(rm)]) == 0
    rows = read_csv(rm)
    assert list(rows[0]) == ["ensemble_id", "round", "mode", "t_round_end", "cancelled_count", "work_units"]
    assert float(rows[0]["t_round_end"]) == 4.4


def test_parse_mode():
    assert parse_mode("barrier:5") == ("barrier", 5)
    with pytest.raises(ConfigError):
        parse_mode("quorum")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "aegean", "scenarios"], capture_output=True, text=True)
    assert res.returncode == 0 and "fig6_case1" in res.stdout
