"""Crash a leader, crash serving members, and let the checkers judge.

    python3 demos/faults_and_checkers.py
"""

from dataclasses import replace

from aegean import library
from aegean.checker import check_all, format_reports
from aegean.network import FaultPlan
from aegean.serve import run_serve
from aegean.sim import run


def leader_crash():
    trace = run(library.leader_crash())
    print("== protocol: leader 0 crashes at t=2.5")
    seen = set()
    for r in trace.of_kind("crash", "state", "output"):
        if r["kind"] == "crash":
            print(f"  t={r['t']:6.2f}  agent {r['agent']} crashes")
        elif r["kind"] == "state" and r["role"] != "worker":
            if (r["agent"], r["role"], r["term"]) not in seen:
                seen.add((r["agent"], r["role"], r["term"]))
                print(f"  t={r['t']:6.2f}  agent {r['agent']} is {r['role']} of term {r['term']}")
        elif r["kind"] == "output":
            print(f"  t={r['t']:6.2f}  agent {r['agent']} outputs {r['solution']['answer']!r} in term {r['term']}")
    print(format_reports(check_all(trace)), "\n")


def serve_failures():
    print("== serving layer: two of three members crash")
    for at in (5.0, 9.0):
        scenario = replace(library.straggler("gsm8k"), faults=FaultPlan(crashes=((0, at), (1, at))))
        trace = run_serve(scenario)
        steps = [f"{r['directive']}@{r['t']:.1f}" for r in trace.of_kind("failure")]
        out = trace.outputs[0]
        print(f"  crash at t={at}: {', '.join(steps)}; output {out['solution']['answer']!r} at t={out['t']:.1f}")
    print()


def negative_control():
    trace = run(library.crash_after_output("adversarial_degrader"))
    print("== agents that stop honoring the refinement assumption")
    print(format_reports(check_all(trace)))


if __name__ == "__main__":
    leader_crash()
    serve_failures()
    negative_control()
