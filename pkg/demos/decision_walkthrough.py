"""Walk through the fast-path and slow-path examples round by round.

    python3 demos/decision_walkthrough.py
"""

from aegean import library
from aegean.checker import check_all
from aegean.sim import run


def show(name, scenario):
    trace = run(scenario)
    print(f"== {name}: N={scenario.n}, alpha={scenario.protocol.alpha}, beta={scenario.protocol.beta}")
    for d in trace.of_kind("decision"):
        classes = ", ".join(f"{c['answer']}x{c['support']}" for c in d["classes"])
        outcome = d["outcome"]
        print(f"  round {d['round']}: {classes:<12} -> {outcome['kind']:<14} counter={d['counter']}")
    out = trace.outputs[0]
    print(f"  output {out['solution']['answer']!r} (representative of round {out['round']}) at t={out['t']}")
    failed = [r.property for r in check_all(trace) if not r.passed]
    print(f"  properties: {'all hold' if not failed else 'violated: ' + ', '.join(failed)}\n")


if __name__ == "__main__":
    show("fast path", library.fig6_case1())
    show("slow path", library.fig6_case2())
    print("The same flip under beta=1 commits the transient majority:")
    show("majority flip, beta=1", library.majority_flip(1))
    show("majority flip, beta=2", library.majority_flip(2))
