"""Show how closing a round on agreement sidesteps the slowest model.

Prints the serving-layer timeline for one query with fixed GSM8K-like
latencies (1.3 s, 4.4 s, 15.2 s per call), then compares round latency and
work against a four-round barrier over noisy latencies.

    python3 demos/straggler_cancellation.py
"""

import statistics

from aegean import library
from aegean.serve import run_serve

EVENTS = ("dispatch", "complete", "cancel", "round_end", "output", "release")


def timeline():
    trace = run_serve(library.straggler("gsm8k"))
    print("== one query, aegean mode")
    for r in trace.records:
        if r["kind"] not in EVENTS:
            continue
        who = f"agent {r['agent']}" if "agent" in r else ""
        extra = r.get("reason", "") or (r["solution"]["answer"] if "solution" in r else "")
        print(f"  t={r['t']:7.2f}  {r['kind']:<9} round {r.get('round', '-')!s:<2} {who:<8} {extra}")
    print()


def compare(bench, seeds=50):
    rows = []
    for mode in ("aegean", "barrier"):
        scenario = library.straggler(bench, mode, 4 if mode == "barrier" else None, sigma=0.3)
        traces = [run_serve(scenario, s) for s in range(seeds)]
        rounds = [d["t_round"] for t in traces for d in t.of_kind("decision")]
        work = [t.records[-1]["work_units"] for t in traces]
        done = [t.outputs[0]["t"] for t in traces]
        rows.append((mode, statistics.mean(rounds), statistics.mean(done), statistics.mean(work)))
    print(f"== {bench}, {seeds} seeds, lognormal sigma 0.3")
    print(f"  {'mode':<8} {'round s':>9} {'query s':>9} {'work s':>9}")
    for mode, rnd, done, work in rows:
        print(f"  {mode:<8} {rnd:9.1f} {done:9.1f} {work:9.1f}")
    print(f"  per-round speedup {rows[1][1] / rows[0][1]:.2f}x, work saved {rows[1][3] / rows[0][3]:.2f}x\n")


if __name__ == "__main__":
    timeline()
    compare("gsm8k")
    compare("aime")
