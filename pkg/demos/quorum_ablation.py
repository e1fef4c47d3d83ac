"""Sweep the agreement threshold on a five-agent ensemble.

Two fast agents are usually wrong, three slow ones usually right. A low
threshold lets the fast pair decide alone; from a majority upward the strong
agents always have a say, at the price of waiting for them.

    python3 demos/quorum_ablation.py [seeds]
"""

import statistics
import sys

from aegean import library
from aegean.checker import check_validity
from aegean.serve import run_serve


def sweep(seeds: int):
    print(f"{'alpha':>5} {'valid':>7} {'latency s':>10} {'forced':>7}")
    for alpha in range(1, 6):
        scenario = library.quorum_ablation(alpha)
        traces = [run_serve(scenario, s) for s in range(seeds)]
        valid = statistics.mean(check_validity(t, scenario.oracle, strict=True).passed for t in traces)
        latency = statistics.mean(t.outputs[0]["t"] for t in traces)
        forced = sum(t.outputs[0]["forced"] for t in traces)
        print(f"{alpha:>5} {valid:7.3f} {latency:10.1f} {forced:7d}")


if __name__ == "__main__":
    sweep(int(sys.argv[1]) if len(sys.argv) > 1 else 200)
