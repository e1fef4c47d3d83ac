"""Environment models: network timing, faults and reasoning latency."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

# Per-round latency of the fastest, median and slowest model, in seconds.
BENCHMARK_LATENCIES: dict[str, tuple[float, float, float]] = {
    "gsm8k": (1.3, 4.4, 15.2),
    "mmlu": (2.5, 5.8, 45.0),
    "aime": (5.8, 29.4, 370.6),
}


@dataclass(frozen=True)
class NetworkModel:
    """Partially synchronous network.

    Before ``gst`` messages may be dropped independently and pick up a
    heavy-tailed extra delay. From ``gst`` on, every message between live,
    unpartitioned agents arrives within ``post_gst_bound``. A partition
    ``(side_a, side_b, start, end)`` drops messages sent across it during
    ``[start, end)``.
    """

    base_delay: tuple[float, float] = (0.0, 0.0)
    gst: float = 0.0
    pre_gst_drop_rate: float = 0.0
    pre_gst_extra_delay: float = 0.0
    partitions: tuple[tuple[frozenset, frozenset, float, float], ...] = ()
    post_gst_bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "base_delay", tuple(self.base_delay))
        object.__setattr__(
            self,
            "partitions",
            tuple((frozenset(a), frozenset(b), float(s), float(e)) for a, b, s, e in self.partitions),
        )

    def validate(self) -> list[str]:
        errors = []
        lo, hi = self.base_delay
        if not 0 <= lo <= hi:
            errors.append(f"base_delay must satisfy 0 <= low <= high, got {self.base_delay}")
        if hi > self.post_gst_bound:
            errors.append("base_delay upper bound exceeds post_gst_bound")
        if not 0 <= self.pre_gst_drop_rate < 1:
            errors.append("pre_gst_drop_rate must be in [0, 1)")
        if self.gst < 0 or self.pre_gst_extra_delay < 0:
            errors.append("gst and pre_gst_extra_delay must be >= 0")
        for a, b, s, e in self.partitions:
            if a & b:
                errors.append("partition sides overlap")
            if e < s:
                errors.append("partition ends before it starts")
        return errors

    def partitioned(self, frm: int, to: int, now: float) -> bool:
        for a, b, s, e in self.partitions:
            if s <= now < e and ((frm in a and to in b) or (frm in b and to in a)):
                return True
        return False

    def transit(self, now: float, rng: random.Random) -> float | None:
        """Arrival time of a message sent at ``now``, or None if it is lost."""
        lo, hi = self.base_delay
        base = rng.uniform(lo, hi) if hi > lo else lo
        if now >= self.gst:
            return now + min(base, self.post_gst_bound)
        if rng.random() < self.pre_gst_drop_rate:
            return None
        extra = 0.0
        if self.pre_gst_extra_delay > 0:
            extra = self.pre_gst_extra_delay * (rng.paretovariate(1.5) - 1.0)
        return min(now + base + extra, self.gst + self.post_gst_bound)

    def to_dict(self) -> dict:
        return {
            "base_delay": list(self.base_delay),
            "gst": self.gst,
            "pre_gst_drop_rate": self.pre_gst_drop_rate,
            "pre_gst_extra_delay": self.pre_gst_extra_delay,
            "partitions": [[sorted(a), sorted(b), s, e] for a, b, s, e in self.partitions],
            "post_gst_bound": self.post_gst_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkModel:
        return cls(
            base_delay=tuple(d.get("base_delay", (0.0, 0.0))),
            gst=d.get("gst", 0.0),
            pre_gst_drop_rate=d.get("pre_gst_drop_rate", 0.0),
            pre_gst_extra_delay=d.get("pre_gst_extra_delay", 0.0),
            partitions=tuple(tuple(p) for p in d.get("partitions", ())),
            post_gst_bound=d.get("post_gst_bound", 1.0),
        )


@dataclass(frozen=True)
class FaultPlan:
    """Fail-stop crashes ``(agent, time)`` and reasoning stalls ``(agent, round, extra)``.

    A stall with ``extra`` of None never completes: the agent keeps receiving
    messages but that reasoning call hangs.
    """

    crashes: tuple[tuple[int, float], ...] = ()
    stalls: tuple[tuple[int, int, float | None], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "crashes", tuple((int(a), float(t)) for a, t in self.crashes))
        object.__setattr__(
            self,
            "stalls",
            tuple((int(a), int(r), None if x is None else float(x)) for a, r, x in self.stalls),
        )

    @property
    def failed_agents(self) -> set[int]:
        hung = {a for a, _, x in self.stalls if x is None}
        return {a for a, _ in self.crashes} | hung

    def stall_for(self, agent: int, rnd: int) -> float | None:
        """Extra latency for this call: 0.0 when unaffected, None when it hangs."""
        extra = 0.0
        for a, r, x in self.stalls:
            if a == agent and r == rnd:
                if x is None:
                    return None
                extra += x
        return extra

    def to_dict(self) -> dict:
        return {
            "crashes": [list(c) for c in self.crashes],
            "stalls": [list(s) for s in self.stalls],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FaultPlan:
        return cls(
            crashes=tuple(tuple(c) for c in d.get("crashes", ())),
            stalls=tuple(tuple(s) for s in d.get("stalls", ())),
        )


@dataclass(frozen=True)
class LatencyModel:
    """Reasoning latency per agent.

    ``values`` are per-agent constants (``fixed``) or medians (``lognormal``
    with shape ``sigma``); agent ``i`` uses ``values[i % len(values)]``.
    """

    kind: str = "fixed"
    values: tuple[float, ...] = (1.0,)
    sigma: float = 0.0
    benchmark: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in ("fixed", "lognormal"):
            errors.append(f"latency kind must be 'fixed' or 'lognormal', got {self.kind!r}")
        if not self.values or any(v < 0 for v in self.values):
            errors.append("latency values must be a non-empty list of non-negative numbers")
        if self.sigma < 0:
            errors.append("latency sigma must be >= 0")
        return errors

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "values": list(self.values), "sigma": self.sigma}
        if self.benchmark:
            d["benchmark"] = self.benchmark
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LatencyModel:
        bench = d.get("benchmark")
        if bench is not None and "values" not in d:
            try:
                values = BENCHMARK_LATENCIES[bench.lower()]
            except KeyError:
                raise ValueError(f"unknown benchmark latency profile {bench!r}") from None
        else:
            values = tuple(d.get("values", (1.0,)))
        sigma = d.get("sigma", 0.0)
        kind = d.get("kind", "lognormal" if sigma > 0 else "fixed")
        return cls(kind=kind, values=values, sigma=sigma, benchmark=bench)

    @classmethod
    def benchmark_profile(cls, name: str, sigma: float = 0.0) -> LatencyModel:
        return cls(
            kind="lognormal" if sigma > 0 else "fixed",
            values=BENCHMARK_LATENCIES[name.lower()],
            sigma=sigma,
            benchmark=name.lower(),
        )


def sample_latency(model: LatencyModel, agent: int, rng: random.Random, value: float | None = None) -> float:
    """One reasoning duration; ``value`` overrides the model's constant or median for this agent."""
    if value is None:
        value = model.values[agent % len(model.values)]
    if model.kind == "fixed" or model.sigma == 0:
        return value
    if value == 0:
        return 0.0
    return rng.lognormvariate(math.log(value), model.sigma)


def round_latency(mode: str, samples: Sequence[float], k: int | None = None) -> float:
    """Round completion time: the slowest sample (barrier) or the k-th fastest (quorum)."""
    if mode == "barrier":
        return max(samples)
    if mode != "quorum":
        raise ValueError(f"mode must be 'barrier' or 'quorum', got {mode!r}")
    if k is None or not 1 <= k <= len(samples):
        raise ValueError(f"quorum size k={k} not in [1, {len(samples)}]")
    return sorted(samples)[k - 1]
