"""Trace container and JSONL serialization.

The first line of a trace file is a header record carrying the schema version,
the engine that produced it, the seed, and the full scenario plus its hash.
Every following line is one record with at least ``t`` (sim time), ``seq``
(total order) and ``kind``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


@dataclass
class Trace:
    header: dict
    records: list[dict] = field(default_factory=list)

    def add(self, t: float, kind: str, **payload) -> dict:
        rec = {"t": t, "seq": len(self.records), "kind": kind, **payload}
        self.records.append(rec)
        return rec

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]

    @property
    def outputs(self) -> list[dict]:
        return self.of_kind("output")

    @property
    def config(self) -> dict:
        return self.header["config"]

    def lines(self) -> list[str]:
        return [canonical_json(self.header)] + [canonical_json(r) for r in self.records]

    def to_jsonl(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> Trace:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ValueError("trace does not start with a header record")
        return cls(header=header, records=[json.loads(ln) for ln in lines[1:]])

    @classmethod
    def read(cls, path) -> Trace:
        return cls.from_jsonl(Path(path).read_text())


def make_header(engine: str, config: dict, seed: int) -> dict:
    return {
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "engine": engine,
        "scenario": config.get("name", ""),
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
    }
