"""Run traces: one record per objective evaluation, persisted as JSON lines.

The trace file is a pure function of (config, seed); wall-clock timings
live in a separate sidecar so reruns produce byte-identical traces.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

SCHEMA_VERSION = 1


def _plain(obj):
    """Convert numpy containers/scalars into JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class EvalRecord:
    index: int
    point: List[float]
    value: float
    best: float
    iteration: int
    restart: int = 0
    encoder: Optional[str] = None
    region: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        d = {"type": "eval"}
        d.update(_plain(asdict(self)))
        return d


@dataclass
class RunTrace:
    config: Dict[str, Any]
    records: List[EvalRecord] = field(default_factory=list)
    status: str = "ok"
    error: Optional[str] = None
    iteration_seconds: List[float] = field(default_factory=list, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    @property
    def points(self) -> np.ndarray:
        return np.array([r.point for r in self.records])

    @property
    def best_value(self) -> float:
        return float(min(r.value for r in self.records)) if self.records else float("inf")

    @property
    def best_point(self) -> Optional[np.ndarray]:
        if not self.records:
            return None
        i = int(np.argmin(self.values))
        return np.array(self.records[i].point)

    def append(self, point, value: float, iteration: int, restart: int, encoder, region) -> EvalRecord:
        best = min(value, self.records[-1].best) if self.records else value
        rec = EvalRecord(len(self.records), [float(v) for v in np.ravel(point)], float(value), float(best),
                         int(iteration), int(restart), encoder, _plain(region) if region is not None else None)
        self.records.append(rec)
        return rec

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", "schema_version": SCHEMA_VERSION, "config": _plain(self.config)},
                            sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"type": "footer", "status": self.status, "error": self.error,
                                 "n_records": len(self.records)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def timing_jsonl(self) -> str:
        return "".join(json.dumps({"iteration": i, "seconds": s}) + "\n" for i, s in enumerate(self.iteration_seconds))

    @classmethod
    def from_jsonl(cls, text: str) -> "RunTrace":
        trace = None
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type", None)
            if kind == "header":
                if obj.get("schema_version") != SCHEMA_VERSION:
                    raise ValueError(f"unsupported schema version {obj.get('schema_version')}")
                trace = cls(config=obj["config"])
            elif trace is None:
                raise ValueError(f"line {n}: record before header")
            elif kind == "eval":
                trace.records.append(EvalRecord(**obj))
            elif kind == "footer":
                trace.status = obj["status"]
                trace.error = obj["error"]
            else:
                raise ValueError(f"line {n}: unknown record type {kind!r}")
        if trace is None:
            raise ValueError("empty trace")
        return trace
