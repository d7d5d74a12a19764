"""Latency aggregation and the report arithmetic verifier.

Every run writes two artifacts: the aggregated report (JSON) and a raw
line-delimited log with one record per HTTP request. The aggregates are
recomputable from the raw log; ``verify_report`` does exactly that, so a
report can always be audited after the fact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional


@dataclass
class RawRecord:
    ts: float
    client: int
    step: str
    method: str
    path: str
    status: int
    latency_s: float
    trace_id: str
    ok: bool
    poll: bool = False  # intermediate poll of an until-step; excluded from stats

    def to_json(self) -> str:
        return json.dumps(self.__dict__, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "RawRecord":
        return cls(**json.loads(line))


@dataclass
class StepStats:
    count: int
    errors: int
    mean: float
    stddev: float
    p50: float
    p95: float
    p99: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile over pre-sorted values."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def aggregate(latencies: list[float], errors: int) -> StepStats:
    """count = successes + errors; latency stats cover successful requests."""
    n = len(latencies)
    mean = sum(latencies) / n if n else 0.0
    if n >= 2:
        var = sum((x - mean) ** 2 for x in latencies) / (n - 1)
        stddev = math.sqrt(var)
    else:
        stddev = 0.0
    ordered = sorted(latencies)
    return StepStats(
        count=n + errors,
        errors=errors,
        mean=mean,
        stddev=stddev,
        p50=percentile(ordered, 50),
        p95=percentile(ordered, 95),
        p99=percentile(ordered, 99),
    )


def aggregate_records(records: Iterable[RawRecord]) -> dict[str, StepStats]:
    """Per-step stats plus a synthetic 'total' row, polls excluded."""
    by_step: dict[str, tuple[list[float], int]] = {}
    all_lat: list[float] = []
    all_err = 0
    for rec in records:
        if rec.poll:
            continue
        lats, errs = by_step.setdefault(rec.step, ([], 0))
        if rec.ok:
            lats.append(rec.latency_s)
            all_lat.append(rec.latency_s)
        else:
            by_step[rec.step] = (lats, errs + 1)
            all_err += 1
    out = {step: aggregate(lats, errs) for step, (lats, errs) in by_step.items()}
    out["total"] = aggregate(all_lat, all_err)
    return out


@dataclass
class BenchReport:
    steps: dict[str, StepStats]
    wall_clock_total: float
    config: dict = field(default_factory=dict)
    raw_log: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "steps": {name: s.as_dict() for name, s in self.steps.items()},
            "wall_clock_total": self.wall_clock_total,
            "config": self.config,
            "raw_log": self.raw_log,
        }

    def write(self, path: str) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str) -> "BenchReport":
        raw = json.loads(Path(path).read_text())
        return cls(
            steps={k: StepStats(**v) for k, v in raw["steps"].items()},
            wall_clock_total=raw["wall_clock_total"],
            config=raw.get("config", {}),
            raw_log=raw.get("raw_log"),
        )


def write_raw_log(records: Iterable[RawRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_raw_log(path: str) -> list[RawRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RawRecord.from_json(line))
    return records


def verify_report(report: BenchReport, records: list[RawRecord], tol: float = 1e-9) -> list[str]:
    """Recompute aggregates from the raw log; returns human-readable mismatches."""
    problems: list[str] = []
    recomputed = aggregate_records(records)
    for name, stats in report.steps.items():
        fresh = recomputed.get(name)
        if fresh is None:
            problems.append(f"step {name!r} missing from raw log")
            continue
        for fld in ("count", "errors"):
            if getattr(stats, fld) != getattr(fresh, fld):
                problems.append(
                    f"{name}.{fld}: report={getattr(stats, fld)} raw={getattr(fresh, fld)}"
                )
        for fld in ("mean", "stddev", "p50", "p95", "p99"):
            if abs(getattr(stats, fld) - getattr(fresh, fld)) > tol:
                problems.append(
                    f"{name}.{fld}: report={getattr(stats, fld)!r} raw={getattr(fresh, fld)!r}"
                )
    for name in recomputed:
        if name not in report.steps:
            problems.append(f"raw log has step {name!r} absent from report")
    return problems
