"""Locate the bottleneck resource and its longest holder from a profile.

For exclusive resources the ranking metric is total blocked (wait) time; for
shared resources it is total contention time (blocked intervals overlapping
another thread's hold). The holder is the thread with the largest hold
accumulation on the bottleneck: hold time for exclusive resources,
amount-time integral for shared ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .trace import TraceProfile
from .util import canonical_json_bytes, load_canonical_json
from .validator import ValidatedResource


@dataclass
class BottleneckReport:
    ranked: list[tuple[str, int]] = field(default_factory=list)  # (resource, blocking)
    bottleneck: Optional[str] = None
    max_blocking_time: int = 0
    longest_holder: Optional[int] = None
    top_functions: list[tuple[str, int]] = field(default_factory=list)
    unknown_resources: list[str] = field(default_factory=list)

    @property
    def no_bottleneck(self) -> bool:
        return self.bottleneck is None

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "ranked": [[r, t] for r, t in self.ranked],
            "bottleneck": self.bottleneck,
            "max_blocking_time": self.max_blocking_time,
            "longest_holder": self.longest_holder,
            "top_functions": [[f, t] for f, t in self.top_functions],
            "unknown_resources": list(self.unknown_resources),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BottleneckReport":
        return cls(
            ranked=[(r, t) for r, t in d.get("ranked", [])],
            bottleneck=d.get("bottleneck"),
            max_blocking_time=d.get("max_blocking_time", 0),
            longest_holder=d.get("longest_holder"),
            top_functions=[(f, t) for f, t in d.get("top_functions", [])],
            unknown_resources=list(d.get("unknown_resources", [])),
        )


def _kind_map(resources: list[ValidatedResource]) -> dict[str, str]:
    return {r.name: r.kind for r in resources}


def aggregate_blocking(
    profile: TraceProfile, resource: str, kind: str
) -> int:
    tids = set(profile.blocks.get(resource, {})) | set(profile.holds.get(resource, {}))
    if kind == "Shared":
        return sum(profile.contention_time(resource, tid) for tid in sorted(tids))
    return sum(profile.blocked_time(resource, tid) for tid in sorted(tids))


def holder_accumulation(
    profile: TraceProfile, resource: str, kind: str
) -> dict[int, int]:
    tids = sorted(profile.holds.get(resource, {}))
    if kind == "Shared":
        return {tid: profile.hold_amount(resource, tid) for tid in tids}
    return {tid: profile.hold_time(resource, tid) for tid in tids}


def rank_functions(profile: TraceProfile, resource: str) -> list[tuple[str, int]]:
    """Operator functions ordered by total hold time attributed to the
    intervals they opened (descending, ties by name)."""
    totals = profile.function_hold_times(resource)
    return sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))


def locate(
    profile: TraceProfile, resources: list[ValidatedResource]
) -> BottleneckReport:
    kinds = _kind_map(resources)
    present = profile.resources()
    if not present:
        return BottleneckReport()

    unknown = [r for r in present if r not in kinds]
    ranked = []
    for res in present:
        kind = kinds.get(res, "Exclusive")  # unknown resources: flagged, analyzed as exclusive
        ranked.append((res, aggregate_blocking(profile, res, kind)))
    ranked.sort(key=lambda kv: (-kv[1], kv[0]))

    bottleneck, max_blocking = ranked[0]
    holder_acc = holder_accumulation(profile, bottleneck, kinds.get(bottleneck, "Exclusive"))
    longest_holder = None
    if holder_acc:
        longest_holder = min(
            holder_acc, key=lambda tid: (-holder_acc[tid], tid)
        )
    return BottleneckReport(
        ranked=ranked,
        bottleneck=bottleneck,
        max_blocking_time=max_blocking,
        longest_holder=longest_holder,
        top_functions=rank_functions(profile, bottleneck),
        unknown_resources=unknown,
    )


def serialize_report(report: BottleneckReport) -> bytes:
    return canonical_json_bytes(report.to_dict())


def parse_report(data: bytes | str) -> BottleneckReport:
    return BottleneckReport.from_dict(load_canonical_json(data))
