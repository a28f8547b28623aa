"""Trace-event contract and per-resource profile construction.

Traces are JSON Lines, one event per line, one file per thread
(`trace.<tid>.jsonl`), sorted by timestamp within each file. Timestamps are
logical nanoseconds supplied by the producer; this module never reads wall
clocks.
"""

from __future__ import annotations

import heapq
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional

from .util import canonical_json_bytes


class EventKind(str, Enum):
    ACQUIRE = "Acquire"
    RELEASE = "Release"
    WAIT_BEGIN = "WaitBegin"
    WAIT_END = "WaitEnd"
    OP_ENTER = "OpEnter"
    OP_EXIT = "OpExit"
    LOOP_ENTER = "LoopEnter"
    LOOP_ITER = "LoopIter"
    LOOP_EXIT = "LoopExit"
    VAR_SAMPLE = "VarSample"


@dataclass(frozen=True)
class TraceEvent:
    ts: int
    tid: int
    kind: EventKind
    resource: Optional[str] = None
    func: Optional[str] = None
    loop_id: Optional[str] = None
    var: Optional[str] = None
    val: Optional[str] = None
    amount: Optional[int] = None

    def to_line(self) -> str:
        d = {"ts": self.ts, "tid": self.tid, "kind": self.kind.value}
        for key in ("resource", "func", "loop_id", "var", "val", "amount"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(
            ts=int(d["ts"]),
            tid=int(d["tid"]),
            kind=EventKind(d["kind"]),
            resource=d.get("resource"),
            func=d.get("func"),
            loop_id=d.get("loop_id"),
            var=d.get("var"),
            val=None if d.get("val") is None else str(d["val"]),
            amount=d.get("amount"),
        )


class TraceError(ValueError):
    def __init__(self, message: str, tid=None, ts=None, kind=None):
        ctx = ", ".join(
            f"{k}={v}" for k, v in (("tid", tid), ("ts", ts), ("kind", kind)) if v is not None
        )
        super().__init__(f"{message}" + (f" ({ctx})" if ctx else ""))
        self.tid, self.ts, self.kind = tid, ts, kind


def write_trace_file(path: str, events: Iterable[TraceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_line() + "\n")


def _load_file(path: str) -> list[TraceEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(TraceEvent.from_line(line))
    return events


def trace_files_in(directory: str) -> list[str]:
    names = sorted(
        n for n in os.listdir(directory) if n.startswith("trace.") and n.endswith(".jsonl")
    )
    return [os.path.join(directory, n) for n in names]


def read_trace(
    files: list[str], warnings: Optional[list[str]] = None
) -> list[TraceEvent]:
    """K-way merge of per-thread trace files by (ts, tid, file order), with
    per-thread invariant checks (monotone ts, alternating Acquire/Release and
    WaitBegin/WaitEnd per resource)."""
    streams = [_load_file(path) for path in files]
    merged = _merge(streams)
    _validate(merged, warnings if warnings is not None else [])
    return merged


def _merge(streams: list[list[TraceEvent]]) -> list[TraceEvent]:
    keyed = (
        [((ev.ts, ev.tid, order, i), ev) for i, ev in enumerate(stream)]
        for order, stream in enumerate(streams)
    )
    return [ev for _, ev in heapq.merge(*keyed)]


def _validate(events: list[TraceEvent], warnings: list[str]) -> None:
    last_ts: dict[int, int] = {}
    holding: dict[tuple[int, str], bool] = defaultdict(bool)
    waiting: dict[tuple[int, str], bool] = defaultdict(bool)
    seen_any: dict[tuple[int, str], bool] = defaultdict(bool)

    for ev in events:
        if ev.tid in last_ts and ev.ts < last_ts[ev.tid]:
            raise TraceError("timestamps decrease within thread", ev.tid, ev.ts, ev.kind.value)
        last_ts[ev.tid] = ev.ts
        if ev.resource is None:
            continue
        key = (ev.tid, ev.resource)
        if ev.kind is EventKind.ACQUIRE:
            if holding[key]:
                raise TraceError("non-alternating Acquire", ev.tid, ev.ts, ev.kind.value)
            holding[key] = True
            seen_any[key] = True
        elif ev.kind is EventKind.RELEASE:
            if not holding[key]:
                if not seen_any[key]:
                    warnings.append(
                        f"dropping unmatched Release at stream start (tid={ev.tid}, ts={ev.ts})"
                    )
                    continue
                raise TraceError("non-alternating Release", ev.tid, ev.ts, ev.kind.value)
            holding[key] = False
        elif ev.kind is EventKind.WAIT_BEGIN:
            if waiting[key]:
                raise TraceError("non-alternating WaitBegin", ev.tid, ev.ts, ev.kind.value)
            waiting[key] = True
            seen_any[key] = True
        elif ev.kind is EventKind.WAIT_END:
            if not waiting[key]:
                if not seen_any[key]:
                    warnings.append(
                        f"dropping unmatched WaitEnd at stream start (tid={ev.tid}, ts={ev.ts})"
                    )
                    continue
                raise TraceError("non-alternating WaitEnd", ev.tid, ev.ts, ev.kind.value)
            waiting[key] = False


# ---------------------------------------------------------------------------
# Profiles


@dataclass
class Interval:
    start: int
    end: int
    amount: int = 1
    func: Optional[str] = None

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class LoopStats:
    function: str
    loop_id: str
    iterations: int = 0
    total_time: int = 0
    entries: int = 0


@dataclass
class TraceProfile:
    # resource → tid → hold intervals
    holds: dict[str, dict[int, list[Interval]]] = field(default_factory=dict)
    # resource → tid → blocked (wait) intervals
    blocks: dict[str, dict[int, list[Interval]]] = field(default_factory=dict)
    # (function, loop_id) → LoopStats
    loops: dict[tuple[str, str], LoopStats] = field(default_factory=dict)
    # var name → Counter of sampled values
    var_samples: dict[str, Counter] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def resources(self) -> list[str]:
        return sorted(set(self.holds) | set(self.blocks))

    def blocked_time(self, resource: str, tid: int) -> int:
        return sum(iv.length for iv in self.blocks.get(resource, {}).get(tid, []))

    def total_blocked_time(self, resource: str) -> int:
        return sum(
            iv.length for per in self.blocks.get(resource, {}).values() for iv in per
        )

    def hold_time(self, resource: str, tid: int) -> int:
        return sum(iv.length for iv in self.holds.get(resource, {}).get(tid, []))

    def hold_amount(self, resource: str, tid: int) -> int:
        """Unit-time integral of held amounts (e.g. page-nanoseconds)."""
        return sum(
            iv.length * iv.amount for iv in self.holds.get(resource, {}).get(tid, [])
        )

    def contention_time(self, resource: str, tid: int) -> int:
        """Portion of `tid`'s blocked intervals overlapping any other
        thread's hold of the same resource."""
        mine = self.blocks.get(resource, {}).get(tid, [])
        others = [
            iv
            for other, ivs in self.holds.get(resource, {}).items()
            if other != tid
            for iv in ivs
        ]
        return overlap_total(mine, others)

    def function_hold_times(self, resource: str) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for per in self.holds.get(resource, {}).values():
            for iv in per:
                out[iv.func or "<unattributed>"] += iv.length
        return dict(out)

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "holds": {
                res: {
                    str(tid): [[iv.start, iv.end, iv.amount, iv.func] for iv in ivs]
                    for tid, ivs in per.items()
                }
                for res, per in self.holds.items()
            },
            "blocks": {
                res: {
                    str(tid): [[iv.start, iv.end] for iv in ivs]
                    for tid, ivs in per.items()
                }
                for res, per in self.blocks.items()
            },
            "loops": {
                f"{fn} {lid}": {
                    "iterations": st.iterations,
                    "total_time": st.total_time,
                    "entries": st.entries,
                }
                for (fn, lid), st in self.loops.items()
            },
            "var_samples": {
                var: dict(counts) for var, counts in self.var_samples.items()
            },
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceProfile":
        prof = cls()
        for res, per in d.get("holds", {}).items():
            prof.holds[res] = {
                int(tid): [Interval(a, b, amt, fn) for a, b, amt, fn in ivs]
                for tid, ivs in per.items()
            }
        for res, per in d.get("blocks", {}).items():
            prof.blocks[res] = {
                int(tid): [Interval(a, b) for a, b in ivs] for tid, ivs in per.items()
            }
        for key, st in d.get("loops", {}).items():
            fn, _, lid = key.partition(" ")
            prof.loops[(fn, lid)] = LoopStats(
                function=fn,
                loop_id=lid,
                iterations=st["iterations"],
                total_time=st["total_time"],
                entries=st["entries"],
            )
        for var, counts in d.get("var_samples", {}).items():
            prof.var_samples[var] = Counter(counts)
        prof.warnings = list(d.get("warnings", []))
        return prof


def serialize_profile(profile: TraceProfile) -> bytes:
    return canonical_json_bytes(profile.to_dict())


def overlap_total(a: list[Interval], b: list[Interval]) -> int:
    """Total length of the parts of intervals in `a` covered by the union of
    intervals in `b` (covered regions counted once)."""
    if not a or not b:
        return 0
    merged: list[list[int]] = []
    for iv in sorted(b, key=lambda x: x.start):
        if merged and iv.start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], iv.end)
        else:
            merged.append([iv.start, iv.end])
    total = 0
    for iv in a:
        for lo, hi in merged:
            s = max(iv.start, lo)
            e = min(iv.end, hi)
            if e > s:
                total += e - s
    return total


def build_profile(events: list[TraceEvent]) -> TraceProfile:
    """Fold a merged, validated event stream into per-resource aggregates.

    Hold intervals are [Acquire, Release); blocked intervals are
    [WaitBegin, WaitEnd); holds are attributed to the innermost operator
    function open (OpEnter/OpExit) on the acquiring thread.
    """
    prof = TraceProfile()
    open_holds: dict[tuple[int, str], Interval] = {}
    open_blocks: dict[tuple[int, str], Interval] = {}
    op_stack: dict[int, list[str]] = defaultdict(list)
    open_loops: dict[tuple[int, str, str], int] = {}
    last_ts = 0

    def innermost(tid: int) -> Optional[str]:
        stack = op_stack[tid]
        return stack[-1] if stack else None

    for ev in events:
        last_ts = max(last_ts, ev.ts)
        key = (ev.tid, ev.resource) if ev.resource else None
        if ev.kind is EventKind.OP_ENTER:
            op_stack[ev.tid].append(ev.func or "<anon>")
        elif ev.kind is EventKind.OP_EXIT:
            if op_stack[ev.tid]:
                op_stack[ev.tid].pop()
        elif ev.kind is EventKind.ACQUIRE and key:
            open_holds[key] = Interval(
                ev.ts, ev.ts, amount=ev.amount if ev.amount is not None else 1,
                func=ev.func or innermost(ev.tid),
            )
        elif ev.kind is EventKind.RELEASE and key:
            iv = open_holds.pop(key, None)
            if iv is not None:
                iv.end = ev.ts
                prof.holds.setdefault(ev.resource, {}).setdefault(ev.tid, []).append(iv)
        elif ev.kind is EventKind.WAIT_BEGIN and key:
            open_blocks[key] = Interval(ev.ts, ev.ts)
        elif ev.kind is EventKind.WAIT_END and key:
            iv = open_blocks.pop(key, None)
            if iv is not None:
                iv.end = ev.ts
                prof.blocks.setdefault(ev.resource, {}).setdefault(ev.tid, []).append(iv)
        elif ev.kind is EventKind.LOOP_ENTER:
            fn = ev.func or innermost(ev.tid) or "<anon>"
            lid = ev.loop_id or "<anon>"
            open_loops[(ev.tid, fn, lid)] = ev.ts
            st = prof.loops.setdefault((fn, lid), LoopStats(fn, lid))
            st.entries += 1
        elif ev.kind is EventKind.LOOP_ITER:
            fn = ev.func or innermost(ev.tid) or "<anon>"
            lid = ev.loop_id or "<anon>"
            st = prof.loops.setdefault((fn, lid), LoopStats(fn, lid))
            st.iterations += 1
        elif ev.kind is EventKind.LOOP_EXIT:
            fn = ev.func or innermost(ev.tid) or "<anon>"
            lid = ev.loop_id or "<anon>"
            start = open_loops.pop((ev.tid, fn, lid), None)
            if start is not None:
                st = prof.loops.setdefault((fn, lid), LoopStats(fn, lid))
                st.total_time += ev.ts - start
        elif ev.kind is EventKind.VAR_SAMPLE and ev.var is not None:
            prof.var_samples.setdefault(ev.var, Counter())[ev.val or ""] += 1

    # Unclosed intervals: truncate at the last timestamp and flag.
    for (tid, res), iv in sorted(open_holds.items()):
        iv.end = last_ts
        prof.holds.setdefault(res, {}).setdefault(tid, []).append(iv)
        prof.warnings.append(f"unclosed hold of {res} by tid {tid}, truncated at {last_ts}")
    for (tid, res), iv in sorted(open_blocks.items()):
        iv.end = last_ts
        prof.blocks.setdefault(res, {}).setdefault(tid, []).append(iv)
        prof.warnings.append(f"unclosed wait on {res} by tid {tid}, truncated at {last_ts}")
    for (tid, fn, lid), start in sorted(open_loops.items()):
        st = prof.loops.setdefault((fn, lid), LoopStats(fn, lid))
        st.total_time += last_ts - start
        prof.warnings.append(f"unclosed loop {lid} in {fn} (tid {tid}), truncated at {last_ts}")
    return prof


def profile_directory(directory: str) -> TraceProfile:
    warnings: list[str] = []
    events = read_trace(trace_files_in(directory), warnings)
    prof = build_profile(events)
    prof.warnings = warnings + prof.warnings
    return prof
