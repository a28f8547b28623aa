"""Shared test utilities: random well-formed trace generation and independent
brute-force re-computations used as oracles against the library's aggregates."""

from __future__ import annotations

import random

from omnires.trace import EventKind, TraceEvent

NS_PER_MS = 1_000_000


def random_thread_events(
    rng: random.Random,
    tid: int,
    resources: list[str],
    max_rounds: int,
    with_ops: bool = False,
) -> list[TraceEvent]:
    """A well-formed per-thread event list: monotone timestamps, alternating
    Acquire/Release and WaitBegin/WaitEnd per resource."""
    events: list[TraceEvent] = []
    ts = rng.randint(0, 50)
    for _ in range(rng.randint(1, max_rounds)):
        res = rng.choice(resources)
        func = f"op_{res}_{tid}" if with_ops else None
        if with_ops:
            events.append(TraceEvent(ts=ts, tid=tid, kind=EventKind.OP_ENTER, func=func))
        if rng.random() < 0.5:
            events.append(TraceEvent(ts=ts, tid=tid, kind=EventKind.WAIT_BEGIN, resource=res))
            ts += rng.randint(1, 40)
            events.append(TraceEvent(ts=ts, tid=tid, kind=EventKind.WAIT_END, resource=res))
        amount = rng.randint(1, 4)
        events.append(
            TraceEvent(ts=ts, tid=tid, kind=EventKind.ACQUIRE, resource=res, amount=amount, func=func)
        )
        ts += rng.randint(1, 60)
        events.append(
            TraceEvent(ts=ts, tid=tid, kind=EventKind.RELEASE, resource=res, amount=amount)
        )
        if with_ops:
            events.append(TraceEvent(ts=ts, tid=tid, kind=EventKind.OP_EXIT, func=func))
        ts += rng.randint(0, 30)
    return events


def random_trace(
    rng: random.Random,
    max_tids: int = 5,
    max_resources: int = 3,
    max_events: int = 200,
) -> dict[int, list[TraceEvent]]:
    """Random small trace: per-tid well-formed streams, bounded total size."""
    n_tids = rng.randint(1, max_tids)
    resources = [f"r{i}" for i in range(rng.randint(1, max_resources))]
    per_tid: dict[int, list[TraceEvent]] = {}
    budget = rng.randint(10, max_events)
    for tid in range(1, n_tids + 1):
        rounds = max(1, budget // (n_tids * 6))
        per_tid[tid] = random_thread_events(rng, tid, resources, rounds)
    return per_tid


# ---------------------------------------------------------------------------
# Brute-force oracles (deliberately independent of omnires.trace internals).


def pair_intervals(events: list[TraceEvent], begin: EventKind, end: EventKind):
    """(res, tid) → list of [start, end) intervals, paired first-to-first."""
    out: dict[tuple[str, int], list[tuple[int, int]]] = {}
    open_at: dict[tuple[str, int], int] = {}
    for ev in sorted(events, key=lambda e: e.ts):
        if ev.resource is None:
            continue
        key = (ev.resource, ev.tid)
        if ev.kind is begin:
            open_at[key] = ev.ts
        elif ev.kind is end and key in open_at:
            out.setdefault(key, []).append((open_at.pop(key), ev.ts))
    return out


def brute_overlap(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    """Length of (∪a) ∩ (∪b), by elementary-segment sweep. O(n²)."""
    pts = sorted({p for iv in a + b for p in iv})
    total = 0
    for lo, hi in zip(pts, pts[1:]):
        if any(s <= lo < e for s, e in a) and any(s <= lo < e for s, e in b):
            total += hi - lo
    return total


def brute_aggregates(events: list[TraceEvent], kind_of: dict[str, str]):
    """Recompute per-resource aggregate blocking and per-thread hold
    accumulations straight from raw events."""
    waits = pair_intervals(events, EventKind.WAIT_BEGIN, EventKind.WAIT_END)
    holds = pair_intervals(events, EventKind.ACQUIRE, EventKind.RELEASE)
    amounts: dict[tuple[str, int], list[int]] = {}
    open_amt: dict[tuple[str, int], int] = {}
    for ev in sorted(events, key=lambda e: e.ts):
        if ev.resource is None:
            continue
        key = (ev.resource, ev.tid)
        if ev.kind is EventKind.ACQUIRE:
            open_amt[key] = ev.amount if ev.amount is not None else 1
        elif ev.kind is EventKind.RELEASE and key in open_amt:
            amounts.setdefault(key, []).append(open_amt.pop(key))

    resources = {res for res, _ in list(waits) + list(holds)}
    blocking: dict[str, int] = {}
    holder: dict[str, dict[int, int]] = {}
    for res in resources:
        kind = kind_of.get(res, "Exclusive")
        tids = {tid for r, tid in list(waits) + list(holds) if r == res}
        if kind == "Shared":
            agg = 0
            for tid in tids:
                mine = waits.get((res, tid), [])
                others = [
                    iv for (r, t), ivs in holds.items() if r == res and t != tid for iv in ivs
                ]
                agg += brute_overlap(mine, others)
            blocking[res] = agg
            holder[res] = {
                tid: sum(
                    (e - s) * amt
                    for (s, e), amt in zip(holds.get((res, tid), []), amounts.get((res, tid), []))
                )
                for tid in tids
                if (res, tid) in holds
            }
        else:
            blocking[res] = sum(
                e - s for tid in tids for s, e in waits.get((res, tid), [])
            )
            holder[res] = {
                tid: sum(e - s for s, e in holds.get((res, tid), []))
                for tid in tids
                if (res, tid) in holds
            }
    return blocking, holder
