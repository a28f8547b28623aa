"""Trace ingestion, invariants, and profile construction."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_overlap, pair_intervals, random_thread_events, random_trace
from omnires.trace import (
    EventKind,
    Interval,
    TraceError,
    TraceEvent,
    TraceProfile,
    build_profile,
    overlap_total,
    profile_directory,
    read_trace,
    serialize_profile,
    trace_files_in,
    write_trace_file,
)

MS = 1_000_000


def ev(ts, tid, kind, **kw):
    return TraceEvent(ts=ts, tid=tid, kind=kind, **kw)


def write_streams(tmp_path, streams: dict[int, list[TraceEvent]]) -> list[str]:
    paths = []
    for tid, events in sorted(streams.items()):
        path = tmp_path / f"trace.{tid}.jsonl"
        write_trace_file(str(path), events)
        paths.append(str(path))
    return paths


class TestEventLines:
    def test_line_round_trip(self):
        e = ev(5, 2, EventKind.ACQUIRE, resource="r", func="f", amount=3)
        assert TraceEvent.from_line(e.to_line()) == e

    def test_field_names_exact(self):
        import json

        e = ev(1, 2, EventKind.VAR_SAMPLE, var="x", val="7")
        d = json.loads(e.to_line())
        assert set(d) <= {"ts", "tid", "kind", "resource", "func", "loop_id", "var", "val", "amount"}


class TestMerge:
    def test_two_files_merge_by_ts(self, tmp_path):
        paths = write_streams(
            tmp_path,
            {
                1: [ev(5, 1, EventKind.ACQUIRE, resource="r")],
                2: [ev(3, 2, EventKind.ACQUIRE, resource="r")],
            },
        )
        merged = read_trace(paths)
        assert [e.ts for e in merged] == [3, 5]

    def test_non_alternating_acquire_rejected(self, tmp_path):
        paths = write_streams(
            tmp_path,
            {1: [ev(1, 1, EventKind.ACQUIRE, resource="r"), ev(2, 1, EventKind.ACQUIRE, resource="r")]},
        )
        with pytest.raises(TraceError, match="non-alternating Acquire"):
            read_trace(paths)

    def test_decreasing_ts_rejected(self, tmp_path):
        paths = write_streams(
            tmp_path,
            {1: [ev(5, 1, EventKind.OP_ENTER, func="f"), ev(4, 1, EventKind.OP_EXIT, func="f")]},
        )
        with pytest.raises(TraceError, match="timestamps decrease"):
            read_trace(paths)

    def test_unmatched_release_at_start_dropped_with_warning(self, tmp_path):
        paths = write_streams(
            tmp_path,
            {1: [ev(1, 1, EventKind.RELEASE, resource="r"),
                 ev(2, 1, EventKind.ACQUIRE, resource="r"),
                 ev(3, 1, EventKind.RELEASE, resource="r")]},
        )
        warnings: list[str] = []
        merged = read_trace(paths, warnings)
        assert len(warnings) == 1 and "unmatched Release" in warnings[0]
        prof = build_profile(merged)
        assert prof.hold_time("r", 1) == 1

    def test_merge_equals_global_sort_on_random_files(self, tmp_path):
        rng = random.Random(2024)
        for case in range(100):
            streams = {
                tid: random_thread_events(rng, tid, ["a", "b"], max_rounds=4)
                for tid in range(1, rng.randint(2, 5))
            }
            d = tmp_path / f"case{case}"
            d.mkdir()
            paths = write_streams(d, streams)
            merged = read_trace(paths)
            flat = [
                (e.ts, e.tid, order, i, e)
                for order, (_, events) in enumerate(sorted(streams.items()))
                for i, e in enumerate(events)
            ]
            oracle = [e for *_, e in sorted(flat, key=lambda t: t[:4])]
            assert merged == oracle


class TestOverlap:
    @given(
        st.lists(st.tuples(st.integers(0, 500), st.integers(1, 60)), max_size=12),
        st.lists(st.tuples(st.integers(0, 500), st.integers(1, 60)), max_size=12),
    )
    @settings(max_examples=200, deadline=None)
    def test_overlap_total_matches_segment_sweep(self, a_raw, b_raw):
        # overlap_total treats `a` intervals independently; restrict `a` to
        # disjoint intervals (as per-thread blocked intervals always are).
        a, cursor = [], 0
        for start, length in a_raw:
            s = cursor + start
            a.append(Interval(s, s + length))
            cursor = s + length
        b = [Interval(s, s + l) for s, l in b_raw]
        got = overlap_total(a, b)
        want = brute_overlap([(iv.start, iv.end) for iv in a], [(iv.start, iv.end) for iv in b])
        assert got == want

    def test_double_covered_region_counted_once(self):
        a = [Interval(0, 10)]
        b = [Interval(0, 6), Interval(4, 10)]
        assert overlap_total(a, b) == 10


class TestBuildProfile:
    def test_interval_arithmetic_example(self):
        events = [
            ev(0, 1, EventKind.ACQUIRE, resource="R"),
            ev(10 * MS, 2, EventKind.WAIT_BEGIN, resource="R"),
            ev(50 * MS, 1, EventKind.RELEASE, resource="R"),
            ev(50 * MS, 2, EventKind.WAIT_END, resource="R"),
        ]
        prof = build_profile(events)
        assert prof.blocked_time("R", 2) == 40 * MS
        assert prof.hold_time("R", 1) == 50 * MS

    def test_hold_attributed_to_innermost_operator(self):
        events = [
            ev(0, 1, EventKind.OP_ENTER, func="outer"),
            ev(1, 1, EventKind.OP_ENTER, func="inner"),
            ev(2, 1, EventKind.ACQUIRE, resource="R"),
            ev(8, 1, EventKind.RELEASE, resource="R"),
            ev(9, 1, EventKind.OP_EXIT, func="inner"),
            ev(10, 1, EventKind.ACQUIRE, resource="R"),
            ev(14, 1, EventKind.RELEASE, resource="R"),
            ev(15, 1, EventKind.OP_EXIT, func="outer"),
        ]
        prof = build_profile(events)
        assert prof.function_hold_times("R") == {"inner": 6, "outer": 4}

    def test_loop_and_var_stats(self):
        events = [
            ev(0, 1, EventKind.LOOP_ENTER, loop_id="L", func="f"),
            ev(1, 1, EventKind.LOOP_ITER, loop_id="L", func="f"),
            ev(2, 1, EventKind.LOOP_ITER, loop_id="L", func="f"),
            ev(3, 1, EventKind.LOOP_EXIT, loop_id="L", func="f"),
            ev(3, 1, EventKind.VAR_SAMPLE, var="n", val="2"),
            ev(4, 1, EventKind.VAR_SAMPLE, var="n", val="2"),
        ]
        prof = build_profile(events)
        st_ = prof.loops[("f", "L")]
        assert (st_.iterations, st_.total_time, st_.entries) == (2, 3, 1)
        assert prof.var_samples["n"] == {"2": 2}

    def test_unclosed_intervals_truncated_and_flagged(self):
        events = [
            ev(0, 1, EventKind.ACQUIRE, resource="R"),
            ev(7, 2, EventKind.WAIT_BEGIN, resource="R"),
            ev(9, 2, EventKind.VAR_SAMPLE, var="x", val="1"),
        ]
        prof = build_profile(events)
        assert prof.hold_time("R", 1) == 9
        assert prof.blocked_time("R", 2) == 2
        assert any("unclosed hold" in w for w in prof.warnings)
        assert any("unclosed wait" in w for w in prof.warnings)

    def test_profile_totals_match_brute_force_on_random_traces(self):
        rng = random.Random(11)
        for _ in range(50):
            streams = random_trace(rng, max_events=100)
            events = sorted(
                (e for evs in streams.values() for e in evs), key=lambda e: (e.ts, e.tid)
            )
            prof = build_profile(events)
            waits = pair_intervals(events, EventKind.WAIT_BEGIN, EventKind.WAIT_END)
            holds = pair_intervals(events, EventKind.ACQUIRE, EventKind.RELEASE)
            for (res, tid), ivs in waits.items():
                assert prof.blocked_time(res, tid) == sum(e - s for s, e in ivs)
            for (res, tid), ivs in holds.items():
                assert prof.hold_time(res, tid) == sum(e - s for s, e in ivs)
            for res in {r for r, _ in holds}:
                tids = {t for r, t in list(waits) + list(holds) if r == res}
                for tid in tids:
                    mine = waits.get((res, tid), [])
                    others = [iv for (r, t), ivs in holds.items()
                              if r == res and t != tid for iv in ivs]
                    assert prof.contention_time(res, tid) == brute_overlap(mine, others)

    def test_profile_linearity_disjoint_threads(self):
        rng = random.Random(3)
        a = random_thread_events(rng, 1, ["r"], 5)
        b = random_thread_events(rng, 2, ["s"], 5)
        merged = sorted(a + b, key=lambda e: (e.ts, e.tid))
        combined = build_profile(merged)
        pa, pb = build_profile(a), build_profile(b)
        for res in combined.resources():
            for tid in (1, 2):
                assert combined.hold_time(res, tid) == pa.hold_time(res, tid) + pb.hold_time(res, tid)
                assert combined.blocked_time(res, tid) == pa.blocked_time(res, tid) + pb.blocked_time(res, tid)

    def test_profile_round_trip(self):
        rng = random.Random(5)
        streams = random_trace(rng)
        events = sorted((e for evs in streams.values() for e in evs), key=lambda e: (e.ts, e.tid))
        prof = build_profile(events)
        prof.var_samples.setdefault("x", __import__("collections").Counter())["1"] += 1
        again = TraceProfile.from_dict(
            __import__("json").loads(serialize_profile(prof))
        )
        assert serialize_profile(again) == serialize_profile(prof)


class TestDirectoryIngestion:
    def test_profile_directory(self, tmp_path):
        write_streams(
            tmp_path,
            {
                1: [ev(0, 1, EventKind.ACQUIRE, resource="R"), ev(9, 1, EventKind.RELEASE, resource="R")],
                2: [ev(2, 2, EventKind.WAIT_BEGIN, resource="R"), ev(9, 2, EventKind.WAIT_END, resource="R")],
            },
        )
        prof = profile_directory(str(tmp_path))
        assert prof.hold_time("R", 1) == 9
        assert prof.blocked_time("R", 2) == 7

    def test_trace_files_in_sorted(self, tmp_path):
        for name in ("trace.10.jsonl", "trace.2.jsonl", "other.txt"):
            (tmp_path / name).write_text("")
        names = [p.rsplit("/", 1)[-1] for p in trace_files_in(str(tmp_path))]
        assert names == ["trace.10.jsonl", "trace.2.jsonl"]
