"""Acceptance criteria. Each test exercises one end-to-end guarantee and
prints a single pass/fail line with its pinned tolerance."""

from __future__ import annotations

import json
import random
import statistics
import time
from fractions import Fraction

from conftest import run_events
from helpers import brute_aggregates, random_trace
from omnires.cli import EXIT_FINDINGS, main
from omnires.diff import diff_loops, diff_variables, iteration_ratio
from omnires.locator import aggregate_blocking, holder_accumulation, locate
from omnires.oracle import ScriptedOracle, identify_operators, identify_resources
from omnires.scenarios import builtin_pair, declared_resources, random_scenario
from omnires.sim import NullSink, Simulator
from omnires.trace import build_profile
from omnires.validator import dispatch_validate, static_seed_baseline

from conftest import UNDO_FACTS_DOC, UNDO_HEADER, UNDO_TRANSCRIPT


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_criterion_1_undo_end_to_end(tmp_path, builtin_runs):
    """Full pipeline on undo_purge: named root cause matches the scenario
    label, client slowdown is 2x +/- 15%, wall time under 30 s."""
    t0 = time.monotonic()
    out = tmp_path / "run"
    code = main(["run", "--scenario", "undo_purge", "--seed", "7",
                 "--out-dir", str(out)])
    elapsed = time.monotonic() - t0

    truth = json.loads((out / "traces/buggy/ground_truth.json").read_bytes())
    bottleneck = json.loads((out / "bottleneck.json").read_bytes())
    report = json.loads((out / "report.json").read_bytes())
    located_ok = (
        code == EXIT_FINDINGS
        and bottleneck["bottleneck"] == truth["bottleneck"]
        and bottleneck["longest_holder"] == truth["holder_tid"]
        and report["top_functions"][0] == [truth["function"], "1st"]
        and report["top_variable"] == truth["variable"]
    )

    client = 2  # the scenario's client thread
    ratio = (builtin_runs[("undo_purge", "Buggy")].finish_ts[client]
             / builtin_runs[("undo_purge", "Normal")].finish_ts[client])
    _verdict(
        "criterion-1 undo end-to-end",
        located_ok and 1.7 <= ratio <= 2.3 and elapsed < 30.0,
        f"root cause {'matches' if located_ok else 'differs'}, "
        f"client slowdown {ratio:.3f}x (pinned 2x +/- 15%), {elapsed:.1f}s (< 30s)",
    )


def test_criterion_2_random_scenarios():
    """>= 50 seeded random scenarios: wherever the injected bottleneck's
    blocking exceeds every other resource by >= 5x, the locator must name
    it. Required hit rate on separated scenarios: 100%."""
    seeds = range(50)
    separated = hits = 0
    for seed in seeds:
        sc = random_scenario(seed)
        _, profile, _ = run_events(sc)
        kinds = {r.name: r.kind for r in sc.resources}
        blocking = {
            res: aggregate_blocking(profile, res, kinds.get(res, "Exclusive"))
            for res in profile.resources()
        }
        truth = sc.ground_truth.bottleneck
        top = blocking.get(truth, 0)
        if not all(top >= 5 * v for r, v in blocking.items() if r != truth):
            continue
        separated += 1
        report = locate(profile, declared_resources(sc))
        if report.bottleneck == truth:
            hits += 1
    _verdict(
        "criterion-2 random scenarios",
        separated >= 25 and hits == separated,
        f"{hits}/{separated} separated scenarios located correctly "
        f"(of {len(seeds)} seeds; requirement: 100% where blocking >= 5x others)",
    )


def test_criterion_3_profile_vs_brute_force():
    """1000 random traces (<= 5 threads, <= 3 resources, <= 200 events):
    profile aggregates must equal an O(n^2) brute-force recomputation
    exactly, for both exclusive and shared interpretations."""
    rng = random.Random(1234)
    mismatches = 0
    for _ in range(1000):
        streams = random_trace(rng, max_tids=5, max_resources=3, max_events=200)
        events = sorted(
            (e for evs in streams.values() for e in evs), key=lambda e: (e.ts, e.tid)
        )
        profile = build_profile(events)
        for kind in ("Exclusive", "Shared"):
            kind_of = {res: kind for res in profile.resources()}
            blocking, holder = brute_aggregates(events, kind_of)
            for res, want in blocking.items():
                if aggregate_blocking(profile, res, kind) != want:
                    mismatches += 1
            for res, per_tid in holder.items():
                if holder_accumulation(profile, res, kind) != per_tid:
                    mismatches += 1
    _verdict(
        "criterion-3 brute-force equivalence",
        mismatches == 0,
        f"{mismatches} mismatches across 1000 random traces (required: 0, exact)",
    )


def test_criterion_4_labeled_corpus(labeled, labeled_corpus, labeled_facts):
    """Labeled corpus (16 true resources, 32 oracle candidates): hybrid
    precision >= 0.8 and above oracle-only; hybrid recall above the
    static-seed baseline."""
    oracle = ScriptedOracle(labeled.transcript)
    cands = identify_resources(labeled_corpus, oracle)
    ops = identify_operators(labeled_corpus, labeled_facts, cands, oracle)
    validated = dispatch_validate(cands, ops, labeled_facts)

    truth = labeled.truth
    oracle_names = {c.name for c in cands}
    hybrid_names = {r.name for r in validated}
    prec_oracle = len(oracle_names & truth) / len(oracle_names)
    prec_hybrid = len(hybrid_names & truth) / len(hybrid_names)
    recall_hybrid = len(hybrid_names & truth) / len(truth)
    seeds = static_seed_baseline(labeled_facts)
    recall_baseline = len({t for t in truth if t.split("::")[1] in seeds}) / len(truth)

    _verdict(
        "criterion-4 labeled corpus",
        len(truth) >= 12 and len(oracle_names) >= 30
        and prec_hybrid >= 0.8 and prec_hybrid > prec_oracle
        and recall_hybrid > recall_baseline,
        f"precision hybrid {prec_hybrid:.3f} (>= 0.8, > oracle {prec_oracle:.3f}); "
        f"recall hybrid {recall_hybrid:.3f} > baseline {recall_baseline:.3f}",
    )


def test_criterion_5_self_diff_is_zero(builtin_runs):
    """Differential analysis of any profile against itself yields zero
    findings, and the iteration ratio is exact rational arithmetic."""
    nonzero = []
    for key, run in sorted(builtin_runs.items()):
        findings = diff_loops(run.profile, run.profile) + diff_variables(
            run.profile, run.profile
        )
        if findings:
            nonzero.append(key)
    exact = iteration_ratio(1000, 10) == Fraction(1001, 11)
    _verdict(
        "criterion-5 self-diff",
        not nonzero and exact,
        f"{len(builtin_runs)} builtin profiles self-diffed to zero findings; "
        f"ratio(1000, 10) == 1001/11 exactly: {exact}",
    )


def test_criterion_6_byte_identical_artifacts(tmp_path):
    """Every pipeline stage, run twice on the same inputs, produces
    byte-identical artifacts."""
    src = tmp_path / "src"
    src.mkdir()
    (src / "undo_log.h").write_text(UNDO_HEADER)
    (tmp_path / "facts.json").write_text(json.dumps(UNDO_FACTS_DOC))
    (tmp_path / "transcript.json").write_text(json.dumps(UNDO_TRANSCRIPT))

    def one_pass(tag: str) -> dict[str, bytes]:
        d = tmp_path / tag
        d.mkdir()
        main(["extract", "--src", str(src), "--out", str(d / "corpus.json")])
        main(["identify", "--corpus", str(d / "corpus.json"),
              "--facts", str(tmp_path / "facts.json"),
              "--oracle", f"scripted:{tmp_path / 'transcript.json'}",
              "--out", str(d / "candidates.json")])
        main(["validate", "--candidates", str(d / "candidates.json"),
              "--facts", str(tmp_path / "facts.json"),
              "--out", str(d / "resources.json")])
        for variant in ("buggy", "normal"):
            main(["simulate", "--scenario", "lingering_buffer", "--seed", "7",
                  "--variant", variant, "--out-dir", str(d / variant)])
            main(["profile", "--trace-dir", str(d / variant),
                  "--out", str(d / f"profile.{variant}.json")])
        main(["locate", "--profile", str(d / "profile.buggy.json"),
              "--resources", str(d / "resources.json"),
              "--out", str(d / "bottleneck.json")])
        main(["diagnose", "--buggy", str(d / "buggy"), "--normal", str(d / "normal"),
              "--resources", str(d / "resources.json"),
              "--format", "json", "--out", str(d / "diagnosis.json")])
        return {
            str(p.relative_to(d)): p.read_bytes()
            for p in sorted(d.rglob("*")) if p.is_file()
        }

    first, second = one_pass("a"), one_pass("b")
    same = first == second
    _verdict(
        "criterion-6 determinism",
        same and len(first) >= 10,
        f"{len(first)} artifacts across 7 stages byte-identical on rerun: {same}",
    )


def test_criterion_7_recording_overhead():
    """Trace recording (BufferSink) costs < 15% wall time over discarding
    events (NullSink), medians of 5 interleaved runs each."""
    scenario, _ = builtin_pair("undo_purge", seed=7)

    def timed(sink_factory) -> float:
        sim = Simulator(scenario, sink=sink_factory())
        t0 = time.perf_counter()
        sim.run()
        return time.perf_counter() - t0

    from omnires.sim import BufferSink

    timed(BufferSink), timed(NullSink)  # warm-up
    buffered, null = [], []
    for _ in range(5):
        buffered.append(timed(BufferSink))
        null.append(timed(NullSink))
    overhead = statistics.median(buffered) / statistics.median(null) - 1.0
    _verdict(
        "criterion-7 recording overhead",
        overhead < 0.15,
        f"BufferSink overhead {overhead * 100:.1f}% vs NullSink "
        f"(median of 5 interleaved runs; bound 15%)",
    )
