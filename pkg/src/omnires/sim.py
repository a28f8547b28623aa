"""Deterministic logical-clock simulator of thread contention scenarios.

Simulated threads run scripted workloads against declared resources
(exclusive, or shared with a unit capacity). The engine is single-threaded
discrete-event scheduling; all randomness comes from the scenario seed, so
identical (scenario, seed) pairs produce byte-identical traces.

Scripts are data (JSON-friendly step lists); see docs/scenarios.md.
"""

from __future__ import annotations

import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .trace import EventKind, TraceEvent, write_trace_file
from .util import canonical_json_bytes, load_canonical_json

NS_PER_MS = 1_000_000
NS_PER_US = 1_000

MAX_POLL_ITERS = 100_000


class ScenarioError(ValueError):
    pass


class SimulationDeadlock(RuntimeError):
    def __init__(self, blocked: dict[int, str]):
        dump = ", ".join(f"tid {tid} on {res}" for tid, res in sorted(blocked.items()))
        super().__init__(f"no runnable thread; blocked: {dump}")
        self.blocked = blocked


@dataclass
class ResourceSpec:
    name: str
    kind: str  # "Exclusive" | "Shared"
    capacity: int = 1

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "capacity": self.capacity}


@dataclass
class ThreadSpec:
    tid: int
    role: str  # Client | Purge | Background
    steps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tid": self.tid, "role": self.role, "steps": self.steps}


@dataclass
class GroundTruth:
    bottleneck: str
    holder_tid: int
    function: str
    variable: str

    def to_dict(self) -> dict:
        return {
            "bottleneck": self.bottleneck,
            "holder_tid": self.holder_tid,
            "function": self.function,
            "variable": self.variable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(d["bottleneck"], d["holder_tid"], d["function"], d["variable"])


@dataclass
class Scenario:
    name: str
    seed: int
    variant: str  # "Buggy" | "Normal"
    resources: list[ResourceSpec] = field(default_factory=list)
    threads: list[ThreadSpec] = field(default_factory=list)
    ground_truth: Optional[GroundTruth] = None

    def validate(self) -> None:
        declared = {r.name for r in self.resources}

        def check_steps(steps):
            for step in steps:
                for key in ("acquire", "release"):
                    if key in step and step[key] not in declared:
                        raise ScenarioError(
                            f"step references undeclared resource {step[key]!r}"
                        )
                if "repeat" in step:
                    check_steps(step.get("steps", []))

        for th in self.threads:
            check_steps(th.steps)
        if self.ground_truth and self.ground_truth.bottleneck not in declared:
            raise ScenarioError("ground-truth bottleneck not declared")

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "name": self.name,
            "seed": self.seed,
            "variant": self.variant,
            "resources": [r.to_dict() for r in self.resources],
            "threads": [t.to_dict() for t in self.threads],
            "ground_truth": self.ground_truth.to_dict() if self.ground_truth else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            name=d["name"],
            seed=int(d["seed"]),
            variant=d.get("variant", "Buggy"),
            resources=[
                ResourceSpec(r["name"], r["kind"], int(r.get("capacity", 1)))
                for r in d.get("resources", [])
            ],
            threads=[
                ThreadSpec(int(t["tid"]), t.get("role", "Client"), t.get("steps", []))
                for t in d.get("threads", [])
            ],
            ground_truth=(
                GroundTruth.from_dict(d["ground_truth"]) if d.get("ground_truth") else None
            ),
        )


def serialize_scenario(s: Scenario) -> bytes:
    return canonical_json_bytes(s.to_dict())


def parse_scenario(data: bytes | str) -> Scenario:
    s = Scenario.from_dict(load_canonical_json(data))
    s.validate()
    return s


# ---------------------------------------------------------------------------
# Event sinks. The recording hot path is Sink.emit; JSON serialization only
# happens when a buffered sink is flushed to disk.


class NullSink:
    def emit(self, event: TraceEvent) -> None:
        pass


class BufferSink:
    def __init__(self):
        self.by_tid: dict[int, list[TraceEvent]] = {}

    def emit(self, event: TraceEvent) -> None:
        self.by_tid.setdefault(event.tid, []).append(event)

    def write_dir(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for tid in sorted(self.by_tid):
            path = os.path.join(directory, f"trace.{tid}.jsonl")
            write_trace_file(path, self.by_tid[tid])
            paths.append(path)
        return paths


# ---------------------------------------------------------------------------
# Engine


def _draw_ns(rng: random.Random, value, unit_ns: int) -> int:
    if isinstance(value, (list, tuple)):
        lo, hi = value
        return int(rng.uniform(lo, hi) * unit_ns)
    return int(value * unit_ns)


@dataclass
class _Waiter:
    tid: int
    amount: int
    wait_begin: int
    poll: Optional[dict]


class Simulator:
    def __init__(self, scenario: Scenario, sink=None):
        scenario.validate()
        self.scenario = scenario
        self.sink = sink if sink is not None else BufferSink()
        self.kinds = {r.name: r.kind for r in scenario.resources}
        self.capacity = {
            r.name: (1 if r.kind == "Exclusive" else r.capacity)
            for r in scenario.resources
        }
        self.in_use: dict[str, int] = {r.name: 0 for r in scenario.resources}
        self.waiters: dict[str, deque[_Waiter]] = {
            r.name: deque() for r in scenario.resources
        }
        self.held: dict[tuple[int, str], int] = {}
        self.func_stack: dict[int, list[str]] = {}
        self.finish_ts: dict[int, int] = {}
        self._seq = 0

    # -- event helpers -----------------------------------------------------

    def _emit(self, ts: int, tid: int, kind: EventKind, **kw) -> None:
        func = kw.pop("func", None)
        if func is None:
            stack = self.func_stack.get(tid)
            func = stack[-1] if stack else None
        self.sink.emit(TraceEvent(ts=ts, tid=tid, kind=kind, func=func, **kw))

    def _emit_poll_loop(self, tid: int, poll: dict, begin: int, end: int) -> None:
        """Retroactively materialize a polling loop covering a wait window."""
        loop_id = poll.get("id", "poll")
        func = poll.get("func")
        step_ns = max(1, int(poll.get("poll_us", 100) * NS_PER_US))
        self._emit(begin, tid, EventKind.LOOP_ENTER, loop_id=loop_id, func=func)
        iters = min((end - begin) // step_ns, MAX_POLL_ITERS)
        for k in range(1, int(iters) + 1):
            self._emit(begin + k * step_ns, tid, EventKind.LOOP_ITER, loop_id=loop_id, func=func)
        self._emit(end, tid, EventKind.LOOP_EXIT, loop_id=loop_id, func=func)

    # -- script interpretation ----------------------------------------------

    def _interp(self, steps: list, tid: int, rng: random.Random):
        for step in steps:
            if "repeat" in step:
                for _ in range(int(step["repeat"])):
                    yield from self._interp(step.get("steps", []), tid, rng)
            elif "enter" in step:
                self.func_stack.setdefault(tid, []).append(step["enter"])
                now = yield ("advance", 0)
                self._emit(now, tid, EventKind.OP_ENTER, func=step["enter"])
            elif "exit" in step:
                now = yield ("advance", 0)
                stack = self.func_stack.get(tid) or []
                func = stack[-1] if stack else None
                self._emit(now, tid, EventKind.OP_EXIT, func=func)
                if stack:
                    stack.pop()
            elif "acquire" in step:
                yield ("acquire", step["acquire"], int(step.get("amount", 1)), step.get("poll"))
            elif "release" in step:
                yield ("release", step["release"])
            elif "compute_ms" in step:
                yield ("advance", _draw_ns(rng, step["compute_ms"], NS_PER_MS))
            elif "compute_us" in step:
                yield ("advance", _draw_ns(rng, step["compute_us"], NS_PER_US))
            elif "sample" in step:
                now = yield ("advance", 0)
                spec = step["sample"]
                self._emit(
                    now, tid, EventKind.VAR_SAMPLE,
                    var=spec["var"], val=str(spec["value"]),
                )
            elif "loop" in step:
                spec = step["loop"]
                loop_id = spec["id"]
                func = spec.get("func")
                iters_spec = spec["iters"]
                if isinstance(iters_spec, (list, tuple)):
                    iters = rng.randint(int(iters_spec[0]), int(iters_spec[1]))
                else:
                    iters = int(iters_spec)
                iter_ns = int(spec.get("iter_us", 1) * NS_PER_US)
                now = yield ("advance", 0)
                self._emit(now, tid, EventKind.LOOP_ENTER, loop_id=loop_id, func=func)
                sample_var = spec.get("sample_var")
                for _ in range(iters):
                    now = yield ("advance", iter_ns)
                    self._emit(now, tid, EventKind.LOOP_ITER, loop_id=loop_id, func=func)
                now = yield ("advance", 0)
                self._emit(now, tid, EventKind.LOOP_EXIT, loop_id=loop_id, func=func)
                if sample_var:
                    bucket = spec.get("sample_bucket", 100)
                    self._emit(
                        now, tid, EventKind.VAR_SAMPLE,
                        var=sample_var, val=str((iters // bucket) * bucket),
                    )
            else:
                raise ScenarioError(f"unknown step: {sorted(step)}")

    # -- scheduling ----------------------------------------------------------

    def run(self) -> None:
        import gc
        import heapq

        # Retained events are immutable and acyclic; pausing the collector
        # while the buffer grows keeps recording overhead near zero.
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            self._run_loop()
        finally:
            if gc_was_enabled:
                gc.enable()

    def _run_loop(self) -> None:
        import heapq

        gens = {}
        for th in self.scenario.threads:
            rng = random.Random((self.scenario.seed * 1_000_003) ^ th.tid)
            gens[th.tid] = self._interp(th.steps, th.tid, rng)

        heap: list[tuple[int, int, int]] = []
        for th in self.scenario.threads:
            self._seq += 1
            heapq.heappush(heap, (0, self._seq, th.tid))
        blocked_on: dict[int, str] = {}

        def grant(res: str, waiter: _Waiter, now: int) -> None:
            self.in_use[res] += waiter.amount
            self.held[(waiter.tid, res)] = waiter.amount
            if waiter.poll:
                self._emit_poll_loop(waiter.tid, waiter.poll, waiter.wait_begin, now)
            self._emit(now, waiter.tid, EventKind.WAIT_END, resource=res)
            self._emit(now, waiter.tid, EventKind.ACQUIRE, resource=res, amount=waiter.amount)
            del blocked_on[waiter.tid]
            self._seq += 1
            heapq.heappush(heap, (now, self._seq, waiter.tid))

        started: set[int] = set()

        def step(tid: int, now: int) -> None:
            gen = gens[tid]
            try:
                if tid in started:
                    req = gen.send(now)
                else:
                    started.add(tid)
                    req = next(gen)
            except StopIteration:
                self.finish_ts[tid] = now
                return
            while True:
                op = req[0]
                if op == "advance":
                    dt = req[1]
                    if dt > 0:
                        self._seq += 1
                        heapq.heappush(heap, (now + dt, self._seq, tid))
                        return
                    # zero advance: hand the current time to the script
                elif op == "acquire":
                    _, res, amount, poll = req
                    if (tid, res) in self.held:
                        raise ScenarioError(
                            f"tid {tid} re-acquires {res} while holding it"
                        )
                    if self.in_use[res] + amount <= self.capacity[res] and not self.waiters[res]:
                        self.in_use[res] += amount
                        self.held[(tid, res)] = amount
                        self._emit(now, tid, EventKind.ACQUIRE, resource=res, amount=amount)
                    else:
                        self._emit(now, tid, EventKind.WAIT_BEGIN, resource=res)
                        self.waiters[res].append(_Waiter(tid, amount, now, poll))
                        blocked_on[tid] = res
                        return
                elif op == "release":
                    _, res = req
                    amount = self.held.pop((tid, res), None)
                    if amount is None:
                        raise ScenarioError(f"tid {tid} releases {res} without holding it")
                    self.in_use[res] -= amount
                    self._emit(now, tid, EventKind.RELEASE, resource=res, amount=amount)
                    queue = self.waiters[res]
                    while queue and self.in_use[res] + queue[0].amount <= self.capacity[res]:
                        grant(res, queue.popleft(), now)
                try:
                    req = gen.send(now)
                except StopIteration:
                    self.finish_ts[tid] = now
                    return

        while heap:
            now, _, tid = heapq.heappop(heap)
            step(tid, now)

        unfinished = {
            tid: blocked_on.get(tid, "<unknown>")
            for tid in gens
            if tid not in self.finish_ts
        }
        if unfinished:
            raise SimulationDeadlock(unfinished)


def run_scenario(
    scenario: Scenario, out_dir: Optional[str] = None, sink=None
) -> tuple["BufferSink | NullSink", Optional[GroundTruth]]:
    """Execute a scenario; write per-thread JSONL traces when out_dir is set.
    Returns the sink and the scenario's ground-truth label."""
    sim = Simulator(scenario, sink=sink)
    sim.run()
    if out_dir is not None and isinstance(sim.sink, BufferSink):
        sim.sink.write_dir(out_dir)
        if scenario.ground_truth:
            with open(os.path.join(out_dir, "ground_truth.json"), "wb") as fh:
                fh.write(canonical_json_bytes(scenario.ground_truth.to_dict()))
    return sim.sink, scenario.ground_truth
