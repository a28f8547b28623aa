"""Builtin contention scenarios with ground-truth labels, plus a randomized
injected-bottleneck generator for stress-testing the locator.

Three patterns ship out of the box, each in Buggy and Normal variants:
  undo_purge       — a purge thread holds an exclusive log index for tens of
                     milliseconds per round, starving a client.
  convoy_queue     — an admission queue with a small concurrency limit piles
                     up requests behind long-running queries.
  lingering_buffer — a nearly full send buffer blocks connection close.
"""

from __future__ import annotations

import random

from .sim import GroundTruth, ResourceSpec, Scenario, ThreadSpec
from .validator import ValidatedOperator, ValidatedResource, ValidationTag

BUILTIN_NAMES = ("undo_purge", "convoy_queue", "lingering_buffer")


def _undo_purge(seed: int, variant: str) -> Scenario:
    buggy = variant == "Buggy"
    undo = "undo_log::index"
    mutex = "trx_sys_mutex"
    purge_steps = [
        {
            "repeat": 30,
            "steps": [
                {"enter": "build_prev_version"},
                {"acquire": mutex},
                {"compute_us": 50},
                {"release": mutex},
                {"acquire": undo},
                {
                    "loop": {
                        "id": "scan_history",
                        "func": "build_prev_version",
                        # hold = iters * 100us: 30-100 ms when history is long
                        "iters": [300, 1000] if buggy else [4, 6],
                        "iter_us": 100,
                        "sample_var": "undo_rec",
                        "sample_bucket": 100,
                    }
                },
                {"release": undo},
                {"exit": True},
                # gap ≈ mean hold: the purge thread occupies the index about
                # half the time, which is what doubles the client's runtime
                {"compute_ms": 65},
            ],
        }
    ]
    client_steps = [
        {
            "repeat": 1000,
            "steps": [
                {"enter": "update_row"},
                {"acquire": mutex},
                {"compute_us": 20},
                {"release": mutex},
                {"acquire": undo},
                {"compute_us": 500},
                {"release": undo},
                {"exit": True},
                {"sample": {"var": "page_no", "value": 42}},
                {"compute_us": 500},
            ],
        }
    ]
    return Scenario(
        name="undo_purge",
        seed=seed,
        variant=variant,
        resources=[
            ResourceSpec(undo, "Exclusive"),
            ResourceSpec(mutex, "Exclusive"),
        ],
        threads=[
            ThreadSpec(tid=1, role="Purge", steps=purge_steps),
            ThreadSpec(tid=2, role="Client", steps=client_steps),
        ],
        ground_truth=GroundTruth(
            bottleneck=undo,
            holder_tid=1,
            function="build_prev_version",
            variable="undo_rec",
        ),
    )


def _convoy_queue(seed: int, variant: str) -> Scenario:
    buggy = variant == "Buggy"
    queue = "conc_queue"
    mutex = "stats_mutex"
    capacity = 4 if buggy else 40
    poll = {"id": "admission_retry", "func": "conc_enter", "poll_us": 500}

    def client(tid: int, requests: int, service_ms) -> ThreadSpec:
        return ThreadSpec(
            tid=tid,
            role="Client",
            steps=[
                {
                    "repeat": requests,
                    "steps": [
                        {"enter": "conc_enter"},
                        {"sample": {"var": "srv_concurrency_limit", "value": capacity}},
                        {"acquire": queue, "amount": 1, "poll": poll},
                        {"compute_ms": service_ms},
                        {"release": queue},
                        {"exit": True},
                        {"acquire": mutex},
                        {"compute_us": 20},
                        {"release": mutex},
                        {"compute_us": 200},
                    ],
                }
            ],
        )

    threads = [client(1, 10, 50)]  # the long-running queries behind the convoy
    threads += [client(tid, 20, 2) for tid in range(2, 33)]
    return Scenario(
        name="convoy_queue",
        seed=seed,
        variant=variant,
        resources=[
            ResourceSpec(queue, "Shared", capacity=capacity),
            ResourceSpec(mutex, "Exclusive"),
        ],
        threads=threads,
        ground_truth=GroundTruth(
            bottleneck=queue,
            holder_tid=1,
            function="conc_enter",
            variable="srv_concurrency_limit",
        ),
    )


def _lingering_buffer(seed: int, variant: str) -> Scenario:
    buggy = variant == "Buggy"
    buf = "tcp_send_buffer"
    mutex = "accept_mutex"
    writer_amount = 60 if buggy else 8
    conn_state = "WRITE_WAIT" if buggy else "IDLE"
    writer = ThreadSpec(
        tid=1,
        role="Background",
        steps=[
            {
                "repeat": 40,
                "steps": [
                    {"enter": "write_response"},
                    {"acquire": buf, "amount": writer_amount},
                    {"compute_ms": 20 if buggy else 2},
                    {"release": buf},
                    {"exit": True},
                    {"acquire": mutex},
                    {"compute_us": 30},
                    {"release": mutex},
                    {"compute_us": 100},
                ],
            }
        ],
    )
    listener = ThreadSpec(
        tid=2,
        role="Client",
        steps=[
            {
                "repeat": 30,
                "steps": [
                    {"enter": "lingering_close"},
                    {"sample": {"var": "conn_state", "value": conn_state}},
                    {
                        "acquire": buf,
                        "amount": 8,
                        "poll": {"id": "drain_wait", "func": "lingering_close", "poll_us": 500},
                    },
                    {"compute_ms": 1},
                    {"release": buf},
                    {"exit": True},
                    {"acquire": mutex},
                    {"compute_us": 30},
                    {"release": mutex},
                    {"compute_ms": 1},
                ],
            }
        ],
    )
    return Scenario(
        name="lingering_buffer",
        seed=seed,
        variant=variant,
        resources=[
            ResourceSpec(buf, "Shared", capacity=64),
            ResourceSpec(mutex, "Exclusive"),
        ],
        threads=[writer, listener],
        ground_truth=GroundTruth(
            bottleneck=buf,
            holder_tid=1,
            function="lingering_close",
            variable="conn_state",
        ),
    )


_BUILDERS = {
    "undo_purge": _undo_purge,
    "convoy_queue": _convoy_queue,
    "lingering_buffer": _lingering_buffer,
}


def builtin_pair(name: str, seed: int = 7) -> tuple[Scenario, Scenario]:
    """(buggy, normal) variants of a builtin scenario."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; builtins: {', '.join(BUILTIN_NAMES)}") from None
    return builder(seed, "Buggy"), builder(seed, "Normal")


def builtin_scenarios(seed: int = 7) -> list[Scenario]:
    out = []
    for name in BUILTIN_NAMES:
        out.extend(builtin_pair(name, seed))
    return out


def declared_resources(scenario: Scenario) -> list[ValidatedResource]:
    """Minimal validated-resource declarations for a scenario's resources,
    good enough to drive the locator in tests and demos."""
    fn = scenario.ground_truth.function if scenario.ground_truth else "operator"
    return [
        ValidatedResource(
            name=r.name,
            kind=r.kind,
            operators=[
                ValidatedOperator(
                    function=fn,
                    op_class="Lock",
                    validation=frozenset({ValidationTag.YIELD_SYNC}),
                )
            ],
        )
        for r in scenario.resources
    ]


# ---------------------------------------------------------------------------
# Randomized injected-bottleneck scenarios


def random_scenario(seed: int) -> Scenario:
    """A seeded random scenario with one injected exclusive bottleneck and up
    to two decoy resources with mild traffic."""
    rng = random.Random(seed)
    n_resources = rng.randint(1, 3)
    resources = [ResourceSpec(f"res_{i}", "Exclusive") for i in range(n_resources)]
    bottleneck = rng.randrange(n_resources)
    n_threads = rng.randint(2, 5)
    holder_tid = 1

    threads = []
    hold_ms = rng.uniform(5.0, 20.0)
    threads.append(
        ThreadSpec(
            tid=holder_tid,
            role="Background",
            steps=[
                {
                    "repeat": rng.randint(6, 12),
                    "steps": [
                        {"enter": f"hold_{bottleneck}"},
                        {"acquire": f"res_{bottleneck}"},
                        {"compute_ms": [hold_ms, hold_ms * 2]},
                        {"release": f"res_{bottleneck}"},
                        {"exit": True},
                        {"compute_ms": 1},
                    ],
                }
            ],
        )
    )
    for tid in range(2, n_threads + 1):
        steps = [
            {"enter": f"use_{bottleneck}"},
            {"acquire": f"res_{bottleneck}"},
            {"compute_us": [50, 200]},
            {"release": f"res_{bottleneck}"},
            {"exit": True},
            {"compute_us": [100, 400]},
        ]
        # Decoy traffic: short uncontended-ish touches on the other resources.
        for i in range(n_resources):
            if i != bottleneck:
                steps += [
                    {"acquire": f"res_{i}"},
                    {"compute_us": [10, 50]},
                    {"release": f"res_{i}"},
                    {"compute_us": [200, 500]},
                ]
        threads.append(
            ThreadSpec(
                tid=tid,
                role="Client",
                steps=[{"repeat": rng.randint(20, 60), "steps": steps}],
            )
        )
    return Scenario(
        name=f"random_{seed}",
        seed=seed,
        variant="Buggy",
        resources=resources,
        threads=threads,
        ground_truth=GroundTruth(
            bottleneck=f"res_{bottleneck}",
            holder_tid=holder_tid,
            function=f"hold_{bottleneck}",
            variable="n/a",
        ),
    )
