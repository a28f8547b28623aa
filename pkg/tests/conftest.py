"""Fixtures shared across the suite.

Two fixture families live here:
  * the undo-log corpus: one header modeling a multi-version storage engine's
    undo chain, with matching program facts and a scripted oracle transcript;
  * a larger labeled corpus (16 hand-labeled true resources among 32 oracle
    candidates) used to measure precision/recall of the hybrid pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import pytest

from omnires.facts import ProgramFacts, facts_from_dict
from omnires.metadata import MetadataCorpus, extract_metadata
from omnires.oracle import ScriptedOracle
from omnires.scenarios import BUILTIN_NAMES, builtin_pair
from omnires.sim import Scenario, Simulator
from omnires.trace import TraceProfile, build_profile

UNDO_HEADER = """\
/** UNDO log maintenance: multi-version record reconstruction and purge. */

/** One table's undo chain. */
struct undo_node {
  /** Clustered index this chain belongs to. The caller must hold a latch
   * on the index page while reading old record versions. */
  dict_index_t* index;
  /** Head of the undo record list. */
  undo_rec_t* head;
};

/** Build the previous version of a record: walks the undo list under the
 * index latch until the matching undo record is found. */
void build_prev_version(undo_node* node, undo_rec_t* undo_rec);

/** Purge one undo node; locks node->index while trimming history. */
void purge_node_exec(undo_node* node);

/** Apply a single undo record to roll back a row. */
void apply_undo_rec(undo_rec_t* rec);

int is_number(const char* s) { return s[0] >= '0' && s[0] <= '9'; }
"""

UNDO_RESOURCE = "undo_log.h::undo_node::index"

UNDO_FACTS_DOC = {
    "v": 1,
    "functions": {
        "build_prev_version": {
            "params": [["node", "undo_node"], ["undo_rec", "undo_rec_t"]],
            "calls": ["latch_acquire"],
            "assignments": [["latch", "index"]],
            "loops": [
                {
                    "loop_id": "scan_history",
                    "exit_cond_vars": ["undo_rec"],
                    "body_calls": ["apply_undo_rec"],
                }
            ],
        },
        "purge_node_exec": {
            "params": [["node", "undo_node"]],
            "calls": ["latch_acquire", "build_prev_version"],
            "assignments": [["latch", "index"]],
        },
        "apply_undo_rec": {
            "params": [["rec", "undo_rec_t"]],
            "assignments": [["row", "rec"]],
        },
        "update_row": {
            "params": [["node", "undo_node"]],
            "calls": ["latch_acquire"],
            "assignments": [["row", "page_no"]],
        },
        "latch_acquire": {
            "params": [["latch", "latch_t"]],
            "syscalls": ["futex_wait"],
            "yields": True,
        },
        "is_number": {
            "params": [["rec", "dict_index_t"]],
        },
    },
}

UNDO_TRANSCRIPT = {
    "FileScan": {"undo_log.h": "NeedDef"},
    "TypeScan": {
        UNDO_RESOURCE: {
            "verdict": "Exclusive",
            "related_vars": ["node", "index"],
            "rationale": "callers must hold the index-page latch",
        },
    },
    "OperatorScan": {
        f"{UNDO_RESOURCE}|build_prev_version": {
            "verdict": "IsOperator",
            "op_class": "Lock",
        },
        f"{UNDO_RESOURCE}|purge_node_exec": {
            "verdict": "IsOperator",
            "op_class": "Lock",
        },
        f"{UNDO_RESOURCE}|update_row": {
            "verdict": "IsOperator",
            "op_class": "Access",
        },
        f"{UNDO_RESOURCE}|is_number": {
            "WithDescriptions": "NeedSource",
            "SourceBody": {"verdict": "IsOperator", "op_class": "Access"},
        },
    },
}


@pytest.fixture(scope="session")
def undo_sources() -> list[tuple[str, str]]:
    return [("undo_log.h", UNDO_HEADER)]


@pytest.fixture(scope="session")
def undo_corpus(undo_sources) -> MetadataCorpus:
    return extract_metadata(undo_sources)


@pytest.fixture(scope="session")
def undo_facts() -> ProgramFacts:
    return facts_from_dict(UNDO_FACTS_DOC)


@pytest.fixture()
def undo_oracle() -> ScriptedOracle:
    return ScriptedOracle(UNDO_TRANSCRIPT)


# ---------------------------------------------------------------------------
# Labeled corpus: 32 oracle candidates, 16 hand-labeled true resources.


@dataclass
class LabeledFixture:
    sources: list[tuple[str, str]] = field(default_factory=list)
    transcript: dict = field(default_factory=lambda: {"FileScan": {}, "TypeScan": {}, "OperatorScan": {}})
    facts_doc: dict = field(default_factory=lambda: {"v": 1, "functions": {}})
    truth: set[str] = field(default_factory=set)

    def add(self, file: str, agg: str, fn: str, kind: str, op_class: str,
            fn_facts: dict, true_resource: bool, mark_operator: bool = True) -> str:
        qname = f"{file}::{agg}"
        self.sources.append((
            file,
            f"/** Module {agg}. */\n\n"
            f"/** Aggregate {agg}. */\n"
            f"struct {agg} {{\n"
            f"  /** State guarded by this object. */\n"
            f"  int state;\n"
            f"  /** Primary entry point. */\n"
            f"  void {fn}();\n"
            f"}};\n",
        ))
        self.transcript["FileScan"][file] = "NeedDef"
        self.transcript["TypeScan"][qname] = kind
        fn_qname = f"{qname}::{fn}"
        if mark_operator:
            self.transcript["OperatorScan"][f"{qname}|{fn_qname}"] = {
                "verdict": "IsOperator",
                "op_class": op_class,
            }
        self.facts_doc["functions"][fn_qname] = {"member_of": agg, **fn_facts}
        if true_resource:
            self.truth.add(qname)
        return qname


def _build_labeled() -> LabeledFixture:
    fx = LabeledFixture()
    # 10 true exclusive resources: futex-backed locks.
    for i in range(10):
        fx.add(f"lock{i}.h", f"Mutex{i}", "lock", "Exclusive", "Lock",
               {"syscalls": ["futex_wait"], "assignments": [["owner", "tid"]]},
               true_resource=True)
    # 6 true shared resources: buffers flushed through write(2). Buffer5's
    # operator lacks any syscall/branch evidence, so static validation loses
    # it — a deliberate recall gap in the hybrid set.
    for i in range(6):
        fn_facts = {"syscalls": ["write"]} if i != 5 else {}
        fx.add(f"buf{i}.h", f"Buffer{i}", "append", "Shared", "Produce",
               fn_facts, true_resource=True)
    # 8 false exclusive candidates: plain config holders, nothing yields.
    for i in range(8):
        fx.add(f"cfg{i}.h", f"Config{i}", "get", "Exclusive", "Access",
               {"assignments": [["out", "state"]]}, true_resource=False)
    # 7 false shared candidates: string formatters, no syscalls or branches.
    for i in range(7):
        fx.add(f"str{i}.h", f"Name{i}", "fmt", "Shared", "Access",
               {}, true_resource=False)
    # 1 false candidate the static rules cannot reject (looks exactly like a
    # lock but is labeled not-a-resource): keeps hybrid precision below 1.
    fx.add("ghost.h", "GhostLock", "lock", "Exclusive", "Lock",
           {"syscalls": ["futex_wait"], "assignments": [["owner", "tid"]]},
           true_resource=False)
    assert len(fx.transcript["TypeScan"]) == 32
    assert len(fx.truth) == 16
    return fx


@pytest.fixture(scope="session")
def labeled() -> LabeledFixture:
    return _build_labeled()


@pytest.fixture(scope="session")
def labeled_corpus(labeled) -> MetadataCorpus:
    return extract_metadata(labeled.sources)


@pytest.fixture(scope="session")
def labeled_facts(labeled) -> ProgramFacts:
    return facts_from_dict(labeled.facts_doc)


# ---------------------------------------------------------------------------
# Builtin scenario runs, shared session-wide (simulation is the slow part).


def run_events(scenario: Scenario):
    """Run a scenario in-process; returns (merged events, profile, finish_ts)."""
    sim = Simulator(scenario)
    sim.run()
    events = sorted(
        (ev for per in sim.sink.by_tid.values() for ev in per),
        key=lambda ev: (ev.ts, ev.tid),
    )
    return events, build_profile(events), dict(sim.finish_ts)


@dataclass
class ScenarioRun:
    scenario: Scenario
    events: list
    profile: TraceProfile
    finish_ts: dict[int, int]


@pytest.fixture(scope="session")
def builtin_runs() -> dict[tuple[str, str], ScenarioRun]:
    runs = {}
    for name in BUILTIN_NAMES:
        for sc in builtin_pair(name, seed=7):
            events, profile, finish = run_events(sc)
            runs[(name, sc.variant)] = ScenarioRun(sc, events, profile, finish)
    return runs
