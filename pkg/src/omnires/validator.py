"""Static validation of oracle-proposed resources against program facts.

A dispatcher routes each candidate by kind. Exclusive resources must have at
least one operator with a reachable yield primitive, and each operator's
touched variables must relate to the resource (assignment chain, same
aggregate, or oracle-marked). Shared-resource operators must either branch on
a resource variable into fast/slow arms or reach a whitelisted syscall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .facts import FunctionFact, ProgramFacts
from .oracle import OperatorCandidate, ResourceCandidate, Verdict
from .util import canonical_json_bytes, load_canonical_json

SHARED_CALL_DEPTH = 4


class ValidationTag(str, Enum):
    YIELD_SYNC = "YieldSync"
    DATA_FLOW_RELATED = "DataFlowRelated"
    DIVERGENT_PATH = "DivergentPath"
    SYSCALL_INTERACTION = "SyscallInteraction"


@dataclass
class ValidatedOperator:
    function: str
    op_class: str
    validation: frozenset[ValidationTag]

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "op_class": self.op_class,
            "validation": sorted(t.value for t in self.validation),
        }


@dataclass
class ValidatedResource:
    name: str
    kind: str  # "Exclusive" | "Shared"
    operators: list[ValidatedOperator] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "operators": [o.to_dict() for o in self.operators],
            "rejected": [[f, r] for f, r in self.rejected],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValidatedResource":
        return cls(
            name=d["name"],
            kind=d["kind"],
            operators=[
                ValidatedOperator(
                    function=o["function"],
                    op_class=o["op_class"],
                    validation=frozenset(ValidationTag(t) for t in o["validation"]),
                )
                for o in d.get("operators", [])
            ],
            rejected=[(f, r) for f, r in d.get("rejected", [])],
        )


# ---------------------------------------------------------------------------
# Relatedness helpers


def _assignment_components(facts: ProgramFacts) -> dict[str, int]:
    """Undirected connected components over all assignment edges; either
    direction counts as sharing an assignment relationship."""
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: str, b: str):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for fact in facts.functions.values():
        for lhs, rhs in fact.assignments:
            union(lhs, rhs)
    comp: dict[str, int] = {}
    ids: dict[str, int] = {}
    for var in parent:
        root = find(var)
        comp[var] = ids.setdefault(root, len(ids))
    return comp


def _resource_vars(cand: ResourceCandidate) -> set[str]:
    out = set(cand.related_vars)
    out.add(cand.name)
    out.add(cand.name.split("::")[-1])
    return out


def _aggregate_of(cand: ResourceCandidate) -> str:
    # "file.h::Type::member" → Type; "file.h::Type" → Type
    parts = cand.name.split("::")
    return parts[1] if len(parts) >= 2 else parts[-1]


def _related(
    cand: ResourceCandidate,
    fact: FunctionFact,
    components: dict[str, int],
) -> bool:
    res_vars = _resource_vars(cand)
    touched = fact.touched_vars()
    # (a) explicit oracle marking
    if touched & cand.related_vars:
        return True
    if touched & res_vars:
        return True
    # (b) same aggregate type
    if fact.member_of and fact.member_of == _aggregate_of(cand):
        return True
    # (c) assignment chain between any touched var and any resource var
    res_comps = {components[v] for v in res_vars if v in components}
    if res_comps and any(
        components.get(v) in res_comps for v in touched
    ):
        return True
    return False


# ---------------------------------------------------------------------------
# Exclusive pass


def validate_exclusive(
    cand: ResourceCandidate,
    ops: list[OperatorCandidate],
    facts: ProgramFacts,
) -> tuple[list[ValidatedOperator], list[tuple[str, str]]]:
    components = _assignment_components(facts)
    any_yield = any(facts.function_yields(op.function, depth=1) for op in ops)
    if not any_yield:
        # Without a yielding synchronization primitive the resource cannot
        # block threads at all: drop everything.
        return [], [(op.function, "NoYieldingSync") for op in ops]

    kept: list[ValidatedOperator] = []
    rejected: list[tuple[str, str]] = []
    for op in ops:
        fact = facts.functions.get(op.function)
        if fact is None:
            rejected.append((op.function, "UnknownFunction"))
            continue
        if not _related(cand, fact, components):
            rejected.append((op.function, "UnrelatedSyncVariable"))
            continue
        tags = {ValidationTag.DATA_FLOW_RELATED}
        if facts.function_yields(op.function, depth=1):
            tags.add(ValidationTag.YIELD_SYNC)
        kept.append(
            ValidatedOperator(op.function, op.op_class.value, frozenset(tags))
        )
    return kept, rejected


# ---------------------------------------------------------------------------
# Shared pass


def resource_tag(name: str) -> str:
    low = name.lower()
    if "queue" in low or "conc" in low:
        return "queue"
    if "cache" in low:
        return "cache"
    return "buffer"


def _whitelist_for(cand: ResourceCandidate, facts: ProgramFacts) -> frozenset[str]:
    tag = resource_tag(cand.name)
    wl = facts.syscall_whitelists.get(tag)
    if wl is None:  # unknown tag: union of everything configured
        wl = frozenset().union(*facts.syscall_whitelists.values()) if facts.syscall_whitelists else frozenset()
    return wl


def _reachable_functions(facts: ProgramFacts, start: str, depth: int) -> list[str]:
    seen = {start}
    frontier = [start]
    order = [start]
    for _ in range(depth):
        nxt = []
        for fname in frontier:
            fact = facts.functions.get(fname)
            if fact is None:
                continue
            callees = list(fact.calls)
            for br in fact.branches:
                callees.extend(br.then_calls)
                callees.extend(br.else_calls)
            for lp in fact.loops:
                callees.extend(lp.body_calls)
            for c in callees:
                if c not in seen:
                    seen.add(c)
                    nxt.append(c)
                    order.append(c)
        frontier = nxt
    return order


def _arm_is_slow(
    calls: tuple[str, ...], facts: ProgramFacts, whitelist: frozenset[str], depth: int
) -> bool:
    """An arm is slow if it reaches a whitelisted syscall or a loop."""
    for name in calls:
        if name in whitelist:  # direct call to a (possibly external) syscall
            return True
        for fname in _reachable_functions(facts, name, depth):
            fact = facts.functions.get(fname)
            if fact is None:
                continue
            if fact.syscalls & whitelist or fact.loops:
                return True
    return False


def validate_shared(
    cand: ResourceCandidate,
    ops: list[OperatorCandidate],
    facts: ProgramFacts,
    depth: int = SHARED_CALL_DEPTH,
) -> tuple[list[ValidatedOperator], list[tuple[str, str]]]:
    whitelist = _whitelist_for(cand, facts)
    res_vars = _resource_vars(cand)
    kept: list[ValidatedOperator] = []
    rejected: list[tuple[str, str]] = []

    for op in ops:
        if op.function not in facts.functions:
            rejected.append((op.function, "UnknownFunction"))
            continue
        tags: set[ValidationTag] = set()
        # Pattern 1: a branch on a resource variable with divergent
        # fast/slow arms, anywhere within `depth` call levels.
        for fname in _reachable_functions(facts, op.function, depth):
            fact = facts.functions.get(fname)
            if fact is None:
                continue
            for br in fact.branches:
                if not (br.cond_vars & res_vars):
                    continue
                then_slow = _arm_is_slow(br.then_calls, facts, whitelist, depth)
                else_slow = _arm_is_slow(br.else_calls, facts, whitelist, depth)
                if then_slow != else_slow:
                    tags.add(ValidationTag.DIVERGENT_PATH)
                    break
            if ValidationTag.DIVERGENT_PATH in tags:
                break
        # Pattern 2: the operator reaches a whitelisted syscall.
        for fname in _reachable_functions(facts, op.function, depth):
            fact = facts.functions.get(fname)
            if fact is not None and fact.syscalls & whitelist:
                tags.add(ValidationTag.SYSCALL_INTERACTION)
                break
        if tags:
            kept.append(
                ValidatedOperator(op.function, op.op_class.value, frozenset(tags))
            )
        else:
            rejected.append((op.function, "NoDivergentPathOrSyscall"))
    return kept, rejected


# ---------------------------------------------------------------------------
# Dispatcher


def dispatch_validate(
    candidates: list[ResourceCandidate],
    operators: list[OperatorCandidate],
    facts: ProgramFacts,
) -> list[ValidatedResource]:
    by_resource: dict[str, list[OperatorCandidate]] = {}
    for op in operators:
        by_resource.setdefault(op.resource, []).append(op)

    validated: list[ValidatedResource] = []
    for cand in sorted(candidates, key=lambda c: c.name):
        ops = sorted(by_resource.get(cand.name, []), key=lambda o: o.function)
        if cand.kind is Verdict.EXCLUSIVE:
            kept, rejected = validate_exclusive(cand, ops, facts)
        else:
            kept, rejected = validate_shared(cand, ops, facts)
        if not kept:
            continue  # a resource with zero surviving operators is dropped
        validated.append(
            ValidatedResource(
                name=cand.name,
                kind=cand.kind.value,
                operators=kept,
                rejected=rejected,
            )
        )
    return validated


def serialize_resources(resources: list[ValidatedResource]) -> bytes:
    return canonical_json_bytes({"v": 1, "resources": [r.to_dict() for r in resources]})


def parse_resources(data: bytes | str) -> list[ValidatedResource]:
    doc = load_canonical_json(data)
    return [ValidatedResource.from_dict(d) for d in doc.get("resources", [])]


# ---------------------------------------------------------------------------
# Static-only seed baseline, used to measure the hybrid coverage gain:
# keep only aggregate types that have a yield-bearing member function.


def static_seed_baseline(facts: ProgramFacts) -> set[str]:
    seeds: set[str] = set()
    for fact in facts.functions.values():
        if fact.member_of and (fact.yields or fact.syscalls & facts.yield_whitelist):
            seeds.add(fact.member_of)
    return seeds
