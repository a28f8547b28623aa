"""Language-neutral program facts consumed by the static validation passes.

Facts are produced offline (a reference extractor for the test fixtures lives
in the test suite) and loaded from a portable JSON document.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .util import ParseError, canonical_json_bytes, load_canonical_json

# Syscalls that make a thread yield the CPU while waiting.
DEFAULT_YIELD_WHITELIST = frozenset(
    {
        "futex_wait",
        "nanosleep",
        "usleep",
        "sched_yield",
        "epoll_wait",
        "select",
        "poll",
        "cond_wait",
    }
)

# Per resource-tag syscall whitelists for the shared-resource pass.
DEFAULT_SYSCALL_WHITELISTS: dict[str, frozenset[str]] = {
    "buffer": frozenset({"write", "fsync", "pwrite"}),
    "queue": frozenset({"futex_wait", "cond_wait"}),
    "cache": frozenset({"read", "pread", "write"}),
}


@dataclass
class Branch:
    cond_vars: frozenset[str]
    then_calls: tuple[str, ...] = ()
    else_calls: tuple[str, ...] = ()


@dataclass
class Loop:
    loop_id: str
    exit_cond_vars: frozenset[str] = frozenset()
    body_calls: tuple[str, ...] = ()


@dataclass
class FunctionFact:
    name: str
    params: list[tuple[str, str]] = field(default_factory=list)  # (name, type)
    member_of: Optional[str] = None
    calls: list[str] = field(default_factory=list)
    assignments: list[tuple[str, str]] = field(default_factory=list)  # (lhs, rhs)
    branches: list[Branch] = field(default_factory=list)
    loops: list[Loop] = field(default_factory=list)
    syscalls: frozenset[str] = frozenset()
    yields: bool = False

    def touched_vars(self) -> set[str]:
        """Variables the function manipulates, as seen by data-flow checks."""
        out: set[str] = set()
        for lhs, rhs in self.assignments:
            out.add(lhs)
            out.add(rhs)
        for br in self.branches:
            out.update(br.cond_vars)
        for lp in self.loops:
            out.update(lp.exit_cond_vars)
        out.update(name for name, _ in self.params)
        return out


class FactsError(ValueError):
    pass


@dataclass
class ProgramFacts:
    functions: dict[str, FunctionFact] = field(default_factory=dict)
    syscall_whitelists: dict[str, frozenset[str]] = field(
        default_factory=lambda: dict(DEFAULT_SYSCALL_WHITELISTS)
    )
    yield_whitelist: frozenset[str] = DEFAULT_YIELD_WHITELIST
    external_calls: frozenset[str] = frozenset()

    def resolve(self) -> None:
        """Flag callees that do not resolve to a declared function as external
        and reject duplicate loop ids within a function."""
        external: set[str] = set()
        offenders: list[str] = []
        for fact in self.functions.values():
            seen_loops: set[str] = set()
            for lp in fact.loops:
                if lp.loop_id in seen_loops:
                    offenders.append(f"{fact.name}:{lp.loop_id}")
                seen_loops.add(lp.loop_id)
            callees = list(fact.calls)
            for br in fact.branches:
                callees.extend(br.then_calls)
                callees.extend(br.else_calls)
            for lp in fact.loops:
                callees.extend(lp.body_calls)
            for callee in callees:
                if callee not in self.functions:
                    external.add(callee)
        if offenders:
            raise FactsError(f"duplicate loop ids: {', '.join(sorted(offenders))}")
        self.external_calls = frozenset(external)

    def function_yields(self, name: str, depth: int = 1) -> bool:
        """True if `name` contains a yield primitive, directly or via callees
        up to `depth` call levels down."""
        fact = self.functions.get(name)
        if fact is None:
            return False
        if fact.yields or fact.syscalls & self.yield_whitelist:
            return True
        if depth <= 0:
            return False
        return any(self.function_yields(c, depth - 1) for c in fact.calls)

    def callers_within(self, names: set[str], depth: int) -> set[str]:
        """`names` plus every function that (transitively, within `depth`
        levels) calls one of them."""
        reverse: dict[str, set[str]] = {}
        for fname, fact in self.functions.items():
            callees = set(fact.calls)
            for br in fact.branches:
                callees.update(br.then_calls)
                callees.update(br.else_calls)
            for lp in fact.loops:
                callees.update(lp.body_calls)
            for callee in callees:
                reverse.setdefault(callee, set()).add(fname)
        result = set(names)
        frontier = set(names)
        for _ in range(depth):
            frontier = {
                caller
                for callee in frontier
                for caller in reverse.get(callee, ())
            } - result
            if not frontier:
                break
            result |= frontier
        return result

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "functions": {
                name: {
                    "params": [[n, t] for n, t in f.params],
                    "member_of": f.member_of,
                    "calls": list(f.calls),
                    "assignments": [[a, b] for a, b in f.assignments],
                    "branches": [
                        {
                            "cond_vars": sorted(br.cond_vars),
                            "then_calls": list(br.then_calls),
                            "else_calls": list(br.else_calls),
                        }
                        for br in f.branches
                    ],
                    "loops": [
                        {
                            "loop_id": lp.loop_id,
                            "exit_cond_vars": sorted(lp.exit_cond_vars),
                            "body_calls": list(lp.body_calls),
                        }
                        for lp in f.loops
                    ],
                    "syscalls": sorted(f.syscalls),
                    "yields": f.yields,
                }
                for name, f in self.functions.items()
            },
            "syscall_whitelists": {
                tag: sorted(s) for tag, s in self.syscall_whitelists.items()
            },
            "yield_whitelist": sorted(self.yield_whitelist),
        }


def facts_from_dict(doc: dict) -> ProgramFacts:
    if not isinstance(doc, dict):
        raise ParseError("facts document must be an object")
    functions: dict[str, FunctionFact] = {}
    for name, f in doc.get("functions", {}).items():
        functions[name] = FunctionFact(
            name=name,
            params=[(p[0], p[1]) for p in f.get("params", [])],
            member_of=f.get("member_of"),
            calls=list(f.get("calls", [])),
            assignments=[(a[0], a[1]) for a in f.get("assignments", [])],
            branches=[
                Branch(
                    cond_vars=frozenset(br.get("cond_vars", [])),
                    then_calls=tuple(br.get("then_calls", [])),
                    else_calls=tuple(br.get("else_calls", [])),
                )
                for br in f.get("branches", [])
            ],
            loops=[
                Loop(
                    loop_id=lp["loop_id"],
                    exit_cond_vars=frozenset(lp.get("exit_cond_vars", [])),
                    body_calls=tuple(lp.get("body_calls", [])),
                )
                for lp in f.get("loops", [])
            ],
            syscalls=frozenset(f.get("syscalls", [])),
            yields=bool(f.get("yields", False)),
        )
    whitelists = {
        tag: frozenset(v)
        for tag, v in doc.get(
            "syscall_whitelists",
            {t: sorted(s) for t, s in DEFAULT_SYSCALL_WHITELISTS.items()},
        ).items()
    }
    yield_wl = frozenset(doc.get("yield_whitelist", sorted(DEFAULT_YIELD_WHITELIST)))
    facts = ProgramFacts(
        functions=functions,
        syscall_whitelists=whitelists,
        yield_whitelist=yield_wl,
    )
    facts.resolve()
    return facts


def load_facts(data: bytes | str) -> ProgramFacts:
    return facts_from_dict(load_canonical_json(data))


def serialize_facts(facts: ProgramFacts) -> bytes:
    return canonical_json_bytes(facts.to_dict())
