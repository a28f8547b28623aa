"""Two-stage semantic pipeline: resource identification, then operator
discovery, against a pluggable oracle.

The oracle is either a deterministic scripted transcript (tests, replay) or a
live chat-completions HTTP endpoint. The pipeline walks the metadata tree in
stages (files, then types/variables, then operator shortlists), escalating
detail only when the oracle answers NEED_DEF / NEED_SOURCE.
"""

from __future__ import annotations

import importlib.resources
import json
import logging
import os
import string
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol

from .facts import ProgramFacts
from .metadata import DetailLevel, MetadataCorpus, NodeKind, render_batch
from .util import ParseError, canonical_json_bytes, load_canonical_json

log = logging.getLogger(__name__)

MAX_ESCALATIONS = 2


class Stage(str, Enum):
    FILE_SCAN = "FileScan"
    TYPE_SCAN = "TypeScan"
    OPERATOR_SCAN = "OperatorScan"


class Verdict(str, Enum):
    EXCLUSIVE = "Exclusive"
    SHARED = "Shared"
    NOT_RESOURCE = "NotResource"
    NEED_DEF = "NeedDef"
    IS_OPERATOR = "IsOperator"
    NOT_OPERATOR = "NotOperator"
    NEED_SOURCE = "NeedSource"


class OpClass(str, Enum):
    LOCK = "Lock"
    UNLOCK = "Unlock"
    WAIT = "Wait"
    ACCESS = "Access"
    PRODUCE = "Produce"
    CONSUME = "Consume"


_ESCALATE = {Verdict.NEED_DEF, Verdict.NEED_SOURCE}


@dataclass
class QueryItem:
    qualified_name: str
    rendered: str


@dataclass
class OracleQuery:
    stage: Stage
    detail: DetailLevel
    prompt_text: str
    items: list[QueryItem]


@dataclass
class VerdictLine:
    index: int
    verdict: Verdict
    rationale: str = ""
    kind_extra: dict = field(default_factory=dict)  # op_class, related_vars


@dataclass
class OracleReply:
    verdicts: list[VerdictLine]


class Oracle(Protocol):
    def answer(self, query: OracleQuery) -> OracleReply: ...


class OracleError(RuntimeError):
    pass


@dataclass
class ResourceCandidate:
    name: str
    kind: Verdict  # EXCLUSIVE or SHARED
    evidence: list[tuple[str, str]] = field(default_factory=list)
    related_vars: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "evidence": [[p, r] for p, r in self.evidence],
            "related_vars": sorted(self.related_vars),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceCandidate":
        return cls(
            name=d["name"],
            kind=Verdict(d["kind"]),
            evidence=[(p, r) for p, r in d.get("evidence", [])],
            related_vars=frozenset(d.get("related_vars", [])),
        )


@dataclass
class OperatorCandidate:
    resource: str
    function: str
    op_class: OpClass
    source_requested: bool = False

    def to_dict(self) -> dict:
        return {
            "resource": self.resource,
            "function": self.function,
            "op_class": self.op_class.value,
            "source_requested": self.source_requested,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorCandidate":
        return cls(
            resource=d["resource"],
            function=d["function"],
            op_class=OpClass(d["op_class"]),
            source_requested=bool(d.get("source_requested", False)),
        )


# ---------------------------------------------------------------------------
# Prompt templates

_PROMPT_FILES = {
    Stage.FILE_SCAN: "file_scan.txt",
    Stage.TYPE_SCAN: "type_scan.txt",
    Stage.OPERATOR_SCAN: "operator_scan.txt",
}


def load_prompt(stage: Stage, overrides_dir: Optional[str] = None) -> str:
    name = _PROMPT_FILES[stage]
    if overrides_dir:
        path = os.path.join(overrides_dir, name)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return fh.read()
    return (
        importlib.resources.files("omnires").joinpath("prompts", name).read_text("utf-8")
    )


def build_prompt(stage: Stage, items: list[QueryItem], overrides_dir=None) -> str:
    template = string.Template(load_prompt(stage, overrides_dir))
    listing = "\n".join(
        f"[{i}] {item.qualified_name}\n{item.rendered}" for i, item in enumerate(items)
    )
    return template.safe_substitute(ITEMS=listing, INDEX="${INDEX}")


# ---------------------------------------------------------------------------
# Reply parsing: replies must match the `<index>:<VERDICT>` line grammar.
# Anything else is rationale text and never drives control flow.


def parse_reply_text(text: str, n_items: int) -> OracleReply:
    verdicts: list[VerdictLine] = []
    seen: set[int] = set()
    for raw in text.splitlines():
        line = raw.strip()
        if ":" not in line:
            continue
        idx_part, _, rest = line.partition(":")
        if not idx_part.strip().isdigit():
            continue
        idx = int(idx_part.strip())
        word, _, rationale = rest.strip().partition(" ")
        word_norm = word.strip().upper().replace("_", "")
        match = None
        for v in Verdict:
            if v.value.upper() == word_norm or v.name.replace("_", "") == word_norm:
                match = v
                break
        if match is None:
            continue
        if idx >= n_items or idx < 0:
            raise OracleError(f"verdict index {idx} outside the query batch")
        if idx in seen:
            continue
        seen.add(idx)
        verdicts.append(VerdictLine(index=idx, verdict=match, rationale=rationale))
    if not verdicts:
        raise OracleError("reply contained no parsable verdict lines")
    return OracleReply(verdicts=verdicts)


# ---------------------------------------------------------------------------
# Scripted oracle


class ScriptedOracle:
    """Replays verdicts from a transcript: a JSON mapping of stage name →
    {qualified name → entry}. An entry is either a verdict string or an
    object {"verdict": ..., "op_class": ..., "related_vars": [...]}, and may
    be keyed per detail level ({"NamesOnly": "NeedDef", ...}) to script
    escalation. Unknown items answer NotResource / NotOperator.
    """

    _DETAIL_KEYS = {d.name: d for d in DetailLevel} | {
        "NamesOnly": DetailLevel.NAMES_ONLY,
        "WithDescriptions": DetailLevel.WITH_DESCRIPTIONS,
        "WithMembers": DetailLevel.WITH_MEMBERS,
        "SourceBody": DetailLevel.SOURCE_BODY,
    }

    def __init__(self, transcript: dict):
        if not isinstance(transcript, dict):
            raise ParseError("transcript must be a JSON object")
        self.transcript = transcript
        for stage_name in transcript:
            try:
                Stage(stage_name)
            except ValueError:
                raise ParseError(f"unknown transcript stage: {stage_name}") from None

    @classmethod
    def from_file(cls, path: str) -> "ScriptedOracle":
        with open(path, "rb") as fh:
            return cls(load_canonical_json(fh.read()))

    def _entry_for(self, stage: Stage, qname: str, detail: DetailLevel):
        entry = self.transcript.get(stage.value, {}).get(qname)
        if isinstance(entry, dict) and set(entry) & set(self._DETAIL_KEYS):
            best = None
            for key, sub in entry.items():
                lvl = self._DETAIL_KEYS.get(key)
                if lvl is not None and lvl <= detail:
                    if best is None or lvl > best[0]:
                        best = (lvl, sub)
            entry = best[1] if best else None
        return entry

    def answer(self, query: OracleQuery) -> OracleReply:
        default = (
            Verdict.NOT_OPERATOR
            if query.stage is Stage.OPERATOR_SCAN
            else Verdict.NOT_RESOURCE
        )
        verdicts = []
        for i, item in enumerate(query.items):
            entry = self._entry_for(query.stage, item.qualified_name, query.detail)
            if entry is None:
                verdicts.append(VerdictLine(i, default))
                continue
            if isinstance(entry, str):
                verdicts.append(VerdictLine(i, Verdict(entry)))
                continue
            if not isinstance(entry, dict):
                raise ParseError(f"malformed transcript entry for {item.qualified_name}")
            extra = {}
            if "op_class" in entry:
                extra["op_class"] = entry["op_class"]
            if "related_vars" in entry:
                extra["related_vars"] = list(entry["related_vars"])
            verdicts.append(
                VerdictLine(
                    i,
                    Verdict(entry["verdict"]),
                    rationale=entry.get("rationale", ""),
                    kind_extra=extra,
                )
            )
        return OracleReply(verdicts=verdicts)


# ---------------------------------------------------------------------------
# Live HTTP oracle (chat-completions style endpoint, temperature pinned to 0)


class HttpOracle:
    def __init__(
        self,
        endpoint: Optional[str] = None,
        api_key: Optional[str] = None,
        model: str = "default",
        post: Optional[Callable] = None,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
    ):
        self.endpoint = endpoint or os.environ.get("OMNIRES_LLM_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("OMNIRES_LLM_KEY", "")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        if post is None:
            import requests

            def post(url, **kw):
                return requests.post(url, timeout=120, **kw)

        self._post = post
        if not self.endpoint:
            raise OracleError("no LLM endpoint configured (OMNIRES_LLM_ENDPOINT)")

    def _call(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._post(self.endpoint, json=payload, headers=headers)
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except Exception as exc:  # transport or shape failure: retry
                last_exc = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff_s * (2**attempt))
        raise OracleError(f"oracle transport failed after {self.max_attempts} attempts: {last_exc}")

    def answer(self, query: OracleQuery) -> OracleReply:
        text = self._call(query.prompt_text)
        try:
            return parse_reply_text(text, len(query.items))
        except OracleError:
            # Malformed reply: re-send the batch once, then give up.
            text = self._call(query.prompt_text)
            return parse_reply_text(text, len(query.items))


# ---------------------------------------------------------------------------
# Stage 1: resource identification


_DETAIL_LADDER = [
    DetailLevel.NAMES_ONLY,
    DetailLevel.WITH_DESCRIPTIONS,
    DetailLevel.WITH_MEMBERS,
    DetailLevel.SOURCE_BODY,
]


def _query_once(
    oracle: Oracle,
    stage: Stage,
    detail: DetailLevel,
    items: list[QueryItem],
    transcript_log: Optional[list] = None,
    overrides_dir: Optional[str] = None,
) -> list[VerdictLine]:
    prompt = build_prompt(stage, items, overrides_dir)
    query = OracleQuery(stage=stage, detail=detail, prompt_text=prompt, items=items)
    reply = oracle.answer(query)
    for v in reply.verdicts:
        if v.index >= len(items):
            raise OracleError(f"verdict index {v.index} outside the query batch")
    if transcript_log is not None:
        transcript_log.append(
            {
                "stage": stage.value,
                "detail": detail.name,
                "items": [it.qualified_name for it in items],
                "verdicts": [[v.index, v.verdict.value] for v in reply.verdicts],
            }
        )
    by_index = {v.index: v for v in reply.verdicts}
    default = (
        Verdict.NOT_OPERATOR if stage is Stage.OPERATOR_SCAN else Verdict.NOT_RESOURCE
    )
    return [by_index.get(i, VerdictLine(i, default)) for i in range(len(items))]


def _ask_with_escalation(
    oracle: Oracle,
    stage: Stage,
    corpus: MetadataCorpus,
    qnames: list[str],
    start_detail: DetailLevel,
    transcript_log=None,
    overrides_dir=None,
) -> dict[str, VerdictLine]:
    """Query the given items, escalating detail (monotonically) for items the
    oracle answers NEED_DEF / NEED_SOURCE, up to MAX_ESCALATIONS times. At the
    ladder's end an undecided item is forced to the stage's negative verdict.
    """
    results: dict[str, VerdictLine] = {}
    pending = list(qnames)
    detail = start_detail
    for round_no in range(1 + MAX_ESCALATIONS):
        if not pending:
            break
        items = [
            QueryItem(q, render_batch(corpus, [q], detail)) for q in pending
        ]
        verdicts = _query_once(oracle, stage, detail, items, transcript_log, overrides_dir)
        still: list[str] = []
        for item, v in zip(items, verdicts):
            if v.verdict in _ESCALATE and round_no < MAX_ESCALATIONS:
                still.append(item.qualified_name)
            elif v.verdict in _ESCALATE:
                # Detail ladder exhausted: force a final negative verdict.
                final = (
                    Verdict.NOT_OPERATOR
                    if stage is Stage.OPERATOR_SCAN
                    else Verdict.NOT_RESOURCE
                )
                results[item.qualified_name] = VerdictLine(v.index, final, "undecided")
            else:
                results[item.qualified_name] = v
                results[item.qualified_name].kind_extra["detail"] = int(detail)
        pending = still
        if detail < DetailLevel.SOURCE_BODY:
            detail = _DETAIL_LADDER[_DETAIL_LADDER.index(detail) + 1]
    return results


def identify_resources(
    corpus: MetadataCorpus,
    oracle: Oracle,
    transcript_log: Optional[list] = None,
    overrides_dir: Optional[str] = None,
) -> list[ResourceCandidate]:
    """Staged walk: files first at NamesOnly; files judged relevant descend to
    their aggregate types and file-level variables. Output is deduplicated by
    qualified name; kind conflicts resolve to the deepest-detail verdict
    (ties prefer Exclusive, downstream validation is stricter for it)."""
    file_qnames = [root.name for root in corpus.roots]
    candidates: dict[str, ResourceCandidate] = {}
    depth_seen: dict[str, int] = {}

    if not file_qnames:
        return []

    # FileScan never escalates in place: a NEED_DEF on a file means "descend
    # to its types", which is itself the higher-detail follow-up.
    file_items = [
        QueryItem(q, render_batch(corpus, [q], DetailLevel.NAMES_ONLY))
        for q in file_qnames
    ]
    file_verdicts = dict(
        zip(
            file_qnames,
            _query_once(
                oracle,
                Stage.FILE_SCAN,
                DetailLevel.NAMES_ONLY,
                file_items,
                transcript_log,
                overrides_dir,
            ),
        )
    )

    def record(qname: str, v: VerdictLine):
        detail = v.kind_extra.get("detail", 0)
        related = frozenset(v.kind_extra.get("related_vars", []))
        if qname in candidates:
            prev_depth = depth_seen[qname]
            prev = candidates[qname]
            if detail > prev_depth or (
                detail == prev_depth and v.verdict is Verdict.EXCLUSIVE
            ):
                prev.kind = v.verdict
                depth_seen[qname] = detail
            prev.evidence.append((qname, v.rationale or v.verdict.value))
            prev.related_vars |= related
        else:
            candidates[qname] = ResourceCandidate(
                name=qname,
                kind=v.verdict,
                evidence=[(qname, v.rationale or v.verdict.value)],
                related_vars=related,
            )
            depth_seen[qname] = detail

    for root in corpus.roots:
        fv = file_verdicts[root.name]
        if fv.verdict is Verdict.NOT_RESOURCE:
            continue  # stage soundness: no TypeScan for files judged irrelevant
        if fv.verdict in (Verdict.EXCLUSIVE, Verdict.SHARED):
            record(root.name, fv)
        members = []
        for child in root.children:
            if child.kind in (NodeKind.AGGREGATE, NodeKind.VARIABLE):
                members.append(f"{root.name}::{child.name}")
            if child.kind is NodeKind.AGGREGATE:
                members.extend(
                    f"{root.name}::{child.name}::{gc.name}"
                    for gc in child.children
                    if gc.kind is NodeKind.VARIABLE
                )
        if not members:
            continue
        type_verdicts = _ask_with_escalation(
            oracle,
            Stage.TYPE_SCAN,
            corpus,
            members,
            DetailLevel.WITH_DESCRIPTIONS,
            transcript_log,
            overrides_dir,
        )
        for qname, v in type_verdicts.items():
            if v.verdict in (Verdict.EXCLUSIVE, Verdict.SHARED):
                record(qname, v)

    out = sorted(candidates.values(), key=lambda c: c.name)
    return out


# ---------------------------------------------------------------------------
# Stage 2: operator-function identification


def operator_shortlist(
    corpus: MetadataCorpus, facts: ProgramFacts, candidate: ResourceCandidate
) -> list[str]:
    """Member functions of the candidate's aggregate type, plus functions
    taking the resource (by type or related variable) as a parameter."""
    shortlist: set[str] = set()
    if candidate.name in corpus:
        node = corpus.node(candidate.name)
        if node.kind is NodeKind.AGGREGATE:
            for child in node.children:
                if child.kind is NodeKind.FUNCTION:
                    shortlist.add(f"{candidate.name}::{child.name}")
    base = candidate.name.split("::")[-1]
    type_names = {base}
    if candidate.name in corpus:
        node = corpus.node(candidate.name)
        if node.kind is NodeKind.VARIABLE and node.attrs.get("type"):
            type_names.add(node.attrs["type"])
    for fname, fact in facts.functions.items():
        for pname, ptype in fact.params:
            if ptype in type_names or pname in candidate.related_vars:
                shortlist.add(fname)
        if fact.member_of and fact.member_of in type_names:
            shortlist.add(fname)
    return sorted(shortlist)


def identify_operators(
    corpus: MetadataCorpus,
    facts: ProgramFacts,
    candidates: list[ResourceCandidate],
    oracle: Oracle,
    transcript_log: Optional[list] = None,
    overrides_dir: Optional[str] = None,
) -> list[OperatorCandidate]:
    operators: list[OperatorCandidate] = []
    for cand in sorted(candidates, key=lambda c: c.name):
        shortlist = operator_shortlist(corpus, facts, cand)
        if not shortlist:
            log.warning("candidate %s has an empty operator shortlist", cand.name)
            continue
        # Operator queries are keyed by "resource|function" so one transcript
        # can answer differently per resource.
        keyed = [f"{cand.name}|{fn}" for fn in shortlist]
        verdicts = _ask_operator(
            oracle, corpus, cand, shortlist, keyed, transcript_log, overrides_dir
        )
        for fn, (v, source_requested) in verdicts.items():
            if v.verdict is Verdict.IS_OPERATOR:
                op_class = OpClass(v.kind_extra.get("op_class", OpClass.ACCESS.value))
                operators.append(
                    OperatorCandidate(
                        resource=cand.name,
                        function=fn,
                        op_class=op_class,
                        source_requested=source_requested,
                    )
                )
    operators.sort(key=lambda o: (o.resource, o.function))
    return operators


def _render_function(corpus: MetadataCorpus, fn: str, detail: DetailLevel) -> str:
    if fn in corpus:
        return render_batch(corpus, [fn], detail)
    return f"fn {fn}"


def _ask_operator(
    oracle: Oracle,
    corpus: MetadataCorpus,
    cand: ResourceCandidate,
    shortlist: list[str],
    keyed: list[str],
    transcript_log=None,
    overrides_dir=None,
) -> dict[str, tuple[VerdictLine, bool]]:
    results: dict[str, tuple[VerdictLine, bool]] = {}
    detail = DetailLevel.WITH_DESCRIPTIONS
    pending = list(zip(shortlist, keyed))
    for round_no in range(1 + MAX_ESCALATIONS):
        if not pending:
            break
        items = [
            QueryItem(key, _render_function(corpus, fn, detail))
            for fn, key in pending
        ]
        verdicts = _query_once(
            oracle, Stage.OPERATOR_SCAN, detail, items, transcript_log, overrides_dir
        )
        still = []
        for (fn, key), v in zip(pending, verdicts):
            if v.verdict is Verdict.NEED_SOURCE and round_no < MAX_ESCALATIONS:
                still.append((fn, key))
            elif v.verdict is Verdict.NEED_SOURCE:
                results[fn] = (VerdictLine(v.index, Verdict.NOT_OPERATOR), True)
            else:
                results[fn] = (v, detail >= DetailLevel.SOURCE_BODY)
        pending = still
        detail = DetailLevel.SOURCE_BODY  # NEED_SOURCE attaches the body
    return results


# ---------------------------------------------------------------------------
# Artifact persistence


def serialize_candidates(
    candidates: list[ResourceCandidate], operators: list[OperatorCandidate]
) -> bytes:
    return canonical_json_bytes(
        {
            "v": 1,
            "resources": [c.to_dict() for c in candidates],
            "operators": [o.to_dict() for o in operators],
        }
    )


def parse_candidates(
    data: bytes | str,
) -> tuple[list[ResourceCandidate], list[OperatorCandidate]]:
    doc = load_canonical_json(data)
    return (
        [ResourceCandidate.from_dict(d) for d in doc.get("resources", [])],
        [OperatorCandidate.from_dict(d) for d in doc.get("operators", [])],
    )
