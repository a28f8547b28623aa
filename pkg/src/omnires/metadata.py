"""Codebase metadata extraction and the file/type/function/variable tree.

Source files are scanned with a line-based C-family heuristic: doc comments
(`/** .. */`, `/*! .. */`, runs of `// ..` lines) attach to the next
declaration, aggregate bodies nest, and everything lands in a tree of
MetadataNode objects that can be rendered at several detail levels for
downstream semantic analysis.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .util import ParseError, canonical_json_bytes, load_canonical_json


class NodeKind(str, Enum):
    FILE = "File"
    AGGREGATE = "AggregateType"
    FUNCTION = "Function"
    VARIABLE = "Variable"


class DetailLevel(int, Enum):
    """Monotone detail ladder used by the staged semantic queries."""

    NAMES_ONLY = 0
    WITH_DESCRIPTIONS = 1
    WITH_MEMBERS = 2
    SOURCE_BODY = 3


class InputError(ValueError):
    pass


class LookupPathError(KeyError):
    pass


@dataclass
class MetadataNode:
    kind: NodeKind
    name: str
    description: str = ""
    children: list["MetadataNode"] = field(default_factory=list)
    attrs: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "name": self.name,
            "description": self.description,
            "attrs": dict(self.attrs),
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetadataNode":
        try:
            return cls(
                kind=NodeKind(d["kind"]),
                name=d["name"],
                description=d.get("description", ""),
                attrs=dict(d.get("attrs", {})),
                children=[cls.from_dict(c) for c in d.get("children", [])],
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(f"malformed metadata node: {exc}") from exc


# Kinds allowed as children of each parent kind.
_ALLOWED_CHILDREN = {
    NodeKind.FILE: {NodeKind.AGGREGATE, NodeKind.FUNCTION, NodeKind.VARIABLE},
    NodeKind.AGGREGATE: {NodeKind.FUNCTION, NodeKind.VARIABLE},
    NodeKind.FUNCTION: set(),
    NodeKind.VARIABLE: set(),
}


def check_tree_shape(root: MetadataNode) -> None:
    """Raise if the file tree violates the nesting rules or has empty names."""
    if root.kind is not NodeKind.FILE:
        raise InputError(f"root node must be a File, got {root.kind.value}")
    stack = [root]
    while stack:
        node = stack.pop()
        if not node.name:
            raise InputError("metadata node with empty name")
        for child in node.children:
            if child.kind not in _ALLOWED_CHILDREN[node.kind]:
                raise InputError(
                    f"{child.kind.value} node {child.name!r} nested under "
                    f"{node.kind.value} {node.name!r}"
                )
            stack.append(child)


@dataclass
class MetadataCorpus:
    roots: list[MetadataNode]
    source_digest: str
    index: dict[str, tuple[int, ...]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)  # not serialized

    def __post_init__(self):
        if not self.index:
            self.index = build_index(self.roots)

    def node(self, qualified_name: str) -> MetadataNode:
        try:
            path = self.index[qualified_name]
        except KeyError:
            raise LookupPathError(f"unknown node path: {qualified_name}") from None
        node = self.roots[path[0]]
        for i in path[1:]:
            node = node.children[i]
        return node

    def __contains__(self, qualified_name: str) -> bool:
        return qualified_name in self.index

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetadataCorpus):
            return NotImplemented
        return (self.roots, self.source_digest) == (other.roots, other.source_digest)


def build_index(roots: list[MetadataNode]) -> dict[str, tuple[int, ...]]:
    index: dict[str, tuple[int, ...]] = {}

    def walk(node: MetadataNode, qname: str, path: tuple[int, ...]):
        base, n = qname, 1
        while qname in index:  # overloads / redeclarations get #k suffixes
            n += 1
            qname = f"{base}#{n}"
        index[qname] = path
        for i, child in enumerate(node.children):
            walk(child, f"{qname}::{child.name}", path + (i,))

    for i, root in enumerate(roots):
        walk(root, root.name, (i,))
    return index


# ---------------------------------------------------------------------------
# Extraction

_AGGREGATE_RE = re.compile(r"^\s*(?:class|struct)\s+(\w+)")
_FUNCTION_RE = re.compile(
    r"^\s*(?:[\w:<>,\*&~\s]+?[\s\*&])?~?(\w+)\s*\(([^)]*)\)[^;{=]*[;{]"
)
_VARIABLE_RE = re.compile(
    r"^\s*([\w:<>,\s]+?[\s\*&]+)(\w+)\s*(?:\[[^\]]*\])?\s*(?:=[^;]*)?;"
)
_KEYWORDS = {"if", "while", "for", "switch", "return", "else", "do", "sizeof"}


def _clean_comment(lines: list[str]) -> str:
    out = []
    for raw in lines:
        s = raw.strip()
        for prefix in ("/**", "/*!", "/*"):
            if s.startswith(prefix):
                s = s[len(prefix):]
                break
        if s.endswith("*/"):
            s = s[:-2]
        s = s.strip()
        if s.startswith("//"):
            s = s[2:].strip()
        elif s.startswith("*"):
            s = s[1:].strip()
        if s:
            out.append(s)
    return " ".join(out)


def _extract_file(path: str, text: str, warnings: list[str]) -> MetadataNode:
    file_node = MetadataNode(NodeKind.FILE, path, attrs={"path": path})
    scope: list[MetadataNode] = [file_node]
    anon_counter = 0

    lines = text.splitlines()
    i = 0
    pending: list[str] = []          # comment lines awaiting a declaration
    file_desc_taken = False

    def stash_file_desc() -> None:
        # A leading comment block followed by another comment block (not a
        # declaration) can only have been the file-level description.
        nonlocal file_desc_taken, pending
        if pending and not file_desc_taken:
            file_desc_taken = True
            desc = _clean_comment(pending)
            if desc:
                file_node.description = desc
            pending = []

    def flush_pending() -> str:
        nonlocal file_desc_taken, pending
        desc = _clean_comment(pending)
        pending = []
        # The first comment block in a file describes the file itself.
        if not file_desc_taken:
            file_desc_taken = True
            if desc:
                file_node.description = desc
            return ""
        return desc

    def consume_body(start: int, depth: int) -> tuple[int, str]:
        """Advance past a brace-delimited body; return (next line, body text)."""
        body: list[str] = []
        j = start
        while j < len(lines):
            line = lines[j]
            body.append(line)
            depth += line.count("{") - line.count("}")
            j += 1
            if depth <= 0:
                break
        return j, "\n".join(body)

    while i < len(lines):
        line = lines[i]
        stripped = line.strip()

        if not stripped:
            i += 1
            continue

        if stripped.startswith(("/**", "/*!", "/*")):
            stash_file_desc()
            is_doc = stripped.startswith(("/**", "/*!"))
            block = [stripped]
            j = i
            while "*/" not in lines[j]:
                j += 1
                if j >= len(lines):
                    warnings.append(f"{path}: unbalanced comment delimiter at line {i + 1}")
                    break
                block.append(lines[j].strip())
            i = j + 1
            if is_doc:
                pending = block
            continue

        if stripped.startswith("//"):
            stash_file_desc()
            run = []
            while i < len(lines) and lines[i].strip().startswith("//"):
                run.append(lines[i].strip())
                i += 1
            pending = run
            continue

        # Declarations below this point; grab the pending doc comment first.
        # The very first declaration also closes the file-description window.
        desc = flush_pending()

        m = _AGGREGATE_RE.match(stripped)
        if m and ";" not in stripped.split("{")[0]:
            name = m.group(1)
            node = MetadataNode(NodeKind.AGGREGATE, name, description=desc)
            parent = scope[-1]
            if node.kind in _ALLOWED_CHILDREN[parent.kind]:
                parent.children.append(node)
            else:
                anon_counter += 1
                file_node.children.append(node)
            # Find the opening brace (same line or a following one).
            depth = stripped.count("{") - stripped.count("}")
            j = i + 1
            while depth == 0 and j < len(lines) and "{" not in stripped:
                stripped = lines[j].strip()
                depth += stripped.count("{") - stripped.count("}")
                j += 1
            if depth > 0:
                scope.append(node)
                node.attrs["_open_depth"] = str(depth)
            i = max(i + 1, j)
            continue

        m = _FUNCTION_RE.match(stripped)
        if m and m.group(1) not in _KEYWORDS:
            name, params = m.group(1), m.group(2).strip()
            node = MetadataNode(NodeKind.FUNCTION, name, description=desc)
            if params:
                node.attrs["params"] = params
            if "{" in stripped:
                i, body = consume_body(i, 0)
                node.attrs["source"] = body
            else:
                node.attrs["source"] = stripped
                i += 1
            parent = scope[-1]
            if node.kind in _ALLOWED_CHILDREN[parent.kind]:
                parent.children.append(node)
            continue

        m = _VARIABLE_RE.match(stripped)
        if m and "(" not in stripped and m.group(2) not in _KEYWORDS:
            type_name, name = m.group(1).strip(" *&"), m.group(2)
            node = MetadataNode(
                NodeKind.VARIABLE, name, description=desc, attrs={"type": type_name}
            )
            parent = scope[-1]
            if node.kind in _ALLOWED_CHILDREN[parent.kind]:
                parent.children.append(node)
            i += 1
            continue

        # Close of an aggregate body (`};` or `}`)?
        if stripped.startswith("}") and len(scope) > 1:
            scope[-1].attrs.pop("_open_depth", None)
            scope.pop()
        i += 1

    for node in scope:
        node.attrs.pop("_open_depth", None)
    return file_node


def extract_metadata(sources: Iterable[tuple[str, str]]) -> MetadataCorpus:
    """Build a MetadataCorpus from (path, text) pairs, one File root each."""
    sources = list(sources)
    seen: set[str] = set()
    for path, _ in sources:
        if path in seen:
            raise InputError(f"duplicate source path: {path}")
        seen.add(path)

    digest = hashlib.sha256()
    warnings: list[str] = []
    roots = []
    for path, text in sources:
        digest.update(path.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(text.encode("utf-8"))
        digest.update(b"\x00")
        root = _extract_file(path, text, warnings)
        check_tree_shape(root)
        roots.append(root)
    return MetadataCorpus(
        roots=roots, source_digest=digest.hexdigest(), warnings=warnings
    )


# ---------------------------------------------------------------------------
# Persistence (canonical JSON, schema v1)


def serialize_corpus(corpus: MetadataCorpus) -> bytes:
    doc = {
        "v": 1,
        "source_digest": corpus.source_digest,
        "roots": [r.to_dict() for r in corpus.roots],
    }
    return canonical_json_bytes(doc)


def parse_corpus(data: bytes | str) -> MetadataCorpus:
    doc = load_canonical_json(data)
    if not isinstance(doc, dict) or doc.get("v") != 1:
        raise ParseError("not a v1 corpus document")
    roots = [MetadataNode.from_dict(d) for d in doc.get("roots", [])]
    for root in roots:
        check_tree_shape(root)
    return MetadataCorpus(roots=roots, source_digest=doc.get("source_digest", ""))


# ---------------------------------------------------------------------------
# Rendering

DEFAULT_BATCH_BUDGET = 12_000


def _render_node(node: MetadataNode, qname: str, detail: DetailLevel) -> str:
    lines: list[str] = []

    def header(n: MetadataNode, q: str) -> str:
        tag = {
            NodeKind.FILE: "file",
            NodeKind.AGGREGATE: "type",
            NodeKind.FUNCTION: "fn",
            NodeKind.VARIABLE: "var",
        }[n.kind]
        if detail >= DetailLevel.WITH_DESCRIPTIONS and n.description:
            return f"{tag} {q}: {n.description}"
        return f"{tag} {q}"

    lines.append(header(node, qname))
    for child in node.children:
        cq = f"{qname}::{child.name}"
        if detail >= DetailLevel.WITH_MEMBERS and child.kind is NodeKind.AGGREGATE:
            lines.extend("  " + l for l in _render_node(child, cq, detail).splitlines())
        else:
            lines.append("  " + header(child, cq))
            if detail >= DetailLevel.WITH_MEMBERS:
                for gc in child.children:
                    lines.append("    " + header(gc, f"{cq}::{gc.name}"))
    if detail >= DetailLevel.SOURCE_BODY and node.attrs.get("source"):
        lines.append("source:")
        lines.append(node.attrs["source"])
    return "\n".join(lines)


def render_batches(
    corpus: MetadataCorpus,
    selector: Iterable[str],
    detail: DetailLevel,
    budget: int = DEFAULT_BATCH_BUDGET,
) -> list[str]:
    """Render the selected nodes into batches no larger than `budget` chars.

    Every selected node lands in exactly one batch; a node whose rendering
    alone exceeds the budget still gets its own (oversized) batch.
    """
    paths = sorted(set(selector))
    pieces = []
    for qname in paths:
        node = corpus.node(qname)  # raises LookupPathError for unknown paths
        pieces.append(_render_node(node, qname, detail))
    batches: list[str] = []
    current: list[str] = []
    size = 0
    for piece in pieces:
        if current and size + len(piece) + 1 > budget:
            batches.append("\n".join(current))
            current, size = [], 0
        current.append(piece)
        size += len(piece) + 1
    if current:
        batches.append("\n".join(current))
    return batches


def render_batch(
    corpus: MetadataCorpus,
    selector: Iterable[str],
    detail: DetailLevel,
    budget: int = DEFAULT_BATCH_BUDGET,
) -> str:
    return "\n".join(render_batches(corpus, selector, detail, budget))
