"""Per-segment version graph: draft nodes, scores, lifecycle, diffs, projections.

Nodes form a DAG rooted at the original segment. Structural invariants
(acyclicity, arity, single applied node) are enforced at mutation time and
re-checkable wholesale via validate_canvas for property tests. Node ids are
prefixed with the canvas id so they stay unique across a whole session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import library as lib
from . import textdiff
from .errors import (
    AnchorOutOfRange,
    EmptySegment,
    InvalidDraft,
    NoLineagePath,
    NotConfirmed,
    ParentArityMismatch,
    UnknownNode,
    UnknownParent,
)

EXPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Score2D:
    """Position on the canvas: engagement is x, exposition is y."""

    engagement: int
    exposition: int

    def __post_init__(self):
        for axis in ("engagement", "exposition"):
            value = getattr(self, axis)
            if not isinstance(value, int) or not 0 <= value <= 100:
                raise InvalidDraft(f"score {axis} must be an int in [0,100], got {value!r}")

    def to_dict(self) -> dict:
        return {"engagement": self.engagement, "exposition": self.exposition}


class NodeState(Enum):
    EXPLORATORY = "exploratory"
    CONFIRMED = "confirmed"
    APPLIED = "applied"


class OriginKind(Enum):
    ROOT = "root"
    LABEL_EXPANSION = "label_expansion"
    REFINE = "refine"
    TOGGLE_STRATEGY = "toggle_strategy"
    MERGE = "merge"


@dataclass(frozen=True)
class Origin:
    kind: OriginKind
    label_ids: tuple[int, ...] = ()
    prompt: str = ""
    strategy_id: int | None = None

    @classmethod
    def root(cls) -> "Origin":
        return cls(OriginKind.ROOT)

    @classmethod
    def label_expansion(cls, label_ids: list[int]) -> "Origin":
        return cls(OriginKind.LABEL_EXPANSION, label_ids=tuple(label_ids))

    @classmethod
    def refine(cls, prompt: str) -> "Origin":
        return cls(OriginKind.REFINE, prompt=prompt)

    @classmethod
    def toggle_strategy(cls, strategy_id: int) -> "Origin":
        return cls(OriginKind.TOGGLE_STRATEGY, strategy_id=strategy_id)

    @classmethod
    def merge(cls) -> "Origin":
        return cls(OriginKind.MERGE)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "label_ids": list(self.label_ids),
            "prompt": self.prompt,
            "strategy_id": self.strategy_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Origin":
        return cls(
            kind=OriginKind(data["kind"]),
            label_ids=tuple(data.get("label_ids", ())),
            prompt=data.get("prompt", ""),
            strategy_id=data.get("strategy_id"),
        )


@dataclass
class VersionNode:
    id: str
    parents: tuple[str, ...]
    text: str
    strategies: frozenset[int]
    origin: Origin
    summary: str
    score: Score2D
    state: NodeState = NodeState.EXPLORATORY

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parents": list(self.parents),
            "text": self.text,
            "strategies": sorted(self.strategies),
            "origin": self.origin.to_dict(),
            "summary": self.summary,
            "score": self.score.to_dict(),
            "state": self.state.value,
        }


@dataclass
class DocumentPatch:
    anchor: tuple[int, int]
    old_text: str
    new_text: str


@dataclass
class Canvas:
    id: str
    document_id: str
    segment_anchor: tuple[int, int]
    nodes: dict[str, VersionNode] = field(default_factory=dict)
    root_id: str = ""
    applied_id: str | None = None
    _next_node: int = 1

    def node(self, node_id: str) -> VersionNode:
        found = self.nodes.get(node_id)
        if found is None:
            raise UnknownNode(f"no node {node_id} in canvas {self.id}")
        return found

    def current_text(self) -> str:
        """Text currently standing in the document for this segment."""
        live = self.applied_id or self.root_id
        return self.nodes[live].text


def create_canvas(
    document_id: str,
    segment_anchor: tuple[int, int],
    segment_text: str,
    root_score: Score2D,
    canvas_id: str = "c1",
    document_length: int | None = None,
) -> Canvas:
    if not segment_text or not segment_text.strip():
        raise EmptySegment("segment text must be non-empty")
    start, end = segment_anchor
    if start < 0 or end < start:
        raise AnchorOutOfRange(f"anchor {segment_anchor} is malformed")
    if document_length is not None and end > document_length:
        raise AnchorOutOfRange(
            f"anchor {segment_anchor} exceeds document length {document_length}"
        )
    canvas = Canvas(id=canvas_id, document_id=document_id, segment_anchor=(start, end))
    root = VersionNode(
        id=f"{canvas_id}:n1",
        parents=(),
        text=segment_text,
        strategies=frozenset(),
        origin=Origin.root(),
        summary="original text",
        score=root_score,
    )
    canvas.nodes[root.id] = root
    canvas.root_id = root.id
    canvas._next_node = 2
    return canvas


def add_child(
    canvas: Canvas,
    parent_ids: list[str],
    *,
    text: str,
    strategies: set[int] | frozenset[int],
    origin: Origin,
    summary: str,
    score: Score2D,
    node_id: str | None = None,
) -> str:
    for pid in parent_ids:
        if pid not in canvas.nodes:
            raise UnknownParent(f"parent {pid} not in canvas {canvas.id}")
    expected = 2 if origin.kind is OriginKind.MERGE else 1
    if origin.kind is OriginKind.ROOT:
        raise ParentArityMismatch("root nodes are created with the canvas")
    if len(parent_ids) != expected:
        raise ParentArityMismatch(
            f"{origin.kind.value} requires {expected} parent(s), got {len(parent_ids)}"
        )
    if expected == 2 and parent_ids[0] == parent_ids[1]:
        raise ParentArityMismatch("merge parents must be distinct")
    if not text or not text.strip():
        raise InvalidDraft("draft text must be non-empty")
    strategies = frozenset(strategies)
    if not strategies <= set(lib.STRATEGY_IDS):
        bad = sorted(strategies - set(lib.STRATEGY_IDS))
        raise InvalidDraft(f"unknown strategy ids {bad}")

    if node_id is None:
        node_id = f"{canvas.id}:n{canvas._next_node}"
    elif node_id in canvas.nodes:
        raise InvalidDraft(f"node id {node_id} already exists")
    canvas._next_node += 1
    node = VersionNode(
        id=node_id,
        parents=tuple(parent_ids),
        text=text,
        strategies=strategies,
        origin=origin,
        summary=summary,
        score=score,
    )
    canvas.nodes[node.id] = node
    return node.id


def confirm(canvas: Canvas, node_id: str) -> VersionNode:
    """Confirm a node. Idempotent; applied nodes stay applied."""
    node = canvas.node(node_id)
    if node.state is NodeState.EXPLORATORY:
        node.state = NodeState.CONFIRMED
    return node


def apply_to_document(canvas: Canvas, node_id: str) -> DocumentPatch:
    """Mark a confirmed node as the live text; returns the segment patch.

    At most one node per canvas is applied: applying another demotes the
    previous one to confirmed. Re-applying the applied node is a no-op patch.
    """
    node = canvas.node(node_id)
    if node.state is NodeState.EXPLORATORY:
        raise NotConfirmed(f"node {node_id} must be confirmed before apply")
    old_text = canvas.current_text()
    if canvas.applied_id and canvas.applied_id != node_id:
        canvas.nodes[canvas.applied_id].state = NodeState.CONFIRMED
    node.state = NodeState.APPLIED
    canvas.applied_id = node_id
    return DocumentPatch(anchor=canvas.segment_anchor, old_text=old_text, new_text=node.text)


@dataclass(frozen=True)
class DiffRef:
    """Reference for diffing: a direct parent, the root, or any ancestor."""

    kind: str  # "parent" | "root" | "node"
    index: int = 0
    node_id: str = ""

    @classmethod
    def parent(cls, index: int = 0) -> "DiffRef":
        return cls("parent", index=index)

    @classmethod
    def root(cls) -> "DiffRef":
        return cls("root")

    @classmethod
    def node(cls, node_id: str) -> "DiffRef":
        return cls("node", node_id=node_id)


def ancestors(canvas: Canvas, node_id: str) -> set[str]:
    """All ids reachable from node_id via parent links (excluding itself)."""
    seen: set[str] = set()
    stack = list(canvas.node(node_id).parents)
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        stack.extend(canvas.nodes[current].parents)
    return seen


def diff_node(canvas: Canvas, node_id: str, against: DiffRef) -> list[textdiff.DiffSpan]:
    node = canvas.node(node_id)
    if against.kind == "root":
        base = canvas.nodes[canvas.root_id]
    elif against.kind == "parent":
        if not 0 <= against.index < len(node.parents):
            raise NoLineagePath(
                f"node {node_id} has no parent index {against.index}"
            )
        base = canvas.nodes[node.parents[against.index]]
    elif against.kind == "node":
        base = canvas.node(against.node_id)
        if base.id != node.id and base.id not in ancestors(canvas, node_id):
            raise NoLineagePath(f"{against.node_id} is not an ancestor of {node_id}")
    else:
        raise NoLineagePath(f"unsupported diff reference {against.kind}")
    return textdiff.diff(base.text, node.text)


class ZoomBand(Enum):
    DOTS = "dots"
    SUMMARY = "summary"
    FULL = "full"


def _node_labels(node: VersionNode) -> list[int]:
    if node.origin.kind is OriginKind.LABEL_EXPANSION:
        return sorted(set(node.origin.label_ids))
    found: set[int] = set()
    for sid in node.strategies:
        found |= lib.labels_for_strategy(sid)
    return sorted(found)


def project(canvas: Canvas, zoom_band: ZoomBand) -> dict:
    """Level-of-detail view of the canvas for rendering.

    Dots carries only position and state; summary adds labels, strategies,
    and the change summary; full adds the text and a diff against the first
    parent. Field sets are strictly nested across the bands.
    """
    entries = []
    for node in canvas.nodes.values():
        entry: dict = {
            "id": node.id,
            "score": node.score.to_dict(),
            "state": node.state.value,
        }
        if zoom_band in (ZoomBand.SUMMARY, ZoomBand.FULL):
            entry["labels"] = _node_labels(node)
            entry["strategies"] = sorted(node.strategies)
            entry["summary"] = node.summary
        if zoom_band is ZoomBand.FULL:
            entry["text"] = node.text
            if node.parents:
                spans = diff_node(canvas, node.id, DiffRef.parent(0))
                entry["diff_vs_parent"] = [
                    {"kind": s.kind.value, "text": s.text} for s in spans
                ]
            else:
                entry["diff_vs_parent"] = []
        entries.append(entry)
    return {"canvas_id": canvas.id, "band": zoom_band.value, "nodes": entries}


def export_canvas(canvas: Canvas) -> dict:
    """Canonical JSON-ready form; node order is insertion order (topological)."""
    return {
        "schema_version": EXPORT_SCHEMA_VERSION,
        "id": canvas.id,
        "document_id": canvas.document_id,
        "segment_anchor": list(canvas.segment_anchor),
        "root_id": canvas.root_id,
        "applied_id": canvas.applied_id,
        "nodes": [node.to_dict() for node in canvas.nodes.values()],
    }


def validate_canvas(canvas: Canvas) -> list[str]:
    """Recheck every structural invariant; used by randomized property tests."""
    problems: list[str] = []
    roots = [n for n in canvas.nodes.values() if not n.parents]
    if len(roots) != 1:
        problems.append(f"expected exactly one root, found {len(roots)}")
    if canvas.root_id not in canvas.nodes:
        problems.append("root_id missing from nodes")

    for node in canvas.nodes.values():
        expected = {
            OriginKind.ROOT: 0,
            OriginKind.MERGE: 2,
        }.get(node.origin.kind, 1)
        if len(node.parents) != expected:
            problems.append(f"{node.id}: arity {len(node.parents)} for {node.origin.kind.value}")
        for pid in node.parents:
            if pid not in canvas.nodes:
                problems.append(f"{node.id}: dangling parent {pid}")
        if not node.strategies <= set(lib.STRATEGY_IDS):
            problems.append(f"{node.id}: invalid strategy ids")
        if node.origin.kind is OriginKind.ROOT and node.strategies:
            problems.append(f"{node.id}: root carries strategies")

    # Acyclicity + reachability: walk parents from every node; a cycle would
    # revisit a node already on the current path.
    for start in canvas.nodes:
        path: set[str] = set()
        stack: list[tuple[str, bool]] = [(start, False)]
        visited: set[str] = set()
        while stack:
            current, done = stack.pop()
            if done:
                path.discard(current)
                continue
            if current in path:
                problems.append(f"cycle through {current}")
                stack.clear()
                break
            if current in visited:
                continue
            visited.add(current)
            path.add(current)
            stack.append((current, True))
            for pid in canvas.nodes[current].parents:
                if pid in canvas.nodes:
                    stack.append((pid, False))
        if canvas.root_id in canvas.nodes and canvas.root_id not in visited and start != canvas.root_id:
            problems.append(f"{start} cannot reach the root")

    applied = [n.id for n in canvas.nodes.values() if n.state is NodeState.APPLIED]
    if len(applied) > 1:
        problems.append(f"multiple applied nodes: {applied}")
    if canvas.applied_id and canvas.applied_id not in applied:
        problems.append("applied_id out of sync with node states")
    return problems
