"""Append-only session persistence with checksummed NDJSON event logs.

Layout per session, under a data root directory:
  <session_id>.ndjson         event log; line 1 is the manifest, then records
  <session_id>.agents.ndjson  sidecar trace of raw agent traffic (no checksums)

Each record line carries a sha256 checksum over its canonical form, and seq
numbers are dense from 1, so truncation, reordering, and bit rot are all
detected on open. Session state is never stored directly: it is folded from
the log, which makes replay the single source of truth.

Request-intent records (*Requested) and candidate telemetry are persisted for
audit and streaming but do not change folded state; graph and document state
come from the Node*/Document* records alone.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import muse
from .errors import CorruptLog, StorageError, VersionMismatch
from .graph import (
    Canvas,
    Origin,
    Score2D,
    add_child,
    apply_to_document,
    confirm,
    create_canvas,
    export_canvas,
)

SCHEMA_VERSION = 1


class EventKind(Enum):
    DOCUMENT_CREATED = "DocumentCreated"
    CANVAS_CREATED = "CanvasCreated"
    NODE_ADDED = "NodeAdded"
    NODE_CONFIRMED = "NodeConfirmed"
    NODE_APPLIED = "NodeApplied"
    DOCUMENT_EDITED = "DocumentEdited"
    EXPANSION_REQUESTED = "ExpansionRequested"
    REFINE_REQUESTED = "RefineRequested"
    TOGGLE_REQUESTED = "ToggleRequested"
    MERGE_REQUESTED = "MergeRequested"
    MUSE_REPORT_ISSUED = "MuseReportIssued"
    MUSE_VERDICT = "MuseVerdict"
    CANDIDATE_GENERATED = "CandidateGenerated"
    CANDIDATE_SCORED = "CandidateScored"
    CANDIDATE_FILTERED = "CandidateFiltered"


_KNOWN_KINDS = {kind.value for kind in EventKind}


@dataclass(frozen=True)
class EventRecord:
    seq: int
    ts: float
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "kind": self.kind, "payload": self.payload}


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def record_checksum(record: dict) -> str:
    body = {k: v for k, v in record.items() if k != "checksum"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def data_root(root: str | os.PathLike | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get("SB_DATA_DIR", "./data"))


class EventLog:
    """One session's append-only log; always opened via create() or open()."""

    def __init__(self, path: Path, session_id: str, records: list[EventRecord]):
        self.path = path
        self.session_id = session_id
        self._records = records

    @property
    def records(self) -> tuple[EventRecord, ...]:
        return tuple(self._records)

    @property
    def last_seq(self) -> int:
        return self._records[-1].seq if self._records else 0

    @classmethod
    def create(cls, root: str | os.PathLike, session_id: str) -> "EventLog":
        directory = data_root(root)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{session_id}.ndjson"
        if path.exists():
            raise StorageError(f"log already exists for session {session_id}")
        manifest = {"schema_version": SCHEMA_VERSION, "session_id": session_id}
        path.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
        return cls(path, session_id, [])

    @classmethod
    def open(cls, root: str | os.PathLike, session_id: str) -> "EventLog":
        path = data_root(root) / f"{session_id}.ndjson"
        if not path.exists():
            raise StorageError(f"no log for session {session_id}")
        session, records = read_log(path)
        if session != session_id:
            raise StorageError(f"log at {path} belongs to session {session}")
        return cls(path, session_id, records)

    def append(self, kind: EventKind, payload: dict, ts: float) -> EventRecord:
        record = EventRecord(seq=self.last_seq + 1, ts=ts, kind=kind.value, payload=payload)
        body = record.to_dict()
        body["checksum"] = record_checksum(body)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(canonical_json(body) + "\n")
        self._records.append(record)
        return record


def read_log(path: str | os.PathLike) -> tuple[str, list[EventRecord]]:
    """Parse and verify a log file; returns (session_id, records)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise StorageError(f"log at {path} is empty")
    try:
        manifest = json.loads(lines[0])
    except ValueError as exc:
        raise StorageError(f"unreadable manifest line: {exc}")
    if not isinstance(manifest, dict) or "schema_version" not in manifest:
        raise StorageError("manifest line lacks a schema_version")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise VersionMismatch(
            f"log schema {manifest['schema_version']} != supported {SCHEMA_VERSION}"
        )
    session_id = manifest.get("session_id", "")

    records: list[EventRecord] = []
    for expected_seq, line in enumerate(lines[1:], start=1):
        try:
            body = json.loads(line)
        except ValueError:
            raise CorruptLog(f"record {expected_seq} is not valid JSON", seq=expected_seq)
        if not isinstance(body, dict) or "checksum" not in body:
            raise CorruptLog(f"record {expected_seq} lacks a checksum", seq=expected_seq)
        if record_checksum(body) != body["checksum"]:
            raise CorruptLog(f"record {expected_seq} fails its checksum", seq=expected_seq)
        if body.get("seq") != expected_seq:
            raise CorruptLog(
                f"record seq {body.get('seq')} where {expected_seq} expected",
                seq=expected_seq,
            )
        if body.get("kind") not in _KNOWN_KINDS:
            raise CorruptLog(
                f"record {expected_seq} has unknown kind {body.get('kind')!r}",
                seq=expected_seq,
            )
        records.append(
            EventRecord(seq=body["seq"], ts=body["ts"], kind=body["kind"], payload=body["payload"])
        )
    return session_id, records


# -- folded state --


@dataclass
class Document:
    id: str
    text: str


@dataclass
class SessionState:
    session_id: str
    documents: dict[str, Document] = field(default_factory=dict)
    canvases: dict[str, Canvas] = field(default_factory=dict)
    bias: dict[int, float] = field(default_factory=dict)
    reports: dict[str, muse.MuseReport] = field(default_factory=dict)


def fold(session_id: str, records) -> SessionState:
    """Rebuild session state by replaying records in order."""
    state = SessionState(session_id=session_id)
    for record in records:
        payload = record.payload
        kind = record.kind
        if kind == EventKind.DOCUMENT_CREATED.value:
            state.documents[payload["document_id"]] = Document(
                id=payload["document_id"], text=payload["text"]
            )
        elif kind == EventKind.CANVAS_CREATED.value:
            document = state.documents[payload["document_id"]]
            canvas = create_canvas(
                payload["document_id"],
                tuple(payload["anchor"]),
                payload["segment_text"],
                Score2D(**payload["root_score"]),
                canvas_id=payload["canvas_id"],
                document_length=len(document.text),
            )
            state.canvases[canvas.id] = canvas
        elif kind == EventKind.NODE_ADDED.value:
            canvas = state.canvases[payload["canvas_id"]]
            add_child(
                canvas,
                list(payload["parents"]),
                text=payload["text"],
                strategies=frozenset(payload["strategies"]),
                origin=Origin.from_dict(payload["origin"]),
                summary=payload["summary"],
                score=Score2D(**payload["score"]),
                node_id=payload["node_id"],
            )
        elif kind == EventKind.NODE_CONFIRMED.value:
            confirm(state.canvases[payload["canvas_id"]], payload["node_id"])
        elif kind == EventKind.NODE_APPLIED.value:
            apply_to_document(state.canvases[payload["canvas_id"]], payload["node_id"])
        elif kind == EventKind.DOCUMENT_EDITED.value:
            _fold_document_edit(state, payload)
        elif kind == EventKind.MUSE_REPORT_ISSUED.value:
            state.reports[payload["report_id"]] = muse.MuseReport.from_dict(payload["report"])
        elif kind == EventKind.MUSE_VERDICT.value:
            state.bias = muse.apply_verdict(
                state.bias, payload["strategy_ids"], payload["accepted"]
            )
        # *Requested and Candidate* records carry no state transitions.
    return state


def _fold_document_edit(state: SessionState, payload: dict) -> None:
    document = state.documents[payload["document_id"]]
    start, end = payload["anchor"]
    old_text, new_text = payload["old_text"], payload["new_text"]
    if document.text[start:end] != old_text:
        raise StorageError(
            f"document edit at {start}:{end} does not match the recorded old text"
        )
    document.text = document.text[:start] + new_text + document.text[end:]
    delta = len(new_text) - len(old_text)
    if delta == 0:
        return
    for canvas in state.canvases.values():
        if canvas.document_id != document.id:
            continue
        cs, ce = canvas.segment_anchor
        if canvas.id == payload["canvas_id"]:
            canvas.segment_anchor = (cs, ce + delta)
        elif cs >= end:
            canvas.segment_anchor = (cs + delta, ce + delta)


def replay(root: str | os.PathLike, session_id: str) -> tuple[EventLog, SessionState]:
    log = EventLog.open(root, session_id)
    return log, fold(session_id, log.records)


def state_hash(state: SessionState) -> str:
    """Digest of everything user-visible; sidecar traces are excluded."""
    snapshot = {
        "documents": {d.id: d.text for d in state.documents.values()},
        "canvases": {c.id: export_canvas(c) for c in state.canvases.values()},
        "bias": {str(k): v for k, v in state.bias.items()},
        "reports": {rid: r.to_dict() for rid, r in state.reports.items()},
    }
    return hashlib.sha256(canonical_json(snapshot).encode()).hexdigest()


# -- archive --


def export_archive(log: EventLog) -> bytes:
    """Gzip the log bytes with a pinned mtime so exports are reproducible."""
    content = log.path.read_bytes()
    return gzip.compress(content, mtime=0)


def import_archive(root: str | os.PathLike, data: bytes) -> EventLog:
    try:
        content = gzip.decompress(data)
    except (OSError, EOFError) as exc:
        raise StorageError(f"archive is not valid gzip data: {exc}")
    directory = data_root(root)
    directory.mkdir(parents=True, exist_ok=True)
    scratch = directory / ".incoming.ndjson"
    scratch.write_bytes(content)
    try:
        session_id, _records = read_log(scratch)
        if not session_id:
            raise StorageError("archive manifest lacks a session id")
        target = directory / f"{session_id}.ndjson"
        if target.exists():
            raise StorageError(f"session {session_id} already exists in {directory}")
        scratch.replace(target)
    finally:
        if scratch.exists():
            scratch.unlink()
    return EventLog.open(directory, session_id)


# -- sidecar agent traffic --


def trace_path(root: str | os.PathLike, session_id: str) -> Path:
    return data_root(root) / f"{session_id}.agents.ndjson"


def append_trace(root: str | os.PathLike, session_id: str, entry: dict, ts: float) -> None:
    path = trace_path(root, session_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(canonical_json({"ts": ts, **entry}) + "\n")
