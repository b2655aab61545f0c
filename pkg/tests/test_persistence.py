"""Persistence tests: log integrity, folding, archives, state hashing."""

import gzip
import json

import pytest

from scribespace import persistence
from scribespace.errors import CorruptLog, StorageError, VersionMismatch
from scribespace.graph import (
    Origin,
    Score2D,
    add_child,
    apply_to_document,
    confirm,
    create_canvas,
    export_canvas,
)
from scribespace.persistence import EventKind, EventLog

T0 = 1700000000.0


def _tick():
    t = [T0]

    def clock():
        t[0] += 1.0
        return t[0]

    return clock


def test_log_round_trip_preserves_records(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    clock = _tick()
    for i in range(1, 6):
        log.append(EventKind.CANDIDATE_GENERATED, {"i": i}, clock())
    reopened = EventLog.open(tmp_path, "s1")
    assert reopened.records == log.records
    assert [r.seq for r in reopened.records] == [1, 2, 3, 4, 5]
    assert reopened.last_seq == 5


def test_create_refuses_existing_log(tmp_path):
    EventLog.create(tmp_path, "s1")
    with pytest.raises(StorageError):
        EventLog.create(tmp_path, "s1")


def test_open_missing_and_empty_logs(tmp_path):
    with pytest.raises(StorageError):
        EventLog.open(tmp_path, "ghost")
    (tmp_path / "empty.ndjson").write_text("", encoding="utf-8")
    with pytest.raises(StorageError):
        persistence.read_log(tmp_path / "empty.ndjson")


def test_tampered_record_reports_its_seq(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    clock = _tick()
    for i in range(1, 9):
        log.append(EventKind.CANDIDATE_GENERATED, {"i": i}, clock())
    lines = log.path.read_text(encoding="utf-8").splitlines()
    lines[7] = lines[7].replace('"i":7', '"i":99')
    log.path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorruptLog) as err:
        EventLog.open(tmp_path, "s1")
    assert err.value.seq == 7


def test_missing_record_breaks_the_sequence(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    clock = _tick()
    for i in range(1, 6):
        log.append(EventKind.CANDIDATE_GENERATED, {"i": i}, clock())
    lines = log.path.read_text(encoding="utf-8").splitlines()
    del lines[3]  # record seq 3
    log.path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorruptLog) as err:
        EventLog.open(tmp_path, "s1")
    assert err.value.seq == 3


def test_unknown_kind_is_corruption(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    record = {"seq": 1, "ts": T0, "kind": "SomethingElse", "payload": {}}
    record["checksum"] = persistence.record_checksum(record)
    with log.path.open("a", encoding="utf-8") as handle:
        handle.write(persistence.canonical_json(record) + "\n")
    with pytest.raises(CorruptLog):
        EventLog.open(tmp_path, "s1")


def test_future_schema_version_is_rejected(tmp_path):
    path = tmp_path / "s9.ndjson"
    path.write_text(
        json.dumps({"schema_version": 99, "session_id": "s9"}) + "\n", encoding="utf-8"
    )
    with pytest.raises(VersionMismatch):
        persistence.read_log(path)


def test_open_checks_session_identity(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    content = log.path.read_text(encoding="utf-8")
    (tmp_path / "s2.ndjson").write_text(content, encoding="utf-8")
    with pytest.raises(StorageError):
        EventLog.open(tmp_path, "s2")


def _scripted_log(tmp_path):
    """A hand-written session: two canvases, one applied node, one verdict."""
    doc = "AAA BBB CCC"
    log = EventLog.create(tmp_path, "s1")
    clock = _tick()

    def emit(kind, payload):
        log.append(kind, payload, clock())

    emit(EventKind.DOCUMENT_CREATED, {"document_id": "d1", "text": doc})
    emit(EventKind.CANVAS_CREATED, {
        "canvas_id": "c1", "document_id": "d1", "anchor": [0, 3],
        "segment_text": "AAA", "root_score": {"engagement": 50, "exposition": 50},
    })
    emit(EventKind.CANVAS_CREATED, {
        "canvas_id": "c2", "document_id": "d1", "anchor": [8, 11],
        "segment_text": "CCC", "root_score": {"engagement": 40, "exposition": 60},
    })
    emit(EventKind.NODE_ADDED, {
        "canvas_id": "c1", "node_id": "c1:n2", "parents": ["c1:n1"],
        "text": "AAAAA", "strategies": [11],
        "origin": Origin.label_expansion([5]).to_dict(),
        "summary": "s", "score": {"engagement": 57, "exposition": 48},
    })
    emit(EventKind.NODE_CONFIRMED, {"canvas_id": "c1", "node_id": "c1:n2"})
    emit(EventKind.NODE_APPLIED, {"canvas_id": "c1", "node_id": "c1:n2"})
    emit(EventKind.DOCUMENT_EDITED, {
        "document_id": "d1", "canvas_id": "c1", "anchor": [0, 3],
        "old_text": "AAA", "new_text": "AAAAA",
    })
    emit(EventKind.MUSE_REPORT_ISSUED, {
        "report_id": "r1",
        "report": {
            "strengths": ["x"], "weaknesses": [], "patterns": [],
            "suggestions": [
                {"index": 1, "label_id": None, "strategy_id": 11, "rationale": "try"}
            ],
        },
    })
    emit(EventKind.MUSE_VERDICT, {
        "report_id": "r1", "suggestion_index": 1, "accepted": True,
        "strategy_ids": [11],
    })
    emit(EventKind.CANDIDATE_FILTERED, {"label_id": 5, "version_index": 2,
                                        "reason": "duplicate"})
    return log


def test_fold_rebuilds_documents_canvases_and_bias(tmp_path):
    _scripted_log(tmp_path)
    log, state = persistence.replay(tmp_path, "s1")
    assert state.documents["d1"].text == "AAAAA BBB CCC"
    assert state.canvases["c1"].segment_anchor == (0, 5)
    assert state.canvases["c2"].segment_anchor == (10, 13)
    applied = state.canvases["c1"].node("c1:n2")
    assert applied.state.value == "applied"
    assert state.canvases["c1"].applied_id == "c1:n2"
    assert state.bias == {11: 1.5}
    assert list(state.reports) == ["r1"]
    assert state.reports["r1"].suggestions[0].strategy_id == 11


def test_fold_matches_direct_construction(tmp_path):
    _scripted_log(tmp_path)
    _log, state = persistence.replay(tmp_path, "s1")

    canvas = create_canvas("d1", (0, 3), "AAA", Score2D(50, 50), canvas_id="c1",
                           document_length=11)
    add_child(
        canvas, ["c1:n1"], text="AAAAA", strategies=frozenset({11}),
        origin=Origin.label_expansion([5]), summary="s", score=Score2D(57, 48),
        node_id="c1:n2",
    )
    confirm(canvas, "c1:n2")
    apply_to_document(canvas, "c1:n2")
    assert export_canvas(state.canvases["c1"])["nodes"] == export_canvas(canvas)["nodes"]


def test_replay_hash_is_stable(tmp_path):
    _scripted_log(tmp_path)
    _, first = persistence.replay(tmp_path, "s1")
    _, second = persistence.replay(tmp_path, "s1")
    assert persistence.state_hash(first) == persistence.state_hash(second)


def test_document_edit_must_match_recorded_old_text(tmp_path):
    log = EventLog.create(tmp_path, "s1")
    clock = _tick()
    log.append(EventKind.DOCUMENT_CREATED, {"document_id": "d1", "text": "xyz"}, clock())
    log.append(EventKind.DOCUMENT_EDITED, {
        "document_id": "d1", "canvas_id": "c1", "anchor": [0, 3],
        "old_text": "abc", "new_text": "q",
    }, clock())
    with pytest.raises(StorageError):
        persistence.replay(tmp_path, "s1")


def test_archive_round_trip_is_byte_identical(tmp_path):
    log = _scripted_log(tmp_path)
    blob = persistence.export_archive(log)
    other = tmp_path / "other"
    imported = persistence.import_archive(other, blob)
    assert imported.session_id == "s1"
    assert persistence.export_archive(imported) == blob
    _, state_a = persistence.replay(tmp_path, "s1")
    _, state_b = persistence.replay(other, "s1")
    assert persistence.state_hash(state_a) == persistence.state_hash(state_b)


def test_archive_guards(tmp_path):
    log = _scripted_log(tmp_path)
    blob = persistence.export_archive(log)
    with pytest.raises(StorageError):
        persistence.import_archive(tmp_path, blob)  # session already present
    with pytest.raises(StorageError):
        persistence.import_archive(tmp_path / "x", b"not gzip")
    bad = gzip.compress(b"", mtime=0)
    with pytest.raises(StorageError):
        persistence.import_archive(tmp_path / "y", bad)


def test_sidecar_trace_never_touches_state_hash(tmp_path):
    _scripted_log(tmp_path)
    _, before = persistence.replay(tmp_path, "s1")
    hash_before = persistence.state_hash(before)
    persistence.append_trace(
        tmp_path, "s1", {"direction": "request", "model": "m", "chars": 12}, T0
    )
    assert persistence.trace_path(tmp_path, "s1").exists()
    _, after = persistence.replay(tmp_path, "s1")
    assert persistence.state_hash(after) == hash_before
