"""Session engine: ties documents, canvases, agents, and the event log together.

Every mutation goes through a Session method that (1) takes the session lock,
(2) performs the state change via graph/pipeline primitives, and (3) appends
the corresponding records to the event log. Folding the log therefore always
reproduces the live state; state_hash() makes that checkable.

Mutating methods accept an optional request_id. Repeating a request_id
returns the first call's result without re-executing, which lets HTTP
clients retry safely.
"""

from __future__ import annotations

import dataclasses
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import agents, muse, persistence, pipeline
from .errors import AnchorOverlap, UnknownCanvas, UnknownDocument, UnknownNode, UnknownSession, UnknownSuggestion
from .graph import Canvas, ZoomBand, apply_to_document, confirm, create_canvas, export_canvas, project
from .persistence import EventKind, EventLog, SessionState
from .pipeline import ExpansionFailure, PipelineConfig

MOCK_EPOCH = 1700000000.0


class MockClock:
    """Monotonic fake clock: starts at a fixed epoch, +1s per reading."""

    def __init__(self, start: float = MOCK_EPOCH):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self._now += 1.0
            return self._now


@dataclass(frozen=True)
class ExpandResult:
    added: tuple[str, ...]
    failures: tuple[ExpansionFailure, ...]


class _TracingProvider:
    """Mirrors raw agent traffic into the session's sidecar trace file."""

    def __init__(self, inner, root, session_id, clock, lock):
        self._inner = inner
        self._root = root
        self._session_id = session_id
        self._clock = clock
        self._lock = lock

    def complete(self, prompt_text: str, params: agents.CompletionParams) -> str:
        with self._lock:
            persistence.append_trace(
                self._root, self._session_id,
                {"direction": "request", "model": params.model_name,
                 "chars": len(prompt_text), "preview": prompt_text[:200]},
                self._clock(),
            )
        output = self._inner.complete(prompt_text, params)
        with self._lock:
            persistence.append_trace(
                self._root, self._session_id,
                {"direction": "response", "model": params.model_name,
                 "chars": len(output), "preview": output[:200]},
                self._clock(),
            )
        return output


class Session:
    def __init__(self, engine: "Engine", session_id: str, log: EventLog,
                 state: SessionState):
        self.engine = engine
        self.id = session_id
        self.log = log
        self.state = state
        self.lock = threading.RLock()
        self._results: dict[str, object] = {}
        self._trace_lock = threading.Lock()
        self._provider = _TracingProvider(
            engine.provider, engine.data_dir, session_id, engine.clock, self._trace_lock
        )

    # -- plumbing --

    def _emit(self, kind: EventKind, payload: dict) -> None:
        self.log.append(kind, payload, self.engine.clock())

    def _cached(self, request_id: str | None):
        if request_id is not None and request_id in self._results:
            return True, self._results[request_id]
        return False, None

    def _remember(self, request_id: str | None, result):
        if request_id is not None:
            self._results[request_id] = result
        return result

    def _next_id(self, prefix: str, existing) -> str:
        highest = 0
        pattern = re.compile(rf"^{prefix}(\d+)$")
        for name in existing:
            match = pattern.match(name)
            if match:
                highest = max(highest, int(match.group(1)))
        return f"{prefix}{highest + 1}"

    def _canvas(self, canvas_id: str) -> Canvas:
        canvas = self.state.canvases.get(canvas_id)
        if canvas is None:
            raise UnknownCanvas(f"no canvas {canvas_id} in session {self.id}")
        return canvas

    def _canvas_of_node(self, node_id: str) -> Canvas:
        canvas_id = node_id.split(":", 1)[0]
        canvas = self.state.canvases.get(canvas_id)
        if canvas is None or node_id not in canvas.nodes:
            raise UnknownNode(f"no node {node_id} in session {self.id}")
        return canvas

    def _document_text(self, document_id: str) -> str:
        doc = self.state.documents.get(document_id)
        if doc is None:
            raise UnknownDocument(f"no document {document_id} in session {self.id}")
        return doc.text

    # -- documents and canvases --

    def create_document(self, text: str, request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            document_id = self._next_id("d", self.state.documents)
            self._emit(EventKind.DOCUMENT_CREATED, {"document_id": document_id, "text": text})
            self.state.documents[document_id] = persistence.Document(document_id, text)
            return self._remember(request_id, document_id)

    def create_canvas(self, document_id: str, anchor: tuple[int, int],
                      request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            text = self._document_text(document_id)
            start, end = anchor
            for other in self.state.canvases.values():
                if other.document_id != document_id:
                    continue
                os_, oe = other.segment_anchor
                if not (end <= os_ or start >= oe):
                    raise AnchorOverlap(
                        f"anchor {anchor} overlaps canvas {other.id} at {other.segment_anchor}"
                    )
            segment = text[start:end]
            canvas_id = self._next_id("c", self.state.canvases)
            root_score = agents.score(
                segment,
                provider=self._provider,
                params=self.engine.score_params(),
                delta_cap=self.engine.config.delta_cap,
            )
            canvas = create_canvas(
                document_id, (start, end), segment, root_score,
                canvas_id=canvas_id, document_length=len(text),
            )
            self._emit(EventKind.CANVAS_CREATED, {
                "canvas_id": canvas_id, "document_id": document_id,
                "anchor": [start, end], "segment_text": segment,
                "root_score": root_score.to_dict(),
            })
            self.state.canvases[canvas_id] = canvas
            return self._remember(request_id, canvas_id)

    def view_canvas(self, canvas_id: str, band: ZoomBand) -> dict:
        with self.lock:
            return project(self._canvas(canvas_id), band)

    def export(self, canvas_id: str) -> dict:
        with self.lock:
            return export_canvas(self._canvas(canvas_id))

    # -- node production --

    def expand(self, canvas_id: str, label_ids, count: int | None = None,
               request_id: str | None = None, node_id: str | None = None) -> ExpandResult:
        """Expand from the canvas root, or from node_id when given."""
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas(canvas_id)
            source_id = node_id if node_id is not None else canvas.root_id
            if source_id not in canvas.nodes:
                raise UnknownNode(f"no node {source_id} in canvas {canvas_id}")
            result = self._expand(canvas, source_id, list(label_ids), count)
            return self._remember(request_id, result)

    def expand_node(self, node_id: str, label_ids, count: int | None = None,
                    request_id: str | None = None) -> ExpandResult:
        """Expansion rooted at an arbitrary node rather than the canvas root."""
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_id)
            result = self._expand(canvas, node_id, list(label_ids), count)
            return self._remember(request_id, result)

    def _expand(self, canvas: Canvas, source_id: str, label_ids: list[int],
                count: int | None) -> ExpandResult:
        config = self.engine.config
        if count is not None:
            config = dataclasses.replace(config, combos_per_label=count)
        self._emit(EventKind.EXPANSION_REQUESTED, {
            "canvas_id": canvas.id, "node_id": source_id,
            "label_ids": list(label_ids), "count": config.combos_per_label,
        })
        collected: list[tuple[int, int, int, str, dict]] = []
        kind_rank = {"candidate_generated": 0, "candidate_scored": 1,
                     "candidate_filtered": 2}
        label_rank = {l: i for i, l in enumerate(label_ids)}

        def observer(kind: str, payload: dict) -> None:
            collected.append((
                label_rank.get(payload["label_id"], 99),
                payload["version_index"], kind_rank[kind], kind, payload,
            ))

        added, failures = pipeline.expand(
            canvas, source_id, label_ids,
            overall_content=self._document_text(canvas.document_id),
            bias=self.state.bias,
            provider=self._provider, models=self.engine.models, config=config,
            observer=observer,
        )
        event_kinds = {
            "candidate_generated": EventKind.CANDIDATE_GENERATED,
            "candidate_scored": EventKind.CANDIDATE_SCORED,
            "candidate_filtered": EventKind.CANDIDATE_FILTERED,
        }
        for _, _, _, kind, payload in sorted(collected, key=lambda t: t[:3]):
            self._emit(event_kinds[kind], {"canvas_id": canvas.id, **payload})
        for new_id in added:
            self._emit_node_added(canvas, new_id)
        return ExpandResult(tuple(added), tuple(failures))

    def _emit_node_added(self, canvas: Canvas, node_id: str) -> None:
        node = canvas.node(node_id)
        self._emit(EventKind.NODE_ADDED, {
            "canvas_id": canvas.id, "node_id": node.id,
            "parents": list(node.parents), "text": node.text,
            "strategies": sorted(node.strategies),
            "origin": node.origin.to_dict(), "summary": node.summary,
            "score": node.score.to_dict(),
        })

    def refine(self, node_id: str, instruction: str,
               request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_id)
            self._emit(EventKind.REFINE_REQUESTED, {
                "canvas_id": canvas.id, "node_id": node_id, "instruction": instruction,
            })
            new_id = pipeline.refine(
                canvas, node_id, instruction,
                overall_content=self._document_text(canvas.document_id),
                provider=self._provider, models=self.engine.models,
                config=self.engine.config,
            )
            self._emit_node_added(canvas, new_id)
            return self._remember(request_id, new_id)

    def toggle(self, node_id: str, strategy_id: int, enabled: bool,
               request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_id)
            self._emit(EventKind.TOGGLE_REQUESTED, {
                "canvas_id": canvas.id, "node_id": node_id,
                "strategy_id": strategy_id, "enabled": enabled,
            })
            new_id = pipeline.toggle_strategy(
                canvas, node_id, strategy_id, enabled,
                overall_content=self._document_text(canvas.document_id),
                provider=self._provider, models=self.engine.models,
                config=self.engine.config,
            )
            self._emit_node_added(canvas, new_id)
            return self._remember(request_id, new_id)

    def merge(self, node_a: str, node_b: str, request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_a)
            self._canvas_of_node(node_b)
            self._emit(EventKind.MERGE_REQUESTED, {
                "canvas_id": canvas.id, "node_a": node_a, "node_b": node_b,
            })
            new_id = pipeline.merge(
                canvas, node_a, node_b,
                overall_content=self._document_text(canvas.document_id),
                provider=self._provider, models=self.engine.models,
                config=self.engine.config,
            )
            self._emit_node_added(canvas, new_id)
            return self._remember(request_id, new_id)

    # -- node lifecycle --

    def confirm_node(self, node_id: str, request_id: str | None = None) -> str:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_id)
            before = canvas.node(node_id).state
            node = confirm(canvas, node_id)
            if node.state is not before:
                self._emit(EventKind.NODE_CONFIRMED, {
                    "canvas_id": canvas.id, "node_id": node_id,
                })
            return self._remember(request_id, node.state.value)

    def apply_node(self, node_id: str, request_id: str | None = None) -> dict:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            canvas = self._canvas_of_node(node_id)
            patch = apply_to_document(canvas, node_id)
            self._emit(EventKind.NODE_APPLIED, {
                "canvas_id": canvas.id, "node_id": node_id,
            })
            edit = {
                "document_id": canvas.document_id, "canvas_id": canvas.id,
                "anchor": [patch.anchor[0], patch.anchor[1]],
                "old_text": patch.old_text, "new_text": patch.new_text,
            }
            persistence._fold_document_edit(self.state, edit)
            self._emit(EventKind.DOCUMENT_EDITED, edit)
            result = {
                "node_id": node_id,
                "document_id": canvas.document_id,
                "document_text": self.state.documents[canvas.document_id].text,
                "anchor": list(canvas.segment_anchor),
            }
            return self._remember(request_id, result)

    # -- muse --

    def _history_lines(self) -> list[str]:
        lines: list[str] = []
        for record in self.log.records:
            payload = record.payload
            if record.kind == EventKind.EXPANSION_REQUESTED.value:
                lines.append(muse.history_expand(payload["label_ids"], payload["count"]))
            elif record.kind == EventKind.NODE_CONFIRMED.value:
                canvas = self.state.canvases.get(payload["canvas_id"])
                strategies = (
                    canvas.node(payload["node_id"]).strategies
                    if canvas and payload["node_id"] in canvas.nodes else ()
                )
                lines.append(muse.history_confirm(payload["node_id"], strategies))
            elif record.kind == EventKind.REFINE_REQUESTED.value:
                lines.append(muse.history_refine(payload["node_id"], payload["instruction"]))
            elif record.kind == EventKind.TOGGLE_REQUESTED.value:
                lines.append(muse.history_toggle(
                    payload["node_id"], payload["strategy_id"], payload["enabled"]
                ))
            elif record.kind == EventKind.MERGE_REQUESTED.value:
                lines.append(muse.history_merge(payload["node_a"], payload["node_b"]))
            elif record.kind == EventKind.NODE_APPLIED.value:
                lines.append(muse.history_apply(payload["node_id"]))
            elif record.kind == EventKind.MUSE_VERDICT.value:
                lines.append(muse.history_verdict(
                    payload["suggestion_index"], payload["accepted"]
                ))
        return lines

    def muse_report(self, request_id: str | None = None) -> tuple[str, muse.MuseReport]:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            report = muse.analyze(
                self._history_lines(),
                provider=self._provider, params=self.engine.reason_params(),
            )
            report_id = self._next_id("r", self.state.reports)
            self._emit(EventKind.MUSE_REPORT_ISSUED, {
                "report_id": report_id, "report": report.to_dict(),
            })
            self.state.reports[report_id] = report
            return self._remember(request_id, (report_id, report))

    def muse_feedback(self, report_id: str, suggestion_index: int, accepted: bool,
                      request_id: str | None = None) -> dict[int, float]:
        with self.lock:
            hit, cached = self._cached(request_id)
            if hit:
                return cached
            report = self.state.reports.get(report_id)
            if report is None:
                raise UnknownSuggestion(f"no report {report_id} in session {self.id}")
            bias, targets = muse.ingest_feedback(
                self.state.bias, report, suggestion_index, accepted
            )
            self._emit(EventKind.MUSE_VERDICT, {
                "report_id": report_id, "suggestion_index": suggestion_index,
                "accepted": accepted, "strategy_ids": list(targets),
            })
            self.state.bias = bias
            return self._remember(request_id, dict(bias))

    # -- introspection --

    def events_since(self, after_seq: int = 0) -> list[persistence.EventRecord]:
        with self.lock:
            return [r for r in self.log.records if r.seq > after_seq]

    def state_hash(self) -> str:
        with self.lock:
            return persistence.state_hash(self.state)


class Engine:
    """Process-wide root object: sessions, provider, configuration, clock."""

    def __init__(
        self,
        data_dir: str | Path | None = None,
        *,
        mock: bool = False,
        seed: int | None = None,
        provider: agents.CompletionProvider | None = None,
        models: agents.ModelConfig | None = None,
        config: PipelineConfig | None = None,
        clock=None,
    ):
        self.data_dir = persistence.data_root(data_dir)
        self.mock = mock
        self.models = models or (agents.ModelConfig() if mock else agents.ModelConfig.from_env())
        if provider is not None:
            self.provider = provider
        elif mock:
            self.provider = agents.MockProvider()
        else:
            self.provider = agents.LiveProvider(self.models)
        base_config = config or PipelineConfig()
        if seed is not None:
            base_config = dataclasses.replace(base_config, seed=seed)
        self.config = base_config
        if clock is not None:
            self.clock = clock
        else:
            self.clock = MockClock() if mock else time.time
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    def score_params(self) -> agents.CompletionParams:
        return agents.CompletionParams(
            model_name=self.models.score_model or "offline-scorer",
            temperature=0.0, seed=self.config.seed,
        )

    def reason_params(self) -> agents.CompletionParams:
        return agents.CompletionParams(
            model_name=self.models.reason_model or "offline-reasoner",
            temperature=0.7, seed=self.config.seed,
        )

    def create_session(self) -> Session:
        with self._registry_lock:
            taken = set(self._sessions)
            for path in self.data_dir.glob("s*.ndjson"):
                if re.match(r"^s\d+$", path.stem):
                    taken.add(path.stem)
            highest = max((int(s[1:]) for s in taken), default=0)
            session_id = f"s{highest + 1}"
            log = EventLog.create(self.data_dir, session_id)
            session = Session(self, session_id, log, SessionState(session_id))
            self._sessions[session_id] = session
            return session

    def get_session(self, session_id: str) -> Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
            if session is not None:
                return session
            try:
                log, state = persistence.replay(self.data_dir, session_id)
            except persistence.StorageError:
                raise UnknownSession(f"no session {session_id}")
            session = Session(self, session_id, log, state)
            self._sessions[session_id] = session
            return session
