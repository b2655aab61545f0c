"""HTTP service: JSON routes over the session engine, plus an SSE event feed.

Canvas and node ids are unique within a session but not across sessions, so
every canvas/node/document route carries the session id (body field for
POSTs, query parameter for GETs). Mutating routes honor an X-SB-Request-Id
header: repeating a request id replays the original result instead of
re-executing, which makes client retries safe.

Error mapping: unknown ids are 404; invalid or conflicting inputs are 400;
applying an unconfirmed node is 409; provider and payload failures surface
as 502. An expansion that produced nothing but failures is a 502 too, while
partial success returns 200 with the failures listed.
"""

from __future__ import annotations

import asyncio
import json
import os

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from . import library as lib
from .errors import (
    AnchorOutOfRange,
    AnchorOverlap,
    DegenerateOutput,
    DomainError,
    EmptyPrompt,
    EmptySegment,
    InvalidDraft,
    MalformedPayload,
    NotConfirmed,
    ParentArityMismatch,
    ProviderError,
    SelfMerge,
    StrategyNotOnNode,
    ToggleOnRoot,
    UnknownCanvas,
    UnknownDocument,
    UnknownLabel,
    UnknownNode,
    UnknownParent,
    UnknownSession,
    UnknownStrategy,
    UnknownSuggestion,
)
from .graph import ZoomBand
from .session import Engine

NOT_FOUND = (UnknownSession, UnknownCanvas, UnknownDocument, UnknownNode, UnknownParent)
CONFLICT = (NotConfirmed,)
UPSTREAM = (ProviderError, MalformedPayload, DegenerateOutput)
BAD_REQUEST = (
    AnchorOutOfRange, AnchorOverlap, EmptyPrompt, EmptySegment, InvalidDraft,
    ParentArityMismatch, SelfMerge, StrategyNotOnNode, ToggleOnRoot,
    UnknownLabel, UnknownStrategy, UnknownSuggestion,
)


class DocumentBody(BaseModel):
    session_id: str
    text: str


class CanvasBody(BaseModel):
    session_id: str
    document_id: str
    anchor: tuple[int, int]


class ExpandBody(BaseModel):
    session_id: str
    labels: list[int]
    count: int | None = None
    node_id: str | None = None


class RefineBody(BaseModel):
    session_id: str
    node_id: str
    instruction: str


class ToggleBody(BaseModel):
    session_id: str
    node_id: str
    strategy_id: int
    enabled: bool


class MergeBody(BaseModel):
    session_id: str
    node_a: str
    node_b: str


class SessionScope(BaseModel):
    session_id: str


class FeedbackBody(BaseModel):
    report_id: str
    suggestion_index: int
    accepted: bool


def _status_for(error: DomainError) -> int:
    if isinstance(error, NOT_FOUND):
        return 404
    if isinstance(error, CONFLICT):
        return 409
    if isinstance(error, UPSTREAM):
        return 502
    if isinstance(error, BAD_REQUEST):
        return 400
    return 400


def create_app(
    engine: Engine | None = None,
    *,
    data_dir=None,
    mock: bool = False,
    seed: int | None = None,
    heartbeat_seconds: float = 15.0,
    poll_seconds: float = 0.2,
    api_token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="scribespace", version="0.1.0")
    app.state.engine = engine or Engine(data_dir, mock=mock, seed=seed)
    app.state.heartbeat_seconds = heartbeat_seconds
    app.state.poll_seconds = poll_seconds
    token = api_token if api_token is not None else os.environ.get("SB_API_TOKEN", "")

    def auth(request: Request, authorization: str | None = Header(default=None)):
        if not token or request.url.path == "/healthz":
            return
        if authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    guarded = [Depends(auth)]

    @app.exception_handler(DomainError)
    async def domain_error_handler(_request: Request, error: DomainError):
        body = {"error": type(error).__name__, "detail": str(error)}
        return JSONResponse(status_code=_status_for(error), content=body)

    def _engine() -> Engine:
        return app.state.engine

    def _session(session_id: str):
        return _engine().get_session(session_id)

    def _node_view(session, node_id: str) -> dict:
        canvas = session._canvas_of_node(node_id)
        return canvas.node(node_id).to_dict()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", dependencies=guarded)
    def create_session():
        session = _engine().create_session()
        return {"session_id": session.id}

    @app.post("/documents", dependencies=guarded)
    def create_document(
        body: DocumentBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        document_id = session.create_document(body.text, request_id=x_sb_request_id)
        return {"document_id": document_id}

    @app.post("/canvases", dependencies=guarded)
    def create_canvas(
        body: CanvasBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        canvas_id = session.create_canvas(
            body.document_id, tuple(body.anchor), request_id=x_sb_request_id
        )
        canvas = session.state.canvases[canvas_id]
        return {
            "canvas_id": canvas_id,
            "root_id": canvas.root_id,
            "root_score": canvas.node(canvas.root_id).score.to_dict(),
        }

    @app.get("/canvases/{canvas_id}", dependencies=guarded)
    def view_canvas(
        canvas_id: str,
        session: str = Query(...),
        band: str = Query(default="summary"),
    ):
        try:
            zoom = ZoomBand(band)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown band {band!r}")
        return _session(session).view_canvas(canvas_id, zoom)

    @app.post("/canvases/{canvas_id}/expand", dependencies=guarded)
    def expand(
        canvas_id: str,
        body: ExpandBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        result = session.expand(
            canvas_id, body.labels, count=body.count,
            request_id=x_sb_request_id, node_id=body.node_id,
        )
        failures = [
            {"label_id": f.label_id, "stage": f.stage, "detail": f.detail,
             "version_index": f.version_index}
            for f in result.failures
        ]
        if not result.added and failures:
            return JSONResponse(
                status_code=502,
                content={"error": "ExpansionFailed", "added": [], "failures": failures},
            )
        return {
            "added": [_node_view(session, node_id) for node_id in result.added],
            "failures": failures,
        }

    @app.post("/canvases/{canvas_id}/refine", dependencies=guarded)
    def refine(
        canvas_id: str,
        body: RefineBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        _require_node_in_canvas(session, canvas_id, body.node_id)
        node_id = session.refine(body.node_id, body.instruction, request_id=x_sb_request_id)
        return {"node": _node_view(session, node_id)}

    @app.post("/canvases/{canvas_id}/toggle", dependencies=guarded)
    def toggle(
        canvas_id: str,
        body: ToggleBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        _require_node_in_canvas(session, canvas_id, body.node_id)
        node_id = session.toggle(
            body.node_id, body.strategy_id, body.enabled, request_id=x_sb_request_id
        )
        return {"node": _node_view(session, node_id)}

    @app.post("/canvases/{canvas_id}/merge", dependencies=guarded)
    def merge(
        canvas_id: str,
        body: MergeBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        _require_node_in_canvas(session, canvas_id, body.node_a)
        _require_node_in_canvas(session, canvas_id, body.node_b)
        node_id = session.merge(body.node_a, body.node_b, request_id=x_sb_request_id)
        return {"node": _node_view(session, node_id)}

    def _require_node_in_canvas(session, canvas_id: str, node_id: str) -> None:
        canvas = session.state.canvases.get(canvas_id)
        if canvas is None:
            raise UnknownCanvas(f"no canvas {canvas_id} in session {session.id}")
        if node_id not in canvas.nodes:
            raise UnknownNode(f"no node {node_id} in canvas {canvas_id}")

    @app.post("/nodes/{node_id}/confirm", dependencies=guarded)
    def confirm_node(
        node_id: str,
        body: SessionScope,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        state = session.confirm_node(node_id, request_id=x_sb_request_id)
        return {"node_id": node_id, "state": state}

    @app.post("/nodes/{node_id}/apply", dependencies=guarded)
    def apply_node(
        node_id: str,
        body: SessionScope,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(body.session_id)
        return session.apply_node(node_id, request_id=x_sb_request_id)

    @app.get("/muse/{session_id}", dependencies=guarded)
    def muse_report(
        session_id: str,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(session_id)
        report_id, report = session.muse_report(request_id=x_sb_request_id)
        return {"report_id": report_id, "report": report.to_dict()}

    @app.post("/muse/{session_id}/feedback", dependencies=guarded)
    def muse_feedback(
        session_id: str,
        body: FeedbackBody,
        x_sb_request_id: str | None = Header(default=None),
    ):
        session = _session(session_id)
        bias = session.muse_feedback(
            body.report_id, body.suggestion_index, body.accepted,
            request_id=x_sb_request_id,
        )
        return {"bias": {str(k): v for k, v in bias.items()}}

    @app.get("/library", dependencies=guarded)
    def library_view():
        catalog = lib.library()
        return {
            "labels": [
                {
                    "id": label.id, "name": label.name, "axis": label.axis.value,
                    "strategy_ids": sorted(label.strategy_ids),
                }
                for label in catalog.labels.values()
            ],
            "strategies": [
                {
                    "id": card.id, "name": card.name,
                    "labels": sorted(card.labels),
                }
                for card in catalog.strategies.values()
            ],
        }

    @app.get("/sessions/{session_id}/events", dependencies=guarded)
    async def events(
        session_id: str,
        request: Request,
        after: int = Query(default=0),
        last_event_id: str | None = Header(default=None),
    ):
        session = _session(session_id)
        if last_event_id:
            try:
                after = max(after, int(last_event_id))
            except ValueError:
                pass

        async def stream():
            cursor = after
            idle = 0.0
            while True:
                if await request.is_disconnected():
                    return
                fresh = session.events_since(cursor)
                if fresh:
                    idle = 0.0
                    for record in fresh:
                        cursor = record.seq
                        data = json.dumps(record.to_dict(), ensure_ascii=False)
                        yield f"id: {record.seq}\nevent: {record.kind}\ndata: {data}\n\n"
                else:
                    await asyncio.sleep(app.state.poll_seconds)
                    idle += app.state.poll_seconds
                    if idle >= app.state.heartbeat_seconds:
                        idle = 0.0
                        yield ": keep-alive\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
