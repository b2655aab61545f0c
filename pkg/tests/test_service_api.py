"""HTTP layer tests: routes, status mapping, idempotency, SSE resume."""

import json

import pytest
from fastapi.testclient import TestClient

from scribespace.agents import MockProvider
from scribespace.service_api import create_app
from scribespace.session import Engine

DOC = (
    "Slime molds solve mazes without a brain by reinforcing the protoplasm "
    "tubes that find food first and letting the rest wither away."
)


@pytest.fixture()
def client(tmp_path):
    app = create_app(data_dir=tmp_path, mock=True, seed=7,
                     heartbeat_seconds=30.0, poll_seconds=0.01)
    with TestClient(app) as test_client:
        yield test_client


def _bootstrap(client, anchor=(0, 60)):
    session_id = client.post("/sessions").json()["session_id"]
    document_id = client.post(
        "/documents", json={"session_id": session_id, "text": DOC}
    ).json()["document_id"]
    created = client.post(
        "/canvases",
        json={"session_id": session_id, "document_id": document_id, "anchor": list(anchor)},
    ).json()
    return session_id, document_id, created


def test_healthz(client):
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_full_editing_flow_over_http(client):
    session_id, document_id, created = _bootstrap(client)
    canvas_id = created["canvas_id"]
    assert created["root_id"] == f"{canvas_id}:n1"
    assert created["root_score"] == {"engagement": 50, "exposition": 50}

    expanded = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [5, 1], "count": 2},
    )
    assert expanded.status_code == 200
    body = expanded.json()
    assert body["failures"] == []
    assert len(body["added"]) == 4
    node = body["added"][0]
    assert set(node) >= {"id", "parents", "text", "strategies", "origin", "summary",
                         "score", "state"}

    node_id = node["id"]
    confirmed = client.post(f"/nodes/{node_id}/confirm", json={"session_id": session_id})
    assert confirmed.json() == {"node_id": node_id, "state": "confirmed"}

    applied = client.post(f"/nodes/{node_id}/apply", json={"session_id": session_id})
    assert applied.status_code == 200
    assert applied.json()["document_text"].startswith(node["text"])

    for band, extra_key in (("dots", None), ("summary", "labels"), ("full", "text")):
        view = client.get(f"/canvases/{canvas_id}", params={"session": session_id, "band": band})
        assert view.status_code == 200
        payload = view.json()
        assert payload["band"] == band
        if extra_key:
            assert extra_key in payload["nodes"][0]

    report = client.get(f"/muse/{session_id}")
    assert report.status_code == 200
    report_body = report.json()
    assert report_body["report_id"] == "r1"
    suggestions = report_body["report"]["suggestions"]
    assert suggestions

    feedback = client.post(
        f"/muse/{session_id}/feedback",
        json={"report_id": "r1", "suggestion_index": suggestions[0]["index"],
              "accepted": True},
    )
    assert feedback.status_code == 200
    assert all(weight == 1.5 for weight in feedback.json()["bias"].values())


def test_unknown_ids_are_404(client):
    session_id, _, created = _bootstrap(client)
    assert client.get("/canvases/c1", params={"session": "s99"}).status_code == 404
    assert client.get("/canvases/c9", params={"session": session_id}).status_code == 404
    response = client.post(
        "/canvases/c9/expand", json={"session_id": session_id, "labels": [5]}
    )
    assert response.status_code == 404
    assert client.post(
        "/nodes/c1:n99/confirm", json={"session_id": session_id}
    ).status_code == 404
    assert client.post(
        "/documents", json={"session_id": "s99", "text": "x"}
    ).status_code == 404


def test_validation_failures_are_400(client):
    session_id, document_id, created = _bootstrap(client)
    canvas_id = created["canvas_id"]

    overlap = client.post(
        "/canvases",
        json={"session_id": session_id, "document_id": document_id, "anchor": [10, 70]},
    )
    assert overlap.status_code == 400
    assert overlap.json()["error"] == "AnchorOverlap"

    bad_band = client.get(
        f"/canvases/{canvas_id}", params={"session": session_id, "band": "galaxy"}
    )
    assert bad_band.status_code == 400

    expanded = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [5], "count": 1},
    ).json()
    node_id = expanded["added"][0]["id"]
    self_merge = client.post(
        f"/canvases/{canvas_id}/merge",
        json={"session_id": session_id, "node_a": node_id, "node_b": node_id},
    )
    assert self_merge.status_code == 400
    assert self_merge.json()["error"] == "SelfMerge"

    bad_label = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [77]},
    )
    assert bad_label.status_code == 400


def test_apply_unconfirmed_is_409(client):
    session_id, _, created = _bootstrap(client)
    canvas_id = created["canvas_id"]
    expanded = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [5], "count": 1},
    ).json()
    node_id = expanded["added"][0]["id"]
    response = client.post(f"/nodes/{node_id}/apply", json={"session_id": session_id})
    assert response.status_code == 409
    assert response.json()["error"] == "NotConfirmed"


class _DeadGenerator:
    def __init__(self):
        self.inner = MockProvider()

    def complete(self, prompt_text, params):
        if "Your task is to revise the" in prompt_text:
            from scribespace.errors import ProviderError

            raise ProviderError("generator offline")
        return self.inner.complete(prompt_text, params)


def test_total_expansion_failure_is_502(tmp_path):
    engine = Engine(tmp_path, mock=True, seed=7, provider=_DeadGenerator())
    app = create_app(engine, poll_seconds=0.01)
    with TestClient(app) as client:
        session_id, _, created = _bootstrap(client)
        response = client.post(
            f"/canvases/{created['canvas_id']}/expand",
            json={"session_id": session_id, "labels": [5]},
        )
        assert response.status_code == 502
        body = response.json()
        assert body["added"] == []
        assert len(body["failures"]) == 3


def test_request_id_header_replays_result(client):
    session_id, _, created = _bootstrap(client)
    canvas_id = created["canvas_id"]
    first = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [5], "count": 2},
        headers={"X-SB-Request-Id": "once"},
    ).json()
    second = client.post(
        f"/canvases/{canvas_id}/expand",
        json={"session_id": session_id, "labels": [5], "count": 2},
        headers={"X-SB-Request-Id": "once"},
    ).json()
    assert [n["id"] for n in first["added"]] == [n["id"] for n in second["added"]]
    dots = client.get(
        f"/canvases/{canvas_id}", params={"session": session_id, "band": "dots"}
    ).json()
    assert len(dots["nodes"]) == 1 + len(first["added"])


def test_library_route_lists_labels_and_strategies(client):
    catalog = client.get("/library").json()
    assert len(catalog["labels"]) == 8
    assert len(catalog["strategies"]) == 25
    by_id = {entry["id"]: entry for entry in catalog["labels"]}
    assert by_id[5]["axis"] == "engagement"
    assert by_id[1]["axis"] == "exposition"


def _read_sse_events(lines, limit):
    # `lines` is a line iterator; callers that read a stream in stages must
    # create it once and pass the same iterator to every call.
    events = []
    current = {}
    for line in lines:
        if line.startswith("id: "):
            current["id"] = int(line[4:])
        elif line.startswith("event: "):
            current["event"] = line[7:]
        elif line.startswith("data: "):
            current["data"] = json.loads(line[6:])
        elif line == "" and current:
            events.append(current)
            current = {}
            if len(events) >= limit:
                break
    return events


def test_event_stream_replays_and_resumes(tmp_path, live_server_factory):
    import httpx

    app = create_app(data_dir=tmp_path, mock=True, seed=7,
                     heartbeat_seconds=30.0, poll_seconds=0.01)
    server = live_server_factory(app)
    base = server.base_url
    with httpx.Client(base_url=base, timeout=10.0) as http:
        session_id = http.post("/sessions").json()["session_id"]
        document_id = http.post(
            "/documents", json={"session_id": session_id, "text": DOC}
        ).json()["document_id"]
        canvas_id = http.post(
            "/canvases",
            json={"session_id": session_id, "document_id": document_id,
                  "anchor": [0, 60]},
        ).json()["canvas_id"]
        http.post(
            f"/canvases/{canvas_id}/expand",
            json={"session_id": session_id, "labels": [5], "count": 2},
        )

        with http.stream("GET", f"/sessions/{session_id}/events") as response:
            assert response.status_code == 200
            assert response.headers["content-type"].startswith("text/event-stream")
            events = _read_sse_events(response.iter_lines(), limit=4)
        assert [e["id"] for e in events] == [1, 2, 3, 4]
        assert events[0]["event"] == "DocumentCreated"
        assert events[0]["data"]["payload"]["document_id"] == "d1"

        # A second, independent client resumes from its last seen seq and
        # observes records produced after it connected.
        with httpx.Client(base_url=base, timeout=10.0) as other:
            with other.stream(
                "GET", f"/sessions/{session_id}/events", params={"after": 3}
            ) as response:
                lines = response.iter_lines()
                head = _read_sse_events(lines, limit=1)
                assert head[0]["id"] == 4
                # The expand wrote records 1..9; confirming now appends seq 10,
                # which this already-open stream must deliver live.
                http.post("/nodes/c1:n2/confirm", json={"session_id": session_id})
                rest = _read_sse_events(lines, limit=6)
            assert [e["id"] for e in rest] == [5, 6, 7, 8, 9, 10]
            assert rest[-1]["event"] == "NodeConfirmed"

        with http.stream(
            "GET", f"/sessions/{session_id}/events",
            headers={"Last-Event-Id": "4"},
        ) as response:
            tail = _read_sse_events(response.iter_lines(), limit=1)
        assert tail[0]["id"] == 5


def test_event_stream_sends_heartbeats_when_idle(tmp_path, live_server_factory):
    import httpx

    app = create_app(data_dir=tmp_path, mock=True, seed=7,
                     heartbeat_seconds=0.02, poll_seconds=0.01)
    server = live_server_factory(app)
    with httpx.Client(base_url=server.base_url, timeout=10.0) as http:
        session_id = http.post("/sessions").json()["session_id"]
        with http.stream("GET", f"/sessions/{session_id}/events") as response:
            for line in response.iter_lines():
                if line.startswith(":"):
                    assert "keep-alive" in line
                    break


def test_bearer_token_guard(tmp_path):
    app = create_app(data_dir=tmp_path, mock=True, seed=7, api_token="sekrit",
                     poll_seconds=0.01)
    with TestClient(app) as client:
        assert client.get("/healthz").status_code == 200
        assert client.post("/sessions").status_code == 401
        ok = client.post("/sessions", headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200
        assert client.post(
            "/sessions", headers={"Authorization": "Bearer wrong"}
        ).status_code == 401
