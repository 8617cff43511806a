"""Transport behavior: stdio framing, HTTP sessions, SSE streams."""

import io
import json
import threading

import httpx
import pytest

from sci_mcp import errors
from sci_mcp.protocol import McpServer, RpcEnvelope, ToolDescriptor, encode_message
from sci_mcp.sessions import SessionLimitError, SessionRegistry
from sci_mcp.transport import (
    MCP_PATH,
    SESSION_HEADER,
    TransportConfig,
    serve_http,
    serve_stdio,
)


def echo_server(**kwargs):
    server = McpServer("echosrv", **kwargs)
    server.register_tool(
        ToolDescriptor(
            name="echo",
            description="returns its arguments",
            input_schema={"type": "object", "properties": {}, "required": []},
            output_schema={"type": "object"},
        ),
        lambda args: {"echo": args},
    )
    return server


def lines(*envelopes):
    return "".join(encode_message(e) + "\n" for e in envelopes)


# -- stdio -------------------------------------------------------------------


def run_stdio(server, text):
    stdin = io.StringIO(text)
    stdout = io.StringIO()
    serve_stdio(server, stdin, stdout)
    return [json.loads(line) for line in stdout.getvalue().splitlines()]


def test_stdio_initialize_then_list_in_order():
    out = run_stdio(
        echo_server(),
        lines(
            RpcEnvelope.request(1, "initialize", {}),
            RpcEnvelope.request(2, "tools/list", {}),
        ),
    )
    assert [o["id"] for o in out] == [1, 2]
    assert out[1]["result"]["tools"][0]["name"] == "echo"


def test_stdio_eof_closes_session():
    server = echo_server()
    run_stdio(server, lines(RpcEnvelope.request(1, "initialize", {})))
    assert server.sessions.open_sessions() == []


def test_stdio_malformed_line_keeps_session_open():
    text = lines(RpcEnvelope.request(1, "initialize", {})) + "{broken\n" + lines(
        RpcEnvelope.request(2, "tools/list", {})
    )
    out = run_stdio(echo_server(), text)
    assert out[1]["error"]["code"] == errors.PARSE_ERROR
    assert out[2]["id"] == 2 and "result" in out[2]


def test_stdio_interleaves_notifications():
    server = echo_server()

    def poke(args):
        server.notify_tools_list_changed()
        return {"ok": True}

    server.register_tool(
        ToolDescriptor("poke", "emit a list-changed", {"type": "object"}, {"type": "object"}),
        poke,
    )
    out = run_stdio(
        server,
        lines(
            RpcEnvelope.request(1, "initialize", {}),
            RpcEnvelope.request(2, "tools/call", {"name": "poke", "arguments": {}}),
        ),
    )
    methods = [o.get("method") for o in out]
    assert "notifications/tools/list_changed" in methods


# -- session registry ---------------------------------------------------------


def test_session_ids_pairwise_distinct():
    reg = SessionRegistry(max_sessions=200)
    ids = [reg.open("http").session_id for _ in range(100)]
    assert len(set(ids)) == 100


def test_session_limit():
    reg = SessionRegistry(max_sessions=2)
    reg.open("http")
    reg.open("http")
    with pytest.raises(SessionLimitError):
        reg.open("http")


def test_closed_session_accepts_no_sends():
    reg = SessionRegistry()
    session = reg.open("http")
    reg.close(session.session_id)
    assert session.enqueue(RpcEnvelope.notification("n")) is False


# -- HTTP ---------------------------------------------------------------------


@pytest.fixture()
def http_transport():
    transport = serve_http(echo_server(), TransportConfig(max_sessions=4))
    yield transport
    transport.shutdown()


def post(client, url, envelope, session_id=None):
    headers = {SESSION_HEADER: session_id} if session_id else {}
    return client.post(url, content=encode_message(envelope), headers=headers)


def initialize(client, url):
    resp = post(client, url, RpcEnvelope.request(1, "initialize", {}))
    assert resp.status_code == 200
    return resp.headers[SESSION_HEADER]


def test_http_two_clients_get_distinct_sessions(http_transport):
    with httpx.Client() as client:
        a = initialize(client, http_transport.endpoint)
        b = initialize(client, http_transport.endpoint)
    assert a != b


def test_http_unknown_session_is_404(http_transport):
    with httpx.Client() as client:
        resp = post(client, http_transport.endpoint, RpcEnvelope.request(2, "tools/list", {}), "s-999999")
    assert resp.status_code == 404


def test_http_session_limit_503(http_transport):
    with httpx.Client() as client:
        for _ in range(4):
            initialize(client, http_transport.endpoint)
        resp = post(client, http_transport.endpoint, RpcEnvelope.request(1, "initialize", {}))
    assert resp.status_code == 503


def test_http_call_round_trip(http_transport):
    with httpx.Client() as client:
        sid = initialize(client, http_transport.endpoint)
        resp = post(
            client,
            http_transport.endpoint,
            RpcEnvelope.request(5, "tools/call", {"name": "echo", "arguments": {"x": 1}}),
            sid,
        )
        body = json.loads(resp.text)
    assert body["result"]["content"] == {"echo": {"x": 1}}


def test_http_delete_closes_session(http_transport):
    with httpx.Client() as client:
        sid = initialize(client, http_transport.endpoint)
        assert client.delete(http_transport.endpoint, headers={SESSION_HEADER: sid}).status_code == 204
        resp = post(client, http_transport.endpoint, RpcEnvelope.request(2, "tools/list", {}), sid)
    assert resp.status_code == 404


def read_sse_events(url, session_id, expect, last_event_id=None, timeout=5.0):
    """Collect `expect` SSE events from a session stream."""
    headers = {"Accept": "text/event-stream", SESSION_HEADER: session_id}
    if last_event_id is not None:
        headers["Last-Event-ID"] = str(last_event_id)
    events = []
    with httpx.Client(timeout=timeout) as client:
        with client.stream("GET", url, headers=headers) as resp:
            assert resp.status_code == 200
            current = {}
            for line in resp.iter_lines():
                if line.startswith("id:"):
                    current["id"] = int(line.split(":", 1)[1].strip())
                elif line.startswith("data:"):
                    current["data"] = json.loads(line.split(":", 1)[1].strip())
                elif line == "" and current:
                    events.append(current)
                    current = {}
                    if len(events) >= expect:
                        break
    return events


def test_http_broadcast_reaches_both_streams(http_transport):
    server = http_transport.server
    with httpx.Client() as client:
        a = initialize(client, http_transport.endpoint)
        b = initialize(client, http_transport.endpoint)

    results = {}
    threads = [
        threading.Thread(target=lambda k=k: results.setdefault(k, read_sse_events(http_transport.endpoint, k, 1)))
        for k in (a, b)
    ]
    for t in threads:
        t.start()
    # give both streams a moment to connect, then broadcast
    import time

    time.sleep(0.3)
    assert server.notify_tools_list_changed() == 2
    for t in threads:
        t.join(timeout=5)
    for sid in (a, b):
        assert len(results[sid]) == 1
        assert results[sid][0]["data"]["method"] == "notifications/tools/list_changed"


def test_http_resume_from_last_event_id(http_transport):
    server = http_transport.server
    with httpx.Client() as client:
        sid = initialize(client, http_transport.endpoint)
    server.notify_tools_list_changed()
    server.notify_tools_list_changed()
    server.notify_tools_list_changed()
    replay = read_sse_events(http_transport.endpoint, sid, 2, last_event_id=1)
    assert [e["id"] for e in replay] == [2, 3]


def test_http_isolation_between_sessions(http_transport):
    """Traffic targeted at one session never shows on another's stream."""
    server = http_transport.server
    with httpx.Client() as client:
        a = initialize(client, http_transport.endpoint)
        b = initialize(client, http_transport.endpoint)
    session_a = server.sessions.get(a)
    session_a.enqueue(RpcEnvelope.notification("only/for/a"))
    got_a = read_sse_events(http_transport.endpoint, a, 1)
    assert got_a[0]["data"]["method"] == "only/for/a"
    session_b = server.sessions.get(b)
    assert session_b.events_after(0) == []


def test_http_bind_conflict_raises():
    first = serve_http(echo_server(), TransportConfig())
    try:
        with pytest.raises(OSError):
            serve_http(echo_server(), TransportConfig(bind_port=first.port))
    finally:
        first.shutdown()
