"""Transports carrying protocol envelopes.

Two are provided: newline-delimited stdio for single-client local use, and
a streamable HTTP endpoint for multi-client bidirectional sessions. The
HTTP endpoint accepts POSTed envelopes at ``/mcp`` and serves per-session
server-sent event streams on GET, with monotonically numbered events so a
dropped stream can resume from the last id it saw.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO

from .errors import McpError
from .protocol import (
    KIND_NOTIFICATION,
    KIND_REQUEST,
    ErrorObject,
    McpServer,
    RpcEnvelope,
    decode_message,
    encode_message,
)
from .sessions import Session, SessionLimitError, SessionRegistry  # noqa: F401  (re-export)

MCP_PATH = "/mcp"
SESSION_HEADER = "Mcp-Session-Id"


@dataclass
class TransportConfig:
    bind_host: str = "127.0.0.1"
    bind_port: int = 0
    max_sessions: int = 64
    read_timeout_ms: int = 10_000

    def __post_init__(self):
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        if self.read_timeout_ms <= 0:
            raise ValueError("read_timeout_ms must be > 0")


# --------------------------------------------------------------------------
# stdio


def serve_stdio(server: McpServer, stdin: IO[str], stdout: IO[str]) -> None:
    """Run a single-session serve loop until the input stream closes.

    One envelope per LF-terminated line. Malformed lines get an error
    response and the session stays open. Server-initiated notifications are
    interleaved on the output stream after the triggering message.
    """
    session = server.sessions.open("stdio")

    def emit(envelope: RpcEnvelope) -> None:
        stdout.write(encode_message(envelope) + "\n")
        stdout.flush()

    def drain() -> None:
        for event in session.drain():
            emit(event.envelope)

    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                msg = decode_message(line)
            except McpError as exc:
                emit(_decode_error_response(exc))
                continue
            response = server.handle_message(session, msg)
            if response is not None:
                emit(response)
            drain()
    finally:
        session.close()


def _decode_error_response(exc: McpError) -> RpcEnvelope:
    # the request id is unknowable for an undecodable line; JSON-RPC uses null
    return RpcEnvelope(kind="response", id=None, error=ErrorObject(exc.code, exc.message, exc.data))


# --------------------------------------------------------------------------
# streamable HTTP


class HttpTransport:
    """A listening MCP endpoint wrapping one server.

    POST /mcp        one envelope in, its response out (202 for notifications);
                     an initialize request with no session header opens a
                     session and returns its id in the Mcp-Session-Id header.
    GET /mcp         with Accept: text/event-stream, streams the session's
                     outbound notifications; Last-Event-ID resumes.
    DELETE /mcp      closes the session.
    """

    def __init__(self, server: McpServer, config: TransportConfig | None = None):
        self.server = server
        self.config = config or TransportConfig()
        self.server.sessions.max_sessions = self.config.max_sessions
        handler = _make_handler(self)
        # OSError (address in use, bad bind) propagates to the caller
        self.httpd = ThreadingHTTPServer((self.config.bind_host, self.config.bind_port), handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_port

    @property
    def endpoint(self) -> str:
        return f"http://{self.config.bind_host}:{self.port}{MCP_PATH}"

    def start(self) -> "HttpTransport":
        self._thread = threading.Thread(
            target=self.httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()
        return self

    def shutdown(self) -> None:
        for session in self.server.sessions.open_sessions():
            session.close()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve_http(server: McpServer, config: TransportConfig | None = None) -> HttpTransport:
    """Bind and start an HTTP transport for ``server``; returns the running
    listener (shut it down with ``.shutdown()``)."""
    return HttpTransport(server, config).start()


def _make_handler(transport: HttpTransport):
    server = transport.server

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        timeout = transport.config.read_timeout_ms / 1000  # socket read bound

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        # -- helpers -------------------------------------------------------

        def _json(self, status: int, payload: dict | str, extra_headers: dict | None = None) -> None:
            body = (payload if isinstance(payload, str) else json.dumps(payload)).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            for key, value in (extra_headers or {}).items():
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(body)

        def _empty(self, status: int) -> None:
            self.send_response(status)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def _session(self) -> Session | None:
            sid = self.headers.get(SESSION_HEADER)
            if not sid:
                return None
            session = server.sessions.get(sid)
            if session is None or session.closed:
                return None
            return session

        # -- verbs ---------------------------------------------------------

        def do_POST(self):
            if self.path != MCP_PATH:
                self._empty(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length).decode("utf-8", errors="replace")
            try:
                msg = decode_message(raw)
            except McpError as exc:
                self._json(200, encode_message(_decode_error_response(exc)))
                return

            headers: dict[str, str] = {}
            if msg.kind == KIND_REQUEST and msg.method == "initialize" and not self.headers.get(SESSION_HEADER):
                try:
                    session = server.sessions.open("http")
                except SessionLimitError as exc:
                    self._json(503, {"error": str(exc)})
                    return
                headers[SESSION_HEADER] = session.session_id
            else:
                session = self._session()
                if session is None:
                    self._empty(404)
                    return

            if msg.kind == KIND_NOTIFICATION:
                server.handle_message(session, msg)
                self._empty(202)
                return
            with session.dispatch_lock:
                response = server.handle_message(session, msg)
            assert response is not None
            self._json(200, encode_message(response), headers)

        def do_GET(self):
            if self.path != MCP_PATH:
                self._empty(404)
                return
            if "text/event-stream" not in self.headers.get("Accept", ""):
                self._empty(406)
                return
            session = self._session()
            if session is None:
                self._empty(404)
                return
            last = 0
            raw_last = self.headers.get("Last-Event-ID")
            if raw_last and raw_last.isdigit():
                last = int(raw_last)
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-store")
            self.end_headers()
            try:
                while True:
                    events = session.wait_events(last, timeout=0.1)
                    for event in events:
                        frame = f"id: {event.event_id}\ndata: {encode_message(event.envelope)}\n\n"
                        self.wfile.write(frame.encode())
                        last = event.event_id
                    if events:
                        self.wfile.flush()
                    if session.closed and not session.events_after(last):
                        break
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                self.close_connection = True

        def do_DELETE(self):
            if self.path != MCP_PATH:
                self._empty(404)
                return
            session = self._session()
            if session is None:
                self._empty(404)
                return
            server.sessions.close(session.session_id)
            self._empty(204)

    return Handler
