"""Client sessions and the per-server session registry.

A session is transport-agnostic: the stdio loop owns exactly one, the HTTP
listener opens one per client. Server-initiated notifications are buffered
per session as numbered events so an event stream can resume from the last
id it saw.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any

STATE_OPEN = "open"
STATE_INITIALIZED = "initialized"
STATE_CLOSED = "closed"


class SessionLimitError(Exception):
    """Raised when opening a session would exceed the configured maximum."""


@dataclass(frozen=True)
class SessionEvent:
    event_id: int
    envelope: Any


class Session:
    """One client connection's state: lifecycle flag plus an ordered,
    replayable buffer of outbound notifications."""

    def __init__(self, session_id: str, transport_kind: str):
        self.session_id = session_id
        self.transport_kind = transport_kind
        self.state = STATE_OPEN
        self.dispatch_lock = threading.Lock()  # serializes requests per session
        self._events: list[SessionEvent] = []
        self._cond = threading.Condition()

    @property
    def closed(self) -> bool:
        return self.state == STATE_CLOSED

    def enqueue(self, envelope: Any) -> bool:
        """Buffer an outbound envelope; returns False if the session is
        closed (closed sessions accept no sends)."""
        with self._cond:
            if self.closed:
                return False
            self._events.append(SessionEvent(len(self._events) + 1, envelope))
            self._cond.notify_all()
            return True

    def events_after(self, last_event_id: int) -> list[SessionEvent]:
        with self._cond:
            return [e for e in self._events if e.event_id > last_event_id]

    def wait_events(self, last_event_id: int, timeout: float) -> list[SessionEvent]:
        """Events newer than ``last_event_id``, blocking up to ``timeout``
        seconds for one to arrive. Empty list on timeout or close."""
        with self._cond:
            pending = [e for e in self._events if e.event_id > last_event_id]
            if pending or self.closed:
                return pending
            self._cond.wait(timeout)
            return [e for e in self._events if e.event_id > last_event_id]

    def drain(self) -> list[SessionEvent]:
        """All not-yet-drained events; used by the stdio loop."""
        with self._cond:
            start = getattr(self, "_drained_to", 0)
            out = [e for e in self._events if e.event_id > start]
            self._drained_to = len(self._events)
            return out

    def close(self) -> None:
        with self._cond:
            self.state = STATE_CLOSED
            self._cond.notify_all()


class SessionRegistry:
    """Issues unique session ids for a server's lifetime and tracks which
    sessions are currently open."""

    def __init__(self, max_sessions: int = 64):
        if max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        self.max_sessions = max_sessions
        self._lock = threading.Lock()
        self._counter = 0
        self._sessions: dict[str, Session] = {}

    def open(self, transport_kind: str) -> Session:
        with self._lock:
            live = sum(1 for s in self._sessions.values() if not s.closed)
            if live >= self.max_sessions:
                raise SessionLimitError(
                    f"session limit {self.max_sessions} reached"
                )
            self._counter += 1
            session = Session(f"s-{self._counter:06d}", transport_kind)
            self._sessions[session.session_id] = session
            return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def close(self, session_id: str) -> None:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is not None:
            session.close()

    def open_sessions(self) -> list[Session]:
        with self._lock:
            return [s for s in self._sessions.values() if not s.closed]
