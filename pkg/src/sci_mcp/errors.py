"""Error taxonomy shared by the protocol layer and the simulated services.

Two kinds of failure exist and must never be conflated:

* protocol errors (``McpError``) travel as JSON-RPC error objects and mean
  the request itself could not be served;
* tool-level failures (``ToolFailure``) surface inside a successful
  ``tools/call`` response with ``isError`` set, so a calling agent can read
  the diagnostic and self-correct.
"""

from __future__ import annotations

from typing import Any

# JSON-RPC range
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_ARGS = -32602

# application range
UNKNOWN_TOOL = 1001
UNKNOWN_RESOURCE = 1002
UNKNOWN_PROMPT = 1003
MISSING_PARAM = 1004
NOT_INITIALIZED = 1005
ALREADY_INITIALIZED = 1006
INVALID_CURSOR = 1007
AUTH_DENIED = 1008

CODE_NAMES = {
    PARSE_ERROR: "PARSE_ERROR",
    INVALID_REQUEST: "INVALID_REQUEST",
    METHOD_NOT_FOUND: "METHOD_NOT_FOUND",
    INVALID_ARGS: "INVALID_ARGS",
    UNKNOWN_TOOL: "UNKNOWN_TOOL",
    UNKNOWN_RESOURCE: "UNKNOWN_RESOURCE",
    UNKNOWN_PROMPT: "UNKNOWN_PROMPT",
    MISSING_PARAM: "MISSING_PARAM",
    NOT_INITIALIZED: "NOT_INITIALIZED",
    ALREADY_INITIALIZED: "ALREADY_INITIALIZED",
    INVALID_CURSOR: "INVALID_CURSOR",
    AUTH_DENIED: "AUTH_DENIED",
}


class McpError(Exception):
    """A protocol-level error that becomes a JSON-RPC error object."""

    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data

    @property
    def name(self) -> str:
        return CODE_NAMES.get(self.code, str(self.code))


class ToolFailure(Exception):
    """A tool-level failure, reported as ``isError`` content, never as a
    dropped connection or protocol error.

    ``failure_class`` is a stable machine-readable token (first segment of
    the diagnostic text); retry policies match on it.
    """

    def __init__(self, failure_class: str, detail: str):
        super().__init__(f"{failure_class}: {detail}")
        self.failure_class = failure_class
        self.detail = detail

    def diagnostic(self) -> str:
        return f"{self.failure_class}: {self.detail}"


def failure_class_of(diagnostic: str) -> str:
    """Extract the machine-readable class token from a diagnostic string."""
    return diagnostic.split(":", 1)[0].strip()
