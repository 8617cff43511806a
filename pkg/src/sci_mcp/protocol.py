"""Core message model and server-side dispatch.

Implements the three primitives a server can expose (tools, resources,
prompts) over JSON-RPC 2.0 framing, with registration-order tool listing,
cursor pagination, schema-checked tool calls, and a list-changed
notification fan-out used by dynamic tool discovery.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

from .errors import (
    ALREADY_INITIALIZED,
    AUTH_DENIED,
    INVALID_ARGS,
    INVALID_CURSOR,
    INVALID_REQUEST,
    METHOD_NOT_FOUND,
    MISSING_PARAM,
    NOT_INITIALIZED,
    PARSE_ERROR,
    UNKNOWN_PROMPT,
    UNKNOWN_RESOURCE,
    UNKNOWN_TOOL,
    McpError,
    ToolFailure,
)
from .sessions import STATE_INITIALIZED, STATE_OPEN, Session, SessionRegistry

PROTOCOL_VERSION = "2025-03-26"

KIND_REQUEST = "request"
KIND_RESPONSE = "response"
KIND_NOTIFICATION = "notification"

TOOLS_LIST_CHANGED = "notifications/tools/list_changed"

_TOOL_NAME_RE = re.compile(r"^[a-z0-9_]+$")
_TOKEN_RE = re.compile(r"^[a-z0-9][a-z0-9_.+-]*$")
_URI_RE = re.compile(r"^[a-z][a-z0-9+.-]*://")
_PLACEHOLDER_RE = re.compile(r"\{([a-z0-9_]+)\}")


class EnvelopeError(ValueError):
    """Raised when an envelope is constructed in violation of its invariants."""


@dataclass(frozen=True)
class ErrorObject:
    code: int
    message: str
    data: Any = None

    def __post_init__(self):
        if not self.message:
            raise EnvelopeError("error message must be non-empty")


@dataclass(frozen=True)
class RpcEnvelope:
    """One wire message: a request, a response, or a notification."""

    kind: str
    id: Any = None
    method: str | None = None
    params: Any = None
    result: Any = None
    error: ErrorObject | None = None

    def __post_init__(self):
        if self.kind == KIND_REQUEST:
            if self.id is None or not self.method:
                raise EnvelopeError("requests carry an id and a method")
        elif self.kind == KIND_NOTIFICATION:
            if self.id is not None:
                raise EnvelopeError("notifications carry no id")
            if not self.method:
                raise EnvelopeError("notifications carry a method")
        elif self.kind == KIND_RESPONSE:
            # id may be None: parse errors answer requests whose id was unreadable
            if self.method is not None:
                raise EnvelopeError("responses carry no method")
            if self.result is not None and self.error is not None:
                raise EnvelopeError("a response carries exactly one of result or error")
        else:
            raise EnvelopeError(f"unknown envelope kind {self.kind!r}")

    @classmethod
    def request(cls, id: Any, method: str, params: Any = None) -> "RpcEnvelope":
        return cls(kind=KIND_REQUEST, id=id, method=method, params=params)

    @classmethod
    def notification(cls, method: str, params: Any = None) -> "RpcEnvelope":
        return cls(kind=KIND_NOTIFICATION, method=method, params=params)

    @classmethod
    def response(cls, id: Any, result: Any) -> "RpcEnvelope":
        return cls(kind=KIND_RESPONSE, id=id, result=result)

    @classmethod
    def error_response(cls, id: Any, error: ErrorObject) -> "RpcEnvelope":
        return cls(kind=KIND_RESPONSE, id=id, error=error)


def encode_message(msg: RpcEnvelope) -> str:
    """Serialize an envelope to one canonical LF-free JSON line."""
    obj: dict[str, Any] = {"jsonrpc": "2.0"}
    if msg.kind in (KIND_REQUEST, KIND_NOTIFICATION):
        if msg.kind == KIND_REQUEST:
            obj["id"] = msg.id
        obj["method"] = msg.method
        if msg.params is not None:
            obj["params"] = msg.params
    else:
        obj["id"] = msg.id
        if msg.error is not None:
            err: dict[str, Any] = {"code": msg.error.code, "message": msg.error.message}
            if msg.error.data is not None:
                err["data"] = msg.error.data
            obj["error"] = err
        else:
            obj["result"] = msg.result
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def decode_message(text: str) -> RpcEnvelope:
    """Parse one line into an envelope.

    Raises ``McpError(PARSE_ERROR)`` for malformed JSON and
    ``McpError(INVALID_REQUEST)`` for a structurally invalid envelope.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise McpError(PARSE_ERROR, f"malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise McpError(INVALID_REQUEST, "envelope must be a JSON object")
    if obj.get("jsonrpc") != "2.0":
        raise McpError(INVALID_REQUEST, "missing or unsupported jsonrpc version")

    def invalid(reason: str) -> McpError:
        return McpError(INVALID_REQUEST, reason)

    if "method" in obj:
        method = obj["method"]
        if not isinstance(method, str) or not method:
            raise invalid("method must be a non-empty string")
        msg_id = obj.get("id")
        if msg_id is not None and not isinstance(msg_id, (str, int)):
            raise invalid("id must be a string or integer")
        try:
            if msg_id is None:
                return RpcEnvelope.notification(method, obj.get("params"))
            return RpcEnvelope.request(msg_id, method, obj.get("params"))
        except EnvelopeError as exc:
            raise invalid(str(exc)) from exc

    # no method: must be a response
    if "id" not in obj:
        raise invalid("a request needs a method; a response needs an id field")
    has_result = "result" in obj
    has_error = "error" in obj
    if has_result == has_error:
        raise invalid("a response carries exactly one of result or error")
    if has_error:
        raw = obj["error"]
        if (
            not isinstance(raw, dict)
            or not isinstance(raw.get("code"), int)
            or not isinstance(raw.get("message"), str)
            or not raw["message"]
        ):
            raise invalid("error object needs an integer code and non-empty message")
        err = ErrorObject(raw["code"], raw["message"], raw.get("data"))
        return RpcEnvelope.error_response(obj["id"], err)
    return RpcEnvelope.response(obj["id"], obj["result"])


# --------------------------------------------------------------------------
# descriptors


def _check_tokens(values, what: str) -> frozenset[str]:
    out = frozenset(values)
    for v in out:
        if not isinstance(v, str) or not _TOKEN_RE.match(v):
            raise ValueError(f"{what} entries must be non-empty lowercase tokens, got {v!r}")
    return out


@dataclass(frozen=True)
class RequirementSet:
    """Software and resource demands a site must satisfy to host a tool."""

    software: frozenset[str] = frozenset()
    resources: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "software", _check_tokens(self.software, "software"))
        object.__setattr__(self, "resources", _check_tokens(self.resources, "resources"))

    @classmethod
    def of(cls, software=(), resources=()) -> "RequirementSet":
        return cls(frozenset(software), frozenset(resources))

    @property
    def empty(self) -> bool:
        return not self.software and not self.resources

    def to_wire(self) -> dict:
        return {"software": sorted(self.software), "resources": sorted(self.resources)}

    @classmethod
    def from_wire(cls, obj: Mapping | None) -> "RequirementSet":
        if not obj:
            return cls()
        return cls.of(obj.get("software", ()), obj.get("resources", ()))


@dataclass(frozen=True)
class ToolDescriptor:
    """An invokable action: its name, documentation, input/output schemas,
    and execution requirements."""

    name: str
    description: str
    input_schema: Mapping[str, Any]
    output_schema: Mapping[str, Any]
    requirements: RequirementSet = RequirementSet()

    def __post_init__(self):
        if not _TOOL_NAME_RE.match(self.name):
            raise ValueError(f"tool name {self.name!r} must match [a-z0-9_]+")
        props = set((self.input_schema or {}).get("properties", {}))
        required = (self.input_schema or {}).get("required", [])
        missing = [r for r in required if r not in props]
        if missing:
            raise ValueError(f"input schema must list every required parameter: {missing}")

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "inputSchema": dict(self.input_schema),
            "outputSchema": dict(self.output_schema),
            "requirements": self.requirements.to_wire(),
        }


@dataclass(frozen=True)
class ResourceDescriptor:
    uri: str
    name: str
    description: str
    media_type: str

    def __post_init__(self):
        if not _URI_RE.match(self.uri):
            raise ValueError(f"resource uri {self.uri!r} must carry a scheme prefix")

    def to_wire(self) -> dict:
        return {
            "uri": self.uri,
            "name": self.name,
            "description": self.description,
            "mediaType": self.media_type,
        }


@dataclass(frozen=True)
class PromptParameter:
    name: str
    description: str = ""
    required: bool = True


@dataclass(frozen=True)
class PromptDescriptor:
    """A reusable text template with named ``{placeholder}`` slots."""

    name: str
    description: str
    parameters: tuple[PromptParameter, ...]
    template: str

    def __post_init__(self):
        placeholders = set(_PLACEHOLDER_RE.findall(self.template))
        declared = {p.name for p in self.parameters}
        undeclared = placeholders - declared
        if undeclared:
            raise ValueError(f"template placeholders without parameters: {sorted(undeclared)}")
        missing = {p.name for p in self.parameters if p.required} - placeholders
        if missing:
            raise ValueError(f"required parameters absent from template: {sorted(missing)}")


@dataclass(frozen=True)
class ServerIdentity:
    server_id: str
    capability_names: tuple[str, ...]
    auth_client_id: str


@dataclass
class ToolResult:
    """Outcome of one tool call; failures ride in-band so agents can read
    the diagnostic and retry."""

    content: Any
    is_error: bool = False

    def to_wire(self) -> dict:
        return {"content": self.content, "isError": self.is_error}

    @property
    def error_text(self) -> str:
        if not self.is_error:
            return ""
        if isinstance(self.content, Mapping):
            return str(self.content.get("error", ""))
        return str(self.content)


# --------------------------------------------------------------------------
# minimal schema checking (objects, primitive types, required lists)

_TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "object": lambda v: isinstance(v, Mapping),
    "array": lambda v: isinstance(v, (list, tuple)),
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
}


def schema_violations(schema: Mapping[str, Any] | None, value: Any, path: str = "") -> list[str]:
    """Names of offending fields for ``value`` against a schema subset
    (type / properties / required). Empty list means valid."""
    if not schema:
        return []
    out: list[str] = []
    expected = schema.get("type")
    check = _TYPE_CHECKS.get(expected) if expected else None
    if check and not check(value):
        out.append(f"{path or '$'} (expected {expected})")
        return out
    if expected == "object":
        for name in schema.get("required", []):
            if name not in value:
                out.append(f"{_join(path, name)} (missing)")
        for name, sub in schema.get("properties", {}).items():
            if name in value:
                out.extend(schema_violations(sub, value[name], _join(path, name)))
    return out


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


# --------------------------------------------------------------------------
# server


@dataclass
class RegisteredTool:
    descriptor: ToolDescriptor
    handler: Callable[[Mapping[str, Any]], Any]
    required_scope: str | None = None


class ToolRegistrationError(ValueError):
    """A tool name collided at registration; silent replacement would break
    clients that cache tool lists."""


class McpServer:
    """Dispatches protocol requests against registered tools, resources and
    prompts for any number of concurrent sessions.

    The tool registry is copy-on-write: readers take a plain reference,
    mutation (registration, discovery materialization) swaps the mapping
    under a lock, so listing and calling never block each other.
    """

    def __init__(
        self,
        server_id: str,
        *,
        server_version: str = "0.1.0",
        auth_client_id: str | None = None,
        token_service=None,
        page_size: int = 50,
        max_sessions: int = 64,
    ):
        self.server_id = server_id
        self.server_version = server_version
        self.auth_client_id = auth_client_id or f"{server_id}-auth"
        self.token_service = token_service
        self.page_size = page_size
        self.sessions = SessionRegistry(max_sessions)
        self._tools: dict[str, RegisteredTool] = {}
        self._tool_order: tuple[str, ...] = ()
        self._mutate = threading.Lock()
        self._resources: dict[str, tuple[ResourceDescriptor, Callable[[], str]]] = {}
        self._resource_order: tuple[str, ...] = ()
        self._prompts: dict[str, PromptDescriptor] = {}

    # -- registration ------------------------------------------------------

    def register_tool(self, descriptor: ToolDescriptor, handler, *, required_scope: str | None = None) -> None:
        with self._mutate:
            if descriptor.name in self._tools:
                raise ToolRegistrationError(f"tool {descriptor.name!r} already registered")
            self._install_tool(descriptor, handler, required_scope)

    def materialize_tool(self, descriptor: ToolDescriptor, handler, *, required_scope: str | None = None) -> bool:
        """Add a discovered tool; a name already live is a no-op (the
        registry only grows). Returns True if the tool was new."""
        with self._mutate:
            if descriptor.name in self._tools:
                return False
            self._install_tool(descriptor, handler, required_scope)
            return True

    def _install_tool(self, descriptor, handler, required_scope) -> None:
        tools = dict(self._tools)
        tools[descriptor.name] = RegisteredTool(descriptor, handler, required_scope)
        self._tools = tools
        self._tool_order = self._tool_order + (descriptor.name,)

    def register_resource(self, descriptor: ResourceDescriptor, reader: Callable[[], str]) -> None:
        if descriptor.uri in self._resources:
            raise ValueError(f"resource uri {descriptor.uri!r} already registered")
        self._resources[descriptor.uri] = (descriptor, reader)
        self._resource_order = self._resource_order + (descriptor.uri,)

    def register_prompt(self, descriptor: PromptDescriptor) -> None:
        if descriptor.name in self._prompts:
            raise ValueError(f"prompt {descriptor.name!r} already registered")
        self._prompts[descriptor.name] = descriptor

    # -- introspection -----------------------------------------------------

    def tool_names(self) -> tuple[str, ...]:
        return self._tool_order

    def get_tool(self, name: str) -> RegisteredTool | None:
        return self._tools.get(name)

    def identity(self) -> ServerIdentity:
        return ServerIdentity(self.server_id, self._tool_order, self.auth_client_id)

    # -- sessions ----------------------------------------------------------

    def local_session(self) -> Session:
        """Open and initialize an in-process session, for embedding the
        server without a transport (tests, the workflow engine)."""
        session = self.sessions.open("local")
        resp = self.handle_message(
            session, RpcEnvelope.request("init", "initialize", {"clientInfo": {"name": "local"}})
        )
        assert resp is not None and resp.error is None
        return session

    # -- notifications -----------------------------------------------------

    def notify_tools_list_changed(self) -> int:
        """Enqueue a list-changed notification on every open session;
        returns the number of sessions reached."""
        count = 0
        for session in self.sessions.open_sessions():
            if session.enqueue(RpcEnvelope.notification(TOOLS_LIST_CHANGED, {})):
                count += 1
        return count

    # -- dispatch ----------------------------------------------------------

    def handle_message(self, session: Session, msg: RpcEnvelope) -> RpcEnvelope | None:
        """Process one inbound envelope; returns the response envelope for
        requests, None for notifications (and ignored responses)."""
        if msg.kind == KIND_NOTIFICATION:
            return None  # client notifications (e.g. initialized) need no reply
        if msg.kind == KIND_RESPONSE:
            return None
        try:
            result = self._dispatch(session, msg.method or "", msg.params or {})
            return RpcEnvelope.response(msg.id, result)
        except McpError as exc:
            return RpcEnvelope.error_response(
                msg.id, ErrorObject(exc.code, exc.message, exc.data)
            )

    def _dispatch(self, session: Session, method: str, params: Any) -> Any:
        if not isinstance(params, Mapping):
            raise McpError(INVALID_ARGS, "params must be an object")
        if method == "initialize":
            return self._initialize(session, params)
        if session.state != STATE_INITIALIZED:
            raise McpError(NOT_INITIALIZED, "session must initialize first")
        handler = self._METHODS.get(method)
        if handler is None:
            raise McpError(METHOD_NOT_FOUND, f"unknown method {method!r}")
        return handler(self, session, params)

    def _initialize(self, session: Session, params: Mapping) -> dict:
        if session.state == STATE_INITIALIZED:
            raise McpError(ALREADY_INITIALIZED, "session already initialized")
        if session.closed:
            raise McpError(INVALID_REQUEST, "session is closed")
        session.state = STATE_INITIALIZED
        return {
            "protocolVersion": PROTOCOL_VERSION,
            "serverInfo": {"serverId": self.server_id, "version": self.server_version},
            "capabilities": {
                "tools": {"listChanged": True},
                "resources": {},
                "prompts": {},
            },
            "sessionId": session.session_id,
        }

    def _tools_list(self, session: Session, params: Mapping) -> dict:
        order = self._tool_order
        tools = self._tools
        cursor = params.get("cursor")
        offset = 0
        if cursor is not None:
            if not isinstance(cursor, str) or not cursor.isdigit() or int(cursor) > len(order):
                raise McpError(INVALID_CURSOR, f"invalid cursor {cursor!r}")
            offset = int(cursor)
        page = order[offset : offset + self.page_size]
        out: dict[str, Any] = {
            "tools": [tools[name].descriptor.to_wire() for name in page]
        }
        if offset + self.page_size < len(order):
            out["nextCursor"] = str(offset + self.page_size)
        return out

    def _tools_call(self, session: Session, params: Mapping) -> dict:
        name = params.get("name")
        if not isinstance(name, str):
            raise McpError(INVALID_ARGS, "tool name required", data={"fields": ["name (missing)"]})
        tool = self._tools.get(name)
        if tool is None:
            raise McpError(UNKNOWN_TOOL, f"no tool named {name!r}")
        args = params.get("arguments", {})
        if not isinstance(args, Mapping):
            raise McpError(INVALID_ARGS, "arguments must be an object", data={"fields": ["arguments (expected object)"]})
        self._check_scope(tool, params.get("authToken"))
        bad = schema_violations(tool.descriptor.input_schema, args)
        if bad:
            raise McpError(INVALID_ARGS, f"invalid arguments: {', '.join(bad)}", data={"fields": bad})
        return self.invoke_tool(tool, args).to_wire()

    def invoke_tool(self, tool: RegisteredTool, args: Mapping[str, Any]) -> ToolResult:
        """Run a tool handler, converting every failure into an is_error
        result with a non-empty diagnostic."""
        try:
            content = tool.handler(dict(args))
        except ToolFailure as exc:
            return ToolResult({"error": exc.diagnostic()}, is_error=True)
        except McpError:
            raise
        except Exception as exc:  # tool bugs must not drop the connection
            return ToolResult({"error": f"TOOL_EXCEPTION: {exc!r}"}, is_error=True)
        bad = schema_violations(tool.descriptor.output_schema, content)
        if bad:
            return ToolResult(
                {"error": f"TOOL_OUTPUT_INVALID: {', '.join(bad)}"}, is_error=True
            )
        return ToolResult(content)

    def _check_scope(self, tool: RegisteredTool, token: Any) -> None:
        scope = tool.required_scope
        if scope is None:
            return
        if self.token_service is None:
            return  # no authority configured: locally trusted deployment
        if not isinstance(token, str) or not self.token_service.check(token, scope):
            raise McpError(
                AUTH_DENIED,
                f"tool {tool.descriptor.name!r} requires scope {scope!r}",
                data={"requiredScope": scope},
            )

    def _resources_list(self, session: Session, params: Mapping) -> dict:
        return {
            "resources": [self._resources[uri][0].to_wire() for uri in self._resource_order]
        }

    def _resources_read(self, session: Session, params: Mapping) -> dict:
        uri = params.get("uri")
        entry = self._resources.get(uri) if isinstance(uri, str) else None
        if entry is None:
            raise McpError(UNKNOWN_RESOURCE, f"no resource at {uri!r}")
        descriptor, reader = entry
        return {"uri": uri, "mediaType": descriptor.media_type, "content": reader()}

    def _prompts_get(self, session: Session, params: Mapping) -> dict:
        name = params.get("name")
        prompt = self._prompts.get(name) if isinstance(name, str) else None
        if prompt is None:
            raise McpError(UNKNOWN_PROMPT, f"no prompt named {name!r}")
        args = params.get("arguments", {})
        if not isinstance(args, Mapping):
            raise McpError(INVALID_ARGS, "arguments must be an object")
        values: dict[str, str] = {}
        for p in prompt.parameters:
            if p.name in args:
                values[p.name] = str(args[p.name])
            elif p.required:
                raise McpError(MISSING_PARAM, f"missing parameter {p.name!r}", data={"param": p.name})
            else:
                values[p.name] = ""
        text = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], prompt.template)
        return {"name": prompt.name, "text": text}

    _METHODS: dict[str, Callable] = {
        "tools/list": _tools_list,
        "tools/call": _tools_call,
        "resources/list": _resources_list,
        "resources/read": _resources_read,
        "prompts/get": _prompts_get,
    }


def call_tool(server: McpServer, session: Session, name: str, arguments: Mapping | None = None,
              auth_token: str | None = None, request_id: Any = None) -> ToolResult:
    """Convenience wrapper: issue a tools/call request on an initialized
    session and return the parsed ToolResult. Protocol errors raise."""
    params: dict[str, Any] = {"name": name, "arguments": dict(arguments or {})}
    if auth_token is not None:
        params["authToken"] = auth_token
    msg = RpcEnvelope.request(request_id if request_id is not None else f"call-{name}", "tools/call", params)
    resp = server.handle_message(session, msg)
    assert resp is not None
    if resp.error is not None:
        raise McpError(resp.error.code, resp.error.message, resp.error.data)
    return ToolResult(resp.result["content"], resp.result["isError"])
