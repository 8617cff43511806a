"""Plan / resolve / execute workflow engine.

An abstract plan (ordered goals with label-based data dependencies) is
resolved into concrete bindings, each a feasible (site, capability, server)
tuple chosen by deterministic first-feasible search, falling back to one
dynamic-discovery round per task when no static capability matches. The
executor authorizes every binding before invoking it, threads labeled
outputs into dependent arguments, and retries recoverable failures under a
bounded policy with backoff measured in clock ticks. The composed pipeline
succeeds only when all three stages do.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from .errors import AUTH_DENIED, McpError, ToolFailure, failure_class_of
from .protocol import McpServer, ServerIdentity, ToolDescriptor, call_tool

_TOKEN_RE = re.compile(r"^[a-z0-9][a-z0-9_.+-]*$")

DISCOVERED_PREFIX = "disc__"


class WorkflowError(Exception):
    """Base class for stage failures; carries a stable code string."""

    code = "WORKFLOW_ERROR"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class PlannerFailedError(WorkflowError):
    code = "PLANNER_FAILED"


class PlanInvalidError(WorkflowError):
    code = "PLAN_INVALID"


class UnresolvedTaskError(WorkflowError):
    code = "UNRESOLVED_TASK"


# -- domain types -------------------------------------------------------------


@dataclass(frozen=True)
class UserPromptSpec:
    prompt_text: str
    structured_goals: tuple = ()

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")


@dataclass(frozen=True)
class AbstractTask:
    """One high-level goal, not yet tied to a capability or site."""

    name: str
    goal_kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    produces: tuple[str, ...] = ()

    @property
    def consumes(self) -> tuple[str, ...]:
        return tuple(_labels_in(self.params))


def _labels_in(value: Any) -> list[str]:
    if isinstance(value, Mapping):
        if "$label" in value:
            return [value["$label"]]
        out = []
        for v in value.values():
            out.extend(_labels_in(v))
        return out
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_labels_in(v))
        return out
    return []


@dataclass(frozen=True)
class AbstractPlan:
    tasks: tuple[AbstractTask, ...]

    def validate(self) -> None:
        produced: set[str] = set()
        for task in self.tasks:
            for label in task.consumes:
                if label not in produced:
                    raise PlanInvalidError(
                        f"task {task.name!r} consumes label {label!r} produced by no earlier task"
                    )
            for label in task.produces:
                if label in produced:
                    raise PlanInvalidError(f"label {label!r} produced twice")
                produced.add(label)


@dataclass(frozen=True)
class SiteSpec:
    """An execution environment: its installed software and resource tags."""

    site_id: str
    software: frozenset[str] = frozenset()
    resources: frozenset[str] = frozenset()

    def __post_init__(self):
        for token in list(self.software) + list(self.resources):
            if not isinstance(token, str) or not _TOKEN_RE.match(token):
                raise ValueError(f"site entries must be lowercase tokens, got {token!r}")

    @classmethod
    def of(cls, site_id: str, software=(), resources=()) -> "SiteSpec":
        return cls(site_id, frozenset(software), frozenset(resources))


@dataclass(frozen=True)
class Binding:
    """One resolved task: the chosen (site, capability, server) tuple plus
    the argument mapping to apply at execution time."""

    task: AbstractTask
    site_id: str
    capability_name: str
    server_id: str
    server: McpServer
    arguments: Mapping[str, Any]


@dataclass(frozen=True)
class ConcretePlan:
    bindings: tuple[Binding, ...]


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_ticks: int = 1
    retryable_error_classes: frozenset[str] = frozenset({"TASK_FAILED", "RESULT_NOT_READY"})

    def __post_init__(self):
        if self.max_attempts < 1 or self.backoff_ticks < 0:
            raise ValueError("max_attempts >= 1 and backoff_ticks >= 0 required")
        self.retryable_error_classes = frozenset(self.retryable_error_classes)


@dataclass
class ExecutionOutput:
    status: str = "succeeded"  # or "failed"
    error: str | None = None
    results: dict[str, Any] = field(default_factory=dict)
    task_status: dict[str, str] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "error": self.error,
            "results": self.results,
            "task_status": self.task_status,
            "trace": self.trace,
        }


# -- plan ----------------------------------------------------------------------


class Planner(Protocol):
    def plan(self, prompt: UserPromptSpec) -> AbstractPlan: ...


class DeterministicPlanner:
    """Maps pre-parsed structured goals one to one onto abstract tasks; the
    seam where a model-backed planner would plug in."""

    def plan(self, prompt: UserPromptSpec) -> AbstractPlan:
        tasks = []
        for i, goal in enumerate(prompt.structured_goals):
            tasks.append(
                AbstractTask(
                    name=goal.get("name", f"task{i}"),
                    goal_kind=goal["goal_kind"],
                    params=goal.get("params", {}),
                    produces=tuple(goal.get("produces", ())),
                )
            )
        return AbstractPlan(tuple(tasks))


def plan(prompt: UserPromptSpec, planner: Planner) -> AbstractPlan:
    """Produce and validate an abstract plan; a planner that cannot deliver
    a coherent plan fails this stage."""
    try:
        abstract = planner.plan(prompt)
    except WorkflowError:
        raise
    except Exception as exc:
        raise PlannerFailedError(f"planner raised {exc!r}") from exc
    abstract.validate()
    return abstract


# -- resolve ----------------------------------------------------------------------


def is_feasible(
    site: SiteSpec,
    capability: ToolDescriptor,
    server: ServerIdentity,
    materialized: Sequence[str] | None = None,
) -> bool:
    """A tuple is feasible iff the capability is live on the server and the
    site satisfies all its software and resource requirements."""
    names = set(materialized) if materialized is not None else set(server.capability_names)
    return (
        capability.name in names
        and capability.requirements.software <= site.software
        and capability.requirements.resources <= site.resources
    )


def _matches(tool_name: str, goal_kind: str) -> bool:
    return tool_name == goal_kind or tool_name == DISCOVERED_PREFIX + goal_kind


def _params_text(params: Mapping[str, Any]) -> str:
    parts: list[str] = []

    def walk(value):
        if isinstance(value, Mapping):
            for v in value.values():
                walk(v)
        elif isinstance(value, (list, tuple)):
            for v in value:
                walk(v)
        elif isinstance(value, str):
            parts.append(value)

    walk(params)
    return " ".join(parts)


def resolve(
    abstract: AbstractPlan,
    servers: Sequence[McpServer],
    sites: Sequence[SiteSpec],
    discovery: McpServer | None = None,
    discovery_k: int = 5,
) -> ConcretePlan:
    """First feasible tuple per task under deterministic order: servers by
    registration order, capabilities by tool order, sites by site_id. A
    task with no matching static capability triggers one find_tools round
    against the discovery server, then matching is retried once."""
    if not servers or not sites:
        raise UnresolvedTaskError("server and site registries must be non-empty")
    ordered_sites = sorted(sites, key=lambda s: s.site_id)
    bindings = []
    for task in abstract.tasks:
        binding = _resolve_task(task, servers, ordered_sites)
        if binding is None and discovery is not None:
            _discover_for(task, discovery, discovery_k)
            binding = _resolve_task(task, servers, ordered_sites)
        if binding is None:
            raise UnresolvedTaskError(
                f"no feasible tuple for task {task.name!r}: "
                + _closest_miss(task, servers, ordered_sites)
            )
        bindings.append(binding)
    return ConcretePlan(tuple(bindings))


def _resolve_task(task, servers, ordered_sites) -> Binding | None:
    for server in servers:
        identity = server.identity()
        for tool_name in identity.capability_names:
            if not _matches(tool_name, task.goal_kind):
                continue
            descriptor = server.get_tool(tool_name).descriptor
            for site in ordered_sites:
                if is_feasible(site, descriptor, identity):
                    return Binding(
                        task=task,
                        site_id=site.site_id,
                        capability_name=tool_name,
                        server_id=server.server_id,
                        server=server,
                        arguments=task.params,
                    )
    return None


def _discover_for(task, discovery: McpServer, k: int) -> None:
    query = f"{task.goal_kind} {_params_text(task.params)}".strip()
    session = discovery.local_session()
    try:
        call_tool(discovery, session, "find_tools", {"query": query, "k": k})
    finally:
        discovery.sessions.close(session.session_id)


def _closest_miss(task, servers, ordered_sites) -> str:
    notes = []
    for server in servers:
        identity = server.identity()
        for tool_name in identity.capability_names:
            if not _matches(tool_name, task.goal_kind):
                continue
            descriptor = server.get_tool(tool_name).descriptor
            for site in ordered_sites:
                missing_sw = sorted(descriptor.requirements.software - site.software)
                missing_res = sorted(descriptor.requirements.resources - site.resources)
                if missing_sw or missing_res:
                    notes.append(
                        f"{server.server_id}/{tool_name} on {site.site_id}: "
                        f"missing software {missing_sw}, resources {missing_res}"
                    )
    if not notes:
        return f"no capability named {task.goal_kind!r} on any server"
    return "; ".join(notes)


# -- execute ----------------------------------------------------------------------


def _substitute(value: Any, labels: Mapping[str, Any], site_id: str) -> Any:
    if isinstance(value, Mapping):
        if "$label" in value:
            produced = labels[value["$label"]]
            if "field" in value and isinstance(produced, Mapping):
                return produced[value["field"]]
            return produced
        if value.get("$site") is True:
            return site_id
        return {k: _substitute(v, labels, site_id) for k, v in value.items()}
    if isinstance(value, list):
        return [_substitute(v, labels, site_id) for v in value]
    return value


def execute(
    concrete: ConcretePlan,
    credential,
    policy: RetryPolicy,
    *,
    token_service,
    clock,
    allow_escalation: bool = True,
) -> ExecutionOutput:
    """Run bindings in plan order, two phases each: authorize (obtain or
    escalate a grant covering the tool's scope) then invoke. Failures in a
    retryable class are retried up to the policy bound, advancing the clock
    by the backoff between attempts."""
    out = ExecutionOutput()
    labels: dict[str, Any] = {}
    grant = None
    sessions: dict[str, Any] = {}

    def session_for(server: McpServer):
        if server.server_id not in sessions:
            sessions[server.server_id] = server.local_session()
        return sessions[server.server_id]

    for i, binding in enumerate(concrete.bindings):
        tool = binding.server.get_tool(binding.capability_name)
        scope = tool.required_scope if tool else None
        # phase 1: authorize
        try:
            if grant is None:
                grant = token_service.acquire(
                    credential.user_id, credential.secret, [scope] if scope else []
                )
            elif scope and scope not in grant.scopes:
                if not allow_escalation:
                    raise ToolFailure("SCOPE_NOT_ALLOWED", f"escalation to {scope!r} disabled")
                grant = token_service.escalate(grant.token, scope)
        except ToolFailure as exc:
            out.trace.append(_event("authorize", i, binding, clock, ok=False,
                                    scopes=[scope] if scope else [], detail=exc.diagnostic()))
            out.status = "failed"
            out.task_status[binding.task.name] = "failed"
            out.error = f"AUTH_DENIED: binding {i} ({binding.task.name}): {exc.diagnostic()}"
            return out
        out.trace.append(_event("authorize", i, binding, clock, ok=True,
                                scopes=[scope] if scope else []))

        # phase 2: invoke, with bounded retries
        arguments = _substitute(dict(binding.arguments), labels, binding.site_id)
        last_error = ""
        succeeded = False
        for attempt in range(1, policy.max_attempts + 1):
            error_class, detail = None, ""
            try:
                result = call_tool(
                    binding.server,
                    session_for(binding.server),
                    binding.capability_name,
                    arguments,
                    auth_token=grant.token,
                )
                if not result.is_error:
                    out.trace.append(_event("invoke", i, binding, clock, ok=True, attempt=attempt))
                    out.results[binding.task.name] = result.content
                    out.task_status[binding.task.name] = "succeeded"
                    for label in binding.task.produces:
                        labels[label] = result.content
                    succeeded = True
                    break
                detail = result.error_text
                error_class = failure_class_of(detail)
            except McpError as exc:
                error_class = "AUTH_DENIED" if exc.code == AUTH_DENIED else exc.name
                detail = f"{error_class}: {exc.message}"
            out.trace.append(_event("invoke", i, binding, clock, ok=False,
                                    attempt=attempt, error=detail))
            last_error = detail
            if error_class in policy.retryable_error_classes and attempt < policy.max_attempts:
                out.trace.append(
                    _event("retry", i, binding, clock, attempt=attempt,
                           backoff_ticks=policy.backoff_ticks)
                )
                clock.advance(policy.backoff_ticks)
                continue
            break
        if not succeeded:
            out.status = "failed"
            out.task_status[binding.task.name] = "failed"
            out.error = f"EXEC_FAILED: binding {i} ({binding.task.name}): {last_error}"
            return out
    return out


def _event(kind: str, index: int, binding: Binding, clock, **extra) -> dict:
    event = {
        "event": kind,
        "binding": index,
        "task": binding.task.name,
        "tool": binding.capability_name,
        "server": binding.server_id,
        "site": binding.site_id,
        "tick": clock.now,
    }
    event.update(extra)
    return event


# -- composition --------------------------------------------------------------------


def run_workflow(
    prompt: UserPromptSpec,
    planner: Planner,
    servers: Sequence[McpServer],
    sites: Sequence[SiteSpec],
    credential,
    policy: RetryPolicy,
    *,
    token_service,
    clock,
    discovery: McpServer | None = None,
    allow_escalation: bool = True,
) -> ExecutionOutput:
    """The composed pipeline; identical to running the three stages by hand
    with the same inputs, and it propagates the first failing stage's error
    unchanged."""
    abstract = plan(prompt, planner)
    concrete = resolve(abstract, servers, sites, discovery=discovery)
    return execute(
        concrete,
        credential,
        policy,
        token_service=token_service,
        clock=clock,
        allow_escalation=allow_escalation,
    )
