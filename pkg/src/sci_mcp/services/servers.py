"""MCP bindings for the simulated backends: thin adapters that expose each
service's operations as tools on its own server.

Mutating operations carry a required scope (``<service>:write`` or
``:admin``); reads are unscoped, matching a locally-trusted deployment
where status information is public but actions are authorized per call.
"""

from __future__ import annotations

from typing import Any, Mapping

from ..errors import ToolFailure
from ..protocol import (
    McpServer,
    PromptDescriptor,
    PromptParameter,
    RequirementSet,
    ResourceDescriptor,
    ToolDescriptor,
)
from .auth import TokenService
from .compute import ComputeBackend
from .events import EventsBackend
from .search import SearchBackend
from .status import StatusBackend
from .transfer import TERMINAL, STATUS_FAILED, STATUS_SUCCEEDED, TransferBackend


def _obj_schema(properties: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": properties, "required": required}

_ANY_OBJECT = {"type": "object"}
_STR = {"type": "string"}
_INT = {"type": "integer"}


def _tool(name: str, description: str, properties: dict, required: list[str],
          output: dict | None = None, requirements: RequirementSet | None = None) -> ToolDescriptor:
    return ToolDescriptor(
        name=name,
        description=description,
        input_schema=_obj_schema(properties, required),
        output_schema=output or _ANY_OBJECT,
        requirements=requirements or RequirementSet(),
    )


# -- transfer -----------------------------------------------------------------


def build_transfer_server(backend: TransferBackend, token_service: TokenService | None = None,
                          max_sessions: int = 64) -> McpServer:
    server = McpServer("transfer", token_service=token_service, max_sessions=max_sessions)

    def submit(args: Mapping) -> dict:
        task = backend.submit(
            (args["source_collection"], args["source_path"]),
            (args["dest_collection"], args["dest_path"]),
        )
        if task.status == STATUS_FAILED:
            raise ToolFailure("TASK_FAILED", f"{task.failure_reason} (task {task.task_id})")
        return task.view()

    def await_transfer(args: Mapping) -> dict:
        task = backend.status(args["task_id"])
        if task.status == STATUS_FAILED:
            raise ToolFailure("TASK_FAILED", f"{task.failure_reason} (task {task.task_id})")
        if task.status != STATUS_SUCCEEDED:
            raise ToolFailure("RESULT_NOT_READY", f"task {task.task_id} is {task.status}")
        return task.view()

    server.register_tool(
        _tool("list_collections", "List the reachable file collections.", {}, []),
        lambda args: {"collections": backend.list_collections()},
    )
    server.register_tool(
        _tool(
            "list_directory",
            "List one directory of a collection, lexicographically.",
            {"collection_id": _STR, "path": _STR},
            ["collection_id", "path"],
        ),
        lambda args: {"entries": backend.list_directory(args["collection_id"], args["path"])},
    )
    server.register_tool(
        _tool(
            "submit_transfer",
            "Start copying a file between collections; progresses on clock ticks.",
            {
                "source_collection": _STR,
                "source_path": _STR,
                "dest_collection": _STR,
                "dest_path": _STR,
            },
            ["source_collection", "source_path", "dest_collection", "dest_path"],
        ),
        submit,
        required_scope="transfer:write",
    )
    server.register_tool(
        _tool("get_transfer_status", "Current state of a transfer task.",
              {"task_id": _STR}, ["task_id"]),
        lambda args: backend.status(args["task_id"]).view(),
    )
    server.register_tool(
        _tool(
            "await_transfer",
            "Terminal state of a transfer; not-yet-finished reports RESULT_NOT_READY "
            "so a retry policy can poll across ticks.",
            {"task_id": _STR},
            ["task_id"],
        ),
        await_transfer,
    )
    return server


# -- compute --------------------------------------------------------------------


def build_compute_server(backend: ComputeBackend, token_service: TokenService | None = None,
                         max_sessions: int = 64) -> McpServer:
    server = McpServer("compute", token_service=token_service, max_sessions=max_sessions)

    def expose_catalog_tool(name: str, entry) -> None:
        """Registered catalog tasks become first-class tools carrying their
        software/resource requirements, so feasibility is checkable."""
        properties = dict((entry.params_schema or {}).get("properties", {}))
        properties.setdefault("endpoint_id", _STR)
        required = ["endpoint_id"] + [
            r for r in (entry.params_schema or {}).get("required", []) if r != "endpoint_id"
        ]
        descriptor = _tool(
            name,
            f"Submit a {name} task ({entry.kind}) to a compute endpoint.",
            properties,
            required,
            requirements=RequirementSet.of(entry.software, entry.resources),
        )

        def handler(args: Mapping, _name=name) -> dict:
            rest = {k: v for k, v in args.items() if k != "endpoint_id"}
            task = backend.submit(args["endpoint_id"], {"task": _name, "args": rest})
            return task.view()

        server.materialize_tool(descriptor, handler, required_scope="compute:write")

    def register_task(args: Mapping) -> dict:
        entry = backend.register_task(
            args["endpoint_id"],
            args["name"],
            args["kind"],
            args.get("params_schema"),
            args.get("software", ()),
            args.get("resources", ()),
        )
        expose_catalog_tool(entry.name, entry)
        server.notify_tools_list_changed()
        return {"registered": entry.name, "kind": entry.kind, "endpointId": args["endpoint_id"]}

    def submit_task(args: Mapping) -> dict:
        spec: dict[str, Any]
        if "expression" in args:
            spec = {"expression": args["expression"]}
        else:
            spec = {"task": args.get("task"), "args": args.get("args", {})}
        return backend.submit(args["endpoint_id"], spec).view()

    def get_result(args: Mapping) -> dict:
        task_id = args["task_id"]
        return {"taskId": task_id, "status": "succeeded", "result": backend.result(task_id)}

    server.register_tool(
        _tool(
            "register_task",
            "Add a named deterministic task to an endpoint's catalog and expose it as a tool.",
            {
                "endpoint_id": _STR,
                "name": _STR,
                "kind": _STR,
                "params_schema": _ANY_OBJECT,
                "software": {"type": "array"},
                "resources": {"type": "array"},
            },
            ["endpoint_id", "name", "kind"],
        ),
        register_task,
        required_scope="compute:admin",
    )
    server.register_tool(
        _tool(
            "submit_task",
            "Queue a catalog task or a sandbox expression on an endpoint (FIFO, one per tick).",
            {"endpoint_id": _STR, "task": _STR, "args": _ANY_OBJECT, "expression": _STR},
            ["endpoint_id"],
        ),
        submit_task,
        required_scope="compute:write",
    )
    server.register_tool(
        _tool("get_task_status", "Current state of a compute task.", {"task_id": _STR}, ["task_id"]),
        lambda args: backend.status(args["task_id"]).view(),
    )
    server.register_tool(
        _tool(
            "get_task_result",
            "Result of a finished task; RESULT_NOT_READY until it succeeds.",
            {"task_id": _STR},
            ["task_id"],
        ),
        get_result,
    )
    server.register_prompt(
        PromptDescriptor(
            name="batch_submission",
            description="Batch job submission script template.",
            parameters=(
                PromptParameter("job_name", "name for the scheduler"),
                PromptParameter("nodes", "number of nodes to request"),
            ),
            template=(
                "#!/bin/bash\n"
                "#PBS -N {job_name}\n"
                "#PBS -l select={nodes}\n"
                "echo launching {job_name} on {nodes} nodes\n"
            ),
        )
    )
    # pre-registered fixture catalog entries also surface as tools
    for endpoint in backend.endpoints.values():
        for name, entry in endpoint.catalog.items():
            expose_catalog_tool(name, entry)
    return server


# -- search ----------------------------------------------------------------------


def build_search_server(backend: SearchBackend, token_service: TokenService | None = None,
                        max_sessions: int = 64) -> McpServer:
    server = McpServer("search", token_service=token_service, max_sessions=max_sessions)
    server.register_tool(
        _tool("create_index", "Create a new search index.", {"index_id": _STR}, ["index_id"]),
        lambda args: (backend.create_index(args["index_id"]), {"created": args["index_id"]})[1],
        required_scope="search:admin",
    )
    server.register_tool(
        _tool("delete_index", "Delete a search index.", {"index_id": _STR}, ["index_id"]),
        lambda args: (backend.delete_index(args["index_id"]), {"deleted": args["index_id"]})[1],
        required_scope="search:admin",
    )
    server.register_tool(
        _tool("list_indexes", "Names of all indexes.", {}, []),
        lambda args: {"indexes": backend.list_indexes()},
    )
    server.register_tool(
        _tool(
            "ingest_records",
            "Upsert subject-keyed records into an index.",
            {"index_id": _STR, "records": {"type": "array"}},
            ["index_id", "records"],
        ),
        lambda args: {"ingested": backend.ingest(args["index_id"], args["records"])},
        required_scope="search:write",
    )
    server.register_tool(
        _tool(
            "delete_records",
            "Remove subjects from an index.",
            {"index_id": _STR, "subjects": {"type": "array"}},
            ["index_id", "subjects"],
        ),
        lambda args: {"deleted": backend.delete_records(args["index_id"], args["subjects"])},
        required_scope="search:write",
    )

    def query(args: Mapping) -> dict:
        results = backend.query(args["index_id"], args["query"], args.get("limit", 10))
        return {"results": results, "count": len(results)}

    server.register_tool(
        _tool(
            "query_index",
            "Conjunctive term query ranked by term frequency.",
            {"index_id": _STR, "query": _STR, "limit": _INT},
            ["index_id", "query"],
        ),
        query,
    )
    return server


# -- facility status ---------------------------------------------------------------


def build_status_server(backend: StatusBackend, token_service: TokenService | None = None,
                        max_sessions: int = 64) -> McpServer:
    server = McpServer("status", token_service=token_service, max_sessions=max_sessions)
    system_props = {"system": _STR}
    server.register_tool(
        _tool("get_system_health", "Health of one system; maintenance windows force down.",
              system_props, ["system"]),
        lambda args: backend.health_report(args["system"]),
    )
    server.register_tool(
        _tool("get_queue_status", "Scheduler queue depth for one system.", system_props, ["system"]),
        lambda args: backend.queue_report(args["system"]),
    )
    server.register_tool(
        _tool("get_maintenance", "Maintenance windows for one system.", system_props, ["system"]),
        lambda args: backend.maintenance_report(args["system"]),
    )
    server.register_tool(
        _tool("get_utilization", "Resource utilization fraction for one system.", system_props, ["system"]),
        lambda args: backend.utilization_report(args["system"]),
    )
    for name in sorted(backend.systems):
        server.register_resource(
            ResourceDescriptor(
                uri=f"facility://status/{name}",
                name=name,
                description=f"Live status snapshot of {name}",
                media_type="application/json",
            ),
            lambda _n=name: backend.snapshot(_n),
        )
    return server


# -- events --------------------------------------------------------------------------


def build_events_server(backend: EventsBackend, token_service: TokenService | None = None,
                        max_sessions: int = 64) -> McpServer:
    server = McpServer("events", token_service=token_service, max_sessions=max_sessions)
    server.register_tool(
        _tool("create_topic", "Create a topic.", {"name": _STR, "config": _ANY_OBJECT}, ["name"]),
        lambda args: (backend.create_topic(args["name"], args.get("config")), {"created": args["name"]})[1],
        required_scope="events:admin",
    )
    server.register_tool(
        _tool("delete_topic", "Delete a topic.", {"name": _STR}, ["name"]),
        lambda args: (backend.delete_topic(args["name"]), {"deleted": args["name"]})[1],
        required_scope="events:admin",
    )
    server.register_tool(
        _tool("update_topic_config", "Merge settings into a topic's config.",
              {"name": _STR, "config": _ANY_OBJECT}, ["name", "config"]),
        lambda args: {"config": backend.update_config(args["name"], args["config"])},
        required_scope="events:admin",
    )
    server.register_tool(
        _tool("truncate_topic", "Drop events below an offset.",
              {"name": _STR, "up_to_offset": _INT}, ["name", "up_to_offset"]),
        lambda args: {"startOffset": backend.truncate(args["name"], args["up_to_offset"])},
        required_scope="events:write",
    )
    server.register_tool(
        _tool("publish_event", "Append one event; returns its offset.",
              {"topic": _STR, "payload": _STR}, ["topic", "payload"]),
        lambda args: {"offset": backend.publish(args["topic"], args["payload"])},
        required_scope="events:write",
    )
    server.register_tool(
        _tool(
            "consume_events",
            "Read events in offset order from this consumer's position, advancing it.",
            {"topic": _STR, "consumer_id": _STR, "max_events": _INT, "timeout_ticks": _INT},
            ["topic", "consumer_id"],
        ),
        lambda args: backend.consume(
            args["topic"], args["consumer_id"],
            args.get("max_events", 100), args.get("timeout_ticks", 0),
        ),
    )
    return server
