"""Fixture loading: one JSON document defines collections, endpoints,
sites, systems, topics and credentials, and builds into a ready-to-serve
deployment of backends plus their MCP servers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..protocol import McpServer
from ..workflow import SiteSpec
from .auth import Credential, TokenService, DEFAULT_TTL_TICKS
from .clock import SimClock
from .compute import ComputeBackend
from .events import EventsBackend
from .search import SearchBackend
from .servers import (
    build_compute_server,
    build_events_server,
    build_search_server,
    build_status_server,
    build_transfer_server,
)
from .status import FacilityStatus, StatusBackend
from .transfer import TransferBackend

SERVER_ORDER = ("transfer", "compute", "search", "status", "events")


class FixtureError(ValueError):
    pass


@dataclass
class Deployment:
    clock: SimClock
    token_service: TokenService
    sites: list[SiteSpec]
    transfer: TransferBackend
    compute: ComputeBackend
    search: SearchBackend
    status: StatusBackend
    events: EventsBackend
    servers: dict[str, McpServer] = field(default_factory=dict)

    def server_list(self, names=None) -> list[McpServer]:
        chosen = list(names) if names else list(SERVER_ORDER)
        unknown = [n for n in chosen if n not in self.servers]
        if unknown:
            raise FixtureError(f"unknown servers requested: {unknown}")
        return [self.servers[n] for n in SERVER_ORDER if n in chosen]

    def credential(self, user_id: str) -> Credential:
        cred = self.token_service._credentials.get(user_id)
        if cred is None:
            raise FixtureError(f"fixture defines no credential for {user_id!r}")
        return cred


def load_fixture(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise FixtureError(f"fixture file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FixtureError(f"fixture {path} is not valid JSON: {exc}") from exc


def build_deployment(fixture: dict, max_sessions: int = 64) -> Deployment:
    clock = SimClock(mode=fixture.get("clock", {}).get("mode", "manual"))
    token_service = TokenService(
        clock, fixture.get("auth", {}).get("token_ttl_ticks", DEFAULT_TTL_TICKS)
    )
    for raw in fixture.get("credentials", []):
        token_service.add_credential(
            Credential(raw["user_id"], raw["secret"], frozenset(raw.get("allowed_scopes", [])))
        )

    sites = [
        SiteSpec.of(raw["site_id"], raw.get("software", []), raw.get("resources", []))
        for raw in fixture.get("sites", [])
    ]

    transfer = TransferBackend(clock)
    for raw in fixture.get("collections", []):
        transfer.add_collection(raw["collection_id"], raw.get("display_name", raw["collection_id"]))
        for path, text in raw.get("files", {}).items():
            transfer.write_file(raw["collection_id"], path, text.encode("utf-8"))
    faults = fixture.get("transfer_faults")
    if faults:
        transfer.arm_fault(
            faults.get("fail_first_submits", 0),
            faults.get("failure_reason", "NO_SUCH_SOURCE_PATH"),
        )

    compute = ComputeBackend(clock, store=transfer)
    for raw in fixture.get("endpoints", []):
        compute.add_endpoint(raw["endpoint_id"], raw["site_id"])
        for entry in raw.get("catalog", []):
            compute.register_task(
                raw["endpoint_id"],
                entry["name"],
                entry["kind"],
                entry.get("params_schema"),
                entry.get("software", ()),
                entry.get("resources", ()),
            )

    search = SearchBackend()
    for raw in fixture.get("search_indexes", []):
        search.create_index(raw["index_id"])
        if raw.get("records"):
            search.ingest(raw["index_id"], raw["records"])

    status = StatusBackend(clock)
    for raw in fixture.get("systems", []):
        status.add_system(
            FacilityStatus(
                system_name=raw["system_name"],
                health=raw.get("health", "up"),
                queue_depth=raw.get("queue_depth", 0),
                maintenance_windows=[tuple(w) for w in raw.get("maintenance_windows", [])],
                utilization=raw.get("utilization", 0.0),
            )
        )

    events = EventsBackend(clock)
    for raw in fixture.get("topics", []):
        events.create_topic(raw["name"], raw.get("config"))
        for payload in raw.get("seed_events", []):
            events.publish(raw["name"], payload)

    deployment = Deployment(
        clock=clock,
        token_service=token_service,
        sites=sites,
        transfer=transfer,
        compute=compute,
        search=search,
        status=status,
        events=events,
    )
    deployment.servers = {
        "transfer": build_transfer_server(transfer, token_service, max_sessions),
        "compute": build_compute_server(compute, token_service, max_sessions),
        "search": build_search_server(search, token_service, max_sessions),
        "status": build_status_server(status, token_service, max_sessions),
        "events": build_events_server(events, token_service, max_sessions),
    }
    return deployment
