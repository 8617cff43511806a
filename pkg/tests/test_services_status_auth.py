"""Facility status windows and the local token service."""

import json

import pytest

from sci_mcp.errors import ToolFailure
from sci_mcp.services.auth import Credential, TokenService
from sci_mcp.services.clock import SimClock
from sci_mcp.services.status import FacilityStatus, StatusBackend


def status_backend():
    clock = SimClock()
    backend = StatusBackend(clock)
    backend.add_system(
        FacilityStatus("polaris", health="up", queue_depth=7,
                       maintenance_windows=[(10, 20)], utilization=0.5)
    )
    return clock, backend


def test_inside_window_reports_down():
    clock, backend = status_backend()
    clock.advance(15)
    assert backend.health_report("polaris")["health"] == "down"


def test_after_window_reports_configured_health():
    clock, backend = status_backend()
    clock.advance(25)
    assert backend.health_report("polaris")["health"] == "up"


def test_window_boundaries():
    clock, backend = status_backend()
    clock.advance(10)  # start inclusive
    assert backend.effective_health("polaris") == "down"
    clock.advance(10)  # end exclusive: tick 20
    assert backend.effective_health("polaris") == "up"


def test_unknown_system():
    _, backend = status_backend()
    with pytest.raises(ToolFailure) as exc:
        backend.health_report("andromeda")
    assert exc.value.failure_class == "UNKNOWN_SYSTEM"


def test_snapshot_deterministic_under_frozen_clock():
    _, backend = status_backend()
    assert backend.snapshot("polaris") == backend.snapshot("polaris")
    parsed = json.loads(backend.snapshot("polaris"))
    assert parsed["queueDepth"] == 7


def test_overlapping_windows_rejected():
    with pytest.raises(ValueError):
        FacilityStatus("bad", maintenance_windows=[(0, 10), (5, 15)])
    with pytest.raises(ValueError):
        FacilityStatus("bad", maintenance_windows=[(10, 10)])


# -- token service ----------------------------------------------------------------


def token_service():
    clock = SimClock()
    service = TokenService(clock, ttl_ticks=100)
    service.add_credential(
        Credential("ada", "hunter2", frozenset({"transfer:write", "transfer:read", "compute:write"}))
    )
    return clock, service


def test_check_allows_held_scope():
    _, service = token_service()
    grant = service.acquire("ada", "hunter2", ["transfer:write"])
    assert service.check(grant.token, "transfer:write") is True


def test_check_denies_missing_scope():
    _, service = token_service()
    grant = service.acquire("ada", "hunter2", ["transfer:write"])
    assert service.check(grant.token, "transfer:read") is False


def test_escalate_then_check():
    _, service = token_service()
    grant = service.acquire("ada", "hunter2", ["transfer:write"])
    wider = service.escalate(grant.token, "transfer:read")
    assert service.check(wider.token, "transfer:read") is True
    # escalation never removes scopes
    assert grant.scopes <= wider.scopes


def test_bad_credential():
    _, service = token_service()
    with pytest.raises(ToolFailure) as exc:
        service.acquire("ada", "wrong", [])
    assert exc.value.failure_class == "BAD_CREDENTIAL"
    with pytest.raises(ToolFailure):
        service.acquire("nobody", "hunter2", [])


def test_scope_not_allowed():
    _, service = token_service()
    with pytest.raises(ToolFailure) as exc:
        service.acquire("ada", "hunter2", ["events:admin"])
    assert exc.value.failure_class == "SCOPE_NOT_ALLOWED"


def test_expired_grant_never_accepted():
    clock, service = token_service()
    grant = service.acquire("ada", "hunter2", ["transfer:write"])
    clock.advance(100)
    assert service.check(grant.token, "transfer:write") is False
    with pytest.raises(ToolFailure) as exc:
        service.escalate(grant.token, "transfer:read")
    assert exc.value.failure_class == "EXPIRED_GRANT"


def test_check_is_pure():
    _, service = token_service()
    grant = service.acquire("ada", "hunter2", ["transfer:write"])
    before = dict(service._grants)
    service.check(grant.token, "transfer:write")
    service.check(grant.token, "compute:write")
    assert service._grants == before


def test_scope_format_enforced():
    _, service = token_service()
    with pytest.raises(ToolFailure) as exc:
        service.acquire("ada", "hunter2", ["Transfer:Write"])
    assert exc.value.failure_class == "INVALID_SCOPE"
