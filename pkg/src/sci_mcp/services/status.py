"""Simulated facility status: per-system health, queue depth, maintenance
windows and utilization, with the current state derived from the clock.
A system inside a maintenance window reports itself down."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import ToolFailure
from .clock import SimClock

HEALTH_STATES = ("up", "degraded", "down")


@dataclass
class FacilityStatus:
    system_name: str
    health: str = "up"
    queue_depth: int = 0
    maintenance_windows: list[tuple[int, int]] = field(default_factory=list)
    utilization: float = 0.0

    def __post_init__(self):
        if self.health not in HEALTH_STATES:
            raise ValueError(f"health must be one of {HEALTH_STATES}")
        if self.queue_depth < 0 or not 0.0 <= self.utilization <= 1.0:
            raise ValueError("queue_depth >= 0 and utilization in [0,1] required")
        windows = sorted(self.maintenance_windows)
        for (s1, e1), (s2, _) in zip(windows, windows[1:]):
            if s2 < e1:
                raise ValueError("maintenance windows must not overlap")
        for start, end in windows:
            if not start < end:
                raise ValueError("maintenance window start must precede end")


class StatusBackend:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self.systems: dict[str, FacilityStatus] = {}

    def add_system(self, status: FacilityStatus) -> None:
        self.systems[status.system_name] = status

    def _system(self, name: str) -> FacilityStatus:
        system = self.systems.get(name)
        if system is None:
            raise ToolFailure("UNKNOWN_SYSTEM", f"no system {name!r}")
        return system

    def in_maintenance(self, name: str) -> bool:
        system = self._system(name)
        now = self.clock.now
        return any(start <= now < end for start, end in system.maintenance_windows)

    def effective_health(self, name: str) -> str:
        if self.in_maintenance(name):
            return "down"
        return self._system(name).health

    def health_report(self, name: str) -> dict:
        return {
            "system": name,
            "health": self.effective_health(name),
            "inMaintenance": self.in_maintenance(name),
            "clock": self.clock.now,
        }

    def queue_report(self, name: str) -> dict:
        return {"system": name, "queueDepth": self._system(name).queue_depth}

    def maintenance_report(self, name: str) -> dict:
        system = self._system(name)
        return {
            "system": name,
            "windows": [{"start": s, "end": e} for s, e in sorted(system.maintenance_windows)],
        }

    def utilization_report(self, name: str) -> dict:
        return {"system": name, "utilization": self._system(name).utilization}

    def snapshot(self, name: str) -> str:
        """Full state of one system as deterministic JSON (resource body)."""
        system = self._system(name)
        return json.dumps(
            {
                "system": name,
                "health": self.effective_health(name),
                "queueDepth": system.queue_depth,
                "maintenanceWindows": [[s, e] for s, e in sorted(system.maintenance_windows)],
                "utilization": system.utilization,
                "clock": self.clock.now,
            },
            sort_keys=True,
        )
