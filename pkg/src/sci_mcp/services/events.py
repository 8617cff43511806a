"""Simulated event fabric: named topics holding append-only logs with
dense offsets, per-consumer read positions, retention by size, and
explicit truncation."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from ..errors import ToolFailure
from .clock import SimClock


@dataclass
class Event:
    offset: int
    timestamp: int
    payload: str


@dataclass
class Topic:
    name: str
    config: dict = field(default_factory=dict)
    log: list[Event] = field(default_factory=list)
    start_offset: int = 0
    next_offset: int = 0
    consumer_offsets: dict[str, int] = field(default_factory=dict)


class EventsBackend:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self.topics: dict[str, Topic] = {}
        self._lock = threading.Lock()

    def _topic(self, name: str) -> Topic:
        topic = self.topics.get(name)
        if topic is None:
            raise ToolFailure("UNKNOWN_TOPIC", f"no topic {name!r}")
        return topic

    def create_topic(self, name: str, config: dict | None = None) -> None:
        with self._lock:
            if name in self.topics:
                raise ToolFailure("DUPLICATE_TOPIC", f"topic {name!r} already exists")
            self.topics[name] = Topic(name, dict(config or {}))

    def delete_topic(self, name: str) -> None:
        with self._lock:
            self._topic(name)
            del self.topics[name]

    def update_config(self, name: str, config: dict) -> dict:
        with self._lock:
            topic = self._topic(name)
            topic.config.update(config)
            self._apply_retention(topic)
            return dict(topic.config)

    def publish(self, name: str, payload: str) -> int:
        if not isinstance(payload, str):
            raise ToolFailure("INVALID_PAYLOAD", "payloads are opaque UTF-8 strings")
        with self._lock:
            topic = self._topic(name)
            event = Event(topic.next_offset, self.clock.now, payload)
            topic.log.append(event)
            topic.next_offset += 1
            self._apply_retention(topic)
            return event.offset

    def _apply_retention(self, topic: Topic) -> None:
        max_size = topic.config.get("max_log_size")
        if isinstance(max_size, int) and max_size >= 0:
            while len(topic.log) > max_size:
                dropped = topic.log.pop(0)
                topic.start_offset = dropped.offset + 1

    def truncate(self, name: str, up_to_offset: int) -> int:
        """Make offsets below ``up_to_offset`` unreadable; returns the new
        start offset."""
        with self._lock:
            topic = self._topic(name)
            if up_to_offset > topic.next_offset:
                raise ToolFailure(
                    "TRUNCATE_BEYOND_END",
                    f"up_to {up_to_offset} exceeds log end {topic.next_offset}",
                )
            while topic.log and topic.log[0].offset < up_to_offset:
                topic.log.pop(0)
            topic.start_offset = max(topic.start_offset, up_to_offset)
            return topic.start_offset

    def consume(self, name: str, consumer_id: str, max_events: int = 100,
                timeout_ticks: int = 0) -> dict:
        """Up to ``max_events`` events in offset order from the consumer's
        position, advancing it. Returns early once the log end is reached;
        if nothing is available, an auto-mode clock advances up to
        ``timeout_ticks`` before the final check (a frozen manual clock
        returns empty immediately)."""
        with self._lock:
            topic = self._topic(name)
            available = self._read(topic, consumer_id, max_events)
        if not available and timeout_ticks > 0:
            self.clock.auto_advance(timeout_ticks)
            with self._lock:
                topic = self._topic(name)
                available = self._read(topic, consumer_id, max_events)
        with self._lock:
            position = max(
                self.topics[name].consumer_offsets.get(consumer_id, 0),
                self.topics[name].start_offset,
            )
        return {
            "events": [
                {"offset": e.offset, "timestamp": e.timestamp, "payload": e.payload}
                for e in available
            ],
            "nextOffset": position,
            "count": len(available),
        }

    def _read(self, topic: Topic, consumer_id: str, max_events: int) -> list[Event]:
        position = max(topic.consumer_offsets.get(consumer_id, 0), topic.start_offset)
        batch = [e for e in topic.log if e.offset >= position][: max(0, max_events)]
        if batch:
            position = batch[-1].offset + 1
        topic.consumer_offsets[consumer_id] = position
        return batch
