"""Simulated file transfer service: collections of virtual files and
transfer tasks that progress across clock ticks.

A transfer moves one tick of progress per 2^20 bytes (minimum one tick);
on success the destination holds a byte-equal copy of the source as it was
at submission time. A source path that is already gone at submission
produces an immediately failed task, not a call error, so a caller can
read the failure reason and resubmit corrected arguments.
"""

from __future__ import annotations

import posixpath
import threading
from dataclasses import dataclass, field

from ..errors import ToolFailure
from .clock import SimClock

TICK_BYTES = 2**20

STATUS_QUEUED = "queued"
STATUS_ACTIVE = "active"
STATUS_SUCCEEDED = "succeeded"
STATUS_FAILED = "failed"

TERMINAL = (STATUS_SUCCEEDED, STATUS_FAILED)


def normalize_path(path: str) -> str:
    if not isinstance(path, str) or not path.startswith("/"):
        raise ToolFailure("NO_SUCH_PATH", f"paths must be absolute, got {path!r}")
    normalized = posixpath.normpath(path)
    if ".." in normalized.split("/"):
        raise ToolFailure("NO_SUCH_PATH", f"path {path!r} escapes the collection root")
    return normalized


@dataclass
class Collection:
    collection_id: str
    display_name: str
    files: dict[str, bytes] = field(default_factory=dict)
    mtimes: dict[str, int] = field(default_factory=dict)


@dataclass
class TransferTask:
    task_id: str
    src: tuple[str, str]
    dst: tuple[str, str]
    status: str = STATUS_QUEUED
    bytes: int = 0
    failure_reason: str | None = None
    submit_tick: int = 0
    ticks_needed: int = 1
    snapshot: bytes = b""

    def view(self) -> dict:
        out = {
            "taskId": self.task_id,
            "status": self.status,
            "bytes": self.bytes,
            "source": {"collection": self.src[0], "path": self.src[1]},
            "dest": {"collection": self.dst[0], "path": self.dst[1]},
        }
        if self.failure_reason:
            out["failureReason"] = self.failure_reason
        return out


class TransferBackend:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self.collections: dict[str, Collection] = {}
        self._tasks: dict[str, TransferTask] = {}
        self._counter = 0
        self._lock = threading.Lock()
        # fault injection: fail the next N submissions with this reason
        self.fail_next_submits = 0
        self.fail_reason = "NO_SUCH_SOURCE_PATH"
        clock.subscribe(self._on_tick)

    # -- collections ---------------------------------------------------------

    def add_collection(self, collection_id: str, display_name: str) -> Collection:
        col = Collection(collection_id, display_name)
        self.collections[collection_id] = col
        return col

    def _collection(self, collection_id: str) -> Collection:
        col = self.collections.get(collection_id)
        if col is None:
            raise ToolFailure("UNKNOWN_COLLECTION", f"no collection {collection_id!r}")
        return col

    def write_file(self, collection_id: str, path: str, content: bytes) -> None:
        col = self._collection(collection_id)
        path = normalize_path(path)
        with self._lock:
            col.files[path] = content
            col.mtimes[path] = self.clock.now

    def read_file(self, collection_id: str, path: str) -> bytes:
        col = self._collection(collection_id)
        path = normalize_path(path)
        content = col.files.get(path)
        if content is None:
            raise ToolFailure("NO_SUCH_PATH", f"{path!r} not found in {collection_id!r}")
        return content

    def list_collections(self) -> list[dict]:
        return [
            {"collectionId": c.collection_id, "displayName": c.display_name}
            for c in sorted(self.collections.values(), key=lambda c: c.collection_id)
        ]

    def list_directory(self, collection_id: str, path: str) -> list[dict]:
        """Immediate children of a directory, lexicographic by name."""
        col = self._collection(collection_id)
        path = normalize_path(path)
        prefix = path if path.endswith("/") else path + "/"
        if path == "/":
            prefix = "/"
        files = {}
        dirs = set()
        known = False
        for fpath, content in col.files.items():
            if path != "/" and not fpath.startswith(prefix):
                continue
            known = True
            rest = fpath[len(prefix):] if path != "/" else fpath[1:]
            if "/" in rest:
                dirs.add(rest.split("/", 1)[0])
            elif rest:
                files[rest] = len(content)
        if path != "/" and not known:
            raise ToolFailure("NO_SUCH_PATH", f"{path!r} not found in {collection_id!r}")
        entries = [{"name": d, "kind": "dir"} for d in dirs]
        entries += [{"name": n, "kind": "file", "size": s} for n, s in files.items()]
        return sorted(entries, key=lambda e: e["name"])

    # -- tasks ----------------------------------------------------------------

    def submit(self, src: tuple[str, str], dst: tuple[str, str]) -> TransferTask:
        src_col = self._collection(src[0])
        self._collection(dst[0])  # dst collection must exist; dst path may be new
        src_path = normalize_path(src[1])
        dst_path = normalize_path(dst[1])
        with self._lock:
            self._counter += 1
            task = TransferTask(
                task_id=f"xfer-{self._counter:05d}",
                src=(src[0], src_path),
                dst=(dst[0], dst_path),
                submit_tick=self.clock.now,
            )
            self._tasks[task.task_id] = task
            if self.fail_next_submits > 0:
                self.fail_next_submits -= 1
                task.status = STATUS_FAILED
                task.failure_reason = self.fail_reason
                return task
            content = src_col.files.get(src_path)
            if content is None:
                task.status = STATUS_FAILED
                task.failure_reason = "NO_SUCH_SOURCE_PATH"
                return task
            task.snapshot = content  # fidelity is judged against submission time
            task.bytes = len(content)
            task.ticks_needed = max(1, -(-len(content) // TICK_BYTES))
            return task

    def status(self, task_id: str) -> TransferTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise ToolFailure("UNKNOWN_TASK", f"no transfer task {task_id!r}")
        return task

    def _on_tick(self, now: int) -> None:
        with self._lock:
            pending = [t for t in self._tasks.values() if t.status not in TERMINAL]
            for task in pending:
                elapsed = now - task.submit_tick
                if elapsed >= 1:
                    task.status = STATUS_ACTIVE
                if elapsed >= task.ticks_needed:
                    dst = self.collections.get(task.dst[0])
                    if dst is None:
                        task.status = STATUS_FAILED
                        task.failure_reason = "UNKNOWN_COLLECTION"
                        continue
                    dst.files[task.dst[1]] = task.snapshot
                    dst.mtimes[task.dst[1]] = now
                    task.status = STATUS_SUCCEEDED

    def arm_fault(self, fail_submits: int, reason: str = "NO_SUCH_SOURCE_PATH") -> None:
        """Fault injection: the next ``fail_submits`` submissions produce an
        immediately failed task with ``reason``."""
        self.fail_next_submits = fail_submits
        self.fail_reason = reason
