"""Simulated remote function execution.

Endpoints run a fixed catalog of deterministic task kinds (word_count,
checksum, sort_lines, stats) plus an arithmetic/string expression sandbox,
instead of arbitrary code. Each endpoint completes one queued task per
clock tick, FIFO, preserving the submit / poll / fetch-result lifecycle.
Task inputs and outputs may reference files in transfer collections.
"""

from __future__ import annotations

import ast
import hashlib
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..errors import ToolFailure
from .clock import SimClock
from .transfer import TransferBackend

STATUS_QUEUED = "queued"
STATUS_RUNNING = "running"
STATUS_SUCCEEDED = "succeeded"
STATUS_FAILED = "failed"

BASE_KINDS = ("word_count", "checksum", "sort_lines", "stats")


@dataclass
class CatalogTask:
    name: str
    kind: str
    params_schema: dict = field(default_factory=dict)
    software: tuple[str, ...] = ()
    resources: tuple[str, ...] = ()


@dataclass
class ComputeTask:
    task_id: str
    endpoint_id: str
    spec: dict
    status: str = STATUS_QUEUED
    result: Any = None
    error_text: str | None = None

    def view(self) -> dict:
        out = {"taskId": self.task_id, "endpointId": self.endpoint_id, "status": self.status}
        if self.error_text is not None:
            out["errorText"] = self.error_text
        return out


@dataclass
class ComputeEndpoint:
    endpoint_id: str
    site_id: str
    catalog: dict[str, CatalogTask] = field(default_factory=dict)
    queue: deque = field(default_factory=deque)


class ComputeBackend:
    def __init__(self, clock: SimClock, store: TransferBackend | None = None):
        self.clock = clock
        self.store = store  # collections for file-based task inputs/outputs
        self.endpoints: dict[str, ComputeEndpoint] = {}
        self._tasks: dict[str, ComputeTask] = {}
        self._counter = 0
        self._lock = threading.Lock()
        clock.subscribe(self._on_tick)

    def add_endpoint(self, endpoint_id: str, site_id: str) -> ComputeEndpoint:
        ep = ComputeEndpoint(endpoint_id, site_id)
        for kind in BASE_KINDS:
            ep.catalog[kind] = CatalogTask(kind, kind)
        self.endpoints[endpoint_id] = ep
        return ep

    def _endpoint(self, endpoint_id: str) -> ComputeEndpoint:
        ep = self.endpoints.get(endpoint_id)
        if ep is None:
            raise ToolFailure("UNKNOWN_ENDPOINT", f"no compute endpoint {endpoint_id!r}")
        return ep

    def register_task(self, endpoint_id: str, name: str, kind: str,
                      params_schema: dict | None = None,
                      software=(), resources=()) -> CatalogTask:
        ep = self._endpoint(endpoint_id)
        if kind not in BASE_KINDS:
            raise ToolFailure("UNKNOWN_TASK_KIND", f"kind must be one of {BASE_KINDS}, got {kind!r}")
        entry = CatalogTask(name, kind, params_schema or {}, tuple(software), tuple(resources))
        ep.catalog[name] = entry
        return entry

    # -- lifecycle -------------------------------------------------------------

    def submit(self, endpoint_id: str, spec: Mapping) -> ComputeTask:
        ep = self._endpoint(endpoint_id)
        if "expression" in spec:
            clean = {"expression": spec["expression"]}
        else:
            name = spec.get("task")
            if name not in ep.catalog:
                raise ToolFailure("UNKNOWN_CATALOG_TASK", f"endpoint {endpoint_id!r} has no task {name!r}")
            clean = {"task": name, "args": dict(spec.get("args", {}))}
        with self._lock:
            self._counter += 1
            task = ComputeTask(f"task-{self._counter:05d}", endpoint_id, clean)
            self._tasks[task.task_id] = task
            ep.queue.append(task)
        return task

    def status(self, task_id: str) -> ComputeTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise ToolFailure("UNKNOWN_TASK", f"no compute task {task_id!r}")
        return task

    def result(self, task_id: str) -> Any:
        task = self.status(task_id)
        if task.status == STATUS_FAILED:
            raise ToolFailure("TASK_FAILED", task.error_text or "task failed")
        if task.status != STATUS_SUCCEEDED:
            raise ToolFailure("RESULT_NOT_READY", f"task {task_id!r} is {task.status}")
        return task.result

    def _on_tick(self, now: int) -> None:
        with self._lock:
            ready = [ep.queue.popleft() for ep in self.endpoints.values() if ep.queue]
        for task in ready:  # one task per endpoint per tick
            task.status = STATUS_RUNNING
            try:
                task.result = self._run(task)
                task.status = STATUS_SUCCEEDED
            except ToolFailure as exc:
                task.status = STATUS_FAILED
                task.error_text = exc.diagnostic()
            except Exception as exc:
                task.status = STATUS_FAILED
                task.error_text = f"TASK_ERROR: {exc}"

    # -- execution ---------------------------------------------------------------

    def _run(self, task: ComputeTask) -> Any:
        spec = task.spec
        if "expression" in spec:
            return {"value": evaluate_expression(spec["expression"])}
        entry = self.endpoints[task.endpoint_id].catalog[spec["task"]]
        args = spec["args"]
        runner = getattr(self, f"_kind_{entry.kind}")
        return runner(args)

    def _input_text(self, args: Mapping) -> str:
        if "text" in args:
            return str(args["text"])
        ref = args.get("input")
        if isinstance(ref, Mapping) and self.store is not None:
            return self.store.read_file(ref["collection"], ref["path"]).decode("utf-8")
        raise ToolFailure("MISSING_INPUT", "task needs 'text' or a file 'input' reference")

    def _write_output(self, args: Mapping, text: str) -> str | None:
        ref = args.get("output")
        if isinstance(ref, Mapping) and self.store is not None:
            self.store.write_file(ref["collection"], ref["path"], text.encode("utf-8"))
            return ref["path"]
        return None

    def _kind_word_count(self, args: Mapping) -> dict:
        words = self._input_text(args).split()
        counts: dict[str, int] = {}
        for word in words:
            counts[word] = counts.get(word, 0) + 1
        return {"counts": counts, "total": len(words)}

    def _kind_checksum(self, args: Mapping) -> dict:
        data = self._input_text(args).encode("utf-8")
        return {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}

    def _kind_sort_lines(self, args: Mapping) -> dict:
        lines = sorted(self._input_text(args).splitlines())
        out: dict[str, Any] = {"lines": len(lines)}
        written = self._write_output(args, "\n".join(lines) + ("\n" if lines else ""))
        if written:
            out["outputPath"] = written
        return out

    def _kind_stats(self, args: Mapping) -> dict:
        if "values" in args:
            values = [float(v) for v in args["values"]]
        else:
            values = []
            for line in self._input_text(args).split():
                try:
                    values.append(float(line))
                except ValueError:
                    continue
        if not values:
            raise ToolFailure("TASK_FAILED", "no numeric values in input")
        return {
            "count": len(values),
            "mean": sum(values) / len(values),
            "min": min(values),
            "max": max(values),
        }


# arithmetic/string expression sandbox -----------------------------------------

_ALLOWED_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.FloorDiv: lambda a, b: a // b,
    ast.Mod: lambda a, b: a % b,
    ast.Pow: lambda a, b: a ** b,
}


def evaluate_expression(expression: str) -> Any:
    """Evaluate a pure arithmetic or string expression. Parse problems name
    the offending position; anything outside literals and basic operators
    is rejected."""
    if not isinstance(expression, str) or len(expression) > 1000:
        raise ToolFailure("TASK_FAILED", "expression must be a string under 1000 chars")
    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise ToolFailure("TASK_FAILED", f"parse error at position {exc.offset}") from exc

    def walk(node: ast.AST) -> Any:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, str)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
            left, right = walk(node.left), walk(node.right)
            try:
                return _ALLOWED_BINOPS[type(node.op)](left, right)
            except ZeroDivisionError as exc:
                raise ToolFailure("TASK_FAILED", "division by zero") from exc
            except TypeError as exc:
                raise ToolFailure("TASK_FAILED", f"bad operand types: {exc}") from exc
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            value = walk(node.operand)
            return +value if isinstance(node.op, ast.UAdd) else -value
        raise ToolFailure("TASK_FAILED", f"unsupported syntax {type(node).__name__}")

    return walk(tree)
