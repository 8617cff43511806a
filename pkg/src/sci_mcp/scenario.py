"""Scripted end-to-end scenarios: a scenario file names the servers, goals,
policy, credential and expected outcome; the runner executes the full
pipeline against a fixture deployment and diffs the outcome."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .discovery import build_discovery_server, load_corpus
from .services.fixtures import Deployment, build_deployment, load_fixture
from .workflow import (
    DeterministicPlanner,
    ExecutionOutput,
    RetryPolicy,
    UserPromptSpec,
    WorkflowError,
    run_workflow,
)


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioResult:
    name: str
    ok: bool
    diffs: list[str] = field(default_factory=list)
    output: ExecutionOutput | None = None
    stage_error: str | None = None

    def trace_json(self) -> dict:
        body = self.output.to_json() if self.output else {
            "status": "failed", "error": self.stage_error,
            "results": {}, "task_status": {}, "trace": [],
        }
        return {"scenario": self.name, **body}


def load_scenario(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            scenario = json.load(fh)
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    for key in ("name", "goals", "credential", "expected"):
        if key not in scenario:
            raise ScenarioError(f"scenario {path} is missing required key {key!r}")
    return scenario


def run_scenario(
    scenario: Mapping,
    fixture: dict,
    corpus_file: str | Path | None = None,
) -> ScenarioResult:
    deployment: Deployment = build_deployment(fixture)
    servers = deployment.server_list(scenario.get("servers"))
    discovery = None
    if scenario.get("use_discovery"):
        if corpus_file is None:
            raise ScenarioError("scenario uses discovery but no corpus file was provided")
        discovery = build_discovery_server(load_corpus(corpus_file))
        servers = servers + [discovery]

    policy_raw = scenario.get("policy", {})
    policy = RetryPolicy(
        max_attempts=policy_raw.get("max_attempts", 3),
        backoff_ticks=policy_raw.get("backoff_ticks", 1),
        retryable_error_classes=frozenset(
            policy_raw.get("retryable_error_classes", ["TASK_FAILED", "RESULT_NOT_READY"])
        ),
    )
    prompt = UserPromptSpec(
        scenario.get("prompt_text", scenario["name"]), tuple(scenario["goals"])
    )
    credential = deployment.credential(scenario["credential"]["user_id"])
    if credential.secret != scenario["credential"].get("secret"):
        raise ScenarioError("scenario credential secret does not match the fixture")

    result = ScenarioResult(name=scenario["name"], ok=False)
    try:
        result.output = run_workflow(
            prompt,
            DeterministicPlanner(),
            servers,
            deployment.sites,
            credential,
            policy,
            token_service=deployment.token_service,
            clock=deployment.clock,
            discovery=discovery,
        )
    except WorkflowError as exc:
        result.stage_error = f"{exc.code}: {exc.message}"

    result.diffs = _diff_expected(scenario["expected"], result)
    result.ok = not result.diffs
    return result


def _diff_expected(expected: Mapping, result: ScenarioResult) -> list[str]:
    diffs: list[str] = []
    got_status = result.output.status if result.output else "failed"
    if expected.get("status", "succeeded") != got_status:
        detail = result.stage_error or (result.output.error if result.output else "")
        diffs.append(f"status: expected {expected.get('status')!r}, got {got_status!r} ({detail})")
    want_error = expected.get("error")
    got_error = result.stage_error or (result.output.error if result.output else None)
    if want_error and not (got_error or "").startswith(want_error):
        diffs.append(f"error: expected prefix {want_error!r}, got {got_error!r}")
    if result.output is not None:
        for task, status in expected.get("task_status", {}).items():
            got = result.output.task_status.get(task)
            if got != status:
                diffs.append(f"task_status[{task}]: expected {status!r}, got {got!r}")
        for task, fields in expected.get("results", {}).items():
            actual = result.output.results.get(task)
            if actual is None:
                diffs.append(f"results[{task}]: task produced no result")
                continue
            diffs.extend(_subset_diffs(fields, actual, f"results[{task}]"))
    return diffs


def _subset_diffs(expected: Any, actual: Any, path: str) -> list[str]:
    """Selected-field comparison: every expected field must match; extra
    actual fields are ignored."""
    if isinstance(expected, Mapping):
        if not isinstance(actual, Mapping):
            return [f"{path}: expected an object, got {type(actual).__name__}"]
        out = []
        for key, value in expected.items():
            if key not in actual:
                out.append(f"{path}.{key}: missing")
            else:
                out.extend(_subset_diffs(value, actual[key], f"{path}.{key}"))
        return out
    if expected != actual:
        return [f"{path}: expected {expected!r}, got {actual!r}"]
    return []
