"""Operator entry point: serve server sets from a fixture, run scripted
scenarios, run the retrieval benchmark, and summarize traces.

Exit codes: 0 success, 1 scenario outcome mismatch, 2 configuration or
input-file error, 3 bind failure, 4 benchmark monotonicity violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data_files
from .discovery import (
    ALL_STRATEGIES,
    CorpusError,
    DocStrategy,
    EmptyCorpusError,
    UnknownGroundTruthError,
    build_discovery_server,
    load_benchmark,
    load_corpus,
    run_benchmark,
)
from .scenario import ScenarioError, load_scenario, run_scenario
from .services.fixtures import FixtureError, build_deployment, load_fixture
from .transport import TransportConfig, serve_http, serve_stdio

ENV_FIXTURE = "SCI_MCP_FIXTURE"

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_MONOTONICITY = 4

ALL_SERVERS = ("transfer", "compute", "search", "status", "events", "discovery")


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"cannot read config {path}: {exc}") from exc


def _resolve_fixture_path(args, config: dict) -> str:
    return (
        getattr(args, "fixture", None)
        or config.get("fixture")
        or os.environ.get(ENV_FIXTURE)
        or data_files.default_fixture()
    )


# -- serve ---------------------------------------------------------------------


def cmd_serve(args) -> int:
    try:
        config = _load_config_file(args.config)
        fixture_path = _resolve_fixture_path(args, config)
        fixture = load_fixture(fixture_path)
        requested = args.servers.split(",") if args.servers else config.get("servers") or list(ALL_SERVERS)
        requested = [name.strip() for name in requested if name.strip()]
        unknown = [n for n in requested if n not in ALL_SERVERS]
        if unknown:
            raise FixtureError(f"unknown servers {unknown}; choose from {ALL_SERVERS}")
        if not requested:
            raise FixtureError("at least one server must be selected")
        deployment = build_deployment(fixture, max_sessions=args.max_sessions)
        backend_names = [n for n in requested if n != "discovery"]
        servers = deployment.server_list(backend_names) if backend_names else []
        if "discovery" in requested:
            corpus = load_corpus(args.corpus or config.get("corpus") or data_files.default_corpus())
            servers.append(build_discovery_server(corpus, max_sessions=args.max_sessions))
    except (FixtureError, CorpusError, EmptyCorpusError, ValueError) as exc:
        return _fail(str(exc), EXIT_CONFIG)

    transport = args.transport or config.get("transport", "http")
    if transport == "stdio":
        if len(servers) != 1:
            return _fail("stdio transport serves exactly one server", EXIT_CONFIG)
        print(f"serving {servers[0].server_id} on stdio", file=sys.stderr)
        serve_stdio(servers[0], sys.stdin, sys.stdout)
        return EXIT_OK

    host, _, port_text = (args.bind or config.get("bind", "127.0.0.1:8765")).partition(":")
    try:
        base_port = int(port_text)
    except ValueError:
        return _fail(f"bad --bind value {args.bind!r}", EXIT_CONFIG)
    transports = []
    try:
        for i, server in enumerate(servers):
            port = 0 if base_port == 0 else base_port + i
            tc = TransportConfig(bind_host=host, bind_port=port, max_sessions=args.max_sessions)
            transports.append(serve_http(server, tc))
    except OSError as exc:
        for t in transports:
            t.shutdown()
        return _fail(f"bind failed: {exc}", EXIT_BIND)
    for server, t in zip(servers, transports):
        print(f"serving {server.server_id} at {t.endpoint}")
    if args.exit_after_start:
        for t in transports:
            t.shutdown()
        return EXIT_OK
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        for t in transports:
            t.shutdown()
    return EXIT_OK


# -- scenario --------------------------------------------------------------------


def cmd_scenario(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        fixture = load_fixture(args.fixture or scenario.get("fixture") or
                               os.environ.get(ENV_FIXTURE) or data_files.default_fixture())
        corpus_file = args.corpus or data_files.default_corpus()
        result = run_scenario(scenario, fixture, corpus_file)
    except (ScenarioError, FixtureError, CorpusError) as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if args.out:
        Path(args.out).write_text(json.dumps(result.trace_json(), indent=2, sort_keys=True) + "\n")
    if result.ok:
        print(f"scenario {result.name}: ok")
        return EXIT_OK
    print(f"scenario {result.name}: outcome mismatch")
    for diff in result.diffs:
        print(f"  - {diff}")
    return EXIT_MISMATCH


# -- bench-recall ------------------------------------------------------------------


def cmd_bench_recall(args) -> int:
    try:
        corpus = load_corpus(args.corpus or data_files.default_corpus())
        benchmark = load_benchmark(args.benchmark or data_files.default_benchmark())
        if args.strategy:
            strategies = tuple(DocStrategy(s.strip()) for s in args.strategy.split(","))
        else:
            strategies = ALL_STRATEGIES
        ks = tuple(int(k) for k in args.k.split(","))
        report = run_benchmark(corpus, benchmark, strategies, ks)
    except (OSError, CorpusError, EmptyCorpusError, UnknownGroundTruthError, ValueError) as exc:
        return _fail(str(exc), EXIT_CONFIG)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    for strategy, per_k in report.per_strategy.items():
        values = [per_k[k] for k in sorted(per_k)]
        if any(a > b for a, b in zip(values, values[1:])):
            return _fail(f"recall not monotone in k for {strategy}: {values}", EXIT_MONOTONICITY)
    return EXIT_OK


# -- report -------------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        with open(args.trace, encoding="utf-8") as fh:
            trace_doc = json.load(fh)
        events = trace_doc["trace"]
        status = trace_doc["status"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        return _fail(f"cannot read trace {args.trace}: {exc}", EXIT_CONFIG)

    bindings: dict[int, dict] = {}
    for event in events:
        row = bindings.setdefault(
            event["binding"],
            {"task": event["task"], "tool": event["tool"], "server": event["server"],
             "site": event["site"], "attempts": 0, "authorized": False, "outcome": "-"},
        )
        if event["event"] == "authorize" and event.get("ok"):
            row["authorized"] = True
        if event["event"] == "invoke":
            row["attempts"] += 1
            row["outcome"] = "ok" if event.get("ok") else "failed"
    print(f"scenario: {trace_doc.get('scenario', '-')}  status: {status}")
    print(f"{len(bindings)} bindings")
    if bindings:
        header = f"{'#':>2} {'task':<18} {'tool':<22} {'server':<10} {'site':<18} {'auth':<5} {'attempts':>8} {'outcome':<8}"
        print(header)
        for i in sorted(bindings):
            row = bindings[i]
            print(
                f"{i:>2} {row['task']:<18} {row['tool']:<22} {row['server']:<10} "
                f"{row['site']:<18} {str(row['authorized']).lower():<5} {row['attempts']:>8} {row['outcome']:<8}"
            )
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sci-mcp",
        description="Simulated research computing services behind MCP servers, "
        "with retrieval-based tool discovery and a workflow engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run server sets from a fixture")
    serve.add_argument("--config", help="deployment config JSON")
    serve.add_argument("--fixture", help=f"fixture JSON (or ${ENV_FIXTURE})")
    serve.add_argument("--servers", help=f"comma list from {','.join(ALL_SERVERS)}")
    serve.add_argument("--transport", choices=["stdio", "http"])
    serve.add_argument("--bind", help="host:port for the first server (next ones increment)")
    serve.add_argument("--corpus", help="discovery corpus JSONL")
    serve.add_argument("--max-sessions", type=int, default=64)
    serve.add_argument("--exit-after-start", action="store_true", help=argparse.SUPPRESS)
    serve.set_defaults(func=cmd_serve)

    scenario = sub.add_parser("scenario", help="run a scripted scenario end to end")
    scenario.add_argument("scenario", help="scenario JSON path")
    scenario.add_argument("--fixture", help="fixture override")
    scenario.add_argument("--corpus", help="discovery corpus for discovery-enabled scenarios")
    scenario.add_argument("--out", help="write the execution trace JSON here")
    scenario.set_defaults(func=cmd_scenario)

    bench = sub.add_parser("bench-recall", help="recall@k benchmark over the corpus")
    bench.add_argument("--corpus")
    bench.add_argument("--benchmark")
    bench.add_argument("--strategy", help="comma list of embedding strategies")
    bench.add_argument("--k", default="1,3,5,10", help="comma list of k values")
    bench.add_argument("--out", help="write the report JSON here")
    bench.set_defaults(func=cmd_bench_recall)

    report = sub.add_parser("report", help="summarize an execution trace")
    report.add_argument("trace", help="trace JSON path")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
