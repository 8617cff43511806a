"""Acceptance suite: one test per criterion, each printing a PASS line and
enforcing its runtime budget. Run with ``pytest tests/test_acceptance.py -v``.

Oracles here are independent reimplementations (python-int cosine scans,
triple-loop feasibility enumeration, shadow-dict search scoring); they never
call back into the code paths they judge.
"""

import json
import math
import random
import threading
import time

import httpx
import pytest

from sci_mcp import errors
from sci_mcp.discovery import (
    ALL_STRATEGIES,
    TrigramHashEmbedder,
    build_discovery_server,
    build_index,
    evaluate_recall,
    load_benchmark,
    load_corpus,
    retrieve,
)
from sci_mcp.protocol import (
    ErrorObject,
    McpServer,
    RpcEnvelope,
    ToolDescriptor,
    call_tool,
    decode_message,
    encode_message,
)
from sci_mcp.scenario import load_scenario, run_scenario
from sci_mcp.data_files import SHIPPED_SCENARIOS, shipped_scenario
from sci_mcp.services.clock import SimClock
from sci_mcp.services.events import EventsBackend
from sci_mcp.services.fixtures import build_deployment, load_fixture
from sci_mcp.services.search import SearchBackend
from sci_mcp.services.transfer import TransferBackend
from sci_mcp.transport import SESSION_HEADER, TransportConfig, serve_http
from sci_mcp.workflow import (
    AbstractPlan,
    AbstractTask,
    DeterministicPlanner,
    RetryPolicy,
    UserPromptSpec,
    UnresolvedTaskError,
    execute,
    plan,
    resolve,
    run_workflow,
)
from tests.helpers import benchmark_path, corpus_path, fixture_path
from tests.test_workflow import brute_force_resolve, dummy_instance, random_instance


class Budget:
    def __init__(self, seconds):
        self.limit = seconds
        self.start = time.monotonic()

    def check(self):
        elapsed = time.monotonic() - self.start
        assert elapsed < self.limit, f"runtime {elapsed:.1f}s exceeded {self.limit}s budget"
        return elapsed


def report(number, name, budget):
    elapsed = budget.check()
    print(f"ACCEPTANCE {number} ({name}): PASS in {elapsed:.2f}s")


# -- 1: protocol conformance ------------------------------------------------------


def random_json(rng, depth=0):
    choice = rng.random()
    if depth > 2 or choice < 0.35:
        return rng.choice([None, True, False, rng.randint(-10**6, 10**6),
                           "".join(rng.choices("abcdef \u00e9", k=rng.randint(0, 10)))])
    if choice < 0.65:
        return [random_json(rng, depth + 1) for _ in range(rng.randint(0, 4))]
    return {f"k{i}": random_json(rng, depth + 1) for i in range(rng.randint(0, 4))}


def random_envelope(rng):
    kind = rng.choice(["request", "response", "notification", "error"])
    msg_id = rng.choice([rng.randint(0, 10**9), f"id-{rng.randint(0, 999)}"])
    method = "".join(rng.choices("abcdefgh/_", k=rng.randint(1, 18))).strip("/") or "m"
    if kind == "request":
        return RpcEnvelope.request(msg_id, method, random_json(rng))
    if kind == "notification":
        return RpcEnvelope.notification(method, random_json(rng))
    if kind == "response":
        return RpcEnvelope.response(msg_id, random_json(rng))
    return RpcEnvelope.error_response(
        msg_id, ErrorObject(rng.randint(-32700, 2000), "boom", random_json(rng))
    )


def test_acceptance_1_protocol_conformance():
    budget = Budget(5)
    rng = random.Random(0xC0FFEE)
    for _ in range(250):
        env = random_envelope(rng)
        assert decode_message(encode_message(env)) == env

    for text, code in [
        ("{not json", errors.PARSE_ERROR),
        ('"just a string"', errors.INVALID_REQUEST),
        ('{"jsonrpc":"1.0","id":1,"method":"x"}', errors.INVALID_REQUEST),
        ('{"jsonrpc":"2.0","id":1}', errors.INVALID_REQUEST),
        ('{"jsonrpc":"2.0","id":1,"result":1,"error":{"code":1,"message":"m"}}', errors.INVALID_REQUEST),
        ('{"jsonrpc":"2.0","id":1,"method":""}', errors.INVALID_REQUEST),
        ('{"jsonrpc":"2.0","id":[1],"method":"x"}', errors.INVALID_REQUEST),
    ]:
        with pytest.raises(errors.McpError) as exc:
            decode_message(text)
        assert exc.value.code == code, text

    server = McpServer("conformance", page_size=2)
    server.register_tool(
        ToolDescriptor("echo", "echo", {"type": "object", "properties": {"v": {"type": "string"}},
                                        "required": ["v"]}, {"type": "object"}),
        lambda args: {"v": args["v"]},
    )
    fresh = server.sessions.open("local")

    def code_of(session, method, params):
        resp = server.handle_message(session, RpcEnvelope.request("x", method, params))
        assert resp.error is not None
        return resp.error.code

    assert code_of(fresh, "tools/list", {}) == errors.NOT_INITIALIZED
    session = server.local_session()
    assert code_of(session, "initialize", {}) == errors.ALREADY_INITIALIZED
    assert code_of(session, "tools/obliterate", {}) == errors.METHOD_NOT_FOUND
    assert code_of(session, "tools/call", {"name": "echo", "arguments": {}}) == errors.INVALID_ARGS
    assert code_of(session, "tools/call", {"name": "ghost", "arguments": {}}) == errors.UNKNOWN_TOOL
    assert code_of(session, "resources/read", {"uri": "x://nowhere"}) == errors.UNKNOWN_RESOURCE
    assert code_of(session, "prompts/get", {"name": "ghost"}) == errors.UNKNOWN_PROMPT
    assert code_of(session, "tools/list", {"cursor": "banana"}) == errors.INVALID_CURSOR
    report(1, "protocol conformance", budget)


# -- 2: transport isolation --------------------------------------------------------


def test_acceptance_2_transport_isolation():
    budget = Budget(30)
    server = McpServer("isolation", max_sessions=16)
    server.register_tool(
        ToolDescriptor(
            "echo", "echo arguments",
            {"type": "object", "properties": {}, "required": []}, {"type": "object"},
        ),
        lambda args: {"echo": args},
    )
    transport = serve_http(server, TransportConfig(max_sessions=16))
    per_session = 125  # 8 sessions x 125 = 1000 messages
    failures = []

    def client_thread(tag):
        try:
            with httpx.Client(timeout=10) as client:
                init = client.post(
                    transport.endpoint,
                    content=encode_message(RpcEnvelope.request(0, "initialize", {})),
                )
                sid = init.headers[SESSION_HEADER]
                for seq in range(per_session):
                    env = RpcEnvelope.request(
                        seq, "tools/call",
                        {"name": "echo", "arguments": {"tag": tag, "seq": seq}},
                    )
                    resp = client.post(
                        transport.endpoint,
                        content=encode_message(env),
                        headers={SESSION_HEADER: sid},
                    )
                    body = json.loads(resp.text)
                    # FIFO: the answer to request `seq` arrives for request `seq`
                    if body["id"] != seq:
                        failures.append(f"{tag}: order broke at {seq}, got id {body['id']}")
                        return
                    echoed = body["result"]["content"]["echo"]
                    # isolation: traffic for this session carries only its tag
                    if echoed != {"tag": tag, "seq": seq}:
                        failures.append(f"{tag}: leaked payload {echoed}")
                        return
        except Exception as exc:  # surface thread errors in the main assert
            failures.append(f"{tag}: {exc!r}")

    threads = [threading.Thread(target=client_thread, args=(f"s{i}",)) for i in range(8)]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=25)
    finally:
        transport.shutdown()
    assert failures == []
    report(2, "transport isolation, 8 sessions x 125 messages", budget)


# -- 3: discovery oracle equivalence ---------------------------------------------------


EMB = TrigramHashEmbedder()


def oracle_ranking(corpus, strategy, query):
    q_counts = [int(x) for x in EMB.count_vector(query)]
    q_norm = math.sqrt(sum(c * c for c in q_counts))
    scored = []
    for tool_id in sorted(corpus.by_id):
        d_counts = [int(x) for x in EMB.count_vector(corpus.by_id[tool_id].strategy_text(strategy))]
        dot = sum(a * b for a, b in zip(q_counts, d_counts))
        d_norm = math.sqrt(sum(c * c for c in d_counts))
        scored.append((tool_id, dot / (d_norm * q_norm)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def test_acceptance_3_discovery_oracle_equivalence():
    budget = Budget(10)
    corpus = load_corpus(corpus_path())
    benchmark = load_benchmark(benchmark_path())
    assert len(corpus) == 20 and len(benchmark) >= 50
    ks = (1, 2, 3, 5, 10, len(corpus))
    for strategy in ALL_STRATEGIES:
        index = build_index(corpus, strategy, EMB)
        oracle_hits = {k: 0 for k in ks}
        for case in benchmark:
            want = oracle_ranking(corpus, strategy, case.query)
            for k in ks:
                got = retrieve(index, case.query, k)
                assert got == want[: min(k, len(corpus))], (strategy.value, case.query, k)
            rank = [t for t, _ in want].index(case.ground_truth_tool) + 1
            for k in ks:
                oracle_hits[k] += int(rank <= k)
        got_recall = evaluate_recall(index, benchmark, ks).per_k
        for k in ks:
            assert abs(got_recall[k] - oracle_hits[k] / len(benchmark)) <= 1e-12
    report(3, "retrieval equals exhaustive cosine oracle", budget)


# -- 4: strategy ordering ----------------------------------------------------------------


def test_acceptance_4_strategy_ordering():
    budget = Budget(30)
    corpus = load_corpus(corpus_path())
    benchmark = load_benchmark(benchmark_path())
    recall_at_5 = []
    for strategy in ALL_STRATEGIES:
        index = build_index(corpus, strategy, EMB)
        per_k = evaluate_recall(index, benchmark, ks=range(1, len(corpus) + 1)).per_k
        values = [per_k[k] for k in sorted(per_k)]
        assert all(a <= b for a, b in zip(values, values[1:])), strategy  # exact, no tolerance
        recall_at_5.append(per_k[5])
    assert recall_at_5[0] <= recall_at_5[1] <= recall_at_5[2] <= recall_at_5[3]
    report(4, f"strategy ordering r@5={['%.3f' % r for r in recall_at_5]}", budget)


# -- 5: dynamic materialization over HTTP ------------------------------------------------


def read_sse(endpoint, sid, want, out, timeout=5.0):
    headers = {"Accept": "text/event-stream", SESSION_HEADER: sid}
    try:
        with httpx.Client(timeout=timeout) as client:
            with client.stream("GET", endpoint, headers=headers) as resp:
                current = {}
                for line in resp.iter_lines():
                    if line.startswith("data:"):
                        current["data"] = json.loads(line.split(":", 1)[1])
                    elif line == "" and current:
                        out.append(current)
                        current = {}
                        if len(out) >= want:
                            return
    except httpx.TimeoutException:
        return


def test_acceptance_5_dynamic_materialization_end_to_end():
    budget = Budget(5)
    corpus = load_corpus(corpus_path())
    server = build_discovery_server(corpus)
    transport = serve_http(server, TransportConfig())
    try:
        with httpx.Client(timeout=5) as client:
            sids = []
            for _ in range(2):
                init = client.post(
                    transport.endpoint,
                    content=encode_message(RpcEnvelope.request(0, "initialize", {})),
                )
                sids.append(init.headers[SESSION_HEADER])

            streams = {sid: [] for sid in sids}
            threads = [
                threading.Thread(target=read_sse, args=(transport.endpoint, sid, 1, streams[sid]))
                for sid in sids
            ]
            for t in threads:
                t.start()
            time.sleep(0.2)  # let both streams attach

            def rpc(sid, msg_id, method, params):
                resp = client.post(
                    transport.endpoint,
                    content=encode_message(RpcEnvelope.request(msg_id, method, params)),
                    headers={SESSION_HEADER: sid},
                )
                return json.loads(resp.text)["result"]

            def list_all(sid):
                tools, cursor, msg_id = [], None, 100
                while True:
                    params = {"cursor": cursor} if cursor else {}
                    page = rpc(sid, msg_id, "tools/list", params)
                    tools += [t["name"] for t in page["tools"]]
                    cursor = page.get("nextCursor")
                    msg_id += 1
                    if not cursor:
                        return tools

            before = list_all(sids[0])
            found = rpc(
                sids[0], 1, "tools/call",
                {"name": "find_tools",
                 "arguments": {"query": "maximum likelihood phylogenetic tree with bootstraps", "k": 3}},
            )
            assert found["isError"] is False
            assert found["content"]["added"] == 3
            after = list_all(sids[0])
            assert len(after) == len(before) + 3

            for t in threads:
                t.join(timeout=4)
            for sid in sids:  # list_changed reached every open session
                assert len(streams[sid]) == 1
                assert streams[sid][0]["data"]["method"] == "notifications/tools/list_changed"

            new_tool = found["content"]["materialized"][0]["tool"]
            invoked = rpc(sids[0], 2, "tools/call", {"name": new_tool, "arguments": {"input": "aligned.fasta"}})
            assert invoked["isError"] is False
            assert invoked["content"]["status"] == "ok"
    finally:
        transport.shutdown()
    report(5, "find_tools materialization over HTTP", budget)


# -- 6: composition and resolver oracle ----------------------------------------------------


def test_acceptance_6_composition_and_resolver_oracle():
    budget = Budget(30)
    composed_checked = 0
    for seed in range(130):
        prompt_a, servers_a, sites_a, cred_a, tokens_a, clock_a = dummy_instance(seed)
        prompt_b, servers_b, sites_b, cred_b, tokens_b, clock_b = dummy_instance(seed)
        try:
            out_a = run_workflow(
                prompt_a, DeterministicPlanner(), servers_a, sites_a, cred_a,
                RetryPolicy(), token_service=tokens_a, clock=clock_a,
            )
        except Exception as exc_a:
            try:
                abstract = plan(prompt_b, DeterministicPlanner())
                concrete = resolve(abstract, servers_b, sites_b)
                execute(concrete, cred_b, RetryPolicy(), token_service=tokens_b, clock=clock_b)
                raise AssertionError(f"staged run succeeded where composed raised {exc_a!r}")
            except AssertionError:
                raise
            except Exception as exc_b:
                assert type(exc_a) is type(exc_b) and str(exc_a) == str(exc_b)
            continue
        abstract = plan(prompt_b, DeterministicPlanner())
        concrete = resolve(abstract, servers_b, sites_b)
        out_b = execute(concrete, cred_b, RetryPolicy(), token_service=tokens_b, clock=clock_b)
        assert out_a.to_json() == out_b.to_json()  # field-for-field
        composed_checked += 1
    assert composed_checked >= 25

    rng = random.Random(0xACCE55)
    for _ in range(200):
        abstract, servers, sites = random_instance(rng)  # bounded at 5 tasks / 4 servers / 4 sites
        expected = brute_force_resolve(abstract, servers, sites)
        if expected is None:
            with pytest.raises(UnresolvedTaskError):
                resolve(abstract, servers, sites)
        else:
            got = [(b.server_id, b.capability_name, b.site_id)
                   for b in resolve(abstract, servers, sites).bindings]
            assert got == expected
    report(6, f"composition law over {composed_checked}+ fixtures, resolver oracle x200", budget)


# -- 7: recovery scenario ---------------------------------------------------------------


def test_acceptance_7_recovery_scenario():
    budget = Budget(30)
    fixture = load_fixture(fixture_path())
    fixture["transfer_faults"] = {"fail_first_submits": 1, "failure_reason": "NO_SUCH_SOURCE_PATH"}
    dep = build_deployment(fixture)
    abstract = AbstractPlan(
        (
            AbstractTask(
                "download",
                "submit_transfer",
                {
                    "source_collection": "ncbi_data",
                    "source_path": "/accessions/motor_proteins.fasta",
                    "dest_collection": "alcf_work",
                    "dest_path": "/working/motor_proteins.fasta",
                },
                produces=("dl",),
            ),
            AbstractTask(
                "download_done", "await_transfer",
                {"task_id": {"$label": "dl", "field": "taskId"}},
            ),
        )
    )
    concrete = resolve(abstract, dep.server_list(["transfer"]), dep.sites)
    out = execute(
        concrete, dep.credential("researcher"), RetryPolicy(),
        token_service=dep.token_service, clock=dep.clock,
    )
    assert out.status == "succeeded"
    download_invokes = [e for e in out.trace
                        if e["event"] == "invoke" and e["task"] == "download"]
    assert len(download_invokes) == 2  # failed once, succeeded on resubmission
    assert download_invokes[0]["ok"] is False
    assert "NO_SUCH_SOURCE_PATH" in download_invokes[0]["error"]
    assert download_invokes[1]["ok"] is True

    # authorize-before-invoke in every trace ordering
    authorized = set()
    for event in out.trace:
        if event["event"] == "authorize" and event["ok"]:
            authorized.add(event["binding"])
        if event["event"] == "invoke":
            assert event["binding"] in authorized
    report(7, "fault-injection recovery, 2 attempts", budget)


# -- 8: backend laws ------------------------------------------------------------------------


def test_acceptance_8_backend_laws():
    budget = Budget(60)
    # transfer byte fidelity over 100 random trees
    rng = random.Random(88)
    for round_no in range(100):
        clock = SimClock()
        backend = TransferBackend(clock)
        backend.add_collection("src", "s")
        backend.add_collection("dst", "d")
        tree = {
            f"/d{rng.randint(0, 3)}/f{i}.bin": bytes(rng.randrange(256) for _ in range(rng.randrange(0, 300)))
            for i in range(rng.randint(1, 10))
        }
        for path, content in tree.items():
            backend.write_file("src", path, content)
        tasks = [backend.submit(("src", p), ("dst", p)) for p in tree]
        clock.advance(1)
        for path, task in zip(tree, tasks):
            assert task.status == "succeeded"
            assert backend.read_file("dst", path) == tree[path], round_no

    # event log: dense offsets, exactly-once per consumer over 1000 publishes
    clock = SimClock()
    events = EventsBackend(clock)
    events.create_topic("t")
    offsets = [events.publish("t", f"e{i}") for i in range(1000)]
    assert offsets == list(range(1000))
    consumed = []
    while True:
        batch = events.consume("t", "c", max_events=97)["events"]
        if not batch:
            break
        consumed.extend(e["payload"] for e in batch)
    assert consumed == [f"e{i}" for i in range(1000)]
    assert events.consume("t", "c", max_events=10)["events"] == []

    # search equals rebuilt-index oracle after 200 random mutations
    import re as _re

    def oracle_rank(shadow, query, limit):
        def terms_of(value):
            if isinstance(value, str):
                return _re.findall(r"[a-z0-9_:]+", value.lower())
            if isinstance(value, dict):
                return [t for v in value.values() for t in terms_of(v)]
            return []

        q_terms = terms_of(query)
        scored = []
        for subject, doc in shadow.items():
            doc_terms = terms_of(doc) + terms_of(subject)
            if all(t in doc_terms for t in q_terms):
                scored.append((subject, sum(doc_terms.count(t) for t in q_terms)))
        scored.sort(key=lambda p: (-p[1], p[0]))
        return [s for s, _ in scored[:limit]]

    rng = random.Random(99)
    search = SearchBackend()
    search.create_index("m")
    shadow = {}
    vocabulary = ["files", "storage", "events", "archive", "burst", "quota", "scratch"]
    for _ in range(200):
        if rng.random() < 0.7 or not shadow:
            subject = f"u::{rng.randrange(30):02d}"
            doc = {"text": " ".join(rng.choices(vocabulary, k=rng.randrange(1, 6)))}
            search.ingest("m", [{"subject": subject, **doc}])
            shadow[subject] = doc
        else:
            victim = rng.choice(sorted(shadow))
            search.delete_records("m", [victim])
            del shadow[victim]
        query = " ".join(rng.choices(vocabulary, k=rng.randrange(1, 3)))
        got = [r["subject"] for r in search.query("m", query, 10)]
        assert got == oracle_rank(shadow, query, 10)
    report(8, "transfer fidelity, event-log laws, search oracle", budget)


# -- 9: scenario suite -----------------------------------------------------------------------


def test_acceptance_9_scenario_suite():
    budget = Budget(30)
    for name in SHIPPED_SCENARIOS:
        scenario = load_scenario(shipped_scenario(name))
        result = run_scenario(scenario, load_fixture(fixture_path()), corpus_path())
        assert result.ok, (name, result.diffs)
    report(9, f"all {len(SHIPPED_SCENARIOS)} shipped scenarios exit 0", budget)
