"""Search ranking against a brute-force scorer; event-log laws."""

import random
import re

import pytest

from sci_mcp.errors import ToolFailure
from sci_mcp.services.clock import SimClock
from sci_mcp.services.events import EventsBackend
from sci_mcp.services.search import SearchBackend

# -- search --------------------------------------------------------------------


def brute_force_ranking(records, query, limit):
    """Independent scorer: conjunctive match, term-frequency-sum ranking,
    ascending-subject ties. Kept free of SearchBackend internals."""

    def terms_of(value):
        if isinstance(value, str):
            return re.findall(r"[a-z0-9_:]+", value.lower())
        if isinstance(value, dict):
            return [t for v in value.values() for t in terms_of(v)]
        if isinstance(value, (list, tuple)):
            return [t for v in value for t in terms_of(v)]
        return []

    q_terms = terms_of(query)
    scored = []
    for subject, doc in records.items():
        doc_terms = terms_of(doc) + terms_of(subject)
        if all(t in doc_terms for t in q_terms):
            scored.append((subject, sum(doc_terms.count(t) for t in q_terms)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [s for s, _ in scored[:limit]]


FIXTURE_RECORDS = [
    {"subject": "doc::a", "text": "large files moved between storage systems"},
    {"subject": "doc::b", "text": "small files and large files compared"},
    {"subject": "doc::c", "text": "storage report for large large large archives"},
    {"subject": "doc::d", "text": "unrelated telemetry burst"},
    {"subject": "doc::e", "text": "files files files everywhere large"},
]


def seeded_backend():
    backend = SearchBackend()
    backend.create_index("idx")
    backend.ingest("idx", FIXTURE_RECORDS)
    return backend


def test_ingest_then_query_returns_subject():
    backend = SearchBackend()
    backend.create_index("metrics")
    backend.ingest("metrics", [{"subject": "user_id::a", "text": "large files"}])
    out = backend.query("metrics", "files", 10)
    assert [r["subject"] for r in out] == ["user_id::a"]


def test_query_empty_index():
    backend = SearchBackend()
    backend.create_index("empty")
    assert backend.query("empty", "anything", 5) == []


def test_five_record_ranking_matches_bruteforce():
    backend = seeded_backend()
    records = {r["subject"]: {k: v for k, v in r.items() if k != "subject"} for r in FIXTURE_RECORDS}
    for query in ("large files", "files", "storage large", "telemetry", "missing term"):
        got = [r["subject"] for r in backend.query("idx", query, 10)]
        assert got == brute_force_ranking(records, query, 10), query


def test_duplicate_and_unknown_index_errors():
    backend = seeded_backend()
    with pytest.raises(ToolFailure) as exc:
        backend.create_index("idx")
    assert exc.value.failure_class == "DUPLICATE_INDEX"
    with pytest.raises(ToolFailure) as exc:
        backend.query("ghost", "x", 1)
    assert exc.value.failure_class == "UNKNOWN_INDEX"


def test_deletion_is_atomic_for_queries():
    backend = seeded_backend()
    backend.delete_records("idx", ["doc::c", "doc::e"])
    got = [r["subject"] for r in backend.query("idx", "large", 10)]
    assert "doc::c" not in got and "doc::e" not in got


def test_mutation_sequence_equals_rebuilt_oracle():
    """After random mutations, queries equal a from-scratch reconstruction."""
    rng = random.Random(1234)
    backend = SearchBackend()
    backend.create_index("m")
    shadow = {}
    words = ["alpha", "beta", "gamma", "delta", "files", "storage", "events"]
    for step in range(200):
        if rng.random() < 0.7 or not shadow:
            subject = f"s::{rng.randrange(40):02d}"
            doc = {"text": " ".join(rng.choices(words, k=rng.randrange(1, 6)))}
            backend.ingest("m", [{"subject": subject, **doc}])
            shadow[subject] = doc
        else:
            subject = rng.choice(sorted(shadow))
            backend.delete_records("m", [subject])
            del shadow[subject]
        query = " ".join(rng.choices(words, k=rng.randrange(1, 3)))
        got = [r["subject"] for r in backend.query("m", query, 10)]
        assert got == brute_force_ranking(shadow, query, 10), (step, query)


# -- events ---------------------------------------------------------------------


def events_backend():
    clock = SimClock()
    backend = EventsBackend(clock)
    backend.create_topic("t")
    return clock, backend


def test_publish_consume_in_order():
    _, backend = events_backend()
    for payload in ("e1", "e2", "e3"):
        backend.publish("t", payload)
    out = backend.consume("t", "c1", max_events=10)
    assert [e["payload"] for e in out["events"]] == ["e1", "e2", "e3"]
    assert out["nextOffset"] == 3


def test_consume_again_is_empty():
    _, backend = events_backend()
    backend.publish("t", "e1")
    backend.consume("t", "c1", max_events=10)
    again = backend.consume("t", "c1", max_events=10)
    assert again["events"] == [] and again["nextOffset"] == 1


def test_offsets_dense_from_zero():
    _, backend = events_backend()
    offsets = [backend.publish("t", f"e{i}") for i in range(50)]
    assert offsets == list(range(50))


def test_truncate_hides_earlier_offsets():
    _, backend = events_backend()
    published = [(backend.publish("t", f"e{i}"), f"e{i}") for i in range(3)]
    backend.truncate("t", 2)
    # replay oracle over the retained log: only offsets >= 2 remain readable
    retained = [p for off, p in published if off >= 2]
    fresh = backend.consume("t", "newcomer", max_events=10)
    assert [e["payload"] for e in fresh["events"]] == retained == ["e2"]


def test_truncate_beyond_end_rejected():
    _, backend = events_backend()
    backend.publish("t", "e0")
    with pytest.raises(ToolFailure) as exc:
        backend.truncate("t", 5)
    assert exc.value.failure_class == "TRUNCATE_BEYOND_END"


def test_consumer_never_reads_before_start():
    _, backend = events_backend()
    for i in range(5):
        backend.publish("t", f"e{i}")
    backend.consume("t", "c1", max_events=2)  # read e0, e1
    backend.truncate("t", 4)
    out = backend.consume("t", "c1", max_events=10)
    assert [e["payload"] for e in out["events"]] == ["e4"]


def test_retention_by_max_log_size():
    _, backend = events_backend()
    backend.update_config("t", {"max_log_size": 3})
    for i in range(6):
        backend.publish("t", f"e{i}")
    out = backend.consume("t", "late", max_events=10)
    assert [e["payload"] for e in out["events"]] == ["e3", "e4", "e5"]


def test_unknown_and_duplicate_topics():
    _, backend = events_backend()
    with pytest.raises(ToolFailure) as exc:
        backend.publish("ghost", "x")
    assert exc.value.failure_class == "UNKNOWN_TOPIC"
    with pytest.raises(ToolFailure) as exc:
        backend.create_topic("t")
    assert exc.value.failure_class == "DUPLICATE_TOPIC"


def test_exactly_once_per_consumer_over_many_publishes():
    _, backend = events_backend()
    seen = []
    for i in range(1000):
        backend.publish("t", f"e{i}")
        if i % 7 == 0:
            seen.extend(e["payload"] for e in backend.consume("t", "c", max_events=50)["events"])
    seen.extend(e["payload"] for e in backend.consume("t", "c", max_events=2000)["events"])
    assert seen == [f"e{i}" for i in range(1000)]  # no dupes, no gaps


def test_payload_bytes_preserved():
    _, backend = events_backend()
    payload = "unicode éü☃ and spaces   kept"
    backend.publish("t", payload)
    out = backend.consume("t", "c", max_events=1)
    assert out["events"][0]["payload"] == payload
