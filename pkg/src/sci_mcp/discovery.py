"""Retrieval-based dynamic tool discovery.

A documentation corpus is embedded under one of four tiering strategies
(name only, plus description, plus help text, plus README) into a vector
index. A single ``find_tools`` tool retrieves the top-k matches for a
natural-language query and materializes them as live, invokable tools on
the serving process, announced through a tools/list_changed notification.
A recall harness scores retrieval quality against a query benchmark.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import ToolFailure
from .protocol import McpServer, ToolDescriptor

DEFAULT_K = 5
MATERIALIZED_PREFIX = "disc__"


class CorpusError(ValueError):
    """Corpus or benchmark file malformed; message carries the line number."""


class DuplicateToolIdError(CorpusError):
    pass


class EmptyCorpusError(ValueError):
    pass


class EmptyTextError(ValueError):
    pass


class UnknownGroundTruthError(ValueError):
    pass


class DocStrategy(str, Enum):
    """Which documentation tiers are concatenated before embedding."""

    NAME_ONLY = "name_only"
    NAME_DESC = "name_desc"
    NAME_DESC_HELP = "name_desc_help"
    NAME_DESC_HELP_README = "name_desc_help_readme"

    @property
    def tiers(self) -> tuple[str, ...]:
        order = ("name", "description", "help_text", "readme")
        depth = {
            DocStrategy.NAME_ONLY: 1,
            DocStrategy.NAME_DESC: 2,
            DocStrategy.NAME_DESC_HELP: 3,
            DocStrategy.NAME_DESC_HELP_README: 4,
        }[self]
        return order[:depth]


ALL_STRATEGIES = tuple(DocStrategy)


@dataclass(frozen=True)
class ToolDocument:
    """One corpus entry: documentation tiers plus the descriptor to
    materialize when the tool is discovered."""

    tool_id: str
    name: str
    description: str
    help_text: str
    readme: str
    descriptor: ToolDescriptor

    def __post_init__(self):
        if not self.name:
            raise ValueError("tool name must be non-empty")

    def strategy_text(self, strategy: DocStrategy) -> str:
        return "\n".join(getattr(self, tier) for tier in strategy.tiers)


class Corpus:
    def __init__(self, documents: Sequence[ToolDocument]):
        self.documents = list(documents)
        self.by_id: dict[str, ToolDocument] = {}
        for doc in self.documents:
            if doc.tool_id in self.by_id:
                raise DuplicateToolIdError(f"duplicate tool_id {doc.tool_id!r}")
            self.by_id[doc.tool_id] = doc

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)


# the simulated behavior of a materialized tool: a structured invocation
# record that satisfies the generic corpus output schema
GENERIC_OUTPUT_SCHEMA = {
    "type": "object",
    "properties": {
        "tool": {"type": "string"},
        "status": {"type": "string"},
        "echo": {"type": "object"},
    },
    "required": ["tool", "status"],
}


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSON-lines corpus file (keys: tool_id, name, description,
    help_text, readme, descriptor). Missing documentation tiers load as
    empty strings."""
    documents = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                doc = _parse_document(obj)
            except DuplicateToolIdError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
            if doc.tool_id in seen:
                raise DuplicateToolIdError(f"line {lineno}: duplicate tool_id {doc.tool_id!r}")
            seen.add(doc.tool_id)
            documents.append(doc)
    return Corpus(documents)


def _parse_document(obj: Mapping) -> ToolDocument:
    tool_id = obj["tool_id"]
    raw_desc = obj.get("descriptor") or {}
    from .protocol import RequirementSet  # local to avoid import noise at top

    descriptor = ToolDescriptor(
        name=raw_desc.get("name", tool_id),
        description=raw_desc.get("description", obj.get("description", "")),
        input_schema=raw_desc.get("input_schema", {"type": "object", "properties": {}, "required": []}),
        output_schema=raw_desc.get("output_schema", GENERIC_OUTPUT_SCHEMA),
        requirements=RequirementSet.from_wire(raw_desc.get("requirements")),
    )
    return ToolDocument(
        tool_id=tool_id,
        name=obj.get("name", tool_id),
        description=obj.get("description", ""),
        help_text=obj.get("help_text", ""),
        readme=obj.get("readme", ""),
        descriptor=descriptor,
    )


# --------------------------------------------------------------------------
# embedding


class Embedder(Protocol):
    embedder_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class TrigramHashEmbedder:
    """Deterministic hashed character-trigram term-frequency embedding with
    unit L2 norm. No model weights, so retrieval results are reproducible
    anywhere; a neural embedder can plug in behind the same interface."""

    def __init__(self, dim: int = 512):
        self.dim = dim
        self.embedder_id = f"trigram-{dim}-v1"

    def count_vector(self, text: str) -> np.ndarray:
        """Raw trigram counts (exact small integers in float64). Cosine over
        these counts is computed in exact integer arithmetic plus single
        rounded ops, so independent reimplementations agree bit for bit."""
        normalized = re.sub(r"\s+", " ", text.lower()).strip()
        if not normalized:
            raise EmptyTextError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        if len(normalized) < 3:
            grams: Iterable[str] = (normalized,)
        else:
            grams = (normalized[i : i + 3] for i in range(len(normalized) - 2))
        for gram in grams:
            vec[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        return vec

    def embed(self, text: str) -> np.ndarray:
        counts = self.count_vector(text)
        return counts / np.linalg.norm(counts)


def embed(text: str, embedder: Embedder) -> np.ndarray:
    """Embed one text; deterministic for a fixed (text, embedder_id)."""
    return embedder.embed(text)


@dataclass(frozen=True)
class VectorIndex:
    """An immutable embedding index over a whole corpus for one strategy.

    Rows follow ``tool_ids`` in ascending order, so a stable sort on
    descending score breaks ties by ascending tool_id for free. When the
    embedder exposes integer count vectors, counts and norms are kept so
    cosine scores come out of exact integer dots (one rounded multiply and
    divide each), independent of summation order.
    """

    strategy: DocStrategy
    embedder_id: str
    tool_ids: tuple[str, ...]
    matrix: np.ndarray  # unit-norm rows
    embedder: Embedder
    counts: np.ndarray | None = None
    norms: np.ndarray | None = None

    @property
    def entries(self) -> dict[str, np.ndarray]:
        return {tid: self.matrix[i] for i, tid in enumerate(self.tool_ids)}

    def __len__(self) -> int:
        return len(self.tool_ids)


def build_index(corpus: Corpus, strategy: DocStrategy, embedder: Embedder | None = None) -> VectorIndex:
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot index an empty corpus")
    embedder = embedder or TrigramHashEmbedder()
    ids = tuple(sorted(corpus.by_id))
    counts = norms = None
    if hasattr(embedder, "count_vector"):
        counts = np.stack([embedder.count_vector(corpus.by_id[tid].strategy_text(strategy)) for tid in ids])
        norms = np.sqrt((counts * counts).sum(axis=1))
        matrix = counts / norms[:, None]
        counts.setflags(write=False)
        norms.setflags(write=False)
    else:
        matrix = np.stack([embedder.embed(corpus.by_id[tid].strategy_text(strategy)) for tid in ids])
    matrix.setflags(write=False)
    return VectorIndex(strategy, embedder.embedder_id, ids, matrix, embedder, counts, norms)


def retrieve(index: VectorIndex, query: str, k: int) -> list[tuple[str, float]]:
    """Top-k corpus tools by cosine score against the query, descending,
    ties broken by ascending tool_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.counts is not None:
        qc = index.embedder.count_vector(query)  # type: ignore[attr-defined]
        qnorm = float(np.sqrt(np.dot(qc, qc)))
        scores = (index.counts @ qc) / (index.norms * qnorm)
    else:
        scores = index.matrix @ index.embedder.embed(query)
    order = np.argsort(-scores, kind="stable")
    top = order[: min(k, len(index))]
    return [(index.tool_ids[i], float(scores[i])) for i in top]


# --------------------------------------------------------------------------
# the discovery server


def simulated_tool_handler(doc: ToolDocument):
    """Materialized tools execute as simulated invocations: they return a
    structured record of what was called with which arguments."""

    def handler(args: Mapping) -> dict:
        return {"tool": doc.tool_id, "status": "ok", "echo": dict(args)}

    return handler


FIND_TOOLS_DESCRIPTOR = ToolDescriptor(
    name="find_tools",
    description=(
        "Search the tool-documentation corpus with a natural-language query "
        "and materialize the top-k matching tools on this server."
    ),
    input_schema={
        "type": "object",
        "properties": {
            "query": {"type": "string"},
            "k": {"type": "integer"},
        },
        "required": ["query"],
    },
    output_schema={
        "type": "object",
        "properties": {
            "materialized": {"type": "array"},
            "added": {"type": "integer"},
        },
        "required": ["materialized", "added"],
    },
)


def build_discovery_server(
    corpus: Corpus,
    *,
    strategy: DocStrategy = DocStrategy.NAME_DESC_HELP_README,
    embedder: Embedder | None = None,
    default_k: int = DEFAULT_K,
    server_id: str = "discovery",
    token_service=None,
    max_sessions: int = 64,
) -> McpServer:
    """An MCP server exposing one static tool, find_tools, that grows the
    live tool set from the corpus. Materialized tools keep the
    ``disc__<tool_id>`` namespace and persist for the server's lifetime."""
    index = build_index(corpus, strategy, embedder)
    server = McpServer(server_id, token_service=token_service, max_sessions=max_sessions)

    def find_tools(args: Mapping) -> dict:
        query = args.get("query", "")
        if not isinstance(query, str) or not query.strip():
            raise ToolFailure("EMPTY_QUERY", "query must be a non-empty string")
        k = args.get("k", default_k)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ToolFailure("INVALID_K", f"k must be an integer >= 1, got {k!r}")
        hits = retrieve(index, query, k)
        rows = []
        added = 0
        for tool_id, score in hits:
            doc = corpus.by_id[tool_id]
            live_name = MATERIALIZED_PREFIX + tool_id
            descriptor = replace(doc.descriptor, name=live_name)
            was_new = server.materialize_tool(descriptor, simulated_tool_handler(doc))
            added += int(was_new)
            rows.append(
                {
                    "tool": live_name,
                    "toolId": tool_id,
                    "score": score,
                    "description": doc.descriptor.description,
                    "added": was_new,
                }
            )
        if added:
            server.notify_tools_list_changed()
        return {"materialized": rows, "added": added}

    server.register_tool(FIND_TOOLS_DESCRIPTOR, find_tools)
    return server


# --------------------------------------------------------------------------
# recall benchmark


@dataclass(frozen=True)
class BenchmarkCase:
    query: str
    ground_truth_tool: str


def load_benchmark(path: str | Path) -> list[BenchmarkCase]:
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                cases.append(BenchmarkCase(obj["query"], obj["ground_truth_tool"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    return cases


@dataclass
class RecallReport:
    """Recall@k over a benchmark: overall map plus a per-strategy breakdown.

    ``per_k`` averages across the strategies present in ``per_strategy``.
    """

    per_k: dict[int, float]
    per_strategy: dict[str, dict[int, float]]
    case_count: int

    def to_json(self) -> dict:
        return {
            "case_count": self.case_count,
            "per_k": {str(k): v for k, v in sorted(self.per_k.items())},
            "per_strategy": {
                s: {str(k): v for k, v in sorted(pk.items())}
                for s, pk in self.per_strategy.items()
            },
        }

    def format_table(self) -> str:
        ks = sorted(self.per_k)
        width = max(len(s) for s in self.per_strategy) + 2
        lines = [
            f"{'strategy'.ljust(width)}" + "".join(f"r@{k}".rjust(9) for k in ks),
        ]
        for strategy, per_k in self.per_strategy.items():
            row = strategy.ljust(width) + "".join(f"{per_k[k]:9.4f}" for k in ks)
            lines.append(row)
        lines.append(f"cases: {self.case_count}")
        return "\n".join(lines)


def evaluate_recall(index: VectorIndex, benchmark: Sequence[BenchmarkCase], ks: Sequence[int]) -> RecallReport:
    """Fraction of cases whose single ground-truth tool appears within the
    top-k retrieved results, for each k, averaged over all cases."""
    known = set(index.tool_ids)
    for case in benchmark:
        if case.ground_truth_tool not in known:
            raise UnknownGroundTruthError(
                f"ground truth {case.ground_truth_tool!r} for query {case.query!r} not in corpus"
            )
    ks = sorted(set(ks))
    hits = {k: 0 for k in ks}
    for case in benchmark:
        ranked = [tid for tid, _ in retrieve(index, case.query, len(index))]
        rank = ranked.index(case.ground_truth_tool) + 1
        for k in ks:
            if rank <= k:
                hits[k] += 1
    count = len(benchmark)
    per_k = {k: (hits[k] / count if count else 0.0) for k in ks}
    return RecallReport(per_k=per_k, per_strategy={index.strategy.value: per_k}, case_count=count)


def run_benchmark(
    corpus: Corpus,
    benchmark: Sequence[BenchmarkCase],
    strategies: Sequence[DocStrategy] = ALL_STRATEGIES,
    ks: Sequence[int] = (1, 3, 5, 10),
    embedder: Embedder | None = None,
) -> RecallReport:
    """Evaluate recall for several strategies over one corpus; ``per_k`` in
    the combined report is the mean across strategies."""
    embedder = embedder or TrigramHashEmbedder()
    per_strategy: dict[str, dict[int, float]] = {}
    for strategy in strategies:
        index = build_index(corpus, strategy, embedder)
        per_strategy[strategy.value] = evaluate_recall(index, benchmark, ks).per_k
    ks = sorted(set(ks))
    per_k = {
        k: sum(per_strategy[s.value][k] for s in strategies) / len(strategies) for k in ks
    }
    return RecallReport(per_k=per_k, per_strategy=per_strategy, case_count=len(benchmark))
