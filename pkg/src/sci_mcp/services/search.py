"""Simulated search service: named indexes of subject-keyed documents with
conjunctive term queries ranked by term-frequency sum.

The inverted term map is rebuilt from the records on every mutation, which
keeps it exactly consistent with the stored documents by construction.
"""

from __future__ import annotations

import re
import threading
from typing import Any, Iterable, Mapping

from ..errors import ToolFailure

_TERM_RE = re.compile(r"[a-z0-9_:]+")


def tokenize(value: Any) -> list[str]:
    """All lowercase terms in the string fields of a value, recursively."""
    if isinstance(value, str):
        return _TERM_RE.findall(value.lower())
    if isinstance(value, Mapping):
        out = []
        for v in value.values():
            out.extend(tokenize(v))
        return out
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(tokenize(v))
        return out
    return []


class SearchIndexState:
    def __init__(self, index_id: str):
        self.index_id = index_id
        self.records: dict[str, dict] = {}
        self.term_map: dict[str, set[str]] = {}

    def rebuild(self) -> None:
        self.term_map = {}
        for subject, doc in self.records.items():
            for term in set(tokenize(doc)) | set(tokenize(subject)):
                self.term_map.setdefault(term, set()).add(subject)


class SearchBackend:
    def __init__(self):
        self.indexes: dict[str, SearchIndexState] = {}
        self._lock = threading.Lock()

    def _index(self, index_id: str) -> SearchIndexState:
        idx = self.indexes.get(index_id)
        if idx is None:
            raise ToolFailure("UNKNOWN_INDEX", f"no index {index_id!r}")
        return idx

    def create_index(self, index_id: str) -> None:
        with self._lock:
            if index_id in self.indexes:
                raise ToolFailure("DUPLICATE_INDEX", f"index {index_id!r} already exists")
            self.indexes[index_id] = SearchIndexState(index_id)

    def delete_index(self, index_id: str) -> None:
        with self._lock:
            self._index(index_id)
            del self.indexes[index_id]

    def list_indexes(self) -> list[str]:
        return sorted(self.indexes)

    def ingest(self, index_id: str, records: Iterable[Mapping]) -> int:
        with self._lock:
            idx = self._index(index_id)
            count = 0
            for record in records:
                subject = record.get("subject")
                if not isinstance(subject, str) or not subject:
                    raise ToolFailure("INVALID_RECORD", "every record needs a non-empty 'subject'")
                idx.records[subject] = {k: v for k, v in record.items() if k != "subject"}
                count += 1
            idx.rebuild()
            return count

    def delete_records(self, index_id: str, subjects: Iterable[str]) -> int:
        with self._lock:
            idx = self._index(index_id)
            removed = 0
            for subject in subjects:
                if subject in idx.records:
                    del idx.records[subject]
                    removed += 1
            idx.rebuild()
            return removed

    def query(self, index_id: str, query_string: str, limit: int = 10) -> list[dict]:
        """Subjects whose documents contain every query term, ranked by the
        sum of term frequencies, ties by ascending subject."""
        idx = self._index(index_id)
        terms = tokenize(query_string)
        if not terms:
            return []
        candidates: set[str] | None = None
        for term in terms:
            holders = idx.term_map.get(term, set())
            candidates = holders if candidates is None else candidates & holders
            if not candidates:
                return []
        scored = []
        for subject in candidates or ():
            doc_terms = tokenize(idx.records[subject]) + tokenize(subject)
            score = sum(doc_terms.count(term) for term in terms)
            scored.append((subject, score))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return [
            {"subject": s, "document": idx.records[s], "score": score}
            for s, score in scored[: max(0, limit)]
        ]
