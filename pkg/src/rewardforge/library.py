"""Append-only JSONL store for vetted reward components.

Each record keeps the canonical source of one term together with the
embedding it was vetted under.  The store is a plain JSONL file with a
sidecar line-count file acting as a cheap integrity check: every insert
rewrites the sidecar, so a truncated or hand-edited store is detected
the next time it is opened.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import StoreIOError
from .similarity import EmbeddingVector, cosine, cosine_to_unit

_RECORD_KEYS = {"id", "aspect", "source", "embedding", "provider_id", "created_at", "uses"}


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LibraryRecord:
    """One stored component; never rewritten after insertion."""

    id: str
    aspect: str
    source: str
    embedding: tuple[float, ...]
    provider_id: str
    created_at: str
    uses: int

    def vector(self) -> EmbeddingVector:
        return EmbeddingVector(self.embedding, self.provider_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "aspect": self.aspect,
            "source": self.source,
            "embedding": list(self.embedding),
            "provider_id": self.provider_id,
            "created_at": self.created_at,
            "uses": self.uses,
        }


class ComponentLibrary:
    """JSONL-backed component store with sequential ids c000000, c000001, ...

    On-disk records are immutable; the ``uses`` counter held here is a
    session statistic seeded from the stored value and bumped whenever a
    query returns the record.  Mutation is serialized with a lock, so a
    single pipeline process may insert from several threads.
    """

    def __init__(self, path: str | os.PathLike[str]):
        self.path = os.fspath(path)
        self._lock = threading.Lock()
        self._records: list[LibraryRecord] = []
        self._uses: dict[str, int] = {}
        self._load()

    @property
    def count_path(self) -> str:
        return self.path + ".count"

    def _load(self) -> None:
        have_store = os.path.exists(self.path)
        have_count = os.path.exists(self.count_path)
        if not have_store and not have_count:
            return
        if have_store != have_count:
            missing = self.count_path if have_store else self.path
            raise StoreIOError(f"library integrity: {missing} is missing")
        try:
            with open(self.path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
            with open(self.count_path, encoding="utf-8") as fh:
                declared = int(fh.read().strip())
        except OSError as exc:
            raise StoreIOError(f"library unreadable: {exc}") from exc
        except ValueError as exc:
            raise StoreIOError(f"corrupt sidecar {self.count_path}: {exc}") from exc
        if declared != len(lines):
            raise StoreIOError(
                f"library integrity: sidecar declares {declared} records, "
                f"file has {len(lines)}")
        for i, line in enumerate(lines):
            self._records.append(self._parse_line(line, i))
        for rec in self._records:
            self._uses[rec.id] = rec.uses

    @staticmethod
    def _parse_line(line: str, index: int) -> LibraryRecord:
        where = f"library record on line {index + 1}"
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StoreIOError(f"corrupt {where}: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) != _RECORD_KEYS:
            raise StoreIOError(f"{where} has wrong fields")
        emb = raw["embedding"]
        ok = (isinstance(emb, list) and emb
              and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                      and math.isfinite(v) for v in emb))
        if not ok:
            raise StoreIOError(f"{where} has a bad embedding")
        for key in ("id", "aspect", "source", "provider_id", "created_at"):
            if not isinstance(raw[key], str) or not raw[key]:
                raise StoreIOError(f"{where}: {key} must be a non-empty string")
        if not isinstance(raw["uses"], int) or isinstance(raw["uses"], bool) or raw["uses"] < 0:
            raise StoreIOError(f"{where}: uses must be a non-negative integer")
        # ids are store-assigned and sequential; anything else is tampering
        if raw["id"] != f"c{index:06d}":
            raise StoreIOError(f"{where}: id {raw['id']!r} out of sequence")
        return LibraryRecord(
            id=raw["id"],
            aspect=raw["aspect"],
            source=raw["source"],
            embedding=tuple(float(v) for v in emb),
            provider_id=raw["provider_id"],
            created_at=raw["created_at"],
            uses=raw["uses"],
        )

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> tuple[LibraryRecord, ...]:
        return tuple(self._records)

    def get(self, record_id: str) -> LibraryRecord:
        for rec in self._records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def usage_counts(self) -> dict[str, int]:
        return dict(self._uses)

    def insert(self, aspect: str, source: str, embedding: EmbeddingVector) -> LibraryRecord:
        """Append one record and return it with its fresh id."""
        if not aspect or not source:
            raise ValueError("aspect and source must be non-empty")
        if not all(math.isfinite(v) for v in embedding.values):
            raise ValueError("embedding must be finite")
        with self._lock:
            rec = LibraryRecord(
                id=f"c{len(self._records):06d}",
                aspect=aspect,
                source=source,
                embedding=tuple(float(v) for v in embedding.values),
                provider_id=embedding.provider_id,
                created_at=_utc_now(),
                uses=0,
            )
            line = json.dumps(rec.to_dict(), sort_keys=True)
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                with open(self.count_path, "w", encoding="utf-8") as fh:
                    fh.write(f"{len(self._records) + 1}\n")
            except OSError as exc:
                raise StoreIOError(f"library write failed: {exc}") from exc
            self._records.append(rec)
            self._uses[rec.id] = 0
            return rec

    def query(self, aspect: str, embedding: EmbeddingVector, k: int) -> list[LibraryRecord]:
        """Top-k same-aspect records by semantic similarity, descending.

        Only records embedded by the same provider are comparable; an
        empty store or no matching aspect yields an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        matches = [rec for rec in self._records
                   if rec.aspect == aspect and rec.provider_id == embedding.provider_id]
        if not matches:
            return []
        # stable sort keeps insertion order among exact ties
        ranked = sorted(
            matches, key=lambda rec: -cosine_to_unit(cosine(embedding, rec.vector())))
        top = ranked[:k]
        with self._lock:
            for rec in top:
                self._uses[rec.id] += 1
        return top
