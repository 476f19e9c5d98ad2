"""Vector index over encoded dialogue contexts.

Each entry maps a context embedding to the customer utterance that followed
it in the source logs. Exact search ranks all entries by cosine; the
approximate mode hashes vectors with random-hyperplane signatures across
several tables and re-ranks only the probed candidates. The approximate
search widens its probe radius (and finally falls back to a full scan) until
it has a healthy candidate pool, which is what makes its recall contract
hold on unfriendly data distributions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation

_MAGIC = b"STIDX001"
_VERSION = 1


@dataclass(frozen=True)
class ContextPayload:
    dialogue_id: str
    turn_index: int
    next_customer_utterance: str


@dataclass(frozen=True)
class IndexEntry:
    entry_id: int
    vector: np.ndarray
    payload: ContextPayload


@dataclass(frozen=True)
class SearchHit:
    entry: IndexEntry
    score: float


def make_entries(
    vectors: Sequence[np.ndarray], payloads: Sequence[ContextPayload]
) -> list[IndexEntry]:
    """Assign dense insertion-ordered entry ids and validate payloads."""
    if len(vectors) != len(payloads):
        raise ContractViolation("vectors and payloads must align")
    entries = []
    for i, (vec, payload) in enumerate(zip(vectors, payloads)):
        if not payload.next_customer_utterance.strip():
            raise ContractViolation(f"entry {i}: next_customer_utterance must be non-empty")
        entries.append(IndexEntry(i, np.asarray(vec, dtype=np.float64), payload))
    return entries


class VectorIndex:
    """Append-only cosine index with optional hyperplane signatures.

    Immutable once built; concurrent searches are safe.
    """

    def __init__(
        self,
        dim: int,
        entries: list[IndexEntry],
        approx: bool = False,
        seed: int = 0,
        bits: int = 12,
        tables: int = 12,
        planes: np.ndarray | None = None,
    ):
        self.dim = dim
        self.entries = entries
        self.approx = approx
        self.seed = seed
        self.bits = bits
        self.tables = tables
        self._matrix = (
            np.vstack([e.vector for e in entries]) if entries else np.zeros((0, dim))
        )
        self._norms = np.linalg.norm(self._matrix, axis=1)
        self._planes = planes
        self._buckets: list[dict[int, list[int]]] = []
        if approx:
            if self._planes is None:
                rng = np.random.default_rng(seed)
                self._planes = rng.standard_normal((tables, bits, dim))
            self._buckets = [dict() for _ in range(tables)]
            for entry in entries:
                for t, key in enumerate(self._signatures(entry.vector)):
                    self._buckets[t].setdefault(key, []).append(entry.entry_id)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def build(
        cls,
        entries: Sequence[IndexEntry],
        approx: bool = False,
        seed: int = 0,
        bits: int = 12,
        tables: int = 12,
    ) -> "VectorIndex":
        entries = list(entries)
        if entries:
            dim = entries[0].vector.shape[0]
        else:
            dim = 0
        for i, entry in enumerate(entries):
            if entry.vector.ndim != 1 or entry.vector.shape[0] != dim:
                raise ContractViolation("all entry vectors must share one dimensionality")
            if entry.entry_id != i:
                raise ContractViolation("entry ids must be dense and insertion-ordered")
        return cls(dim=dim, entries=entries, approx=approx, seed=seed, bits=bits, tables=tables)

    def _signatures(self, vector: np.ndarray) -> list[int]:
        assert self._planes is not None
        keys = []
        for t in range(self.tables):
            sign_bits = (self._planes[t] @ vector) >= 0
            key = 0
            for bit in sign_bits:
                key = (key << 1) | int(bit)
            keys.append(key)
        return keys

    def _check_query(self, query: np.ndarray, k: int) -> np.ndarray:
        query = np.asarray(query, dtype=np.float64)
        if query.ndim != 1 or (len(self.entries) and query.shape[0] != self.dim):
            raise ContractViolation(f"query must be a vector of length {self.dim}")
        if k < 1:
            raise ContractViolation("k must be >= 1")
        return query

    def _rank(self, candidate_ids: Sequence[int], query: np.ndarray, k: int) -> list[SearchHit]:
        """Exact cosine ranking within the candidates, ties to the lower id."""
        ids = np.asarray(sorted(candidate_ids), dtype=np.int64)
        if ids.size == 0:
            return []
        qnorm = float(np.linalg.norm(query))
        if qnorm == 0.0:
            scores = np.zeros(ids.size)
        else:
            norms = self._norms[ids]
            dots = self._matrix[ids] @ query
            scores = np.where(norms > 0.0, dots / (np.maximum(norms, 1e-300) * qnorm), 0.0)
        order = np.lexsort((ids, -scores))[: min(k, ids.size)]
        return [SearchHit(self.entries[ids[i]], float(scores[i])) for i in order]

    def search_exact(self, query: np.ndarray, k: int) -> list[SearchHit]:
        """Top-k entries by cosine, descending; exactly min(k, size) results.

        A zero-norm query scores every entry 0 and returns them in entry-id
        order.
        """
        query = self._check_query(query, k)
        return self._rank(range(len(self.entries)), query, k)

    def search_approx(self, query: np.ndarray, k: int, min_candidates: int | None = None) -> list[SearchHit]:
        """Candidates from the probed hash buckets, ranked exactly.

        Probes each table's own bucket first, then widens the Hamming probe
        radius while the pool is smaller than ``min_candidates`` (default
        max(50, 10k)); if radius 3 still leaves the pool short, scans
        everything. May return fewer than k results only when the index
        itself is smaller than k.
        """
        if not self.approx:
            raise ConfigurationError("index was built without the approximate structure")
        query = self._check_query(query, k)
        if not self.entries:
            return []
        target = min_candidates if min_candidates is not None else max(50, 10 * k)
        target = min(target, len(self.entries))
        keys = self._signatures(query)
        pool: set[int] = set()
        for radius in range(0, 4):
            for t, key in enumerate(keys):
                for flipped in self._probe_keys(key, radius):
                    pool.update(self._buckets[t].get(flipped, ()))
            if len(pool) >= target:
                break
        if len(pool) < target:
            pool = set(range(len(self.entries)))
        return self._rank(pool, query, k)

    def _probe_keys(self, key: int, radius: int) -> list[int]:
        if radius == 0:
            return [key]
        masks = []
        for positions in combinations(range(self.bits), radius):
            mask = 0
            for p in positions:
                mask |= 1 << p
            masks.append(key ^ mask)
        return masks

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        if self.approx:
            return self.search_approx(query, k)
        return self.search_exact(query, k)

    def save(self, path: str | Path) -> None:
        """Binary persistence; reloading preserves search results exactly."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            flags = 1 if self.approx else 0
            fh.write(struct.pack("<IIIBIIq", _VERSION, self.dim, len(self.entries), flags, self.bits, self.tables, self.seed))
            if self.approx:
                assert self._planes is not None
                fh.write(np.ascontiguousarray(self._planes, dtype="<f8").tobytes())
            for entry in self.entries:
                fh.write(np.ascontiguousarray(entry.vector, dtype="<f8").tobytes())
                raw = json.dumps(
                    {
                        "dialogue_id": entry.payload.dialogue_id,
                        "turn_index": entry.payload.turn_index,
                        "next_customer_utterance": entry.payload.next_customer_utterance,
                    },
                    ensure_ascii=False,
                ).encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ConfigurationError(f"{path}: not an index file")
            version, dim, count, flags, bits, tables, seed = struct.unpack(
                "<IIIBIIq", fh.read(29)
            )
            if version != _VERSION:
                raise ConfigurationError(f"{path}: unsupported version {version}")
            approx = bool(flags & 1)
            planes = None
            if approx:
                raw = fh.read(tables * bits * dim * 8)
                planes = np.frombuffer(raw, dtype="<f8").reshape(tables, bits, dim).copy()
            entries = []
            for i in range(count):
                vector = np.frombuffer(fh.read(dim * 8), dtype="<f8").copy()
                (length,) = struct.unpack("<I", fh.read(4))
                payload = json.loads(fh.read(length).decode("utf-8"))
                entries.append(
                    IndexEntry(
                        i,
                        vector,
                        ContextPayload(
                            dialogue_id=payload["dialogue_id"],
                            turn_index=payload["turn_index"],
                            next_customer_utterance=payload["next_customer_utterance"],
                        ),
                    )
                )
        return cls(
            dim=dim, entries=entries, approx=approx, seed=seed, bits=bits, tables=tables, planes=planes
        )
