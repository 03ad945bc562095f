"""Knowledge base for retrieval-augmented calibration.

Documents are chunked into overlapping token windows, embedded through the
gateway, and stored in an in-memory vector index with append-only JSONL
persistence.  Retrieval is exact brute-force cosine top-k; any approximate
index swapped in later must match these semantics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .gateway import DimensionMismatch, EmbeddingVector, Gateway
from .model import SubTask

REQUIRED_CHUNK_FIELDS = (
    "chunk_id",
    "document_id",
    "content",
    "source_url",
    "source_type",
    "title",
    "publication_date",
    "last_accessed_date",
    "vulnerability_tags",
    "platform_tags",
    "severity_keywords",
    "summary",
)

# Small fixed stopword list for query-term extraction.
STOPWORDS = frozenset(
    """a an and are as at be by for from has have if in is it its may no not of
    on or such that the their then there these this to was were which will with
    would can could should when where how""".split()
)


class SchemaError(ValueError):
    pass


class EmptyIndex(RuntimeError):
    pass


@dataclass
class ChunkPolicy:
    target_tokens: int = 384  # bounds [256, 512]
    overlap_fraction: float = 0.15  # bounds [0.10, 0.20]; 0 allowed as override


@dataclass
class KnowledgeChunk:
    chunk_id: str
    document_id: str
    content: str
    source_url: str
    source_type: str
    title: str
    publication_date: str
    last_accessed_date: str
    vulnerability_tags: list[str] = field(default_factory=list)
    platform_tags: list[str] = field(default_factory=list)
    severity_keywords: list[str] = field(default_factory=list)
    summary: str = ""
    embedding: Optional[EmbeddingVector] = None

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in REQUIRED_CHUNK_FIELDS}
        if self.embedding is not None:
            d["embedding"] = self.embedding.values
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KnowledgeChunk":
        missing = [k for k in REQUIRED_CHUNK_FIELDS if k not in d]
        if missing:
            raise SchemaError(f"chunk missing fields: {missing}")
        if not d["content"]:
            raise SchemaError("chunk content must be non-empty")
        emb = d.get("embedding")
        return cls(
            **{k: d[k] for k in REQUIRED_CHUNK_FIELDS},
            embedding=EmbeddingVector.of(emb) if emb is not None else None,
        )


@dataclass
class RetrievalQuery:
    text: str
    k: int = 5
    source_type: Optional[str] = None
    vulnerability_tags: Optional[list[str]] = None
    platform_tags: Optional[list[str]] = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def chunk_document(doc: str, policy: Optional[ChunkPolicy] = None) -> list[tuple[str, tuple[int, int]]]:
    """Split a document into overlapping token windows.

    Returns (content, (start_token, end_token)) pairs whose ranges tile the
    whole document; consecutive windows overlap by round(S * overlap) tokens
    except possibly the final, shorter one.
    """
    if not doc:
        raise ValueError("document must be non-empty")
    policy = policy or ChunkPolicy()
    tokens = doc.split()
    size = policy.target_tokens
    overlap = round(size * policy.overlap_fraction)
    stride = max(1, size - overlap)
    chunks: list[tuple[str, tuple[int, int]]] = []
    start = 0
    while True:
        end = min(start + size, len(tokens))
        chunks.append((" ".join(tokens[start:end]), (start, end)))
        if end >= len(tokens):
            break
        start += stride
    return chunks


class VectorIndex:
    """Brute-force cosine index with upsert-by-chunk_id semantics."""

    def __init__(self, gateway: Gateway) -> None:
        self.gateway = gateway
        self._chunks: dict[str, KnowledgeChunk] = {}
        self._dim: Optional[int] = None

    def __len__(self) -> int:
        return len(self._chunks)

    def ingest(self, chunks: list[KnowledgeChunk]) -> int:
        """Embed and store chunks; an existing chunk_id is replaced.

        Returns the net change in index size.
        """
        for chunk in chunks:
            missing = [k for k in REQUIRED_CHUNK_FIELDS if getattr(chunk, k, None) is None]
            if missing:
                raise SchemaError(f"chunk {chunk.chunk_id!r} missing fields: {missing}")
            if not chunk.content:
                raise SchemaError(f"chunk {chunk.chunk_id!r} has empty content")
        before = len(self._chunks)
        to_embed = [c for c in chunks if c.embedding is None]
        if to_embed:
            vectors = self.gateway.embed([c.content for c in to_embed])
            for chunk, vec in zip(to_embed, vectors):
                chunk.embedding = vec
        for chunk in chunks:
            assert chunk.embedding is not None
            if self._dim is None:
                self._dim = len(chunk.embedding.values)
            elif len(chunk.embedding.values) != self._dim:
                raise DimensionMismatch(
                    f"chunk {chunk.chunk_id!r}: dimension {len(chunk.embedding.values)} != {self._dim}"
                )
            self._chunks[chunk.chunk_id] = chunk
        return len(self._chunks) - before

    def _passes_filters(self, chunk: KnowledgeChunk, q: RetrievalQuery) -> bool:
        if q.source_type is not None and chunk.source_type != q.source_type:
            return False
        if q.vulnerability_tags and not set(q.vulnerability_tags) & set(chunk.vulnerability_tags):
            return False
        if q.platform_tags and not set(q.platform_tags) & set(chunk.platform_tags):
            return False
        return True

    def retrieve(self, q: RetrievalQuery) -> list[tuple[KnowledgeChunk, float]]:
        """Exact top-k by cosine similarity, ties broken by chunk_id ascending."""
        if not self._chunks:
            raise EmptyIndex("index holds no chunks")
        qvec = self.gateway.embed([q.text])[0].as_array()
        qnorm = np.linalg.norm(qvec)
        scored: list[tuple[float, str, KnowledgeChunk]] = []
        for chunk in self._chunks.values():
            if not self._passes_filters(chunk, q):
                continue
            assert chunk.embedding is not None
            denom = qnorm * chunk.embedding.norm
            score = float(np.dot(qvec, chunk.embedding.as_array()) / denom) if denom else 0.0
            score = max(-1.0, min(1.0, score))
            scored.append((score, chunk.chunk_id, chunk))
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(chunk, score) for score, _, chunk in scored[: q.k]]

    # Persistence: one JSON record per line, replayed in order on load so the
    # last write for a chunk_id wins.
    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for chunk in self._chunks.values():
                fh.write(json.dumps(chunk.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path, gateway: Gateway) -> "VectorIndex":
        index = cls(gateway)
        with Path(path).open() as fh:
            chunks = [KnowledgeChunk.from_dict(json.loads(line)) for line in fh if line.strip()]
        if chunks:
            index.ingest(chunks)
        return index


def formulate_query(
    task: SubTask,
    review_text: str,
    k: int = 5,
    n_terms: int = 8,
    platform: str = "ethereum",
) -> RetrievalQuery:
    """Build a retrieval query from the sub-task and its review output.

    Query text = concern tag + target + the n most frequent non-stopword
    terms of the review, ranked by count then first appearance (deterministic).
    """
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for i, raw in enumerate(review_text.lower().split()):
        term = raw.strip(".,;:!?()[]{}'\"`")
        if not term or term in STOPWORDS or len(term) < 3:
            continue
        counts[term] = counts.get(term, 0) + 1
        order.setdefault(term, i)
    top = sorted(counts, key=lambda t: (-counts[t], order[t]))[:n_terms]
    parts = [task.concern, task.target] + top
    return RetrievalQuery(text=" ".join(p for p in parts if p), k=k, platform_tags=[platform])
