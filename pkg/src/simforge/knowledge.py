"""Chunked, embedded, persistent vector index over ns-3 documentation.

The index is a flat exact-cosine store: corpus sizes here are small enough
that a linear scan is both trivially fast and fully deterministic. The
on-disk format is a single versioned, checksummed JSON file (see
``docs/index-format.md``).
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gateway import EmbeddingVector, GatewayError

INDEX_FORMAT_VERSION = 1

DEFAULT_MAX_CHUNK_CHARS = 2000
DEFAULT_OVERLAP_CHARS = 200


class KnowledgeStoreError(Exception):
    pass


class EmptyIndex(KnowledgeStoreError):
    pass


class CorruptIndex(KnowledgeStoreError):
    pass


class VersionMismatch(KnowledgeStoreError):
    pass


class EmbeddingFailed(KnowledgeStoreError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    source_uri: str = ""

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError("document body must be non-empty")


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    ordinal: int
    embedding: EmbeddingVector | None = None


@dataclass
class IndexEntry:
    chunk: Chunk
    vector: np.ndarray
    norm: float


@dataclass
class IngestionReport:
    docs: int
    chunks: int
    elapsed: float


def chunk_document(
    doc: Document,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> list[Chunk]:
    """Split a document into a sliding window of chunks.

    A body that fits in one chunk is returned whole. Otherwise windows of
    ``max_chunk_chars`` start every ``max_chunk_chars - overlap_chars``
    characters until the start offset passes the end of the body, so dropping
    the first ``overlap_chars`` characters of every chunk after the first
    reconstructs the body exactly.
    """
    if not max_chunk_chars > overlap_chars >= 0:
        raise ValueError("require max_chunk_chars > overlap_chars >= 0")
    body = doc.body
    if len(body) <= max_chunk_chars:
        starts = [0]
    else:
        stride = max_chunk_chars - overlap_chars
        starts = list(range(0, len(body), stride))
    return [
        Chunk(
            chunk_id=f"{doc.doc_id}#{ordinal:04d}",
            doc_id=doc.doc_id,
            text=body[start : start + max_chunk_chars],
            ordinal=ordinal,
        )
        for ordinal, start in enumerate(starts)
    ]


class VectorIndex:
    """Flat in-memory cosine index. Searches may run concurrently; ingestion
    and persistence take the writer lock."""

    def __init__(self) -> None:
        self.entries: list[IndexEntry] = []
        self.dimension: int | None = None
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, chunk: Chunk, vector: EmbeddingVector) -> None:
        arr = np.asarray(vector.values, dtype=np.float64)
        if self.dimension is None:
            self.dimension = arr.size
        elif arr.size != self.dimension:
            raise EmbeddingFailed(f"vector dimension {arr.size} != index dimension {self.dimension}")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise EmbeddingFailed(f"zero-norm embedding for chunk {chunk.chunk_id}")
        self.entries.append(IndexEntry(chunk=chunk, vector=arr, norm=norm))


def ingest_documents(docs: list[Document], embedder, store: VectorIndex) -> IngestionReport:
    """Chunk, embed, and index every document.

    A provider failure rolls the index back to its pre-ingest state so a
    partial ingest never leaks into search results.
    """
    start = time.perf_counter()
    with store._write_lock:
        checkpoint = len(store.entries)
        chunk_total = 0
        try:
            for doc in docs:
                chunks = chunk_document(doc)
                vectors = embedder.embed([c.text for c in chunks])
                for chunk, vec in zip(chunks, vectors):
                    chunk.embedding = vec
                    store.add(chunk, vec)
                chunk_total += len(chunks)
        except (GatewayError, EmbeddingFailed) as exc:
            del store.entries[checkpoint:]
            if not store.entries:
                store.dimension = None
            raise EmbeddingFailed(f"ingest rolled back: {exc}") from exc
    return IngestionReport(docs=len(docs), chunks=chunk_total, elapsed=time.perf_counter() - start)


def load_directory(path: str | Path) -> list[Document]:
    """One Document per plain-text/markdown file; doc_id is the relative path."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"not a readable directory: {root}")
    docs = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix.lower() in (".txt", ".md", ".rst"):
            body = p.read_text(encoding="utf-8", errors="replace")
            if not body:
                continue
            rel = str(p.relative_to(root))
            docs.append(Document(doc_id=rel, title=p.stem, body=body, source_uri=str(p)))
    return docs


def search(query: str, k: int, embedder, store: VectorIndex) -> list[tuple[Chunk, float]]:
    """Top-k chunks by cosine similarity, ties broken by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not store.entries:
        raise EmptyIndex("index has no entries")
    qvec = np.asarray(embedder.embed([query])[0].values, dtype=np.float64)
    qnorm = float(np.linalg.norm(qvec))
    if qnorm == 0.0:
        raise EmbeddingFailed("zero-norm query embedding")
    scored = []
    for entry in store.entries:
        score = float(np.dot(entry.vector, qvec) / (entry.norm * qnorm))
        scored.append((entry.chunk, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].chunk_id))
    return scored[:k]


def persist(store: VectorIndex, path: str | Path) -> None:
    """Write the index as one versioned JSON document with a payload checksum."""
    payload = {
        "dimension": store.dimension,
        "entries": [
            {
                "chunk_id": e.chunk.chunk_id,
                "doc_id": e.chunk.doc_id,
                "text": e.chunk.text,
                "ordinal": e.chunk.ordinal,
                "vector": list(e.vector),
            }
            for e in store.entries
        ],
    }
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    doc = {
        "format_version": INDEX_FORMAT_VERSION,
        "checksum": hashlib.sha256(body.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    with store._write_lock:
        Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load(path: str | Path) -> VectorIndex:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CorruptIndex(f"cannot read index file: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptIndex("missing format_version header")
    if doc["format_version"] != INDEX_FORMAT_VERSION:
        raise VersionMismatch(
            f"index format {doc['format_version']} != supported {INDEX_FORMAT_VERSION}"
        )
    payload = doc.get("payload")
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != doc.get("checksum"):
        raise CorruptIndex("checksum mismatch")
    store = VectorIndex()
    for raw in payload["entries"]:
        chunk = Chunk(
            chunk_id=raw["chunk_id"],
            doc_id=raw["doc_id"],
            text=raw["text"],
            ordinal=raw["ordinal"],
            embedding=EmbeddingVector(tuple(raw["vector"])),
        )
        store.add(chunk, chunk.embedding)
    return store
