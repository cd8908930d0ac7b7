"""Embeddings and an exact, flat cosine-similarity index.

Every vector stored in or queried against a :class:`VectorIndex` is
L2-normalised, so cosine similarity is a plain dot product.

On-disk format: a JSON header line ``{dimension, count, embedder_tag,
checksum}`` followed by one ``{"id": ..., "values": [...]}`` line per entry.
The checksum is the SHA-256 of the entry lines exactly as written.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

FALLBACK_TAG = "fallback-v1"
FALLBACK_DIM = 256

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class VectorIndexError(Exception):
    pass


class EmptyText(VectorIndexError):
    pass


class ProviderUnavailable(VectorIndexError):
    pass


class DimensionMismatch(VectorIndexError):
    pass


class CorruptIndex(VectorIndexError):
    pass


class EmbedderMismatch(VectorIndexError):
    pass


class IoFailure(VectorIndexError):
    pass


class Embedder(Protocol):
    tag: str
    dimension: int

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalise a zero vector")
    return v / n


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _bucket(token: str, dim: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % dim


class HashingEmbedder:
    """Deterministic offline bag-of-words embedder.

    Tokens are hashed into ``dimension`` buckets, counted, then normalised.
    Text with no alphanumeric token maps to a fixed bucket so the result is
    still a unit vector.
    """

    tag = FALLBACK_TAG

    def __init__(self, dimension: int = FALLBACK_DIM):
        self.dimension = dimension
        if dimension != FALLBACK_DIM:
            self.tag = f"{FALLBACK_TAG}-d{dimension}"

    def embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension, dtype=np.float64)
        tokens = tokenize(text) or ["\0"]
        for tok in tokens:
            v[_bucket(tok, self.dimension)] += 1.0
        return v / np.linalg.norm(v)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts]) if texts else np.zeros((0, self.dimension))


class RemoteEmbedder:
    """Embeddings from an OpenAI-style ``/embeddings`` endpoint.

    The dimension is unknown until the first response; after that it is
    frozen into :attr:`tag`.
    """

    def __init__(self, backend, model: str, dimension: int | None = None):
        self.backend = backend
        self.model = model
        self.dimension = dimension

    @property
    def tag(self) -> str:
        return f"remote:{self.model}:{self.dimension if self.dimension else '?'}"

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension or 0))
        try:
            rows = self.backend.embed(list(texts), self.model)
        except Exception as e:  # gateway errors surface as provider outages
            raise ProviderUnavailable(str(e)) from e
        m = np.asarray(rows, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(texts):
            raise ProviderUnavailable(f"unexpected embedding shape {m.shape}")
        if self.dimension is None:
            self.dimension = m.shape[1]
        elif m.shape[1] != self.dimension:
            raise DimensionMismatch(f"provider returned {m.shape[1]}, expected {self.dimension}")
        return np.stack([normalize(r) for r in m])


def embedder_for_tag(tag: str, backend=None) -> Embedder:
    if tag == FALLBACK_TAG:
        return HashingEmbedder()
    m = re.fullmatch(rf"{re.escape(FALLBACK_TAG)}-d(\d+)", tag)
    if m:
        return HashingEmbedder(int(m.group(1)))
    m = re.fullmatch(r"remote:(.+):(\d+)", tag)
    if m:
        if backend is None:
            raise ProviderUnavailable(f"index was built with {tag!r}; a remote backend is required")
        return RemoteEmbedder(backend, m.group(1), int(m.group(2)))
    raise EmbedderMismatch(f"unrecognised embedder tag {tag!r}")


def embed(text: str, provider: Embedder) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    return provider.embed_many([text])[0]


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float


class VectorIndex:
    """Immutable flat store of ``(chunk_id, unit vector)`` entries."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, embedder_tag: str, dimension: int | None = None):
        vectors = np.array(vectors, dtype=np.float64)
        if dimension is None:
            if vectors.ndim != 2:
                raise ValueError("vectors must be a 2-D array")
            dimension = vectors.shape[1]
        if vectors.size == 0:
            vectors = vectors.reshape(0, dimension)
        if vectors.ndim != 2 or vectors.shape[1] != dimension:
            raise DimensionMismatch(f"vectors have shape {vectors.shape}, index dimension is {dimension}")
        if len(ids) != vectors.shape[0]:
            raise ValueError("ids and vectors differ in length")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids")
        norms = np.linalg.norm(vectors, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-9):
            raise ValueError("all index vectors must be L2-normalised")
        self.dimension = int(dimension)
        self.ids = tuple(ids)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.embedder_tag = embedder_tag

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.ids == other.ids
            and self.embedder_tag == other.embedder_tag
            and np.array_equal(self.vectors, other.vectors)
        )

    def search(self, query: np.ndarray, k: int, restrict_to: Iterable[str] | None = None) -> list[RetrievalHit]:
        return search(self, query, k, restrict_to)


def build_index(corpus, embedder: Embedder, batch_size: int = 64) -> VectorIndex:
    texts = [c.text for c in corpus.chunks]
    parts = [embedder.embed_many(texts[i : i + batch_size]) for i in range(0, len(texts), batch_size)]
    dim = embedder.dimension or 0
    vectors = np.concatenate(parts) if parts else np.zeros((0, dim))
    return VectorIndex([c.id for c in corpus.chunks], vectors, embedder.tag, dimension=embedder.dimension)


def search(index: VectorIndex, query: np.ndarray, k: int, restrict_to: Iterable[str] | None = None) -> list[RetrievalHit]:
    """Top-``k`` entries by cosine score; ties go to the smaller chunk id."""
    if k < 1:
        raise ValueError("k must be positive")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise DimensionMismatch(f"query has shape {q.shape}, index dimension is {index.dimension}")
    rows = np.arange(len(index))
    if restrict_to is not None:
        allowed = set(restrict_to)
        rows = np.array([i for i, cid in enumerate(index.ids) if cid in allowed], dtype=int)
    if rows.size == 0:
        return []
    scores = index.vectors[rows] @ q
    ids = np.array([index.ids[i] for i in rows])
    order = np.lexsort((ids, -scores))[:k]
    return [RetrievalHit(str(ids[i]), float(scores[i])) for i in order]


def persist(index: VectorIndex, path: str | os.PathLike) -> None:
    body = "".join(
        json.dumps({"id": cid, "values": [float(x) for x in vec]}) + "\n"
        for cid, vec in zip(index.ids, index.vectors)
    )
    header = {
        "dimension": index.dimension,
        "count": len(index),
        "embedder_tag": index.embedder_tag,
        "checksum": hashlib.sha256(body.encode("utf-8")).hexdigest(),
    }
    try:
        Path(path).write_text(json.dumps(header) + "\n" + body, encoding="utf-8")
    except OSError as e:
        raise IoFailure(str(e)) from e


def load(path: str | os.PathLike, require_tag: str | None = None) -> VectorIndex:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise IoFailure(str(e)) from e
    head, sep, body = raw.partition("\n")
    try:
        header = json.loads(head)
        dimension = int(header["dimension"])
        count = int(header["count"])
        tag = header["embedder_tag"]
        checksum = header["checksum"]
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptIndex(f"bad header in {path}: {e}") from e
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != checksum:
        raise CorruptIndex(f"checksum mismatch in {path}")
    if require_tag is not None and tag != require_tag:
        raise EmbedderMismatch(f"{path} was built with {tag!r}, expected {require_tag!r}")
    entries = [json.loads(line) for line in body.splitlines()]
    if len(entries) != count:
        raise CorruptIndex(f"{path} declares {count} entries, found {len(entries)}")
    ids = [e["id"] for e in entries]
    vectors = np.array([e["values"] for e in entries], dtype=np.float64).reshape(count, dimension)
    return VectorIndex(ids, vectors, tag, dimension=dimension)
