"""Dense retrieval: embedding providers, an on-disk embedding cache, cosine top-k."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable
from .sparse import RetrievalHit, rank_scores, tokenize

log = logging.getLogger(__name__)

FALLBACK_DIM = 256
# fixed seeds for the hashed fallback; changing them invalidates cached vectors
BUCKET_SEED = b"dr-bucket-v1"
SIGN_SEED = b"dr-sign-v1"


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def _hash64(token: str, seed: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=seed).digest()
    return int.from_bytes(digest, "little")


class HashingEmbedder:
    """Signed feature hashing over tokens, L2-normalized.

    Deterministic and offline; stands in for a biomedical encoder in tests.
    """

    def __init__(self, dimension: int = FALLBACK_DIM) -> None:
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.provider_id = f"hashing-{dimension}-{BUCKET_SEED.decode()}-{SIGN_SEED.decode()}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            bucket = _hash64(token, BUCKET_SEED) % self.dimension
            sign = 1.0 if _hash64(token, SIGN_SEED) % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        # tokens can cancel out inside one bucket; that yields the zero vector too
        return vec / norm if norm > 0 else vec

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``POST {base_url}/embeddings`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        batch_size: int = 64,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.provider_id = f"remote:{self.base_url}:{model}"
        self.max_retries = max_retries
        self.batch_size = batch_size
        self.dimension = 0  # known after the first response
        key = api_key if api_key is not None else os.environ.get("DICTATION_RAG_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, batch: Sequence[str]) -> list[np.ndarray]:
        last: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._client.post(
                    f"{self.base_url}/embeddings", json={"model": self.model, "input": list(batch)}
                )
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = ProviderUnavailable(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                data = sorted(resp.json()["data"], key=lambda d: d["index"])
                return [np.asarray(d["embedding"], dtype=np.float64) for d in data]
            except (httpx.TransportError, httpx.HTTPStatusError, KeyError, ValueError) as exc:
                last = exc
        raise ProviderUnavailable(f"embedding service unavailable: {last}")

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._post(texts[start : start + self.batch_size]))
        if out:
            dims = {v.shape[0] for v in out}
            if len(dims) != 1 or (self.dimension and dims != {self.dimension}):
                raise DimensionMismatch(f"provider returned dimensions {sorted(dims)}")
            self.dimension = dims.pop()
        return out


def content_key(provider_id: str, text: str) -> str:
    return hashlib.sha256(f"{provider_id}\x00{text}".encode("utf-8")).hexdigest()


class CachedEmbedder:
    """Wraps a provider with a JSONL cache of ``{"key", "vector"}`` lines."""

    def __init__(self, provider: EmbeddingProvider, cache_path: str | Path) -> None:
        self.provider = provider
        self.provider_id = provider.provider_id
        self.cache_path = Path(cache_path)
        self._lock = threading.Lock()
        self._vectors: dict[str, np.ndarray] = {}
        if self.cache_path.exists():
            with open(self.cache_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._vectors[row["key"]] = np.asarray(row["vector"], dtype=np.float64)

    @property
    def dimension(self) -> int:
        return self.provider.dimension

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        keys = [content_key(self.provider_id, t) for t in texts]
        missing = list(dict.fromkeys(t for t, k in zip(texts, keys) if k not in self._vectors))
        if missing:
            fresh = self.provider.embed_many(missing)
            with self._lock, open(self.cache_path, "a", encoding="utf-8") as fh:
                for text, vec in zip(missing, fresh):
                    key = content_key(self.provider_id, text)
                    self._vectors[key] = vec
                    fh.write(json.dumps({"key": key, "vector": vec.tolist()}) + "\n")
            log.debug("embedded %d new texts (%d cached)", len(missing), len(texts) - len(missing))
        return [self._vectors[k] for k in keys]


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed_many([text])[0]


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb))))


@dataclass(frozen=True)
class DenseIndex:
    entries: Mapping[str, np.ndarray]
    dimension: int

    @classmethod
    def build(cls, items: Iterable[tuple[str, np.ndarray]], dimension: int | None = None) -> DenseIndex:
        entries: dict[str, np.ndarray] = {}
        for doc_id, vec in items:
            if doc_id in entries:
                raise ValueError(f"duplicate doc id {doc_id!r}")
            vec = np.asarray(vec, dtype=np.float64)
            if dimension is None:
                dimension = vec.shape[0]
            if vec.shape != (dimension,):
                raise DimensionMismatch(f"vector for {doc_id!r} has shape {vec.shape}, expected ({dimension},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"non-finite embedding for {doc_id!r}")
            entries[doc_id] = vec
        return cls(entries, dimension or 0)

    @classmethod
    def from_texts(cls, docs: Sequence[tuple[str, str]], provider: EmbeddingProvider) -> DenseIndex:
        vectors = provider.embed_many([text for _, text in docs])
        return cls.build(zip((doc_id for doc_id, _ in docs), vectors), provider.dimension or None)

    def __len__(self) -> int:
        return len(self.entries)


def top_k_dense(index: DenseIndex, query: Sequence[float] | np.ndarray, k: int) -> list[RetrievalHit]:
    query = np.asarray(query, dtype=np.float64)
    if index.entries and query.shape != (index.dimension,):
        raise DimensionMismatch(f"query has shape {query.shape}, index dimension is {index.dimension}")
    if k <= 0:
        return []
    return rank_scores(((doc_id, cosine(vec, query)) for doc_id, vec in index.entries.items()), k)
