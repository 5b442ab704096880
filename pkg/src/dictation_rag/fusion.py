"""Hybrid lexical + dense retrieval over the schema pool and the memory bank."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .dense import DenseIndex, EmbeddingProvider, cosine, top_k_dense
from .errors import EmptyPool, InvalidQuery
from .ontology import Schema, format_schema
from .sparse import RetrievalHit, Scorer, bm25_score, build_sparse_index, tfidf_cosine, tokenize, top_k_sparse

if TYPE_CHECKING:
    from .memory import MemoryEntry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5  # weight on the lexical score
    candidate_pool_multiplier: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.candidate_pool_multiplier < 1:
            raise ValueError("candidate_pool_multiplier must be >= 1")


def min_max_normalize(hits: Sequence[RetrievalHit]) -> list[RetrievalHit]:
    if not hits:
        return []
    lo = min(h.score for h in hits)
    hi = max(h.score for h in hits)
    if hi == lo:
        return [RetrievalHit(h.doc_id, 1.0, h.rank) for h in hits]
    span = hi - lo
    return [RetrievalHit(h.doc_id, (h.score - lo) / span, h.rank) for h in hits]


def fuse(
    lexical: Sequence[RetrievalHit], dense: Sequence[RetrievalHit], alpha: float, k: int
) -> list[RetrievalHit]:
    """Convex combination of min-max normalized scores; a doc absent from one list scores 0 there."""
    if k <= 0:
        return []
    lex = {h.doc_id: h.score for h in min_max_normalize(lexical)}
    den = {h.doc_id: h.score for h in min_max_normalize(dense)}
    fused = {
        doc_id: alpha * lex.get(doc_id, 0.0) + (1.0 - alpha) * den.get(doc_id, 0.0)
        for doc_id in lex.keys() | den.keys()
    }
    ordered = sorted(fused.items(), key=lambda pair: (-pair[1], pair[0]))[:k]
    return [RetrievalHit(doc_id, score, rank) for rank, (doc_id, score) in enumerate(ordered, 1)]


@dataclass(frozen=True)
class FusedHit:
    doc_id: str
    rank: int
    score: float
    lexical: float
    dense: float


class HybridIndex:
    """A sparse and a dense index over the same (doc_id, text) pool."""

    def __init__(
        self,
        docs: Sequence[tuple[str, str]],
        embedder: EmbeddingProvider,
        scorer: Scorer,
        fusion: FusionConfig | None = None,
        query_embedder: EmbeddingProvider | None = None,
    ) -> None:
        self.scorer = scorer
        self.fusion = fusion or FusionConfig()
        self.sparse = build_sparse_index(docs)
        self.dense = DenseIndex.from_texts(docs, embedder)
        self.query_embedder = query_embedder or embedder

    def __len__(self) -> int:
        return self.sparse.doc_count

    def lexical_score(self, tokens: Sequence[str], doc_id: str) -> float:
        fn = bm25_score if self.scorer == "bm25" else tfidf_cosine
        return fn(self.sparse, tokens, doc_id)

    def search(self, query: str, k: int) -> list[FusedHit]:
        if not query.strip():
            raise InvalidQuery("query text is empty")
        if k <= 0:
            return []
        tokens = tokenize(query)
        qvec = self.query_embedder.embed_many([query])[0]
        depth = k * self.fusion.candidate_pool_multiplier
        lex_hits = top_k_sparse(self.sparse, tokens, depth, self.scorer)
        dense_hits = top_k_dense(self.dense, qvec, depth)
        fused = fuse(lex_hits, dense_hits, self.fusion.alpha, k)
        lex_raw = {h.doc_id: h.score for h in lex_hits}
        dense_raw = {h.doc_id: h.score for h in dense_hits}
        return [
            FusedHit(
                h.doc_id,
                h.rank,
                h.score,
                lex_raw[h.doc_id] if h.doc_id in lex_raw else self.lexical_score(tokens, h.doc_id),
                dense_raw[h.doc_id] if h.doc_id in dense_raw else cosine(self.dense.entries[h.doc_id], qvec),
            )
            for h in fused
        ]


class SchemaPool:
    """Schemas indexed by their formatted prompt strings (TF-IDF + dense)."""

    def __init__(
        self,
        schemas: Sequence[Schema],
        embedder: EmbeddingProvider,
        fusion: FusionConfig | None = None,
        query_embedder: EmbeddingProvider | None = None,
    ) -> None:
        self.schemas = list(schemas)
        self.by_id = {s.id: s for s in self.schemas}
        docs = [(s.id, format_schema(s)) for s in self.schemas]
        self.index = HybridIndex(docs, embedder, "tfidf", fusion, query_embedder) if docs else None

    def __len__(self) -> int:
        return len(self.schemas)

    def search(self, segment_text: str, n: int) -> list[tuple[Schema, FusedHit]]:
        if self.index is None:
            raise EmptyPool("schema pool is empty")
        return [(self.by_id[h.doc_id], h) for h in self.index.search(segment_text, n)]


class ExamplePool:
    """Memory-bank entries indexed by segment text (BM25 + dense)."""

    def __init__(
        self,
        entries: Sequence[MemoryEntry],
        embedder: EmbeddingProvider,
        fusion: FusionConfig | None = None,
        query_embedder: EmbeddingProvider | None = None,
    ) -> None:
        self.entries = list(entries)
        self.by_id = {e.id: e for e in self.entries}
        docs = [(e.id, e.segment_text) for e in self.entries]
        self.index = HybridIndex(docs, embedder, "bm25", fusion, query_embedder) if docs else None

    def __len__(self) -> int:
        return len(self.entries)

    def search(self, segment_text: str, k: int) -> list[tuple[MemoryEntry, FusedHit]]:
        if self.index is None:
            if not segment_text.strip():
                raise InvalidQuery("query text is empty")
            log.warning("memory bank is empty; continuing zero-shot")
            return []
        return [(self.by_id[h.doc_id], h) for h in self.index.search(segment_text, k)]


def retrieve_schemas(segment_text: str, schema_pool: SchemaPool, n: int = 10) -> list[Schema]:
    return [s for s, _ in schema_pool.search(segment_text, n)]


def retrieve_examples(segment_text: str, memory_bank: ExamplePool, k: int = 15) -> list[MemoryEntry]:
    return [e for e, _ in memory_bank.search(segment_text, k)]
