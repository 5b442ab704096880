"""Lexical retrieval: tokenizer, inverted index, BM25 and TF-IDF cosine scorers."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Sequence

from .errors import DuplicateDocId, UnknownDocId

BM25_K1 = 1.2
BM25_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character.

    No stemming or stopword removal: negations like "no" carry meaning in
    clinical text.
    """
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            buf.append(ch)
        elif buf:
            tokens.append("".join(buf))
            buf.clear()
    if buf:
        tokens.append("".join(buf))
    return tokens


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class SparseIndex:
    doc_ids: tuple[str, ...]
    term_freqs: dict[str, dict[str, int]]
    doc_freqs: dict[str, int]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_count: int

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self.doc_lengths

    def tf(self, term: str, doc_id: str) -> int:
        return self.term_freqs.get(term, {}).get(doc_id, 0)

    def tfidf_weight(self, term: str, tf: int) -> float:
        df = self.doc_freqs.get(term, 0)
        return tf * (math.log((1 + self.doc_count) / (1 + df)) + 1.0)

    def doc_norm(self, doc_id: str) -> float:
        """L2 norm of the document's TF-IDF vector (memoized)."""
        cache = self.__dict__.setdefault("_norms", {})
        if doc_id not in cache:
            terms = self.__dict__.setdefault("_doc_terms", _invert(self.term_freqs))
            cache[doc_id] = math.sqrt(
                sum(self.tfidf_weight(t, c) ** 2 for t, c in terms.get(doc_id, {}).items())
            )
        return cache[doc_id]


def _invert(term_freqs: dict[str, dict[str, int]]) -> dict[str, dict[str, int]]:
    by_doc: dict[str, dict[str, int]] = {}
    for term, postings in term_freqs.items():
        for doc_id, count in postings.items():
            by_doc.setdefault(doc_id, {})[term] = count
    return by_doc


def build_sparse_index(docs: Iterable[tuple[str, str]]) -> SparseIndex:
    doc_ids: list[str] = []
    term_freqs: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for doc_id, text in docs:
        if doc_id in doc_lengths:
            raise DuplicateDocId(doc_id)
        tokens = tokenize(text)
        doc_ids.append(doc_id)
        doc_lengths[doc_id] = len(tokens)
        for term, count in Counter(tokens).items():
            term_freqs.setdefault(term, {})[doc_id] = count
    doc_freqs = {term: len(postings) for term, postings in term_freqs.items()}
    n = len(doc_ids)
    avg = sum(doc_lengths.values()) / n if n else 0.0
    return SparseIndex(tuple(doc_ids), term_freqs, doc_freqs, doc_lengths, avg, n)


def _check(index: SparseIndex, doc_id: str) -> None:
    if doc_id not in index:
        raise UnknownDocId(doc_id)


def bm25_score(
    index: SparseIndex,
    query: Sequence[str],
    doc_id: str,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    """Okapi BM25 with the Lucene-style nonnegative idf. Query terms are deduplicated."""
    _check(index, doc_id)
    n = index.doc_count
    dl = index.doc_lengths[doc_id]
    # avgdl is 0 only if every doc is empty, in which case every tf is 0 too
    length_ratio = dl / index.avg_doc_length if index.avg_doc_length > 0 else 0.0
    score = 0.0
    for term in dict.fromkeys(query):
        tf = index.tf(term, doc_id)
        if tf == 0:
            continue
        df = index.doc_freqs[term]
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * length_ratio))
    return score


def tfidf_cosine(index: SparseIndex, query: Sequence[str], doc_id: str) -> float:
    """Cosine between smoothed TF-IDF vectors of the query and a document."""
    _check(index, doc_id)
    doc_norm = index.doc_norm(doc_id)
    if doc_norm == 0.0:
        return 0.0
    q_weights = {t: index.tfidf_weight(t, c) for t, c in Counter(query).items()}
    q_norm = math.sqrt(sum(w * w for w in q_weights.values()))
    if q_norm == 0.0:
        return 0.0
    dot = 0.0
    for term, qw in q_weights.items():
        tf = index.tf(term, doc_id)
        if tf:
            dot += qw * index.tfidf_weight(term, tf)
    return min(1.0, max(0.0, dot / (q_norm * doc_norm)))


Scorer = Literal["bm25", "tfidf"]
_SCORERS: dict[str, Callable[[SparseIndex, Sequence[str], str], float]] = {
    "bm25": bm25_score,
    "tfidf": tfidf_cosine,
}


def rank_scores(scores: Iterable[tuple[str, float]], k: int) -> list[RetrievalHit]:
    """Sort (doc_id, score) pairs by score desc then doc_id asc and keep k."""
    if k <= 0:
        return []
    ordered = sorted(scores, key=lambda pair: (-pair[1], pair[0]))[:k]
    return [RetrievalHit(doc_id, score, rank) for rank, (doc_id, score) in enumerate(ordered, 1)]


def score_all(index: SparseIndex, query: Sequence[str], scorer: Scorer) -> dict[str, float]:
    fn = _SCORERS[scorer]
    return {doc_id: fn(index, query, doc_id) for doc_id in index.doc_ids}


def top_k_sparse(
    index: SparseIndex, query: Sequence[str], k: int, scorer: Scorer = "bm25"
) -> list[RetrievalHit]:
    if scorer not in _SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}")
    if k <= 0:
        return []
    return rank_scores(score_all(index, query, scorer).items(), k)
