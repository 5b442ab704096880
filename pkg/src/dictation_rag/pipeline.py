"""End-to-end extraction: segment, retrieve schemas and examples, generate, aggregate."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .corpus import Dictation, Observation, PredictionRecord, Segment, write_predictions
from .dense import EmbeddingProvider, HashingEmbedder
from .errors import (
    DictationRagError,
    ObservationParseError,
    SegmentationError,
    SegmentParseError,
    UndescribedOntology,
)
from .evaluation import dedupe_observations
from .fusion import ExamplePool, FusionConfig, SchemaPool
from .gateway import REPAIR_REMINDER, Gateway, LlmProfile, parse_observation_list, parse_segment_list
from .memory import MemoryEntry
from .ontology import Schema, format_schema

log = logging.getLogger(__name__)

DEFAULT_N_SCHEMAS = 10
DEFAULT_K_EXAMPLES = 15


@dataclass(frozen=True)
class PipelineConfig:
    n_schemas: int = DEFAULT_N_SCHEMAS
    k_examples: int = DEFAULT_K_EXAMPLES
    schema_fusion: FusionConfig = field(default_factory=FusionConfig)
    example_fusion: FusionConfig = field(default_factory=FusionConfig)
    generator: LlmProfile = field(default_factory=LlmProfile)
    segmenter: LlmProfile = field(default_factory=LlmProfile)
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if self.n_schemas < 1:
            raise ValueError("n_schemas must be >= 1")
        if self.k_examples < 0:
            raise ValueError("k_examples must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass
class SegmentResult:
    observations: list[Observation]
    diagnostics: list[str]
    schemas: list[Schema] = field(default_factory=list)
    examples: list[MemoryEntry] = field(default_factory=list)
    failed: bool = False


@dataclass
class RunSummary:
    dictations: int = 0
    segments: int = 0
    calls: int = 0
    failures: list[dict[str, str]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "dictations": self.dictations,
            "segments": self.segments,
            "calls": self.calls,
            "failures": self.failures,
        }


def require_described(schemas: Sequence[Schema]) -> None:
    missing = [s.id for s in schemas if not s.described]
    if missing:
        raise UndescribedOntology(missing)


def segment_dictation(d: Dictation, segmenter: Gateway) -> tuple[list[Segment], list[str]]:
    """Split a dictation into segments via the segmenter model.

    Returns the segments plus diagnostics for segments that are not verbatim
    substrings of the dictation.
    """
    if not d.text.strip():
        return [], []
    bindings = {"dictation": d.text, "format_reminder": ""}
    try:
        texts = parse_segment_list(segmenter.call("segment", bindings))
    except SegmentParseError:
        try:
            texts = parse_segment_list(segmenter.call("segment", {**bindings, "format_reminder": REPAIR_REMINDER}))
        except SegmentParseError as exc:
            raise SegmentationError(d.id, str(exc)) from None
    segments = [Segment(d.id, i, t) for i, t in enumerate(texts)]
    diagnostics = [f"segment {s.index} is not a substring of the dictation" for s in segments if s.text not in d.text]
    for msg in diagnostics:
        log.info("dictation %s: %s", d.id, msg)
    return segments, diagnostics


def render_schema_block(schemas: Sequence[Schema]) -> str:
    return "\n".join(f"- {format_schema(s)}" for s in schemas)


def render_example_block(examples: Sequence[MemoryEntry]) -> str:
    if not examples:
        return ""
    lines = ["Examples of segments with their observations:"]
    for e in examples:
        obs = json.dumps([o.to_json() for o in e.observations], ensure_ascii=False)
        lines.append(f"Segment: {e.segment_text} → Observations: {obs}")
    return "\n".join(lines) + "\n"


def extract_segment(
    seg: Segment, schemas: SchemaPool, bank: ExamplePool, cfg: PipelineConfig, generator: Gateway
) -> SegmentResult:
    require_described(schemas.schemas)
    candidates = [s for s, _ in schemas.search(seg.text, cfg.n_schemas)]
    examples = [e for e, _ in bank.search(seg.text, cfg.k_examples)] if cfg.k_examples else []
    diagnostics: list[str] = []
    if cfg.k_examples and not len(bank):
        diagnostics.append("zero-shot: memory bank is empty")
    bindings = {
        "schemas": render_schema_block(candidates),
        "examples": render_example_block(examples),
        "segment": seg.text,
        "format_reminder": "",
    }
    try:
        try:
            obs, parse_diags = parse_observation_list(generator.call("observe", bindings), candidates)
        except ObservationParseError:
            raw = generator.call("observe", {**bindings, "format_reminder": REPAIR_REMINDER})
            obs, parse_diags = parse_observation_list(raw, candidates)
    except ObservationParseError as exc:
        diagnostics.append(f"extraction failed: {exc}")
        return SegmentResult([], diagnostics, candidates, examples, failed=True)
    return SegmentResult(obs, diagnostics + parse_diags, candidates, examples)


class Pipeline:
    """Holds the indexed pools and gateways for a run; read-only while processing."""

    def __init__(
        self,
        schemas: Sequence[Schema],
        bank: Sequence[MemoryEntry],
        cfg: PipelineConfig,
        *,
        generator: Gateway,
        segmenter: Gateway,
        embedder: EmbeddingProvider | None = None,
        query_embedder: EmbeddingProvider | None = None,
    ) -> None:
        require_described(schemas)
        embedder = embedder or HashingEmbedder()
        self.cfg = cfg
        self.generator = generator
        self.segmenter = segmenter
        self.schema_pool = SchemaPool(schemas, embedder, cfg.schema_fusion, query_embedder)
        self.example_pool = ExamplePool(bank, embedder, cfg.example_fusion, query_embedder)

    def _calls(self) -> int:
        if self.generator is self.segmenter:
            return self.generator.calls
        return self.generator.calls + self.segmenter.calls

    def process(self, d: Dictation) -> tuple[PredictionRecord, int, list[dict[str, str]]]:
        """Return the record, the number of segments, and any failures."""
        try:
            segments, diagnostics = segment_dictation(d, self.segmenter)
        except DictationRagError as exc:
            return PredictionRecord(d.id, (), (f"segmentation failed: {exc}",)), 0, [
                {"id": d.id, "stage": "segment", "reason": str(exc)}
            ]
        observations: list[Observation] = []
        failures = []
        for seg in segments:
            try:
                result = extract_segment(seg, self.schema_pool, self.example_pool, self.cfg, self.generator)
            except DictationRagError as exc:
                result = SegmentResult([], [f"extraction failed: {exc}"], failed=True)
            observations.extend(result.observations)
            diagnostics.extend(f"segment {seg.index}: {msg}" for msg in result.diagnostics)
            if result.failed:
                failures.append({"id": d.id, "stage": "extract", "reason": f"segment {seg.index}: {result.diagnostics[-1]}"})
        record = PredictionRecord(d.id, tuple(dedupe_observations(observations)), tuple(diagnostics))
        return record, len(segments), failures

    def run(self, corpus: Sequence[Dictation], out_path: str | Path | None = None) -> tuple[list[PredictionRecord], RunSummary]:
        calls_before = self._calls()
        with ThreadPoolExecutor(max_workers=self.cfg.max_concurrency) as pool:
            outcomes = list(pool.map(self.process, corpus))
        summary = RunSummary(dictations=len(corpus))
        records = []
        for record, n_segments, failures in outcomes:
            records.append(record)
            summary.segments += n_segments
            summary.failures.extend(failures)
        summary.calls = self._calls() - calls_before
        if out_path is not None:
            write_predictions(records, out_path)
        return records, summary


def run_pipeline(
    corpus: Sequence[Dictation],
    cfg: PipelineConfig,
    out_path: str | Path,
    *,
    schemas: Sequence[Schema],
    bank: Sequence[MemoryEntry],
    generator: Gateway,
    segmenter: Gateway | None = None,
    embedder: EmbeddingProvider | None = None,
) -> RunSummary:
    pipeline = Pipeline(
        schemas, bank, cfg, generator=generator, segmenter=segmenter or generator, embedder=embedder
    )
    return pipeline.run(corpus, out_path)[1]
