"""Retrieval-augmented extraction of clinical observations from nurse dictations."""

from .corpus import Dictation, Observation, PredictionRecord, Segment, load_dictations, write_predictions
from .evaluation import evaluate_corpus, match_counts, micro_prf, normalize_value
from .fusion import FusionConfig, fuse, retrieve_examples, retrieve_schemas
from .gateway import Gateway, LlmProfile, ScriptedMock
from .memory import MemoryEntry, build_memory_bank, load_memory_bank
from .ontology import Schema, augment_ontology, format_schema, load_ontology
from .pipeline import Pipeline, PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Dictation",
    "FusionConfig",
    "Gateway",
    "LlmProfile",
    "MemoryEntry",
    "Observation",
    "Pipeline",
    "PipelineConfig",
    "PredictionRecord",
    "Schema",
    "ScriptedMock",
    "Segment",
    "augment_ontology",
    "build_memory_bank",
    "evaluate_corpus",
    "format_schema",
    "fuse",
    "load_dictations",
    "load_memory_bank",
    "load_ontology",
    "match_counts",
    "micro_prf",
    "normalize_value",
    "retrieve_examples",
    "retrieve_schemas",
    "run_pipeline",
    "write_predictions",
]
