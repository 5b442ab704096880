"""Command-line entry point: ``dictation-rag {describe,build-memory,extract,retrieve,evaluate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .config import Settings, load_settings
from .corpus import load_dictations, load_predictions
from .errors import ConfigError, DictationRagError
from .evaluation import evaluate_corpus, write_report
from .fusion import ExamplePool, SchemaPool
from .gateway import Gateway, LlmProfile, load_templates
from .memory import MemoryEntry, build_memory_bank, load_memory_bank
from .ontology import augment_ontology, load_ontology
from .pipeline import Pipeline

log = logging.getLogger("dictation_rag")

VERBS = ("describe", "build-memory", "extract", "retrieve", "evaluate")


@dataclass
class Command:
    verb: str
    options: dict[str, Any] = field(default_factory=dict)
    config_path: str | None = None


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="TOML config file")
    p.add_argument("--ontology", metavar="PATH", help="ontology JSON (overrides [paths].ontology)")
    p.add_argument("--bank", metavar="PATH", help="memory bank JSONL (overrides [paths].bank)")
    p.add_argument("--out", metavar="PATH", help="output file for this command")
    p.add_argument("--shots", type=int, metavar="INT", help="few-shot examples per segment, K (default 15)")
    p.add_argument("--schemas", type=int, metavar="INT", help="schemas per segment, N (default 10)")
    p.add_argument("--alpha", type=float, metavar="FLOAT", help="lexical weight in hybrid fusion (default 0.5)")
    p.add_argument("--generator-model", metavar="STR", help="model name for observation generation")
    p.add_argument("--segmenter-model", metavar="STR", help="model name for segmentation and bank building")
    p.add_argument("--backend", choices=("remote", "mock"), help="LLM backend for every role")
    p.add_argument("--mock-script", metavar="PATH", help="JSONL script for the mock backend")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="dictation-rag",
        description="Retrieval-augmented extraction of clinical observations from nurse dictations.",
        epilog="Exit codes: 0 ok, 1 runtime error, 2 usage error.",
    )
    sub = parser.add_subparsers(dest="verb", metavar="COMMAND", required=True)

    p = sub.add_parser("describe", parents=[common], help="add LLM-written descriptions to the ontology")
    p.add_argument("--force", action="store_true", help="regenerate existing descriptions too")

    p = sub.add_parser("build-memory", parents=[common], help="build the few-shot memory bank from training data")
    p.add_argument("train", metavar="TRAIN_JSONL", help="annotated training dictations")

    p = sub.add_parser("extract", parents=[common], help="run the extraction pipeline")
    p.add_argument("dictations", metavar="DICTATIONS_JSONL", help="dictations to process")

    p = sub.add_parser("retrieve", parents=[common], help="show retrieved schemas and examples for a text")
    p.add_argument("text", metavar="SEGMENT_TEXT", help="segment text to query with")

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold dictations")
    p.add_argument("predictions", metavar="PRED_JSONL")
    p.add_argument("gold", metavar="GOLD_JSONL")
    return parser


def parse_args(argv: Sequence[str]) -> Command:
    """Parse argv; usage errors exit with status 2."""
    ns = vars(build_parser().parse_args(list(argv)))
    verb = ns.pop("verb")
    config_path = ns.pop("config")
    return Command(verb, ns, config_path)


def _settings(cmd: Command) -> Settings:
    o = cmd.options
    return load_settings(
        cmd.config_path,
        {
            "ontology": o.get("ontology"),
            "bank": o.get("bank"),
            "shots": o.get("shots"),
            "schemas": o.get("schemas"),
            "alpha": o.get("alpha"),
            "generator_model": o.get("generator_model"),
            "segmenter_model": o.get("segmenter_model"),
            "backend": o.get("backend"),
            "mock_script": o.get("mock_script"),
        },
    )


def _gateway(profile: LlmProfile, settings: Settings, limiter: threading.BoundedSemaphore) -> Gateway:
    return Gateway(
        profile,
        templates=load_templates(settings.prompts_dir),
        limiter=limiter,
        attempt_log_path=settings.attempt_log,
    )


def _require(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} given (use --{what} or [paths].{what})")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _load_bank(settings: Settings) -> list[MemoryEntry]:
    if settings.bank is None:
        log.warning("no memory bank configured; extraction runs zero-shot")
        return []
    return load_memory_bank(_require(settings.bank, "bank"))


def _dump(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2)


def cmd_describe(cmd: Command, settings: Settings) -> int:
    ontology_path = _require(settings.ontology, "ontology")
    schemas = load_ontology(ontology_path)
    cfg = settings.pipeline
    llm = _gateway(cfg.generator, settings, threading.BoundedSemaphore(cfg.max_concurrency))
    out = cmd.options.get("out") or ontology_path
    augmented = augment_ontology(schemas, llm, force=cmd.options["force"], out_path=out, max_concurrency=cfg.max_concurrency)
    print(_dump({"schemas": len(augmented), "calls": llm.calls, "out": str(out)}))
    return 0


def cmd_build_memory(cmd: Command, settings: Settings) -> int:
    out = cmd.options.get("out") or settings.bank
    if not out:
        raise ConfigError("no output bank path given (use --out or [paths].bank)")
    corpus = load_dictations(cmd.options["train"])
    cfg = settings.pipeline
    # the bank is built with the segmenter model so inference-time segments match it
    llm = _gateway(cfg.segmenter, settings, threading.BoundedSemaphore(cfg.max_concurrency))
    summary = build_memory_bank(corpus, llm, out, max_concurrency=cfg.max_concurrency)
    print(_dump(summary.to_json()))
    return 0


def cmd_extract(cmd: Command, settings: Settings) -> int:
    out = cmd.options.get("out")
    if not out:
        raise ConfigError("extract needs --out PATH for predictions")
    schemas = load_ontology(_require(settings.ontology, "ontology"))
    bank = _load_bank(settings)
    corpus = load_dictations(cmd.options["dictations"])
    cfg = settings.pipeline
    limiter = threading.BoundedSemaphore(cfg.max_concurrency)
    generator = _gateway(cfg.generator, settings, limiter)
    segmenter = generator if cfg.segmenter == cfg.generator else _gateway(cfg.segmenter, settings, limiter)
    embedder, query_embedder = settings.embedding.build()
    pipeline = Pipeline(
        schemas, bank, cfg, generator=generator, segmenter=segmenter, embedder=embedder, query_embedder=query_embedder
    )
    log.info("extracting with N=%d K=%d", cfg.n_schemas, cfg.k_examples)
    _, summary = pipeline.run(corpus, out)
    print(_dump(summary.to_json()))
    return 0


def _hit_json(hit: Any) -> dict[str, Any]:
    return {
        "rank": hit.rank,
        "id": hit.doc_id,
        "fused": round(hit.score, 6),
        "lexical": round(hit.lexical, 6),
        "dense": round(hit.dense, 6),
    }


def cmd_retrieve(cmd: Command, settings: Settings) -> int:
    schemas = load_ontology(_require(settings.ontology, "ontology"))
    bank = load_memory_bank(_require(settings.bank, "bank"))
    cfg = settings.pipeline
    embedder, query_embedder = settings.embedding.build()
    schema_pool = SchemaPool(schemas, embedder, cfg.schema_fusion, query_embedder)
    example_pool = ExamplePool(bank, embedder, cfg.example_fusion, query_embedder)
    text = cmd.options["text"]
    schema_hits = schema_pool.search(text, cfg.n_schemas)
    example_hits = example_pool.search(text, cfg.k_examples)
    if cmd.options["json"]:
        doc = {
            "query": text,
            "n_schemas": cfg.n_schemas,
            "k_examples": cfg.k_examples,
            "schemas": [{**_hit_json(h), "name": s.name} for s, h in schema_hits],
            "examples": [{**_hit_json(h), "segment": e.segment_text} for e, h in example_hits],
        }
        print(_dump(doc))
        return 0
    print(f"Schemas (N={cfg.n_schemas}):")
    for s, h in schema_hits:
        print(f"{h.rank:3d}. {s.name} [{s.id}]  fused={h.score:.4f} lexical={h.lexical:.4f} dense={h.dense:.4f}")
    print(f"Examples (K={cfg.k_examples}):")
    for e, h in example_hits:
        print(f"{h.rank:3d}. {e.segment_text} [{e.id}]  fused={h.score:.4f} lexical={h.lexical:.4f} dense={h.dense:.4f}")
    return 0


def cmd_evaluate(cmd: Command, settings: Settings) -> int:
    preds = load_predictions(cmd.options["predictions"])
    golds = load_dictations(cmd.options["gold"])
    report = evaluate_corpus(preds, golds)
    out = cmd.options.get("out") or str(Path(cmd.options["predictions"]).with_suffix(".report.json"))
    write_report(report, out)
    print(report.summary_line())
    return 0


_HANDLERS = {
    "describe": cmd_describe,
    "build-memory": cmd_build_memory,
    "extract": cmd_extract,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    cmd = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=logging.INFO if cmd.options.get("verbose") else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        settings = _settings(cmd)
        return _HANDLERS[cmd.verb](cmd, settings)
    except (DictationRagError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
