"""TOML run configuration with command-line overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dense import FALLBACK_DIM, CachedEmbedder, EmbeddingProvider, HashingEmbedder, RemoteEmbedder
from .errors import ConfigError
from .fusion import FusionConfig
from .gateway import LlmProfile
from .pipeline import PipelineConfig

_PATH_KEYS = ("ontology", "bank", "prompts_dir", "attempt_log")
_EMBEDDING_KEYS = ("provider", "dimension", "base_url", "model", "cache")
_PIPELINE_KEYS = ("n_schemas", "k_examples", "max_concurrency")
_SECTIONS = ("paths", "pipeline", "fusion", "llm", "embedding")


@dataclass(frozen=True)
class EmbeddingSettings:
    provider: str = "hashing"
    dimension: int = FALLBACK_DIM
    base_url: str | None = None
    model: str | None = None
    cache: str | None = None

    def build(self) -> tuple[EmbeddingProvider, EmbeddingProvider]:
        """Return (pool embedder, query embedder); only pool vectors go through the cache."""
        if self.provider == "hashing":
            base: EmbeddingProvider = HashingEmbedder(self.dimension)
        elif self.provider == "remote":
            if not self.base_url or not self.model:
                raise ConfigError("remote embedding provider needs base_url and model")
            base = RemoteEmbedder(self.base_url, self.model)
        else:
            raise ConfigError(f"unknown embedding provider {self.provider!r}")
        pool = CachedEmbedder(base, self.cache) if self.cache else base
        return pool, base


@dataclass(frozen=True)
class Settings:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ontology: str | None = None
    bank: str | None = None
    prompts_dir: str | None = None
    attempt_log: str | None = None
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)


def _check_keys(section: str, table: Mapping[str, Any], allowed: tuple[str, ...] | list[str]) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _table(raw: Mapping[str, Any], name: str) -> dict[str, Any]:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(value)


def _resolve(base: Path | None, value: Any) -> Any:
    if base is None or not isinstance(value, str):
        return value
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_settings(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> Settings:
    """Read ``path`` (optional) and apply ``overrides``.

    Override keys: ontology, bank, shots, schemas, alpha, generator_model,
    segmenter_model, backend, mock_script. ``None`` values are ignored.
    Relative paths inside the file resolve against the file's directory.
    """
    raw: dict[str, Any] = {}
    base: Path | None = None
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = Path(path).resolve().parent
    _check_keys("top level", raw, _SECTIONS)

    paths = _table(raw, "paths")
    _check_keys("paths", paths, _PATH_KEYS)
    paths = {k: _resolve(base, v) for k, v in paths.items()}

    pipeline = _table(raw, "pipeline")
    _check_keys("pipeline", pipeline, _PIPELINE_KEYS)

    fusion = _table(raw, "fusion")
    _check_keys("fusion", fusion, ("schema", "example"))
    fusion_fields = [f.name for f in fields(FusionConfig)]
    schema_fusion, example_fusion = _table(fusion, "schema"), _table(fusion, "example")
    _check_keys("fusion.schema", schema_fusion, fusion_fields)
    _check_keys("fusion.example", example_fusion, fusion_fields)

    llm = _table(raw, "llm")
    _check_keys("llm", llm, ("generator", "segmenter"))
    profile_fields = [f.name for f in fields(LlmProfile)]
    generator, segmenter = _table(llm, "generator"), _table(llm, "segmenter")
    for name, table in (("llm.generator", generator), ("llm.segmenter", segmenter)):
        _check_keys(name, table, profile_fields)
        if "mock_script" in table:
            table["mock_script"] = _resolve(base, table["mock_script"])

    embedding = _table(raw, "embedding")
    _check_keys("embedding", embedding, _EMBEDDING_KEYS)
    if "cache" in embedding:
        embedding["cache"] = _resolve(base, embedding["cache"])

    o = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in ("ontology", "bank"):
        if key in o:
            paths[key] = o[key]
    if "shots" in o:
        pipeline["k_examples"] = o["shots"]
    if "schemas" in o:
        pipeline["n_schemas"] = o["schemas"]
    if "alpha" in o:
        schema_fusion["alpha"] = example_fusion["alpha"] = o["alpha"]
    if "generator_model" in o:
        generator["model"] = o["generator_model"]
    if "segmenter_model" in o:
        segmenter["model"] = o["segmenter_model"]
    for key in ("backend", "mock_script"):
        if key in o:
            generator[key] = segmenter[key] = o[key]

    try:
        cfg = PipelineConfig(
            schema_fusion=FusionConfig(**schema_fusion),
            example_fusion=FusionConfig(**example_fusion),
            generator=LlmProfile(**generator),
            segmenter=LlmProfile(**segmenter),
            **pipeline,
        )
        return Settings(pipeline=cfg, embedding=EmbeddingSettings(**embedding), **paths)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
