"""Observation ontology: loading, prompt rendering of schemas, description augmentation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

from .errors import (
    AugmentationError,
    DescriptionEmpty,
    DictationRagError,
    DuplicateSchemaId,
    MalformedOntology,
)

if TYPE_CHECKING:
    from .gateway import Gateway

log = logging.getLogger(__name__)

MAX_DESCRIPTION_CHARS = 500


@dataclass(frozen=True)
class Schema:
    id: str
    name: str
    description: str | None = None
    options: tuple[str, ...] = ()
    unit: str | None = None

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValueError("schema name must be nonempty")

    @property
    def described(self) -> bool:
        return bool(self.description and self.description.strip())

    def to_json(self) -> dict[str, Any]:
        row: dict[str, Any] = {"id": self.id, "name": self.name}
        if self.description is not None:
            row["description"] = self.description
        row["options"] = list(self.options)
        if self.unit is not None:
            row["unit"] = self.unit
        return row


def _dedupe_options(schema_id: str, options: list[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for opt in options:
        opt = opt.strip()
        if opt in seen:
            log.warning("schema %s: duplicate option %r collapsed", schema_id, opt)
            continue
        seen[opt] = None
    return tuple(seen)


def schema_from_json(row: Any, position: int) -> Schema:
    where = f"schema #{position}"
    if not isinstance(row, dict):
        raise MalformedOntology(f"{where}: expected an object")
    sid, name = row.get("id"), row.get("name")
    if not isinstance(sid, str) or not sid:
        raise MalformedOntology(f"{where}: missing or empty 'id'")
    if not isinstance(name, str) or not name.strip():
        raise MalformedOntology(f"{where} ({sid}): missing or empty 'name'")
    description = row.get("description")
    if description is not None and not isinstance(description, str):
        raise MalformedOntology(f"{where} ({sid}): 'description' must be a string")
    options = row.get("options", [])
    if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
        raise MalformedOntology(f"{where} ({sid}): 'options' must be a list of strings")
    unit = row.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise MalformedOntology(f"{where} ({sid}): 'unit' must be a string")
    return Schema(sid, name, description, _dedupe_options(sid, options), unit)


def load_ontology(path: str | Path) -> list[Schema]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedOntology(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise MalformedOntology(f"{path}: expected a JSON array of schemas")
    schemas: list[Schema] = []
    seen: set[str] = set()
    for i, row in enumerate(data):
        schema = schema_from_json(row, i)
        if schema.id in seen:
            raise DuplicateSchemaId(schema.id)
        seen.add(schema.id)
        schemas.append(schema)
    return schemas


def save_ontology(schemas: Sequence[Schema], path: str | Path) -> None:
    text = json.dumps([s.to_json() for s in schemas], ensure_ascii=False, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def format_schema(s: Schema) -> str:
    """Render ``"{name}. {description} Options: {opt1}, {opt2}"``.

    The description and Options clauses are omitted when empty; the unit is
    never rendered.
    """
    parts = [f"{s.name.strip()}."]
    if s.described:
        parts.append(s.description.strip())  # type: ignore[union-attr]
    if s.options:
        parts.append("Options: " + ", ".join(s.options))
    return " ".join(parts)


def generate_description(s: Schema, llm: Gateway, force: bool = False) -> str:
    if s.described and not force:
        return s.description  # type: ignore[return-value]
    raw = llm.call(
        "describe",
        {"name": s.name, "options": ", ".join(s.options) if s.options else "(free-text value)"},
    )
    text = raw.strip()
    if not text:
        raise DescriptionEmpty(s.id)
    if len(text) > MAX_DESCRIPTION_CHARS:
        raise DictationRagError(
            f"description for schema {s.id!r} is {len(text)} characters (limit {MAX_DESCRIPTION_CHARS})"
        )
    return text


def augment_ontology(
    schemas: Sequence[Schema],
    llm: Gateway,
    force: bool = False,
    out_path: str | Path | None = None,
    max_concurrency: int = 4,
) -> list[Schema]:
    """Give every schema a description, calling the LLM only where one is missing.

    Whatever succeeded is persisted even when some schemas fail, so a rerun
    only retries the failures.
    """
    todo = [i for i, s in enumerate(schemas) if force or not s.described]
    results: dict[int, str] = {}
    failures: dict[str, str] = {}

    def work(i: int) -> tuple[int, str | Exception]:
        try:
            return i, generate_description(schemas[i], llm, force=force)
        except DictationRagError as exc:
            return i, exc

    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        for i, outcome in pool.map(work, todo):
            if isinstance(outcome, Exception):
                failures[schemas[i].id] = str(outcome)
            else:
                results[i] = outcome

    augmented = [replace(s, description=results[i]) if i in results else s for i, s in enumerate(schemas)]
    if out_path is not None:
        save_ontology(augmented, out_path)
    for s in augmented:
        if not s.described and s.id not in failures:
            failures[s.id] = "no description"
    if failures:
        raise AugmentationError(failures)
    return augmented
