"""Core record types and JSONL I/O for dictations and predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Iterator

from .errors import DuplicateId, MalformedRecord

if TYPE_CHECKING:
    from .ontology import Schema


@dataclass(frozen=True)
class Observation:
    schema_name: str
    value: str

    def __post_init__(self) -> None:
        if not self.schema_name or not self.schema_name.strip():
            raise ValueError("observation schema_name must be nonempty")

    def to_json(self) -> dict[str, str]:
        return {"schema": self.schema_name, "value": self.value}


@dataclass(frozen=True)
class Dictation:
    id: str
    text: str
    gold_observations: tuple[Observation, ...] | None = None


@dataclass(frozen=True)
class Segment:
    dictation_id: str
    index: int
    text: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("segment index must be >= 0")
        if not self.text.strip():
            raise ValueError("segment text must be nonempty")


@dataclass(frozen=True)
class PredictionRecord:
    dictation_id: str
    observations: tuple[Observation, ...] = ()
    diagnostics: tuple[str, ...] = field(default=())

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.dictation_id,
            "observations": [o.to_json() for o in self.observations],
            "diagnostics": list(self.diagnostics),
        }


def iter_json_lines(path: str | Path) -> Iterator[tuple[int, Any]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None


def parse_observations(raw: Any, line_no: int) -> tuple[Observation, ...]:
    if not isinstance(raw, list):
        raise MalformedRecord(line_no, '"observations" must be a list')
    out = []
    for item in raw:
        if not isinstance(item, dict):
            raise MalformedRecord(line_no, "observation must be an object")
        schema, value = item.get("schema"), item.get("value")
        if not isinstance(schema, str) or not schema.strip():
            raise MalformedRecord(line_no, 'observation "schema" must be a nonempty string')
        if not isinstance(value, str):
            raise MalformedRecord(line_no, 'observation "value" must be a string')
        out.append(Observation(schema, value))
    return tuple(out)


def _require_id(obj: Any, line_no: int) -> str:
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record must be a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise MalformedRecord(line_no, 'missing or empty "id"')
    return rid


def load_dictations(path: str | Path) -> list[Dictation]:
    """Load a dictation corpus; gold observations are attached when present."""
    out: list[Dictation] = []
    seen: set[str] = set()
    for line_no, obj in iter_json_lines(path):
        rid = _require_id(obj, line_no)
        text = obj.get("text")
        if not isinstance(text, str):
            raise MalformedRecord(line_no, 'missing or non-string "text"')
        gold = None
        if "observations" in obj and obj["observations"] is not None:
            gold = parse_observations(obj["observations"], line_no)
        if rid in seen:
            raise DuplicateId(rid)
        seen.add(rid)
        out.append(Dictation(rid, text, gold))
    return out


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    out: list[PredictionRecord] = []
    seen: set[str] = set()
    for line_no, obj in iter_json_lines(path):
        rid = _require_id(obj, line_no)
        if "observations" not in obj:
            raise MalformedRecord(line_no, 'missing "observations"')
        obs = parse_observations(obj["observations"], line_no)
        diags = obj.get("diagnostics", [])
        if not isinstance(diags, list) or not all(isinstance(d, str) for d in diags):
            raise MalformedRecord(line_no, '"diagnostics" must be a list of strings')
        if rid in seen:
            raise DuplicateId(rid)
        seen.add(rid)
        out.append(PredictionRecord(rid, obs, tuple(diags)))
    return out


def dumps_line(obj: Any) -> str:
    """Serialize one JSONL line. Key order is the caller's insertion order."""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")) + "\n"


def write_jsonl(rows: Iterable[Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row))


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    write_jsonl((r.to_json() for r in records), path)


def write_dictations(dictations: Iterable[Dictation], path: str | Path) -> None:
    rows = []
    for d in dictations:
        row: dict[str, Any] = {"id": d.id, "text": d.text}
        if d.gold_observations is not None:
            row["observations"] = [o.to_json() for o in d.gold_observations]
        rows.append(row)
    write_jsonl(rows, path)


def validate_against_ontology(
    obs: Iterable[Observation], schemas: Iterable[Schema]
) -> tuple[list[Observation], list[Observation]]:
    """Partition observations by whether their schema name exists in the ontology.

    Matching is case-insensitive and ignores surrounding whitespace.
    """
    names = {s.name.strip().casefold() for s in schemas}
    valid: list[Observation] = []
    rejected: list[Observation] = []
    for o in obs:
        (valid if o.schema_name.strip().casefold() in names else rejected).append(o)
    return valid, rejected
