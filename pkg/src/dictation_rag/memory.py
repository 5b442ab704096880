"""Few-shot memory bank: (segment, gold observations) pairs mined from training dictations."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .corpus import Dictation, Observation, iter_json_lines, parse_observations, write_jsonl
from .errors import DictationRagError, DuplicateId, MalformedEntry, MalformedRecord, PairParseError
from .evaluation import observation_key
from .gateway import REPAIR_REMINDER, Gateway, strip_fences

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MemoryEntry:
    id: str
    segment_text: str
    observations: tuple[Observation, ...]
    source_dictation_id: str
    builder_model: str

    def __post_init__(self) -> None:
        if not self.segment_text.strip():
            raise ValueError("memory entry segment_text must be nonempty")

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "segment": self.segment_text,
            "observations": [o.to_json() for o in self.observations],
            "source": self.source_dictation_id,
            "builder_model": self.builder_model,
        }


@dataclass
class BankSummary:
    entries: int = 0
    gold_total: int = 0
    gold_assigned: int = 0
    dropped: list[dict[str, str]] = field(default_factory=list)
    failures: list[dict[str, str]] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        # vacuously complete when there is nothing to cover
        return self.gold_assigned / self.gold_total if self.gold_total else 1.0

    def to_json(self) -> dict[str, Any]:
        return {
            "entries": self.entries,
            "coverage": round(self.coverage, 6),
            "gold_total": self.gold_total,
            "gold_assigned": self.gold_assigned,
            "dropped": self.dropped,
            "failures": self.failures,
        }


def _gold_json(gold: Sequence[Observation]) -> str:
    return json.dumps([o.to_json() for o in gold], ensure_ascii=False, indent=1)


def _parse_pairs(raw: str) -> list[tuple[str, list[Any]]]:
    try:
        data = json.loads(strip_fences(raw))
    except json.JSONDecodeError as exc:
        raise PairParseError(f"invalid JSON ({exc.msg})") from None
    if isinstance(data, dict) and isinstance(data.get("pairs"), list):
        data = data["pairs"]
    if not isinstance(data, list):
        raise PairParseError("expected a JSON array of segment/observation pairs")
    pairs = []
    for item in data:
        if not isinstance(item, dict) or not isinstance(item.get("segment"), str):
            raise PairParseError(f"malformed pair: {json.dumps(item, ensure_ascii=False)[:80]}")
        obs = item.get("observations", [])
        if not isinstance(obs, list):
            raise PairParseError("pair 'observations' must be a list")
        pairs.append((item["segment"], obs))
    return pairs


def extract_pairs(d: Dictation, llm: Gateway) -> tuple[list[MemoryEntry], list[dict[str, str]]]:
    """Ask the LLM to split ``d`` into segments and assign each gold observation to one.

    Returns the surviving entries and the emitted items that were dropped
    (hallucinated, duplicated across segments, or malformed).
    """
    if d.gold_observations is None:
        raise ValueError(f"dictation {d.id!r} has no gold observations")
    if not d.gold_observations:
        return [], []

    bindings = {"dictation": d.text, "observations": _gold_json(d.gold_observations), "format_reminder": ""}
    try:
        pairs = _parse_pairs(llm.call("pair-extract", bindings))
    except PairParseError:
        pairs = _parse_pairs(llm.call("pair-extract", {**bindings, "format_reminder": REPAIR_REMINDER}))

    gold = {observation_key(o): o for o in d.gold_observations}
    assigned: set[tuple[str, str]] = set()
    entries: list[MemoryEntry] = []
    dropped: list[dict[str, str]] = []
    for segment_text, raw_obs in pairs:
        kept: list[Observation] = []
        for item in raw_obs:
            schema = item.get("schema") if isinstance(item, dict) else None
            value = item.get("value") if isinstance(item, dict) else None
            if not isinstance(schema, str) or not schema.strip() or not isinstance(value, (str, int, float)):
                dropped.append({"id": d.id, "reason": "malformed", "item": json.dumps(item, ensure_ascii=False)})
                continue
            key = observation_key(Observation(schema, str(value)))
            label = f"{schema}={value}"
            if key not in gold:
                dropped.append({"id": d.id, "reason": "not in gold", "item": label})
            elif key in assigned:
                dropped.append({"id": d.id, "reason": "already assigned", "item": label})
            else:
                assigned.add(key)
                kept.append(gold[key])
        if kept and segment_text.strip():
            entries.append(
                MemoryEntry(f"{d.id}#{len(entries)}", segment_text.strip(), tuple(kept), d.id, llm.model)
            )
    for item in dropped:
        log.info("dictation %s: dropped %s (%s)", d.id, item["item"], item["reason"])
    return entries, dropped


def write_memory_bank(entries: Iterable[MemoryEntry], path: str | Path) -> None:
    write_jsonl((e.to_json() for e in entries), path)


def build_memory_bank(
    corpus: Sequence[Dictation], llm: Gateway, out_path: str | Path, max_concurrency: int = 4
) -> BankSummary:
    missing = [d.id for d in corpus if d.gold_observations is None]
    if missing:
        raise ValueError(f"dictations without gold observations: {', '.join(missing[:5])}")

    def work(d: Dictation) -> tuple[list[MemoryEntry], list[dict[str, str]], str | None]:
        try:
            entries, dropped = extract_pairs(d, llm)
            return entries, dropped, None
        except DictationRagError as exc:
            return [], [], str(exc)

    summary = BankSummary()
    bank: list[MemoryEntry] = []
    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        outcomes = list(pool.map(work, corpus))
    for d, (entries, dropped, error) in zip(corpus, outcomes):
        summary.gold_total += len({observation_key(o) for o in d.gold_observations or ()})
        if error is not None:
            summary.failures.append({"id": d.id, "reason": error})
            continue
        bank.extend(entries)
        summary.dropped.extend(dropped)
        summary.gold_assigned += sum(len(e.observations) for e in entries)
    summary.entries = len(bank)
    write_memory_bank(bank, out_path)
    return summary


def load_memory_bank(path: str | Path) -> list[MemoryEntry]:
    entries: list[MemoryEntry] = []
    seen: set[str] = set()
    try:
        for line_no, row in iter_json_lines(path):
            entries.append(_entry_from_json(row, line_no))
            if entries[-1].id in seen:
                raise DuplicateId(entries[-1].id)
            seen.add(entries[-1].id)
    except MalformedRecord as exc:
        if isinstance(exc, MalformedEntry):
            raise
        raise MalformedEntry(exc.line_no, exc.reason) from None
    return entries


def _entry_from_json(row: Any, line_no: int) -> MemoryEntry:
    if not isinstance(row, dict):
        raise MalformedEntry(line_no, "entry must be a JSON object")
    for key in ("id", "segment", "source"):
        if not isinstance(row.get(key), str) or not row[key]:
            raise MalformedEntry(line_no, f"missing or empty {key!r}")
    if not row["segment"].strip():
        raise MalformedEntry(line_no, "empty segment text")
    observations = parse_observations(row.get("observations", []), line_no)
    return MemoryEntry(row["id"], row["segment"], observations, row["source"], str(row.get("builder_model", "")))


def check_bank_soundness(entries: Iterable[MemoryEntry], corpus: Iterable[Dictation]) -> list[str]:
    """Return a message for every entry observation absent from its source's gold set."""
    gold = {d.id: {observation_key(o) for o in d.gold_observations or ()} for d in corpus}
    problems = []
    for e in entries:
        for o in e.observations:
            if observation_key(o) not in gold.get(e.source_dictation_id, set()):
                problems.append(f"{e.id}: {o.schema_name}={o.value} not in gold of {e.source_dictation_id}")
    return problems
