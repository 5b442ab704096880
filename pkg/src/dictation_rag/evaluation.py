"""Micro-averaged precision/recall/F1 over normalized (schema, value) pairs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import Dictation, Observation, PredictionRecord
from .errors import UnknownPredictionId

_WS = re.compile(r"\s+")
_NUMERIC_DOT_ZERO = re.compile(r"^[+-]?\d+\.0$")


def normalize_value(v: str) -> str:
    """Trim, lowercase, collapse whitespace, drop a trailing ".0" on plain numbers.

    No unit conversion or digit repair: "375" stays "375".
    """
    v = _WS.sub(" ", v.strip().lower())
    if _NUMERIC_DOT_ZERO.match(v):
        v = v[:-2]
    return v


def observation_key(o: Observation) -> tuple[str, str]:
    return (o.schema_name.strip().lower(), normalize_value(o.value))


def dedupe_observations(obs: Iterable[Observation]) -> list[Observation]:
    """Keep the first occurrence of every normalized pair, preserving order."""
    seen: set[tuple[str, str]] = set()
    out = []
    for o in obs:
        key = observation_key(o)
        if key not in seen:
            seen.add(key)
            out.append(o)
    return out


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: MatchCounts) -> MatchCounts:
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_json(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


def match_counts(pred: Iterable[Observation], gold: Iterable[Observation]) -> MatchCounts:
    p = {observation_key(o) for o in pred}
    g = {observation_key(o) for o in gold}
    return MatchCounts(len(p & g), len(p - g), len(g - p))


def micro_prf(counts: MatchCounts) -> tuple[float, float, float]:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    totals: MatchCounts
    per_schema: dict[str, MatchCounts] = field(default_factory=dict)
    dictation_count: int = 0

    def to_json(self) -> dict:
        return {
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "f1": round(self.f1, 6),
            "totals": self.totals.to_json(),
            "per_schema": {name: c.to_json() for name, c in sorted(self.per_schema.items())},
            "dictations": self.dictation_count,
        }

    def summary_line(self) -> str:
        return f"{self.precision:.6f} {self.recall:.6f} {self.f1:.6f}"


def evaluate_corpus(preds: Iterable[PredictionRecord], golds: Iterable[Dictation]) -> EvalReport:
    """Score predictions against gold dictations.

    A gold dictation with no prediction record contributes all its gold
    observations as false negatives.
    """
    gold_by_id = {d.id: d for d in golds}
    pred_by_id: dict[str, PredictionRecord] = {}
    for rec in preds:
        if rec.dictation_id not in gold_by_id:
            raise UnknownPredictionId(rec.dictation_id)
        pred_by_id[rec.dictation_id] = rec

    totals = MatchCounts()
    per_schema: dict[str, MatchCounts] = {}
    for did, gold in gold_by_id.items():
        rec = pred_by_id.get(did)
        p = {observation_key(o) for o in (rec.observations if rec else ())}
        g = {observation_key(o) for o in (gold.gold_observations or ())}
        totals = totals + MatchCounts(len(p & g), len(p - g), len(g - p))
        for bucket, attr in ((p & g, "tp"), (p - g, "fp"), (g - p, "fn")):
            for schema, _ in bucket:
                counts = per_schema.setdefault(schema, MatchCounts())
                setattr(counts, attr, getattr(counts, attr) + 1)

    precision, recall, f1 = micro_prf(totals)
    return EvalReport(precision, recall, f1, totals, per_schema, len(gold_by_id))


def write_report(report: EvalReport, path: str | Path) -> None:
    # metric floats always carry exactly 6 decimals (json.dumps would print 1.0)
    body = report.to_json()
    text = json.dumps(body, indent=2)
    for key in ("precision", "recall", "f1"):
        text = text.replace(f'"{key}": {json.dumps(body[key])}', f'"{key}": {getattr(report, key):.6f}', 1)
    Path(path).write_text(text + "\n", encoding="utf-8")
