"""Chat-completion access: prompt templates, remote client with retries, scripted mock,
and parsers that turn model output into segments and observations."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Sequence

import httpx

from .corpus import Observation
from .errors import (
    ConfigError,
    MissingBinding,
    MockMiss,
    ObservationParseError,
    SegmentParseError,
    Timeout,
    TransportError,
    UnknownPlaceholder,
)
from .evaluation import observation_key
from .ontology import Schema

log = logging.getLogger(__name__)

TEMPLATE_IDS = ("segment", "describe", "pair-extract", "observe")
API_KEY_ENV = "DICTATION_RAG_API_KEY"
SYSTEM_PROMPT = (
    "You are a careful clinical documentation assistant working on nurse dictations. "
    "Follow the output format exactly."
)
REPAIR_REMINDER = (
    "Your previous answer could not be parsed. Reply again with valid JSON only, "
    "exactly in the requested format, with no commentary or code fences."
)

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER.findall(self.body)))


def render_prompt(t: PromptTemplate, bindings: Mapping[str, str], strict: bool = True) -> str:
    names = t.placeholders()
    for name in names:
        if name not in bindings:
            raise MissingBinding(name)
    if strict:
        for key in bindings:
            if key not in names:
                raise UnknownPlaceholder(key)
    # single pass so that bound values containing "{{...}}" are not re-expanded
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), t.body)


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load the four prompt templates; files in ``directory`` override the shipped defaults."""
    out = {}
    shipped = resources.files("dictation_rag") / "prompts"
    for tid in TEMPLATE_IDS:
        override = Path(directory) / f"{tid}.txt" if directory else None
        if override is not None and override.exists():
            body = override.read_text(encoding="utf-8")
        else:
            body = (shipped / f"{tid}.txt").read_text(encoding="utf-8")
        out[tid] = PromptTemplate(tid, body)
    return out


# ---------------------------------------------------------------------------
# Profiles and backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LlmProfile:
    backend: Literal["remote", "mock"] = "mock"
    model: str = "mock"
    base_url: str | None = None
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout: float = 60.0
    max_retries: int = 3
    mock_script: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("remote", "mock"):
            raise ConfigError(f"unknown LLM backend {self.backend!r}")
        if self.backend == "remote" and not self.base_url:
            raise ConfigError("remote LLM backend requires base_url")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


def fingerprint(template_id: str, bindings: Mapping[str, str]) -> str:
    payload = json.dumps([template_id, sorted((k, str(v)) for k, v in bindings.items())], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]


@dataclass
class ScriptedMock:
    """Deterministic backend: responses keyed by call fingerprint.

    Besides exact fingerprints, a script may carry ``match`` rules: a response
    applies to any call of ``template_id`` whose bindings include every listed
    key/value pair. Exact fingerprints win, then rules in insertion order.
    Anything unmatched raises :class:`MockMiss`.
    """

    responses: dict[str, str] = field(default_factory=dict)
    rules: list[tuple[str, dict[str, str], str]] = field(default_factory=list)

    def add(self, template_id: str, bindings: Mapping[str, str], response: str) -> None:
        self.responses[fingerprint(template_id, bindings)] = response

    def add_match(self, template_id: str, match: Mapping[str, str], response: str) -> None:
        self.rules.append((template_id, dict(match), response))

    def lookup(self, template_id: str, bindings: Mapping[str, str]) -> str:
        fp = fingerprint(template_id, bindings)
        if fp in self.responses:
            return self.responses[fp]
        for tid, match, response in self.rules:
            if tid == template_id and all(bindings.get(k) == v for k, v in match.items()):
                return response
        raise MockMiss(fp, template_id)

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedMock:
        """Read a JSONL script.

        Each line is one of ``{"fingerprint", "response"}``,
        ``{"template_id", "bindings", "response"}`` or
        ``{"template_id", "match", "response"}``.
        """
        mock = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                response = row.get("response")
                if not isinstance(response, str):
                    raise ConfigError(f"{path}:{line_no}: mock entry needs a string 'response'")
                if "fingerprint" in row:
                    mock.responses[row["fingerprint"]] = response
                elif "bindings" in row:
                    mock.add(row["template_id"], row["bindings"], response)
                elif "match" in row:
                    mock.add_match(row["template_id"], row["match"], response)
                else:
                    raise ConfigError(f"{path}:{line_no}: mock entry needs fingerprint, bindings or match")
        return mock

    def to_lines(self) -> list[dict[str, Any]]:
        rows: list[dict[str, Any]] = [{"fingerprint": fp, "response": r} for fp, r in self.responses.items()]
        rows += [{"template_id": t, "match": m, "response": r} for t, m, r in self.rules]
        return rows


class ChatClient:
    """OpenAI-compatible ``/chat/completions`` client with exponential backoff.

    Retries transport errors, timeouts, 429 and 5xx. Delay before retry i
    (0-based) is ``backoff_base * 2**i`` scaled by a uniform jitter of +/-20%.
    """

    def __init__(
        self,
        profile: LlmProfile,
        *,
        api_key: str | None = None,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        if profile.backend != "remote" or not profile.base_url:
            raise ConfigError("ChatClient needs a remote profile with base_url")
        self.profile = profile
        self.url = profile.base_url.rstrip("/") + "/chat/completions"
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.rng = rng or random.Random()
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(timeout=profile.timeout, headers=headers, transport=transport)

    def backoff(self, retry_index: int) -> float:
        return self.backoff_base * (2**retry_index) * self.rng.uniform(0.8, 1.2)

    def complete(self, system: str, user: str) -> tuple[str, int]:
        """Return ``(assistant_text, attempts)``."""
        body = {
            "model": self.profile.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": self.profile.temperature,
            "max_tokens": self.profile.max_tokens,
        }
        max_attempts = self.profile.max_retries + 1
        last_error = ""
        timed_out = False
        for attempt in range(1, max_attempts + 1):
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.TimeoutException as exc:
                last_error, timed_out = f"timeout: {exc}", True
            except httpx.TransportError as exc:
                last_error, timed_out = f"transport: {exc}", False
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"] or "", attempt
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"unexpected response shape: {exc}", attempt) from None
                last_error, timed_out = f"HTTP {resp.status_code}: {resp.text[:200]}", False
                if not is_retryable_status(resp.status_code):
                    raise TransportError(last_error, attempt)
            if attempt < max_attempts:
                delay = self.backoff(attempt - 1)
                log.warning("chat completion attempt %d failed (%s); retrying in %.2fs", attempt, last_error, delay)
                self.sleep(delay)
        err = Timeout if timed_out else TransportError
        raise err(f"giving up after {max_attempts} attempts: {last_error}", max_attempts)

    def close(self) -> None:
        self._http.close()


def is_retryable_status(status: int) -> bool:
    return status == 429 or 500 <= status < 600


_DEFAULT_LIMITER = threading.BoundedSemaphore(4)


class Gateway:
    """One handle per LLM role. Shareable across threads."""

    def __init__(
        self,
        profile: LlmProfile,
        *,
        templates: Mapping[str, PromptTemplate] | None = None,
        mock: ScriptedMock | None = None,
        client: ChatClient | None = None,
        limiter: threading.BoundedSemaphore | None = None,
        attempt_log_path: str | Path | None = None,
    ) -> None:
        self.profile = profile
        self.templates = dict(templates) if templates is not None else load_templates()
        self.limiter = limiter or _DEFAULT_LIMITER
        self.attempt_log: list[dict[str, Any]] = []
        self.attempt_log_path = Path(attempt_log_path) if attempt_log_path else None
        self._lock = threading.Lock()
        self.mock: ScriptedMock | None = None
        self.client: ChatClient | None = None
        if profile.backend == "mock":
            if mock is None:
                if not profile.mock_script:
                    raise ConfigError("mock backend needs a mock script")
                mock = ScriptedMock.from_file(profile.mock_script)
            self.mock = mock
        else:
            self.client = client or ChatClient(profile)

    @property
    def model(self) -> str:
        return self.profile.model

    @property
    def calls(self) -> int:
        return len(self.attempt_log)

    def call(self, template_id: str, bindings: Mapping[str, str]) -> str:
        """Render ``template_id`` with ``bindings`` and return the raw assistant text."""
        user = render_prompt(self.templates[template_id], bindings)
        fp = fingerprint(template_id, bindings)
        start = time.perf_counter()
        attempts = 1
        try:
            if self.mock is not None:
                return self.mock.lookup(template_id, bindings)
            assert self.client is not None
            with self.limiter:
                try:
                    text, attempts = self.client.complete(SYSTEM_PROMPT, user)
                except TransportError as exc:
                    attempts = exc.attempts
                    raise
            return text
        finally:
            self._record(template_id, fp, attempts, start)

    def _record(self, template_id: str, fp: str, attempts: int, start: float) -> None:
        entry = {
            "template_id": template_id,
            "fingerprint": fp,
            "attempts": attempts,
            "latency_ms": round((time.perf_counter() - start) * 1000, 3),
        }
        with self._lock:
            self.attempt_log.append(entry)
            if self.attempt_log_path is not None:
                with open(self.attempt_log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry) + "\n")


def complete(profile: LlmProfile, system: str, user: str, **client_kwargs: Any) -> str:
    """One-shot remote completion (no template, no mock)."""
    client = ChatClient(profile, **client_kwargs)
    try:
        return client.complete(system, user)[0]
    finally:
        client.close()


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)
_LIST_LINE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$")


def strip_fences(raw: str) -> str:
    m = _FENCE.search(raw)
    return m.group(1).strip() if m else raw.strip()


def _loads_lenient(text: str) -> Any:
    """json.loads, falling back to the outermost [...] span when prose surrounds it."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        lo, hi = text.find("["), text.rfind("]")
        if lo != -1 and hi > lo:
            return json.loads(text[lo : hi + 1])
        raise


def parse_segment_list(raw: str) -> list[str]:
    if not raw.strip():
        return []
    body = strip_fences(raw)
    try:
        data = _loads_lenient(body)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict) and isinstance(data.get("segments"), list):
        data = data["segments"]
    if isinstance(data, list) and all(isinstance(x, str) for x in data):
        segments = [x.strip() for x in data if x.strip()]
        if segments:
            return segments
    segments = [m.group(1) for line in body.splitlines() if (m := _LIST_LINE.match(line))]
    if not segments:
        raise SegmentParseError(f"could not parse segments from model output: {raw[:120]!r}")
    return segments


def _value_text(value: Any) -> str | None:
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return str(value)
    return None


def parse_observation_list(raw: str, candidates: Sequence[Schema]) -> tuple[list[Observation], list[str]]:
    """Parse a JSON list of ``{"schema", "value"}`` items grounded in ``candidates``.

    Unknown schemas are dropped with a diagnostic; values of enumerated schemas
    are snapped to the canonical option casing when they match one.
    """
    if not candidates:
        raise ValueError("parse_observation_list needs at least one candidate schema")
    diagnostics: list[str] = []
    if not raw.strip():
        return [], ["empty model output"]
    try:
        data = _loads_lenient(strip_fences(raw))
    except json.JSONDecodeError as exc:
        raise ObservationParseError(f"unparseable observation output ({exc.msg}): {raw[:120]!r}") from None
    if isinstance(data, dict) and isinstance(data.get("observations"), list):
        data = data["observations"]
    if not isinstance(data, list):
        raise ObservationParseError(f"expected a JSON array of observations, got {type(data).__name__}")

    by_name = {s.name.strip().casefold(): s for s in candidates}
    out: list[Observation] = []
    seen: set[tuple[str, str]] = set()
    for item in data:
        if not isinstance(item, dict):
            diagnostics.append(f"dropped malformed item: {json.dumps(item, ensure_ascii=False)[:80]}")
            continue
        name = item.get("schema")
        value = _value_text(item.get("value"))
        if not isinstance(name, str) or not name.strip() or value is None:
            diagnostics.append(f"dropped malformed item: {json.dumps(item, ensure_ascii=False)[:80]}")
            continue
        schema = by_name.get(name.strip().casefold())
        if schema is None:
            diagnostics.append(f"dropped unknown schema: {name.strip()!r}")
            continue
        if schema.options:
            snapped = next((o for o in schema.options if o.strip().casefold() == value.casefold()), None)
            if snapped is None:
                diagnostics.append(f"off-enumeration value for {schema.name!r}: {value!r}")
            else:
                value = snapped
        if value == "":
            diagnostics.append(f"empty value for {schema.name!r}")
        obs = Observation(schema.name, value)
        key = observation_key(obs)
        if key in seen:
            continue
        seen.add(key)
        out.append(obs)
    return out, diagnostics
