"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DictationRagError(Exception):
    """Base class for every error raised by this package."""


class MalformedRecord(DictationRagError):
    def __init__(self, line_no: int, reason: str = "") -> None:
        self.line_no = line_no
        self.reason = reason
        msg = f"malformed record at line {line_no}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class DuplicateId(DictationRagError):
    def __init__(self, record_id: str) -> None:
        self.record_id = record_id
        super().__init__(f"duplicate id: {record_id!r}")


class DuplicateDocId(DuplicateId):
    pass


class UnknownDocId(DictationRagError, KeyError):
    def __init__(self, doc_id: str) -> None:
        self.doc_id = doc_id
        super().__init__(f"unknown doc id: {doc_id!r}")

    def __str__(self) -> str:
        return self.args[0]


class DimensionMismatch(DictationRagError, ValueError):
    pass


class ProviderUnavailable(DictationRagError):
    pass


class EmptyPool(DictationRagError):
    pass


class InvalidQuery(DictationRagError, ValueError):
    pass


class MalformedOntology(DictationRagError):
    pass


class DuplicateSchemaId(DuplicateId):
    pass


class DescriptionEmpty(DictationRagError):
    def __init__(self, schema_id: str) -> None:
        self.schema_id = schema_id
        super().__init__(f"empty description returned for schema {schema_id!r}")


class AugmentationError(DictationRagError):
    def __init__(self, failures: dict[str, str]) -> None:
        self.failures = failures
        detail = "; ".join(f"{sid}: {reason}" for sid, reason in failures.items())
        super().__init__(f"description generation failed for {len(failures)} schema(s): {detail}")


class UndescribedOntology(DictationRagError):
    def __init__(self, schema_ids: list[str]) -> None:
        self.schema_ids = schema_ids
        super().__init__(
            f"{len(schema_ids)} schema(s) lack a description ({', '.join(schema_ids[:5])}); "
            "run `dictation-rag describe` first"
        )


class MalformedEntry(MalformedRecord):
    pass


class PairParseError(DictationRagError):
    pass


# gateway


class MissingBinding(DictationRagError, KeyError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"missing binding for placeholder {name!r}")

    def __str__(self) -> str:
        return self.args[0]


class UnknownPlaceholder(DictationRagError, KeyError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"binding {name!r} is not referenced by the template")

    def __str__(self) -> str:
        return self.args[0]


class TransportError(DictationRagError):
    def __init__(self, message: str, attempts: int = 0) -> None:
        self.attempts = attempts
        super().__init__(message)


class Timeout(TransportError):
    pass


class MockMiss(DictationRagError):
    def __init__(self, fingerprint: str, template_id: str = "") -> None:
        self.fingerprint = fingerprint
        self.template_id = template_id
        super().__init__(f"no scripted response for {template_id or 'call'} fingerprint {fingerprint}")


class SegmentParseError(DictationRagError):
    pass


class ObservationParseError(DictationRagError):
    pass


class SegmentationError(DictationRagError):
    def __init__(self, dictation_id: str, reason: str) -> None:
        self.dictation_id = dictation_id
        super().__init__(f"segmentation failed for dictation {dictation_id!r}: {reason}")


class UnknownPredictionId(DictationRagError):
    def __init__(self, record_id: str) -> None:
        self.record_id = record_id
        super().__init__(f"prediction id {record_id!r} has no gold dictation")


class ConfigError(DictationRagError):
    pass
