"""Utterance records, label vocabularies and the JSONL manifest format.

A manifest is UTF-8 JSONL with one utterance per line. Optional fields
that are absent are omitted from the JSON object rather than written as
``null``. Timestamps are kept at millisecond precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


class AgeStage(str, Enum):
    CHILDREN = "children"
    TEENAGER = "teenager"
    YOUNG = "young"
    MIDDLE_AGED = "middle_aged"
    OLD = "old"
    UNKNOWN = "unknown"


class Emotion(str, Enum):
    HAPPY = "happy"
    ANGRY = "angry"
    SAD = "sad"
    NEUTRAL = "neutral"
    FEARFUL = "fearful"
    SURPRISED = "surprised"
    DISGUSTED = "disgusted"
    UNKNOWN = "unknown"


class Domain(str, Enum):
    SHORT_VIDEO = "short_video"
    ENTERTAINMENT = "entertainment"
    LIVE_STREAM = "live_stream"
    DOCUMENTARY = "documentary"
    AUDIOBOOK = "audiobook"
    INTERVIEW = "interview"
    NEWS = "news"
    READING = "reading"
    DRAMA = "drama"


class LabelTier(str, Enum):
    STRONG = "strong"
    WEAK = "weak"
    DISCARDED = "discarded"


STRONG_LO = 0.9
WEAK_LO = 0.6

# Field order of the JSON objects on disk.
MANIFEST_FIELDS = (
    "utterance_id",
    "source_id",
    "audio_path",
    "start_s",
    "end_s",
    "duration_s",
    "speaker_id",
    "gender",
    "age_stage",
    "emotion",
    "domain",
    "snr_db",
    "quality_score",
    "transcription",
    "punctuated_transcription",
    "confidence",
    "label_tier",
)
OPTIONAL_FIELDS = frozenset(
    {"speaker_id", "quality_score", "punctuated_transcription", "confidence", "label_tier"}
)
_ENUM_FIELDS = {
    "gender": Gender,
    "age_stage": AgeStage,
    "emotion": Emotion,
    "domain": Domain,
    "label_tier": LabelTier,
}


class ManifestError(ValueError):
    """A manifest line could not be parsed or violates a record invariant."""

    def __init__(self, message: str, *, line: int | None = None,
                 utterance_id: str | None = None, field: str | None = None):
        self.message = message
        self.line = line
        self.utterance_id = utterance_id
        self.field = field
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if utterance_id is not None:
            prefix.append(f"utterance {utterance_id!r}")
        if field is not None:
            prefix.append(f"field {field!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


def round_ms(seconds: float) -> float:
    return round(float(seconds), 3)


def tier_for(confidence: float, strong_lo: float = STRONG_LO, weak_lo: float = WEAK_LO) -> LabelTier:
    """Map a transcription confidence to its label tier.

    Strong covers ``[strong_lo, 1.0]``, weak ``[weak_lo, strong_lo)`` and
    everything below ``weak_lo`` is discarded.
    """
    if confidence >= strong_lo:
        return LabelTier.STRONG
    if confidence >= weak_lo:
        return LabelTier.WEAK
    return LabelTier.DISCARDED


@dataclass(frozen=True)
class UtteranceRecord:
    """One corpus segment and everything the pipeline learned about it."""

    utterance_id: str
    source_id: str
    audio_path: str
    start_s: float
    end_s: float
    duration_s: float
    domain: Domain
    snr_db: float
    transcription: str = ""
    speaker_id: str | None = None
    gender: Gender = Gender.UNKNOWN
    age_stage: AgeStage = AgeStage.UNKNOWN
    emotion: Emotion = Emotion.UNKNOWN
    quality_score: float | None = None
    punctuated_transcription: str | None = None
    confidence: float | None = None
    label_tier: LabelTier | None = None

    def __post_init__(self) -> None:
        for name, enum_cls in _ENUM_FIELDS.items():
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, enum_cls):
                try:
                    value = enum_cls(value)
                except ValueError:
                    raise ManifestError(
                        f"{value!r} is not one of {[m.value for m in enum_cls]}",
                        utterance_id=self.utterance_id, field=name,
                    ) from None
                object.__setattr__(self, name, value)
        for name in ("start_s", "end_s", "duration_s"):
            object.__setattr__(self, name, round_ms(getattr(self, name)))
        self._check()

    def _check(self) -> None:
        uid = self.utterance_id

        def fail(field: str, message: str) -> None:
            raise ManifestError(message, utterance_id=uid, field=field)

        if not isinstance(uid, str) or not uid:
            fail("utterance_id", "must be a non-empty string")
        if not self.source_id:
            fail("source_id", "must be a non-empty string")
        if not 0 <= self.start_s < self.end_s:
            fail("start_s", f"need 0 <= start_s < end_s, got {self.start_s}, {self.end_s}")
        if abs(self.duration_s - (self.end_s - self.start_s)) > 0.001 + 1e-9:
            fail("duration_s", "duration_s does not match end_s - start_s")
        if not math.isfinite(self.snr_db):
            fail("snr_db", "must be finite")
        if self.quality_score is not None and not 1.0 <= self.quality_score <= 5.0:
            fail("quality_score", "quality_score out of range [1, 5]")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            fail("confidence", "confidence out of range [0, 1]")
        if self.label_tier is not None and self.confidence is None:
            fail("label_tier", "label_tier set without confidence")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in MANIFEST_FIELDS:
            value = getattr(self, name)
            if value is None and name in OPTIONAL_FIELDS:
                continue
            out[name] = value.value if isinstance(value, Enum) else value
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> UtteranceRecord:
        if not isinstance(obj, dict):
            raise ManifestError("expected a JSON object")
        uid = obj.get("utterance_id")
        unknown = set(obj) - set(MANIFEST_FIELDS)
        if unknown:
            raise ManifestError(f"unknown fields {sorted(unknown)}", utterance_id=uid)
        for name in MANIFEST_FIELDS:
            if name not in obj and name not in OPTIONAL_FIELDS:
                raise ManifestError("missing required field", utterance_id=uid, field=name)
            if name in obj and obj[name] is None:
                raise ManifestError("null is not allowed; omit absent fields",
                                    utterance_id=uid, field=name)
        for name in ("start_s", "end_s", "duration_s", "snr_db", "quality_score", "confidence"):
            if name in obj and (isinstance(obj[name], bool) or not isinstance(obj[name], (int, float))):
                raise ManifestError("must be a number", utterance_id=uid, field=name)
        for name in ("utterance_id", "source_id", "audio_path", "speaker_id",
                     "transcription", "punctuated_transcription"):
            if name in obj and not isinstance(obj[name], str):
                raise ManifestError("must be a string", utterance_id=uid, field=name)
        return cls(**obj)

    def with_(self, **changes: Any) -> UtteranceRecord:
        return replace(self, **changes)


RECORD_FIELD_NAMES = tuple(f.name for f in fields(UtteranceRecord))


def check_tier(record: UtteranceRecord, strong_lo: float = STRONG_LO, weak_lo: float = WEAK_LO) -> None:
    if record.label_tier is None:
        return
    expected = tier_for(record.confidence, strong_lo, weak_lo)
    if record.label_tier is not expected:
        raise ManifestError(
            f"label_tier {record.label_tier.value!r} inconsistent with confidence "
            f"{record.confidence} (expected {expected.value!r})",
            utterance_id=record.utterance_id, field="label_tier",
        )


def read_manifest(path: str | Path, *, strong_lo: float = STRONG_LO,
                  weak_lo: float = WEAK_LO) -> list[UtteranceRecord]:
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON: {exc.msg}", line=lineno) from None
            try:
                record = UtteranceRecord.from_json(obj)
                check_tier(record, strong_lo, weak_lo)
            except ManifestError as exc:
                raise ManifestError(exc.message, line=lineno, utterance_id=exc.utterance_id,
                                    field=exc.field) from None
            except TypeError as exc:
                raise ManifestError(str(exc), line=lineno) from None
            if record.utterance_id in seen:
                raise ManifestError("duplicate utterance_id", line=lineno,
                                    utterance_id=record.utterance_id)
            seen.add(record.utterance_id)
            records.append(record)
    return records


def sort_records(records: Iterable[UtteranceRecord]) -> list[UtteranceRecord]:
    return sorted(records, key=lambda r: (r.source_id, r.start_s, r.utterance_id))


def dumps_record(record: UtteranceRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False, separators=(", ", ": "))


def write_manifest(records: Sequence[UtteranceRecord], path: str | Path, *,
                   strong_lo: float = STRONG_LO, weak_lo: float = WEAK_LO) -> None:
    """Write ``records`` sorted by ``(source_id, start_s)``.

    The file is written to a temporary sibling and renamed into place, so
    a crashed run never leaves a truncated manifest behind.
    """
    for record in records:
        check_tier(record, strong_lo, weak_lo)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for record in sort_records(records):
            fh.write(dumps_record(record))
            fh.write("\n")
    tmp.replace(path)
