"""Gender, age-stage and emotion labels from classifier outputs."""

from __future__ import annotations

from collections import Counter
from typing import Mapping, Sequence

from .records import AgeStage, Emotion, Gender, UtteranceRecord

# Lower bounds (years) of each stage; the last stage runs to 120.
AGE_STAGE_BOUNDS = (
    (0.0, AgeStage.CHILDREN),
    (13.0, AgeStage.TEENAGER),
    (20.0, AgeStage.YOUNG),
    (40.0, AgeStage.MIDDLE_AGED),
    (60.0, AgeStage.OLD),
)
MAX_AGE = 120.0

EMOTIONS = tuple(e for e in Emotion if e is not Emotion.UNKNOWN)


def map_age_to_stage(age_years: float) -> AgeStage:
    if not 0.0 <= age_years <= MAX_AGE:
        raise ValueError(f"age {age_years} outside [0, {MAX_AGE}]")
    stage = AgeStage.CHILDREN
    for lower, candidate in AGE_STAGE_BOUNDS:
        if age_years >= lower:
            stage = candidate
    return stage


def vote_emotion(predictions: Sequence[Emotion | str]) -> Emotion:
    """Strict-majority vote over emotion predictions.

    Without a strict majority the result is ``neutral`` when neutral is
    among the most-voted labels, otherwise ``unknown``.
    """
    if not predictions:
        raise ValueError("need at least one prediction")
    labels = []
    for p in predictions:
        label = Emotion(p)
        if label is Emotion.UNKNOWN:
            raise ValueError("predictions must come from the seven named emotions")
        labels.append(label)
    counts = Counter(labels)
    top = max(counts.values())
    if top * 2 > len(labels):
        return next(label for label, c in counts.items() if c == top)
    tied = {label for label, c in counts.items() if c == top}
    return Emotion.NEUTRAL if Emotion.NEUTRAL in tied else Emotion.UNKNOWN


def label_records(records: Sequence[UtteranceRecord], *,
                  genders: Mapping[str, Gender | str] | None = None,
                  ages: Mapping[str, float | None] | None = None,
                  emotions: Mapping[str, Sequence[Emotion | str]] | None = None) -> list[UtteranceRecord]:
    """Fill gender, age stage and emotion from per-utterance backend results.

    Any missing (or abstaining) response leaves that field ``unknown``;
    records are never dropped or reordered.
    """
    genders = genders or {}
    ages = ages or {}
    emotions = emotions or {}
    out = []
    for record in records:
        uid = record.utterance_id
        gender = Gender(genders.get(uid, Gender.UNKNOWN))
        age = ages.get(uid)
        age_stage = map_age_to_stage(age) if age is not None else AgeStage.UNKNOWN
        preds = emotions.get(uid)
        emotion = vote_emotion(preds) if preds else Emotion.UNKNOWN
        out.append(record.with_(gender=gender, age_stage=age_stage, emotion=emotion))
    return out
