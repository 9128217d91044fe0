from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_corpus.records import (
    MANIFEST_FIELDS,
    AgeStage,
    Domain,
    Emotion,
    Gender,
    LabelTier,
    ManifestError,
    UtteranceRecord,
    read_manifest,
    tier_for,
    write_manifest,
)


def make(uid="u1", source="s1", start=0.0, end=6.0, **kw) -> UtteranceRecord:
    base = dict(utterance_id=uid, source_id=source, audio_path="a.wav", start_s=start, end_s=end,
                duration_s=round(end - start, 3), domain="news", snr_db=20.0)
    base.update(kw)
    return UtteranceRecord(**base)


def test_vocabulary_sizes():
    assert len([e for e in Emotion if e is not Emotion.UNKNOWN]) == 7
    assert len([a for a in AgeStage if a is not AgeStage.UNKNOWN]) == 5
    assert len(Domain) == 9
    assert {g.value for g in Gender} == {"male", "female", "unknown"}


def test_field_names_exact():
    assert MANIFEST_FIELDS == (
        "utterance_id", "source_id", "audio_path", "start_s", "end_s", "duration_s", "speaker_id",
        "gender", "age_stage", "emotion", "domain", "snr_db", "quality_score", "transcription",
        "punctuated_transcription", "confidence", "label_tier",
    )


def test_three_line_file_reads_in_order(tmp_path):
    path = tmp_path / "m.jsonl"
    recs = [make("a", start=0), make("b", start=7, end=14), make("c", start=20, end=30)]
    path.write_text("".join(json.dumps(r.to_json()) + "\n" for r in recs), encoding="utf-8")
    assert [r.utterance_id for r in read_manifest(path)] == ["a", "b", "c"]


def test_confidence_out_of_range_names_line(tmp_path):
    path = tmp_path / "m.jsonl"
    good = make("a").to_json()
    bad = make("b", start=7, end=14).to_json() | {"confidence": 1.2}
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="confidence out of range") as info:
        read_manifest(path)
    assert info.value.line == 2
    assert info.value.field == "confidence"
    assert info.value.utterance_id == "b"


def test_malformed_json_names_line(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(make().to_json()) + "\n{oops\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="line 2"):
        read_manifest(path)


def test_empty_file(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("", encoding="utf-8")
    assert read_manifest(path) == []


def test_write_sorts_by_source_then_start(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest([make("late", start=7.0, end=14.0), make("early", start=2.0, end=7.0)], path)
    assert [r.start_s for r in read_manifest(path)] == [2.0, 7.0]


def test_absent_confidence_is_omitted(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest([make()], path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    assert "confidence" not in obj and "label_tier" not in obj and "speaker_id" not in obj


def test_null_rejected():
    with pytest.raises(ManifestError, match="null"):
        UtteranceRecord.from_json(make().to_json() | {"confidence": None})


@pytest.mark.parametrize("field,value", [("gender", "robot"), ("emotion", "bored"),
                                         ("age_stage", "ancient"), ("domain", "podcast"),
                                         ("label_tier", "medium")])
def test_enum_rejects_unknown_strings(field, value):
    obj = make(confidence=0.95).to_json() | {field: value}
    with pytest.raises(ManifestError) as info:
        UtteranceRecord.from_json(obj)
    assert info.value.field == field


@pytest.mark.parametrize("kw,field", [
    (dict(start=5.0, end=5.0, duration_s=0.0), "start_s"),
    (dict(duration_s=3.0), "duration_s"),
    (dict(quality_score=5.5), "quality_score"),
    (dict(label_tier="strong"), "label_tier"),
])
def test_invariants(kw, field):
    with pytest.raises(ManifestError) as info:
        make(**kw)
    assert info.value.field == field


def test_tier_must_match_confidence(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(make(confidence=0.5, label_tier="strong").to_json()) + "\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="inconsistent"):
        read_manifest(path)


def test_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    line = json.dumps(make().to_json()) + "\n"
    path.write_text(line + line, encoding="utf-8")
    with pytest.raises(ManifestError, match="duplicate"):
        read_manifest(path)


def test_times_rounded_to_milliseconds():
    r = make(start=1.23456, end=7.0, duration_s=5.76544)
    assert r.start_s == 1.235


@st.composite
def records(draw, uid):
    start = draw(st.integers(0, 10_000_000)) / 1000
    dur = draw(st.integers(1, 60_000)) / 1000
    conf = draw(st.one_of(st.none(), st.floats(0, 1)))
    tier = None
    if conf is not None and draw(st.booleans()):
        tier = tier_for(conf)
    text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)
    return UtteranceRecord(
        utterance_id=uid,
        source_id=draw(st.sampled_from(["s1", "s2", "源"])),
        audio_path=draw(text) or "x.wav",
        start_s=start, end_s=round(start + dur, 3), duration_s=dur,
        domain=draw(st.sampled_from(list(Domain))),
        snr_db=draw(st.floats(-50, 80)),
        transcription=draw(text),
        speaker_id=draw(st.one_of(st.none(), text)),
        gender=draw(st.sampled_from(list(Gender))),
        age_stage=draw(st.sampled_from(list(AgeStage))),
        emotion=draw(st.sampled_from(list(Emotion))),
        quality_score=draw(st.one_of(st.none(), st.floats(1, 5))),
        punctuated_transcription=draw(st.one_of(st.none(), text)),
        confidence=conf,
        label_tier=tier,
    )


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 8).flatmap(lambda n: st.tuples(*[records(f"u{i}") for i in range(n)])))
def test_round_trip_identity(tmp_path_factory, recs):
    path = tmp_path_factory.mktemp("rt") / "m.jsonl"
    write_manifest(list(recs), path)
    back = read_manifest(path)
    assert sorted(back, key=lambda r: r.utterance_id) == sorted(recs, key=lambda r: r.utterance_id)
    assert [(r.source_id, r.start_s) for r in back] == sorted((r.source_id, r.start_s) for r in recs)


def test_tier_boundaries():
    assert tier_for(0.9) is LabelTier.STRONG
    assert tier_for(0.899) is LabelTier.WEAK
    assert tier_for(0.6) is LabelTier.WEAK
    assert tier_for(0.59) is LabelTier.DISCARDED
