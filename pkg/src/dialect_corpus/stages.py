"""Pipeline stages: manifest in, manifest out, with backends behind them.

Each stage returns a :class:`StageReport` holding the output records, the
audit sidecars (discards with reasons, failures, retry list) and counters.
Per-record work runs through :func:`run_stage_batch`, and every
aggregation happens afterwards in input order, so output never depends on
the worker count.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .audio import (
    AudioFormatError,
    SpeechRegion,
    detect_speech_regions,
    frame_energies,
    read_wav,
    segment_regions,
    snr_from_energies,
)
from .backends import (
    BackendError,
    BackendFailure,
    BackendKind,
    BackendRegistry,
    BackendRequest,
    RetryPolicy,
    StageFailure,
    dispatch,
    run_stage_batch,
)
from .config import PipelineConfig
from .fusion import Hypothesis, detokenize, fuse
from .paralinguistics import label_records
from .punctuation import AlignedWord, PunctuationCandidate, punctuate_record
from .quality import GateThresholds, gate, quality_histogram, score_quality
from .records import Domain, LabelTier, UtteranceRecord, round_ms, tier_for
from .speakers import SpeakerEmbedding, assign_speaker_ids, cluster_embeddings, filter_single_speaker

log = logging.getLogger(__name__)

STAGE_ORDER = ("segment", "speakers", "labels", "quality", "fuse", "punctuate", "partition")

DEFAULT_PROMPT = """\
You are given several machine transcriptions of the same short recording of
Sichuanese speech and a draft merged from them by voting. Correct
recognition errors in the draft using the alternatives and your knowledge of
the dialect. Keep the meaning unchanged and output exactly as many tokens as
the draft has (one token per Han character, one per Latin/digit run).

Alternatives:
{hypotheses}

Draft:
{consensus}
"""


class StageError(RuntimeError):
    """A stage cannot produce valid output; the run must stop."""


@dataclass
class StageReport:
    stage: str
    processed: int
    records: list[UtteranceRecord]
    discarded: list[tuple[UtteranceRecord, str]] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)
    retry: list[UtteranceRecord] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    kept: int | None = None

    def stats(self) -> dict[str, Any]:
        kept = len(self.records) if self.kept is None else self.kept
        out = {
            "stage": self.stage,
            "processed": self.processed,
            "kept": kept,
            "discarded": len(self.discarded),
            "failed": len(self.failed),
        }
        out.update(sorted(self.counters.items()))
        out.update(self.extra)
        return out


@dataclass
class StageContext:
    config: PipelineConfig
    registry: BackendRegistry

    @property
    def policy(self) -> RetryPolicy:
        return RetryPolicy(timeout_ms=self.config.timeout_ms, retries=self.config.retries)

    def ask(self, kind: BackendKind, utterance_id: str, payload: dict[str, Any]) -> dict[str, Any]:
        return dict(dispatch(BackendRequest(kind, utterance_id, payload), self.registry, self.policy).result)

    def batch(self, items: Sequence[Any], fn: Callable[[Any], Any]) -> list[Any]:
        return run_stage_batch(items, fn, self.config.jobs)


def _span(record: UtteranceRecord) -> dict[str, Any]:
    return {"audio_path": record.audio_path, "start_s": record.start_s, "end_s": record.end_s}


# ---------------------------------------------------------------------------
# segment


def _load_domains(raw_dir: Path) -> dict[str, str]:
    path = raw_dir / "domains.json"
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    for source, domain in data.items():
        try:
            Domain(domain)
        except ValueError:
            raise StageError(f"{path}: {source!r} has unknown domain {domain!r}") from None
    return data


def segment_recording(path: Path, source_id: str, domain: str, ctx: StageContext) -> list[UtteranceRecord]:
    config = ctx.config
    samples, rate = read_wav(path)
    energies = frame_energies(samples, rate, config.frame_ms, config.hop_ms)
    if ctx.registry.has(BackendKind.VAD):
        result = ctx.ask(BackendKind.VAD, source_id, {"audio_path": str(path)})
        floor = float(np.percentile(energies, config.noise_percentile))
        regions = [SpeechRegion(round_ms(r["start_s"]), round_ms(r["end_s"]), float("nan"), floor)
                   for r in sorted(result["regions"], key=lambda r: r["start_s"])
                   if r["end_s"] > r["start_s"]]
    else:
        regions = detect_speech_regions(energies, config)
    records = []
    for start, end in segment_regions(regions, energies, config):
        snr = snr_from_energies(energies, regions, (start, end), config)
        records.append(UtteranceRecord(
            utterance_id=f"{source_id}-{int(round(start * 1000)):07d}-{int(round(end * 1000)):07d}",
            source_id=source_id,
            audio_path=str(path),
            start_s=start,
            end_s=end,
            duration_s=round_ms(end - start),
            domain=domain,
            snr_db=round(snr, 3),
        ))
    return records


def segment_stage(raw_dir: str | Path, ctx: StageContext) -> StageReport:
    raw_dir = Path(raw_dir)
    files = sorted(raw_dir.glob("*.wav"))
    domains = _load_domains(raw_dir)

    def work(path: Path) -> list[UtteranceRecord] | str:
        try:
            return segment_recording(path, path.stem, domains.get(path.stem, ctx.config.default_domain), ctx)
        except AudioFormatError as exc:
            return str(exc)

    report = StageReport("segment", processed=len(files), records=[])
    for path, result in zip(files, ctx.batch(files, work)):
        if isinstance(result, StageFailure):
            report.failed.append((path.stem, str(result.error)))
        elif isinstance(result, str):
            report.failed.append((path.stem, result))
        else:
            report.records.extend(result)
    report.counters["recordings"] = len(files)
    return report


# ---------------------------------------------------------------------------
# speakers


def speakers_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    results = ctx.batch(records, lambda r: ctx.ask(BackendKind.EMBED, r.utterance_id, _span(r)))
    report = StageReport("speakers", processed=len(records), records=[])
    embedded, unassigned = [], []
    embeddings: dict[str, SpeakerEmbedding] = {}
    for record, result in zip(records, results):
        if isinstance(result, StageFailure):
            report.failed.append((record.utterance_id, str(result.error)))
            unassigned.append(record.with_(speaker_id=None))
            continue
        try:
            embeddings[record.utterance_id] = SpeakerEmbedding.normalized(
                record.utterance_id, result["vector"], result["multi_speaker"])
        except ValueError as exc:
            report.failed.append((record.utterance_id, str(exc)))
            unassigned.append(record.with_(speaker_id=None))
            continue
        embedded.append(record)

    flags = {uid: e.multi_speaker_flag for uid, e in embeddings.items()}
    single, _ = filter_single_speaker(embedded, flags)
    single_ids = {r.utterance_id for r in single}
    report.discarded.extend((r, "multi_speaker") for r in embedded if r.utterance_id not in single_ids)

    by_source: dict[str, list[UtteranceRecord]] = defaultdict(list)
    for record in single:
        by_source[record.source_id].append(record)
    labelled = []
    for source_id, group in by_source.items():
        try:
            clusters = cluster_embeddings([embeddings[r.utterance_id] for r in group], ctx.config.cluster_threshold)
        except ValueError as exc:
            raise StageError(f"source {source_id!r}: {exc}") from exc
        labelled.extend(assign_speaker_ids(group, clusters))
        report.counters["speakers"] = report.counters.get("speakers", 0) + len(set(clusters.values()))
    report.records = labelled + unassigned
    return report


# ---------------------------------------------------------------------------
# paralinguistic labels


def labels_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    kinds = (BackendKind.GENDER, BackendKind.AGE, BackendKind.EMOTION)

    def work(record: UtteranceRecord) -> dict[BackendKind, Any]:
        answers: dict[BackendKind, Any] = {}
        for kind in kinds:
            try:
                answers[kind] = ctx.ask(kind, record.utterance_id, _span(record))
            except BackendError as exc:
                answers[kind] = exc
        return answers

    genders, ages, emotions = {}, {}, {}
    report = StageReport("labels", processed=len(records), records=[])
    counters = {f"{k.value}_failures": 0 for k in kinds}
    for record, answers in zip(records, ctx.batch(records, work)):
        uid = record.utterance_id
        if isinstance(answers, StageFailure):
            answers = {k: answers.error for k in kinds}
        problems = [k for k in kinds if isinstance(answers[k], Exception)]
        for k in problems:
            counters[f"{k.value}_failures"] += 1
        if problems:
            report.failed.append((uid, "; ".join(str(answers[k]) for k in problems)))
        if BackendKind.GENDER not in problems:
            genders[uid] = answers[BackendKind.GENDER]["label"]
        if BackendKind.AGE not in problems:
            ages[uid] = answers[BackendKind.AGE]["age_years"]
        if BackendKind.EMOTION not in problems and answers[BackendKind.EMOTION]["predictions"]:
            emotions[uid] = answers[BackendKind.EMOTION]["predictions"]
    report.records = label_records(records, genders=genders, ages=ages, emotions=emotions)
    report.counters.update(counters)
    return report


# ---------------------------------------------------------------------------
# quality


def quality_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    def scorer(record: UtteranceRecord) -> float:
        payload = {**_span(record), "snr_db": record.snr_db, "duration_s": record.duration_s}
        return ctx.ask(BackendKind.QUALITY, record.utterance_id, payload)["score"]

    scored = ctx.batch(records, lambda r: score_quality(r, scorer))
    report = StageReport("quality", processed=len(records), records=[])
    ready = []
    for record, (updated, failed) in zip(records, scored):
        if failed:
            report.retry.append(updated)
            report.failed.append((record.utterance_id, "quality scorer failed"))
        else:
            ready.append(updated)
    config = ctx.config
    kept, discards = gate(ready, GateThresholds(config.min_s, config.snr_floor_db, config.quality_floor))
    report.discarded = [(d.record, d.reason) for d in discards]
    report.records = kept + report.retry
    report.extra["histogram"] = quality_histogram(kept)
    return report


# ---------------------------------------------------------------------------
# fusion


def load_prompt(config: PipelineConfig) -> str:
    if config.llm_prompt_file:
        return Path(config.llm_prompt_file).read_text(encoding="utf-8")
    return DEFAULT_PROMPT


def render_prompt(template: str, consensus: Sequence[str], hypotheses: Sequence[Hypothesis]) -> str:
    lines = "\n".join(f"- {h.system_id}: {detokenize(h.tokens)}" for h in hypotheses)
    return template.replace("{hypotheses}", lines).replace("{consensus}", detokenize(consensus))


def fuse_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    systems = list(ctx.config.asr_systems)
    template = load_prompt(ctx.config)

    def work(record: UtteranceRecord) -> tuple[UtteranceRecord, Any]:
        result = ctx.ask(BackendKind.ASR, record.utterance_id, {**_span(record), "systems": systems})
        hyps = [Hypothesis.from_text(h["system_id"], h["text"]) for h in result["hypotheses"]]
        if not hyps:
            raise BackendFailure("asr", record.utterance_id, 1, ValueError("no hypotheses returned"))

        def corrector(consensus: list[str], hypotheses: Sequence[Hypothesis]) -> list[str]:
            payload = {
                "consensus": consensus,
                "hypotheses": [{"system_id": h.system_id, "tokens": list(h.tokens)} for h in hypotheses],
                "prompt": render_prompt(template, consensus, hypotheses),
            }
            return ctx.ask(BackendKind.LLM_CORRECT, record.utterance_id, payload)["tokens"]

        fused = fuse(hyps, corrector, systems)
        updated = record.with_(
            transcription=detokenize(fused.final),
            confidence=fused.confidence,
            label_tier=None,
            punctuated_transcription=None,
        )
        return updated, (fused, len(hyps))

    report = StageReport("fuse", processed=len(records), records=[])
    counts = {"llm_violations": 0, "llm_failures": 0, "llm_accepted": 0,
              "short_hypothesis_sets": 0, "empty_transcriptions": 0}
    for record, result in zip(records, ctx.batch(records, work)):
        if isinstance(result, StageFailure):
            report.failed.append((record.utterance_id, str(result.error)))
            continue
        updated, (fused, n_hyps) = result
        counts["llm_violations"] += fused.correction.violation
        counts["llm_failures"] += fused.correction.failed
        counts["llm_accepted"] += fused.correction.accepted
        counts["short_hypothesis_sets"] += n_hyps < 3
        counts["empty_transcriptions"] += not fused.final
        report.records.append(updated)
    report.counters.update(counts)
    if counts["short_hypothesis_sets"]:
        log.warning("%d utterances had fewer than 3 hypotheses", counts["short_hypothesis_sets"])
    return report


# ---------------------------------------------------------------------------
# punctuation


def _aligned_words(result: dict[str, Any], duration_s: float) -> list[AlignedWord]:
    words = result["words"]
    out = []
    for i, w in enumerate(words):
        pause = w.get("pause_after_s")
        if pause is None:
            nxt = words[i + 1]["start_s"] if i + 1 < len(words) else duration_s
            pause = max(0.0, nxt - w["end_s"])
        out.append(AlignedWord(w["token"], w["start_s"], w["end_s"], pause))
    return out


def punctuate_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    config = ctx.config

    def aligner(record: UtteranceRecord, tokens: list[str]) -> list[AlignedWord]:
        result = ctx.ask(BackendKind.ALIGN, record.utterance_id, {**_span(record), "tokens": tokens})
        return _aligned_words(result, record.duration_s)

    def text_model(record: UtteranceRecord, tokens: list[str]) -> list[PunctuationCandidate]:
        result = ctx.ask(BackendKind.PUNCT, record.utterance_id, {"tokens": tokens})
        return [PunctuationCandidate(c["position"], c["mark"]) for c in result["candidates"]]

    results = ctx.batch(records, lambda r: punctuate_record(
        r, aligner, text_model, config.pause_short_s, config.pause_long_s))
    report = StageReport("punctuate", processed=len(records), records=[])
    for record, (updated, flagged) in zip(records, results):
        if flagged:
            report.failed.append((record.utterance_id, "alignment failed"))
        report.records.append(updated)
    return report


# ---------------------------------------------------------------------------
# partition


def partition_stage(records: Sequence[UtteranceRecord], ctx: StageContext) -> StageReport:
    config = ctx.config
    report = StageReport("partition", processed=len(records), records=[])
    tiers = {t.value: 0 for t in LabelTier}
    for record in records:
        if record.confidence is None:
            raise StageError(f"{record.utterance_id}: confidence is absent; run the fuse stage first")
        tier = tier_for(record.confidence, config.strong_lo, config.weak_lo)
        updated = record.with_(label_tier=tier)
        tiers[tier.value] += 1
        report.records.append(updated)
        if tier is LabelTier.DISCARDED:
            report.discarded.append((updated, "confidence"))
    report.kept = tiers["strong"] + tiers["weak"]
    report.counters.update(tiers)
    hours = {t.value: 0.0 for t in LabelTier}
    for record in report.records:
        hours[record.label_tier.value] += record.duration_s / 3600.0
    report.extra["hours"] = {k: round(v, 6) for k, v in hours.items()}
    return report


STAGES: dict[str, Callable[[Sequence[UtteranceRecord], StageContext], StageReport]] = {
    "speakers": speakers_stage,
    "labels": labels_stage,
    "quality": quality_stage,
    "fuse": fuse_stage,
    "punctuate": punctuate_stage,
    "partition": partition_stage,
}
