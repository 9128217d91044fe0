"""Quality scoring, threshold gating and the score histogram."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

from .records import UtteranceRecord

log = logging.getLogger(__name__)

SCORE_MIN = 1.0
SCORE_MAX = 5.0
BIN_WIDTH = 0.5
N_BINS = int((SCORE_MAX - SCORE_MIN) / BIN_WIDTH)


def clamp_score(score: float) -> float:
    return min(SCORE_MAX, max(SCORE_MIN, float(score)))


def snr_proxy_score(snr_db: float) -> float:
    """Deterministic stand-in scorer: ``clamp(1 + snr_db / 15, 1, 5)``."""
    return clamp_score(1.0 + snr_db / 15.0)


def score_quality(record: UtteranceRecord,
                  scorer: Callable[[UtteranceRecord], float]) -> tuple[UtteranceRecord, bool]:
    """Attach a clamped quality score.

    On scorer failure the record comes back without a score and the flag
    is True so the caller can queue it for a retry.
    """
    try:
        score = clamp_score(scorer(record))
    except Exception as exc:  # noqa: BLE001
        log.warning("%s: quality scorer failed: %s", record.utterance_id, exc)
        return record.with_(quality_score=None), True
    return record.with_(quality_score=score), False


@dataclass(frozen=True)
class GateThresholds:
    min_duration_s: float = 5.0
    snr_floor_db: float = 5.0
    quality_floor: float = 2.5


@dataclass(frozen=True)
class Discard:
    record: UtteranceRecord
    reason: str


def gate(records: Sequence[UtteranceRecord],
         thresholds: GateThresholds = GateThresholds()) -> tuple[list[UtteranceRecord], list[Discard]]:
    """Split records into kept and discarded; each discard names the first
    failed criterion in the order duration, snr_db, quality_score."""
    kept: list[UtteranceRecord] = []
    discarded: list[Discard] = []
    for record in records:
        if record.quality_score is None:
            raise ValueError(f"{record.utterance_id}: quality_score is absent")
        if record.duration_s < thresholds.min_duration_s:
            reason = "duration"
        elif record.snr_db < thresholds.snr_floor_db:
            reason = "snr_db"
        elif record.quality_score < thresholds.quality_floor:
            reason = "quality_score"
        else:
            kept.append(record)
            continue
        discarded.append(Discard(record, reason))
    return kept, discarded


def quality_histogram(items: Sequence[UtteranceRecord | float]) -> list[int]:
    """Counts in half-point bins ``[1.0, 1.5) ... [4.5, 5.0]``; the last bin is closed.

    Accepts records (their ``quality_score`` is used) or bare scores.
    """
    counts = [0] * N_BINS
    for item in items:
        score = item.quality_score if isinstance(item, UtteranceRecord) else item
        if score is None:
            raise ValueError(f"{item.utterance_id}: quality_score is absent")
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise ValueError(f"score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
        index = min(int((score - SCORE_MIN) / BIN_WIDTH), N_BINS - 1)
        counts[index] += 1
    return counts


def bin_edges() -> list[tuple[float, float]]:
    return [(SCORE_MIN + i * BIN_WIDTH, SCORE_MIN + (i + 1) * BIN_WIDTH) for i in range(N_BINS)]


def histogram_json(counts: Sequence[int]) -> str:
    bins = [{"lo": lo, "hi": hi, "count": c} for (lo, hi), c in zip(bin_edges(), counts)]
    return json.dumps({"bin_width": BIN_WIDTH, "bins": bins, "total": sum(counts)}, indent=2)


def histogram_table(counts: Sequence[int], width: int = 40) -> str:
    peak = max(counts) if counts and max(counts) else 1
    lines = []
    for i, ((lo, hi), c) in enumerate(zip(bin_edges(), counts)):
        close = "]" if i == N_BINS - 1 else ")"
        bar = "#" * round(width * c / peak)
        lines.append(f"[{lo:.1f}, {hi:.1f}{close}  {c:>7}  {bar}")
    return "\n".join(lines)
