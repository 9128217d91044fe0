"""Pause-gated punctuation from forced-alignment timings plus a text model.

The audio side decides *where* a mark may go (a short or long pause after
a token); the text model only chooses *which* mark. Short pauses take a
comma, long pauses a sentence-final mark, and positions without a pause
take nothing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from .fusion import detokenize, token_spans
from .records import UtteranceRecord

log = logging.getLogger(__name__)


class PauseClass(str, Enum):
    NONE = "none"
    SHORT = "short"
    LONG = "long"


class Mark(str, Enum):
    COMMA = "comma"
    PERIOD = "period"
    QUESTION = "question"
    EXCLAMATION = "exclamation"


FULL_WIDTH = {
    Mark.COMMA: "，",
    Mark.PERIOD: "。",
    Mark.QUESTION: "？",
    Mark.EXCLAMATION: "！",
}
MARK_CHARS = frozenset(FULL_WIDTH.values())
_SENTENCE_MARKS = (Mark.PERIOD, Mark.QUESTION, Mark.EXCLAMATION)


@dataclass(frozen=True)
class AlignedWord:
    token: str
    start_s: float
    end_s: float
    pause_after_s: float

    def __post_init__(self) -> None:
        if self.start_s > self.end_s:
            raise ValueError(f"{self.token!r}: start_s after end_s")
        if self.pause_after_s < 0:
            raise ValueError(f"{self.token!r}: negative pause")


@dataclass(frozen=True)
class PunctuationCandidate:
    position: int  # index of the token the mark follows
    mark: Mark
    source: str = "text_model"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mark", Mark(self.mark))


def words_from_timings(timings: Sequence[tuple[str, float, float]], utterance_end_s: float) -> list[AlignedWord]:
    """Build aligned words, taking each pause as the gap to the next start.

    The last word's pause runs to ``utterance_end_s``.
    """
    words = []
    for i, (tok, start, end) in enumerate(timings):
        nxt = timings[i + 1][1] if i + 1 < len(timings) else utterance_end_s
        words.append(AlignedWord(tok, start, end, max(0.0, nxt - end)))
    return words


def classify_pauses(words: Sequence[AlignedWord], short_s: float = 0.25,
                    long_s: float = 0.5) -> list[PauseClass]:
    if not 0 < short_s < long_s:
        raise ValueError("need 0 < short_s < long_s")
    classes = []
    for i, word in enumerate(words):
        gap = word.pause_after_s
        if i == len(words) - 1 or gap >= long_s:
            classes.append(PauseClass.LONG)
        elif gap >= short_s:
            classes.append(PauseClass.SHORT)
        else:
            classes.append(PauseClass.NONE)
    return classes


def choose_marks(pauses: Sequence[PauseClass],
                 candidates: Sequence[PunctuationCandidate]) -> dict[int, Mark]:
    """Mark to insert after each token position, gated by its pause class."""
    proposed: dict[int, Mark] = {}
    for cand in candidates:
        if not 0 <= cand.position < len(pauses):
            raise ValueError(f"candidate position {cand.position} out of range")
        proposed.setdefault(cand.position, cand.mark)
    marks: dict[int, Mark] = {}
    for pos, pause in enumerate(pauses):
        if pause is PauseClass.SHORT and pos in proposed:
            marks[pos] = Mark.COMMA
        elif pause is PauseClass.LONG:
            mark = proposed.get(pos)
            marks[pos] = mark if mark in _SENTENCE_MARKS else Mark.PERIOD
    return marks


def merge_punctuation(words: Sequence[AlignedWord], pauses: Sequence[PauseClass],
                      candidates: Sequence[PunctuationCandidate], text: str | None = None) -> str:
    """Insert full-width marks after the chosen tokens.

    Marks go into ``text`` (by default the detokenised words), which is
    otherwise left untouched, so deleting the inserted marks gives it back
    exactly. A token that already is one of the marks never gets a second.
    """
    if text is None:
        text = detokenize([w.token for w in words])
    spans = token_spans(text)
    if len(spans) != len(pauses) or len(words) != len(pauses):
        raise ValueError(f"{len(pauses)} pause classes for {len(spans)} tokens")
    marks = choose_marks(pauses, candidates)
    out = []
    cursor = 0
    for pos, (_, end) in enumerate(spans):
        out.append(text[cursor:end])
        cursor = end
        if pos in marks and text[end - 1] not in MARK_CHARS:
            out.append(FULL_WIDTH[marks[pos]])
    out.append(text[cursor:])
    return "".join(out)


def strip_marks(text: str) -> str:
    return "".join(ch for ch in text if ch not in MARK_CHARS)


def punctuate(text: str, words: Sequence[AlignedWord], candidates: Sequence[PunctuationCandidate],
              short_s: float = 0.25, long_s: float = 0.5) -> str:
    """Punctuate ``text`` given aligner words that must match its tokens."""
    tokens = [text[a:b] for a, b in token_spans(text)]
    if [w.token for w in words] != tokens:
        raise ValueError("aligned words do not match the transcription tokens")
    return merge_punctuation(words, classify_pauses(words, short_s, long_s), candidates, text)


def punctuate_record(record: UtteranceRecord,
                     aligner: Callable[[UtteranceRecord, list[str]], Sequence[AlignedWord]],
                     text_model: Callable[[UtteranceRecord, list[str]], Sequence[PunctuationCandidate]],
                     short_s: float = 0.25, long_s: float = 0.5) -> tuple[UtteranceRecord, bool]:
    """Return the record with ``punctuated_transcription`` set, and whether
    it was flagged.

    An aligner failure (exception or token mismatch) leaves the record
    unpunctuated and flagged. A text-model failure is treated as no
    proposals, so pauses still get their default marks.
    """
    text = record.transcription
    tokens = [text[a:b] for a, b in token_spans(text)]
    if not tokens:
        return record, False
    try:
        words = list(aligner(record, tokens))
        if [w.token for w in words] != tokens:
            raise ValueError("aligner tokens differ from transcription")
    except Exception as exc:  # noqa: BLE001
        log.warning("%s: alignment failed: %s", record.utterance_id, exc)
        return record, True
    try:
        candidates = [c for c in text_model(record, tokens) if 0 <= c.position < len(tokens)]
    except Exception as exc:  # noqa: BLE001
        log.warning("%s: punctuation model failed: %s", record.utterance_id, exc)
        candidates = []
    punctuated = punctuate(text, words, candidates, short_s, long_s)
    return record.with_(punctuated_transcription=punctuated), False
