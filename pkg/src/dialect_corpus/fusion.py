"""Multi-system hypothesis fusion.

Candidate transcriptions from several recognisers are aligned into a word
transition network (WTN), voted slot by slot, passed to a corrector model
under a token-length constraint, and scored for confidence against all
candidates.

Tokens are Han characters (one each) or maximal ASCII alphanumeric runs;
every other non-space character is its own token.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .records import STRONG_LO, WEAK_LO, UtteranceRecord, tier_for

log = logging.getLogger(__name__)

EPS = None  # alignment gap
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|\S")
_ASCII_RUN_RE = re.compile(r"[A-Za-z0-9]+")

Token = str
Pair = tuple["Token | None", "Token | None"]


def tokenize(text: str) -> list[Token]:
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character ``(start, end)`` offsets of each token in ``text``."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def detokenize(tokens: Sequence[Token]) -> str:
    """Join tokens, separating adjacent alphanumeric runs with one space."""
    parts: list[str] = []
    prev_run = False
    for tok in tokens:
        run = bool(_ASCII_RUN_RE.fullmatch(tok))
        if run and prev_run:
            parts.append(" ")
        parts.append(tok)
        prev_run = run
    return "".join(parts)


@dataclass(frozen=True)
class Hypothesis:
    system_id: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if any(not t for t in self.tokens):
            raise ValueError(f"{self.system_id}: empty token")

    @classmethod
    def from_text(cls, system_id: str, text: str) -> Hypothesis:
        return cls(system_id, tuple(tokenize(text)))


# ---------------------------------------------------------------------------
# pairwise alignment


def edit_table(a: Sequence[Token], b: Sequence[Token]) -> list[list[int]]:
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ai = a[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ai != b[j - 1])
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = min(sub, dele, ins)
    return d


def edit_distance(a: Sequence[Token], b: Sequence[Token]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i]
        for j, bj in enumerate(b, start=1):
            cur.append(min(prev[j - 1] + (ai != bj), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


def align_pair(a: Sequence[Token], b: Sequence[Token]) -> tuple[list[Pair], int]:
    """Minimal unit-cost edit alignment of ``a`` against ``b``.

    Returns the alignment as ``(a_token | None, b_token | None)`` pairs and
    the edit distance. Backtrace prefers match, then substitution, then
    deletion (``a`` token against a gap), then insertion.
    """
    d = edit_table(a, b)
    i, j = len(a), len(b)
    pairs: list[Pair] = []
    while i or j:
        if i and j and a[i - 1] == b[j - 1] and d[i][j] == d[i - 1][j - 1]:
            pairs.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif i and j and d[i][j] == d[i - 1][j - 1] + 1:
            pairs.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            pairs.append((a[i - 1], EPS))
            i -= 1
        else:
            pairs.append((EPS, b[j - 1]))
            j -= 1
    pairs.reverse()
    return pairs, d[len(a)][len(b)]


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_counts(ref: Sequence[Token], hyp: Sequence[Token]) -> EditCounts:
    """S/D/I counts read off the preferred alignment of ``ref`` to ``hyp``."""
    pairs, _ = align_pair(ref, hyp)
    s = sum(1 for r, h in pairs if r is not None and h is not None and r != h)
    dl = sum(1 for r, h in pairs if h is None)
    ins = sum(1 for r, h in pairs if r is None)
    return EditCounts(s, dl, ins)


# ---------------------------------------------------------------------------
# word transition network


@dataclass
class WordTransitionNetwork:
    """Ordered slots; slot ``k`` holds one ``(token | None, system_id)``
    entry per hypothesis folded in so far."""

    systems: list[str] = field(default_factory=list)
    slots: list[list[tuple[Token | None, str]]] = field(default_factory=list)

    def column(self, index: int) -> list[Token | None]:
        """Tokens contributed by the ``index``-th hypothesis, gaps included."""
        return [slot[index][0] for slot in self.slots]

    def __len__(self) -> int:
        return len(self.slots)


def _priority_key(priority: Sequence[str]) -> Callable[[str], tuple[int, str]]:
    rank = {s: i for i, s in enumerate(priority)}
    return lambda system: (rank.get(system, len(rank)), system)


def _pick(counts: Counter, supporters: dict, key: Callable[[str], tuple[int, str]]) -> Token | None:
    best = max(counts.values())
    tied = [tok for tok, c in counts.items() if c == best]
    if len(tied) == 1:
        return tied[0]
    # Highest-priority supporting system first, then the smallest token
    # (a gap sorts before every real token).
    return min(tied, key=lambda tok: (min(key(s) for s in supporters[tok]), tok or ""))


def _slot_winner(slot: Sequence[tuple[Token | None, str]], key, *, skip_gaps: bool) -> Token | None:
    counts: Counter = Counter()
    supporters: dict[Token | None, list[str]] = {}
    for tok, system in slot:
        if skip_gaps and tok is EPS:
            continue
        counts[tok] += 1
        supporters.setdefault(tok, []).append(system)
    if not counts:
        return EPS
    return _pick(counts, supporters, key)


def skeleton(wtn: WordTransitionNetwork, priority: Sequence[str] | None = None) -> list[Token]:
    """Plurality non-gap token of every slot."""
    key = _priority_key(priority if priority is not None else wtn.systems)
    return [_slot_winner(slot, key, skip_gaps=True) for slot in wtn.slots]


def build_wtn(hypotheses: Sequence[Hypothesis], priority: Sequence[str] | None = None) -> WordTransitionNetwork:
    """Fold hypotheses into a WTN, first to last.

    The first hypothesis seeds one slot per token. Each later hypothesis is
    aligned against the current skeleton; matched and substituted tokens
    join their slot, skeleton tokens with no partner get a gap, and
    inserted tokens open a new slot where earlier hypotheses hold gaps.
    """
    if not hypotheses:
        raise ValueError("need at least one hypothesis")
    priority = list(priority) if priority is not None else [h.system_id for h in hypotheses]
    first = hypotheses[0]
    wtn = WordTransitionNetwork([first.system_id], [[(tok, first.system_id)] for tok in first.tokens])
    for hyp in hypotheses[1:]:
        skel = skeleton(wtn, priority)
        pairs, _ = align_pair(skel, list(hyp.tokens))
        folded: list[list[tuple[Token | None, str]]] = []
        slot_iter = iter(wtn.slots)
        filler = [(EPS, s) for s in wtn.systems]
        for skel_tok, hyp_tok in pairs:
            if skel_tok is EPS:
                folded.append(filler + [(hyp_tok, hyp.system_id)])
            else:
                folded.append(next(slot_iter) + [(hyp_tok, hyp.system_id)])
        wtn = WordTransitionNetwork(wtn.systems + [hyp.system_id], folded)
    return wtn


def rover_vote(wtn: WordTransitionNetwork, priority: Sequence[str] | None = None) -> list[Token]:
    """Most frequent entry per slot, a gap included; gaps emit nothing.

    Ties go to the entry backed by the highest-priority system, then to
    the lexicographically smallest token.
    """
    key = _priority_key(priority if priority is not None else wtn.systems)
    out = []
    for slot in wtn.slots:
        tok = _slot_winner(slot, key, skip_gaps=False)
        if tok is not EPS:
            out.append(tok)
    return out


# ---------------------------------------------------------------------------
# constrained correction


@dataclass
class CorrectionOutcome:
    tokens: list[Token]
    candidate: list[Token] | None
    accepted: bool
    violation: bool = False
    failed: bool = False


def llm_correct(consensus: Sequence[Token], hypotheses: Sequence[Hypothesis],
                corrector: Callable[[list[Token], Sequence[Hypothesis]], Sequence[Token]]) -> CorrectionOutcome:
    """Ask ``corrector`` for a revised transcription of equal token length.

    A response of a different length is rejected and the consensus kept.
    If the corrector raises, the consensus is kept and the outcome flagged.
    ``candidate`` is the corrector's raw answer (None when it failed).
    """
    consensus = list(consensus)
    try:
        response = list(corrector(consensus, hypotheses))
    except Exception as exc:  # noqa: BLE001 - any backend failure falls back
        log.debug("corrector failed: %s", exc)
        return CorrectionOutcome(consensus, None, accepted=False, failed=True)
    if len(response) != len(consensus):
        return CorrectionOutcome(consensus, response, accepted=False, violation=True)
    return CorrectionOutcome(response, response, accepted=True)


def compute_confidence(final: Sequence[Token], candidates: Iterable[Sequence[Token]]) -> float:
    """Mean normalised agreement ``1 - d / max(|final|, |candidate|)``."""
    final = list(final)
    candidates = [list(c) for c in candidates]
    if not final:
        return 0.0
    if not candidates:
        raise ValueError("need at least one candidate")
    terms = [1.0 - edit_distance(final, c) / max(len(final), len(c)) for c in candidates]
    return min(1.0, max(0.0, sum(terms) / len(terms)))


def partition_by_confidence(records: Iterable[UtteranceRecord], strong_lo: float = STRONG_LO,
                            weak_lo: float = WEAK_LO) -> list[UtteranceRecord]:
    out = []
    for record in records:
        if record.confidence is None:
            raise ValueError(f"{record.utterance_id}: confidence is absent")
        out.append(record.with_(label_tier=tier_for(record.confidence, strong_lo, weak_lo)))
    return out


@dataclass
class FusionResult:
    final: list[Token]
    consensus: list[Token]
    confidence: float
    correction: CorrectionOutcome


def fuse(hypotheses: Sequence[Hypothesis], corrector, priority: Sequence[str] | None = None) -> FusionResult:
    """Vote, correct, and score one utterance's hypotheses.

    Confidence is computed over the recogniser hypotheses plus the
    corrector's candidate, whether or not that candidate was accepted.
    """
    wtn = build_wtn(hypotheses, priority)
    consensus = rover_vote(wtn, priority)
    outcome = llm_correct(consensus, hypotheses, corrector)
    candidates = [list(h.tokens) for h in hypotheses]
    if outcome.candidate is not None:
        candidates.append(outcome.candidate)
    confidence = compute_confidence(outcome.tokens, candidates)
    return FusionResult(outcome.tokens, consensus, confidence, outcome)
