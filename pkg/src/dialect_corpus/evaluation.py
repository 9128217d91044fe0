"""Character error rate scoring and split-level reports."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .fusion import edit_counts, tokenize
from .records import STRONG_LO, WEAK_LO, read_manifest

UNDEFINED = "—"


def normalize_text(s: str) -> str:
    """NFKC-fold, lower-case, and drop punctuation and whitespace."""
    s = unicodedata.normalize("NFKC", s).lower()
    return "".join(ch for ch in s if not ch.isspace() and not unicodedata.category(ch).startswith("P"))


@dataclass(frozen=True)
class CerResult:
    cer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def cer(reference: str, hypothesis: str) -> CerResult:
    ref = tokenize(normalize_text(reference))
    if not ref:
        raise ValueError("reference is empty after normalisation")
    hyp = tokenize(normalize_text(hypothesis))
    counts = edit_counts(ref, hyp)
    return CerResult(counts.errors / len(ref), counts.substitutions, counts.deletions,
                     counts.insertions, len(ref))


@dataclass(frozen=True)
class SplitRow:
    split: str
    utterances: int
    ref_chars: int
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def cer_percent(self) -> float | None:
        if self.ref_chars == 0:
            return None
        return 100.0 * self.errors / self.ref_chars


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[SplitRow, ...]  # declared splits, then Total
    weighted_average: float | None

    @property
    def total(self) -> SplitRow:
        return self.rows[-1]

    def row(self, split: str) -> SplitRow:
        for r in self.rows:
            if r.split == split:
                return r
        raise KeyError(split)

    def to_json(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            d["cer_percent"] = r.cer_percent
            rows.append(d)
        return {"rows": rows, "weighted_average_cer_percent": self.weighted_average}

    def table(self) -> str:
        header = ("Split", "Utts", "RefChars", "Sub", "Del", "Ins", "CER%")
        body = []
        for r in self.rows:
            c = UNDEFINED if r.cer_percent is None else f"{r.cer_percent:.2f}"
            body.append((r.split, str(r.utterances), str(r.ref_chars), str(r.substitutions),
                         str(r.deletions), str(r.insertions), c))
        avg = UNDEFINED if self.weighted_average is None else f"{self.weighted_average:.2f}"
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]

        def fmt(row: Sequence[str]) -> str:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            return "  ".join(cells)

        rule = "-" * len(fmt(header))
        lines = [fmt(header), rule, *(fmt(b) for b in body[:-1]), rule, fmt(body[-1]),
                 f"Weighted average CER%: {avg}"]
        return "\n".join(lines)


def report(pairs: Iterable[tuple[str, str, str]], splits: Sequence[str] = ("Easy", "Hard")) -> EvalReport:
    """Aggregate ``(split, reference, hypothesis)`` triples.

    Rows follow ``splits`` order with a Total row last. The weighted average
    weights each split's CER by its reference length, which reduces to
    total errors over total reference tokens.
    """
    splits = list(splits)
    if len(set(splits)) != len(splits) or "Total" in splits:
        raise ValueError("split names must be unique and not 'Total'")
    acc = {s: [0, 0, 0, 0, 0] for s in splits}
    for split, ref, hyp in pairs:
        if split not in acc:
            raise ValueError(f"unknown split tag {split!r}")
        r = cer(ref, hyp)
        a = acc[split]
        a[0] += 1
        a[1] += r.ref_len
        a[2] += r.substitutions
        a[3] += r.deletions
        a[4] += r.insertions
    rows = [SplitRow(s, *acc[s]) for s in splits]
    total = SplitRow("Total", *(sum(col) for col in zip(*(acc[s] for s in splits))))
    return EvalReport(tuple(rows) + (total,), total.cer_percent)


def load_split_map(path: str | Path) -> tuple[list[str], dict[str, str]]:
    """Read a split map: ``{"splits": [...], "utterances": {id: split}}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "splits" not in data or "utterances" not in data:
        raise ValueError(f"{path}: expected keys 'splits' and 'utterances'")
    splits = list(data["splits"])
    assignments = dict(data["utterances"])
    for uid, split in assignments.items():
        if split not in splits:
            raise ValueError(f"{path}: utterance {uid!r} has unknown split tag {split!r}")
    return splits, assignments


def evaluate_manifests(ref_path: str | Path, hyp_path: str | Path, splits_path: str | Path,
                       *, text_field: str = "transcription", strong_lo: float = STRONG_LO,
                       weak_lo: float = WEAK_LO) -> tuple[EvalReport, list[str]]:
    """Join reference and hypothesis manifests on utterance id and score them.

    A reference without a hypothesis is scored against an empty string.
    Returns the report and the ids that had no hypothesis.
    """
    splits, assignments = load_split_map(splits_path)
    refs = read_manifest(ref_path, strong_lo=strong_lo, weak_lo=weak_lo)
    hyps = {r.utterance_id: r for r in read_manifest(hyp_path, strong_lo=strong_lo, weak_lo=weak_lo)}
    missing = []
    pairs = []
    for ref in refs:
        if ref.utterance_id not in assignments:
            raise ValueError(f"reference {ref.utterance_id!r} has no split tag")
        hyp = hyps.get(ref.utterance_id)
        if hyp is None:
            missing.append(ref.utterance_id)
        pairs.append((assignments[ref.utterance_id], getattr(ref, text_field) or "",
                      (getattr(hyp, text_field) or "") if hyp else ""))
    return report(pairs, splits), missing


def report_from_json(data: Mapping) -> EvalReport:
    rows = tuple(SplitRow(r["split"], r["utterances"], r["ref_chars"], r["substitutions"],
                          r["deletions"], r["insertions"]) for r in data["rows"])
    return EvalReport(rows, data["weighted_average_cer_percent"])
