"""Single-speaker filtering and per-recording speaker clustering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .records import UtteranceRecord


@dataclass(frozen=True)
class SpeakerEmbedding:
    utterance_id: str
    vector: tuple[float, ...]
    multi_speaker_flag: bool = False

    @classmethod
    def normalized(cls, utterance_id: str, vector: Sequence[float],
                   multi_speaker_flag: bool = False) -> SpeakerEmbedding:
        v = np.asarray(vector, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError(f"{utterance_id}: embedding has no direction")
        return cls(utterance_id, tuple((v / norm).tolist()), multi_speaker_flag)


def filter_single_speaker(records: Sequence[UtteranceRecord],
                          flags: Mapping[str, bool]) -> tuple[list[UtteranceRecord], int]:
    """Drop records flagged as containing several speakers.

    Returns the kept records (input order) and how many were removed.
    """
    kept = []
    for record in records:
        if record.utterance_id not in flags:
            raise KeyError(f"no multi-speaker flag for {record.utterance_id!r}")
        if not flags[record.utterance_id]:
            kept.append(record)
    return kept, len(records) - len(kept)


def cosine_distances(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / norms
    return np.clip(1.0 - unit @ unit.T, 0.0, 2.0)


def cluster_embeddings(embeddings: Sequence[SpeakerEmbedding], distance_threshold: float = 0.3) -> dict[str, int]:
    """Average-linkage agglomerative clustering under cosine distance.

    Merging continues while the closest pair of clusters is within
    ``distance_threshold``. Equal distances merge the pair whose smallest
    utterance ids sort first. Work happens in utterance-id order so the
    partition does not depend on input order; labels are then numbered by
    first appearance in the input.
    """
    if not embeddings:
        raise ValueError("need at least one embedding")
    dims = {len(e.vector) for e in embeddings}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    order = sorted(range(len(embeddings)), key=lambda i: embeddings[i].utterance_id)
    n = len(order)
    vectors = np.array([embeddings[i].vector for i in order], dtype=np.float64)
    dist = cosine_distances(vectors)

    # Row/column r stands for the cluster whose smallest member index is r;
    # sums holds total pairwise distance between clusters.
    sums = dist.copy()
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    parent = list(range(n))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while active.sum() > 1:
        live = active[:, None] & active[None, :] & upper
        avg = np.where(live, sums / np.outer(sizes, sizes), np.inf)
        flat = int(np.argmin(avg))  # row-major: first hit is the smallest (a, b)
        a, b = divmod(flat, n)
        if avg[a, b] > distance_threshold:
            break
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        sizes[a] += sizes[b]
        active[b] = False
        parent[b] = a

    def root(i: int) -> int:
        while parent[i] != i:
            i = parent[i]
        return i

    root_of = {embeddings[order[k]].utterance_id: root(k) for k in range(n)}
    labels: dict[int, int] = {}
    result = {}
    for emb in embeddings:
        r = root_of[emb.utterance_id]
        result[emb.utterance_id] = labels.setdefault(r, len(labels))
    return result


def assign_speaker_ids(records: Sequence[UtteranceRecord], clusters: Mapping[str, int]) -> list[UtteranceRecord]:
    out = []
    for record in records:
        if record.utterance_id not in clusters:
            raise KeyError(f"no cluster label for {record.utterance_id!r}")
        out.append(record.with_(speaker_id=f"spk{record.source_id}_{clusters[record.utterance_id]}"))
    return out
