"""Independent reference implementations used only by the tests.

None of these share code with the package: edit distance comes from
breadth-first search over the single-edit graph, alignments from plain
enumeration, clustering from a from-scratch greedy loop.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path


def all_sequences(alphabet: str, max_len: int) -> list[tuple[str, ...]]:
    out: list[tuple[str, ...]] = [()]
    for n in range(1, max_len + 1):
        out.extend(itertools.product(alphabet, repeat=n))
    return out


def edit_graph_distances(alphabet: str, max_len: int) -> tuple[list[tuple[str, ...]], np.ndarray]:
    """All-pairs edit distances as shortest paths in the graph whose edges
    are single insertions, deletions and substitutions.

    Every intermediate sequence on a shortest path between two sequences of
    length <= L has length <= L, so the bounded graph gives exact distances.
    """
    seqs = all_sequences(alphabet, max_len)
    index = {s: i for i, s in enumerate(seqs)}
    rows, cols = [], []
    for s, i in index.items():
        for k in range(len(s)):
            rows.append(i)
            cols.append(index[s[:k] + s[k + 1:]])  # deletion (reverse edge is an insertion)
            for c in alphabet:
                if c != s[k]:
                    rows.append(i)
                    cols.append(index[s[:k] + (c,) + s[k + 1:]])
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(seqs), len(seqs)))
    dist = shortest_path(graph, method="D", directed=False, unweighted=True)
    return seqs, dist.astype(np.int64)


def enumerate_alignments(a: Sequence[str], b: Sequence[str]) -> list[list[tuple[str | None, str | None]]]:
    """Every alignment of a and b as a list of column pairs (None = gap)."""
    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> tuple[tuple[tuple[str | None, str | None], ...], ...]:
        if i == len(a) and j == len(b):
            return ((),)
        out = []
        if i < len(a) and j < len(b):
            out.extend(((a[i], b[j]),) + rest for rest in rec(i + 1, j + 1))
        if i < len(a):
            out.extend(((a[i], None),) + rest for rest in rec(i + 1, j))
        if j < len(b):
            out.extend(((None, b[j]),) + rest for rest in rec(i, j + 1))
        return tuple(out)

    return [list(al) for al in rec(0, 0)]


def alignment_cost(pairs: Sequence[tuple[str | None, str | None]]) -> int:
    return sum(x != y for x, y in pairs)


def greedy_average_linkage(ids: Sequence[str], vectors: np.ndarray, threshold: float) -> list[frozenset[str]]:
    """Naive agglomerative clustering: at each step evaluate the average
    pairwise cosine distance of every cluster pair from scratch, merge the
    closest pair (ties: smallest (min id, min id) of the two clusters), stop
    when the closest pair is farther than the threshold."""
    unit = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in vectors]
    d = {}
    for i, j in itertools.product(range(len(ids)), repeat=2):
        d[ids[i], ids[j]] = min(2.0, max(0.0, 1.0 - float(np.dot(unit[i], unit[j]))))
    clusters = [frozenset([u]) for u in ids]
    while len(clusters) > 1:
        best = None
        for x, y in itertools.combinations(clusters, 2):
            avg = sum(d[p, q] for p in x for q in y) / (len(x) * len(y))
            key = (avg, tuple(sorted((min(x), min(y)))))
            if best is None or key < best[0]:
                best = (key, x, y)
        (avg, _), x, y = best
        if avg > threshold:
            break
        clusters = [c for c in clusters if c not in (x, y)] + [x | y]
    return sorted(clusters, key=min)


def partition_of(labels: dict[str, int]) -> list[frozenset[str]]:
    groups: dict[int, set[str]] = {}
    for uid, label in labels.items():
        groups.setdefault(label, set()).add(uid)
    return sorted((frozenset(g) for g in groups.values()), key=min)
