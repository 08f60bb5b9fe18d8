"""Pair similarity scores, the sparse dissimilarity store, and
threshold-constrained complete-linkage clustering.

Dissimilarity is 1 - probSimilar for scored candidate pairs and 1 (the
maximum) for everything else, so only pairs connected through stored
entries can ever merge.  Two clusters merge only while every cross-pair
dissimilarity stays at or below the threshold, nearest pair first, and
clustering stops when no mergeable pair remains.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import ResponseRecord, ValidationError

DEFAULT_MERGE_THRESHOLD = 0.25


@dataclass(frozen=True)
class SimilarityScore:
    pair: tuple[int, int]
    prob_similar: float


@dataclass(frozen=True)
class DistanceMatrix:
    n: int
    entries: dict[tuple[int, int], float]

    def distance(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        key = (i, j) if i < j else (j, i)
        return self.entries.get(key, 1.0)


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    member_ids: tuple[int, ...]
    centroid_id: int


def _check_pair(a: int, b: int, where: str) -> tuple[int, int]:
    if a >= b:
        raise ValidationError(f"{where}: pair ({a}, {b}) is not canonical (a < b)")
    return (a, b)


def jaccard_scores(
    pairs: Iterable[tuple[int, int]], records: Sequence[ResponseRecord]
) -> list[SimilarityScore]:
    """Built-in fallback scorer: token-set Jaccard similarity of the two
    normalized texts.  Lets the pipeline run end-to-end without an
    external similarity model."""
    by_id = {r.response_id: r for r in records}
    scores = []
    for a, b in pairs:
        _check_pair(a, b, "jaccard")
        ta = set(by_id[a].normalized_text.split())
        tb = set(by_id[b].normalized_text.split())
        union = ta | tb
        scores.append(SimilarityScore((a, b), len(ta & tb) / len(union) if union else 0.0))
    return scores


def load_scores(
    pairs: Iterable[tuple[int, int]],
    rows: Iterable[tuple[int, int, float]],
    source: str = "scores",
) -> list[SimilarityScore]:
    """Validate externally produced (idA, idB, probSimilar) rows against
    the candidate set.  Unscored candidate pairs are simply absent and are
    treated as distance 1 downstream."""
    candidate = set(pairs)
    seen: set[tuple[int, int]] = set()
    scores = []
    for row_no, (a, b, prob) in enumerate(rows, start=1):
        where = f"{source}: row {row_no}"
        key = _check_pair(a, b, where)
        if key not in candidate:
            raise ValidationError(f"{where}: pair ({a}, {b}) is not a candidate pair")
        if key in seen:
            raise ValidationError(f"{where}: duplicate pair ({a}, {b})")
        if not (0.0 <= prob <= 1.0):
            raise ValidationError(f"{where}: probSimilar {prob} outside [0, 1]")
        seen.add(key)
        scores.append(SimilarityScore(key, float(prob)))
    return scores


def read_scores_tsv(path) -> list[tuple[int, int, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{path}: line {line_no}: expected idA, idB, probSimilar")
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise ValidationError(f"{path}: line {line_no}: malformed row") from exc
    return rows


def write_scores_tsv(scores: Sequence[SimilarityScore], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(f"{s.pair[0]}\t{s.pair[1]}\t{s.prob_similar!r}\n")


def build_distance_matrix(n: int, scores: Sequence[SimilarityScore]) -> DistanceMatrix:
    """D = 1 - probSimilar for scored pairs; implicit 1 for everything
    else.  Only scored pairs are stored."""
    entries: dict[tuple[int, int], float] = {}
    for s in scores:
        a, b = s.pair
        _check_pair(a, b, "distance matrix")
        if b >= n:
            raise ValidationError(f"distance matrix: id {b} out of range for n={n}")
        if (a, b) in entries:
            raise ValidationError(f"distance matrix: duplicate pair ({a}, {b})")
        entries[(a, b)] = 1.0 - s.prob_similar
    return DistanceMatrix(n, entries)


def _pick_centroid(members: Sequence[int], by_id: dict[int, ResponseRecord] | None) -> int:
    if by_id is None:
        return min(members)
    # Most frequent member; ties go to the lexicographically smallest text.
    return min(members, key=lambda m: (-by_id[m].count, by_id[m].normalized_text))


def _finalize(
    groups: list[list[int]], records: Sequence[ResponseRecord] | None
) -> list[Cluster]:
    by_id = {r.response_id: r for r in records} if records is not None else None
    ordered = sorted(groups, key=lambda g: (-len(g), min(g)))
    return [
        Cluster(i, tuple(sorted(g)), _pick_centroid(g, by_id))
        for i, g in enumerate(ordered)
    ]


def agglomerate(
    matrix: DistanceMatrix,
    threshold: float = DEFAULT_MERGE_THRESHOLD,
    records: Sequence[ResponseRecord] | None = None,
) -> list[Cluster]:
    """Complete-linkage agglomerative clustering over the sparse matrix.

    Starting from singletons, repeatedly merge the cluster pair with the
    smallest complete-linkage distance (max over cross pairs, missing
    entries counting as 1) among pairs at or below the threshold.  Ties
    break on the smallest (min member id, min member id) key.  Without
    records, centroids fall back to the smallest member id.
    """
    if not (0.0 < threshold < 1.0):
        raise ValidationError("threshold must be in (0, 1)")
    # Clusters are keyed by their minimum member id.  ``link`` holds the
    # complete-linkage distance for cluster pairs where every cross pair
    # has a stored entry; all other cluster pairs sit at the implicit
    # maximum of 1 and can never merge.
    members: dict[int, list[int]] = {i: [i] for i in range(matrix.n)}
    link: dict[tuple[int, int], float] = dict(matrix.entries)
    neighbors: dict[int, set[int]] = {i: set() for i in range(matrix.n)}
    for a, b in link:
        neighbors[a].add(b)
        neighbors[b].add(a)

    while True:
        best: tuple[float, int, int] | None = None
        for (a, b), d in link.items():
            if d <= threshold and (best is None or (d, a, b) < best):
                best = (d, a, b)
        if best is None:
            break
        _, keep, gone = best

        merged_neighbors = (neighbors[keep] | neighbors[gone]) - {keep, gone}
        for other in merged_neighbors:
            dk = link.pop((keep, other) if keep < other else (other, keep), None)
            dg = link.pop((gone, other) if gone < other else (other, gone), None)
            neighbors[other].discard(keep)
            neighbors[other].discard(gone)
            if dk is not None and dg is not None:
                # Both halves fully scored against ``other``: the merged
                # linkage is the max.  Otherwise some cross pair is
                # missing, the linkage is 1, and the entry is dropped.
                link[(keep, other) if keep < other else (other, keep)] = max(dk, dg)
                neighbors[other].add(keep)
        link.pop((keep, gone), None)
        neighbors[keep] = {o for o in merged_neighbors if (min(keep, o), max(keep, o)) in link}
        del neighbors[gone]
        members[keep].extend(members.pop(gone))

    return _finalize(list(members.values()), records)


@dataclass(frozen=True)
class ClusterStats:
    num_clusters: int
    singleton_fraction: float
    largest_cluster_size: int
    # occurrence counts per cluster, sorted descending (ties by cluster id)
    occurrence_counts: tuple[int, ...]
    total_occurrences: int

    def coverage_of_top_k(self, k: int) -> float:
        k = min(k, self.num_clusters)
        if self.total_occurrences == 0:
            return 0.0
        return sum(self.occurrence_counts[:k]) / self.total_occurrences


def cluster_occurrences(
    cluster: Cluster, by_id: dict[int, ResponseRecord]
) -> int:
    return sum(by_id[m].count for m in cluster.member_ids)


def cluster_stats(
    clusters: Sequence[Cluster],
    records: Sequence[ResponseRecord],
    total_occurrences: int | None = None,
) -> ClusterStats:
    """Summary statistics; coverage divides by ``total_occurrences`` (the
    corpus doctor-turn count) when given, falling back to the frequent
    set's own total."""
    by_id = {r.response_id: r for r in records}
    counts = sorted(
        (cluster_occurrences(c, by_id) for c in clusters), reverse=True
    )
    total = total_occurrences if total_occurrences is not None else sum(r.count for r in records)
    singles = sum(1 for c in clusters if len(c.member_ids) == 1)
    return ClusterStats(
        num_clusters=len(clusters),
        singleton_fraction=singles / len(clusters) if clusters else 0.0,
        largest_cluster_size=max((len(c.member_ids) for c in clusters), default=0),
        occurrence_counts=tuple(counts),
        total_occurrences=total,
    )


def pairwise_f1(labels_a: dict[int, int], labels_b: dict[int, int]) -> float:
    """F1 over co-membership pairs of two partitions of the same ids.
    Computed from contingency counts, so no quadratic blowup."""
    common = sorted(set(labels_a) & set(labels_b))
    if not common:
        return 0.0

    def n_pairs(counter: Counter) -> int:
        return sum(c * (c - 1) // 2 for c in counter.values())

    both = Counter((labels_a[i], labels_b[i]) for i in common)
    pa = n_pairs(Counter(labels_a[i] for i in common))
    pb = n_pairs(Counter(labels_b[i] for i in common))
    tp = n_pairs(both)
    if pa + pb == 0:
        return 1.0
    return 2.0 * tp / (pa + pb)


def write_clusters_json(clusters: Sequence[Cluster], path) -> None:
    payload = [
        {
            "clusterId": c.cluster_id,
            "centroidId": c.centroid_id,
            "members": list(c.member_ids),
        }
        for c in clusters
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_clusters_json(path) -> list[Cluster]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        Cluster(int(c["clusterId"]), tuple(int(m) for m in c["members"]), int(c["centroidId"]))
        for c in payload
    ]
