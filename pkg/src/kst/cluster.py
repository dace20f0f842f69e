"""Agglomerative Ward clustering and k-means, tuned for reproducibility.

Both algorithms operate on standardized metric tables and break every tie
deterministically, so a given table and seed always produce the same model.

Ward merges are computed with the Lance-Williams distance update; merge
heights are on the distance scale (the square root of twice the increase in
within-cluster sum of squares), so heights between singletons equal their
Euclidean distance. Each merge also records the plain distance between the
merged clusters' centroids, for dendrograms drawn on that scale instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import MetricTable
from .errors import KstError
from .rng import DEFAULT_SEED, substream


def _pairwise_sq(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return (diff * diff).sum(axis=-1)


@dataclass(frozen=True)
class Merge:
    """One merge step: child node ids, height, merged leaf count."""

    left: int
    right: int
    height: float
    size: int
    centroid_distance: float

    def to_dict(self) -> dict:
        return {
            "left": self.left,
            "right": self.right,
            "height": self.height,
            "size": self.size,
            "centroid_distance": self.centroid_distance,
        }


@dataclass(frozen=True)
class Dendrogram:
    """Full merge history. Leaves are nodes 0..n-1 (table row order); merge
    t creates node n+t."""

    leaves: tuple[str, ...]
    merges: tuple[Merge, ...]

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(self.leaves))
        object.__setattr__(self, "merges", tuple(self.merges))
        n = len(self.leaves)
        if len(self.merges) != n - 1:
            raise KstError(f"{n} leaves require {n - 1} merges, got {len(self.merges)}")
        seen_children = set()
        for t, m in enumerate(self.merges):
            node = n + t
            for child in (m.left, m.right):
                if not 0 <= child < node:
                    raise KstError(f"merge {t} references invalid node {child}")
                if child in seen_children:
                    raise KstError(f"node {child} appears as a child twice")
                seen_children.add(child)
            if t and m.height < self.merges[t - 1].height - 1e-9:
                raise KstError("merge heights must be non-decreasing")
        if self.merges and self.merges[-1].size != n:
            raise KstError("final merge must contain every leaf")

    def to_dict(self) -> dict:
        return {"leaves": list(self.leaves), "merges": [m.to_dict() for m in self.merges]}


@dataclass(frozen=True)
class Partition:
    """Assignment of row labels to cluster ids 0..k-1 (every id non-empty)."""

    labels: dict[str, int]
    k: int

    def __post_init__(self):
        object.__setattr__(self, "labels", dict(self.labels))
        if self.k < 1:
            raise KstError(f"k must be >= 1, got {self.k}")
        ids = set(self.labels.values())
        if ids != set(range(self.k)):
            raise KstError(f"cluster ids must be exactly 0..{self.k - 1}, got {sorted(ids)}")

    def members(self, cluster: int) -> list[str]:
        return [lab for lab, c in self.labels.items() if c == cluster]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for c in self.labels.values():
            counts[c] += 1
        return counts

    def to_dict(self) -> dict:
        return {"k": self.k, "labels": dict(self.labels), "sizes": self.sizes()}


def _ward_merge_steps(x: np.ndarray) -> list[tuple[int, int, float, int, float]]:
    """Lance-Williams Ward merges on raw coordinates.

    Returns (left, right, height, size, centroid_distance) per step, with
    node ids as in :class:`Dendrogram`. Ties on merge distance are broken by
    the smallest (min id, max id) pair.
    """
    n = x.shape[0]
    active = list(range(n))            # positions into the arrays below
    node_id = list(range(n))
    size = np.ones(n, dtype=float)
    centroid = np.array(x, dtype=float)
    d2 = _pairwise_sq(x)               # squared Ward distances between active clusters
    np.fill_diagonal(d2, np.inf)

    steps = []
    for t in range(n - 1):
        sub = d2[np.ix_(active, active)]
        dmin = float(sub.min())
        best = None
        for ai, bi in np.argwhere(sub == dmin):
            if ai >= bi:
                continue
            ida, idb = node_id[active[ai]], node_id[active[bi]]
            tie = (min(ida, idb), max(ida, idb))
            if best is None or tie < best[0]:
                best = (tie, active[ai], active[bi])
        _, pi, pj = best
        ni, nj = size[pi], size[pj]
        cdist = float(np.sqrt(((centroid[pi] - centroid[pj]) ** 2).sum()))
        left, right = sorted((node_id[pi], node_id[pj]))
        steps.append((left, right, float(np.sqrt(dmin)), int(ni + nj), cdist))

        # Lance-Williams update against every other active cluster
        others = [p for p in active if p != pi and p != pj]
        if others:
            nk = size[others]
            new = ((ni + nk) * d2[pi, others] + (nj + nk) * d2[pj, others] - nk * dmin) / (
                ni + nj + nk
            )
            d2[pi, others] = new
            d2[others, pi] = new
        centroid[pi] = (ni * centroid[pi] + nj * centroid[pj]) / (ni + nj)
        size[pi] = ni + nj
        node_id[pi] = n + t
        active.remove(pj)
    return steps


def agglomerative_ward(m: MetricTable) -> Dendrogram:
    """Bottom-up Ward clustering of the table rows."""
    if len(m.rows) < 2:
        raise KstError("agglomerative clustering needs at least 2 rows")
    steps = _ward_merge_steps(m.data)
    return Dendrogram(m.rows, tuple(Merge(*s) for s in steps))


def _components_at_k(
    steps: Sequence[tuple[int, int]], n: int, k: int
) -> list[list[int]]:
    """Leaf index sets after undoing the last k-1 merges."""
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for t in range(n - k):
        left, right = steps[t][0], steps[t][1]
        merged = members.pop(left) + members.pop(right)
        members[n + t] = merged
    return [sorted(v) for v in members.values()]


def cut_dendrogram(d: Dendrogram, k: int) -> Partition:
    """Partition into k clusters by undoing the last k-1 merges.

    Cluster ids are assigned by descending size; equal sizes are ordered by
    the smallest contained leaf label. Cuts at successive k nest.
    """
    n = len(d.leaves)
    if not 1 <= k <= n:
        raise KstError(f"k must be between 1 and {n}, got {k}")
    comps = _components_at_k([(m.left, m.right) for m in d.merges], n, k)
    ordered = sorted(comps, key=lambda c: (-len(c), min(d.leaves[i] for i in c)))
    labels = {}
    for cid, comp in enumerate(ordered):
        for i in comp:
            labels[d.leaves[i]] = cid
    return Partition({lab: labels[lab] for lab in d.leaves}, k)


@dataclass(frozen=True, eq=False)
class KMeansModel:
    """Best-of-n_init k-means result. ``inertia_history`` tracks the winning
    replicate's inertia after each Lloyd iteration."""

    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float
    seed: int
    iterations: int
    inertia_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "assignments", dict(self.assignments))
        centroids = np.array(self.centroids, dtype=float)
        centroids.setflags(write=False)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "inertia_history", tuple(self.inertia_history))
        ids = set(self.assignments.values())
        if ids != set(range(self.k)):
            raise KstError("every cluster id in 0..k-1 must have at least one member")

    def partition(self) -> Partition:
        return Partition(self.assignments, self.k)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignments": dict(self.assignments),
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "seed": self.seed,
            "iterations": self.iterations,
            "inertia_history": list(self.inertia_history),
        }


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, the rest weighted by squared
    distance to the nearest chosen center."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=float)
    idx = int(rng.integers(n))
    centers[0] = x[idx]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))  # all remaining mass zero: uniform fallback
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    x: np.ndarray, centers: np.ndarray, max_iter: int
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n, k = x.shape[0], centers.shape[0]
    centers = np.array(centers, dtype=float)
    prev = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        assign = d2.argmin(axis=1)  # ties go to the lowest cluster id
        repaired = False
        counts = np.bincount(assign, minlength=k)
        for cid in range(k):
            if counts[cid]:
                continue
            # Empty cluster: the point farthest from its assigned centroid
            # becomes this cluster's new singleton centroid. Only points in
            # clusters with >= 2 members are candidates, so a repair never
            # empties another cluster (such a point always exists: n >= k).
            repaired = True
            dist_own = d2[np.arange(n), assign]
            dist_own[counts[assign] < 2] = -np.inf
            far = int(dist_own.argmax())
            counts[assign[far]] -= 1
            counts[cid] += 1
            assign[far] = cid
            centers[cid] = x[far]
            d2[far] = ((x[far] - centers) ** 2).sum(axis=-1)
        if prev is not None and not repaired and np.array_equal(assign, prev):
            break
        for cid in range(k):
            centers[cid] = x[assign == cid].mean(axis=0)
        inertia = float(((x - centers[assign]) ** 2).sum())
        history.append(inertia)
        prev = assign
    return prev, centers, history[-1], history


def _kmeans_arrays(
    x: np.ndarray, k: int, seed: int, n_init: int, max_iter: int
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Best of n_init replicates; replicate r draws from sub-stream (seed, r)."""
    best = None
    for r in range(n_init):
        rng = substream(seed, r)
        init = _kmeanspp_init(x, k, rng)
        assign, centers, inertia, history = _lloyd(x, init, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia, history)
    return best


def kmeans_fit(
    m: MetricTable,
    k: int,
    seed: int = DEFAULT_SEED,
    n_init: int = 10,
    max_iter: int = 300,
) -> KMeansModel:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` replicates.

    Fully determined by (table, k, seed, n_init, max_iter). Ties on inertia
    keep the earliest replicate. Cluster ids are relabelled by descending
    cluster size (equal sizes ordered by smallest member label) so ids are
    comparable with :func:`cut_dendrogram` output.
    """
    n = len(m.rows)
    if not 1 <= k <= n:
        raise KstError(f"k must be between 1 and {n}, got {k}")
    if n_init < 1 or max_iter < 1:
        raise KstError("n_init and max_iter must be >= 1")
    assign, centers, inertia, history = _kmeans_arrays(m.data, k, seed, n_init, max_iter)

    by_cluster: dict[int, list[str]] = {c: [] for c in range(k)}
    for label, c in zip(m.rows, assign):
        by_cluster[int(c)].append(label)
    order = sorted(range(k), key=lambda c: (-len(by_cluster[c]), min(by_cluster[c])))
    relabel = {old: new for new, old in enumerate(order)}
    assignments = {label: relabel[int(c)] for label, c in zip(m.rows, assign)}
    centroids = centers[order]
    return KMeansModel(
        k=k,
        assignments=assignments,
        centroids=centroids,
        inertia=inertia,
        seed=seed,
        iterations=len(history),
        inertia_history=tuple(history),
    )
