"""Cluster-quality measures and data-driven selection of the cluster count.

Compactness (mean member-to-centroid distance) and separation (mean pairwise
centroid distance) describe a single partition. The silhouette coefficient,
Calinski-Harabasz, Dunn and gap statistic (plus optional Davies-Bouldin and
a spherical-Gaussian BIC) compare partitions across candidate k; consensus
across criteria picks the final k.

Degenerate geometry (zero within-cluster scatter, coincident centroids)
yields +/-infinity sentinel scores and a :class:`DegenerateResultWarning`
rather than an exception.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cluster import (
    Dendrogram,
    Partition,
    _components_at_k,
    _kmeans_arrays,
    _ward_merge_steps,
    agglomerative_ward,
    cut_dendrogram,
    kmeans_fit,
)
from .dataset import MetricTable
from .errors import KstError
from .rng import DEFAULT_SEED, subseed, substream

CLUSTER_METHODS = ("agglomerative", "kmeans")
MAXIMIZED_CRITERIA = ("silhouette", "calinski_harabasz", "dunn", "bic")
MINIMIZED_CRITERIA = ("davies_bouldin",)
DEFAULT_CRITERIA = ("silhouette", "calinski_harabasz", "dunn", "gap")
ALL_CRITERIA = DEFAULT_CRITERIA + ("davies_bouldin", "bic")


class DegenerateResultWarning(UserWarning):
    """A quality score hit a degenerate case and was reported as a sentinel."""


def _check_partition(m: MetricTable, p: Partition) -> np.ndarray:
    if set(p.labels) != set(m.rows):
        raise KstError("partition labels do not match table rows")
    return np.array([p.labels[lab] for lab in m.rows], dtype=int)


def _centroids(m: MetricTable, assign: np.ndarray, k: int) -> np.ndarray:
    return np.array([m.data[assign == c].mean(axis=0) for c in range(k)])


def compactness(m: MetricTable, p: Partition) -> list[float]:
    """Mean member-to-centroid distance per cluster, ordered by cluster id."""
    assign = _check_partition(m, p)
    cents = _centroids(m, assign, p.k)
    out = []
    for c in range(p.k):
        pts = m.data[assign == c]
        d = np.sqrt(((pts - cents[c]) ** 2).sum(axis=1))
        out.append(float(d.mean()))
    return out


def separation(m: MetricTable, p: Partition) -> float:
    """Mean Euclidean distance over unordered centroid pairs."""
    if p.k < 2:
        raise KstError("separation requires at least 2 clusters")
    assign = _check_partition(m, p)
    cents = _centroids(m, assign, p.k)
    dists = [
        float(np.sqrt(((cents[a] - cents[b]) ** 2).sum()))
        for a in range(p.k)
        for b in range(a + 1, p.k)
    ]
    return float(np.mean(dists))


def sum_of_squares(m: MetricTable, p: Partition) -> tuple[float, float]:
    """(between-group, within-group) sums of squares; they add to the total
    sum of squared distances from the global mean."""
    assign = _check_partition(m, p)
    cents = _centroids(m, assign, p.k)
    grand = m.data.mean(axis=0)
    counts = np.bincount(assign, minlength=p.k)
    bgss = float((counts * ((cents - grand) ** 2).sum(axis=1)).sum())
    wgss = float(((m.data - cents[assign]) ** 2).sum())
    return bgss, wgss


@dataclass(frozen=True)
class QualityReport:
    """Descriptive statistics of one partition."""

    compactness: tuple[float, ...]
    separation: float | None
    sizes: tuple[int, ...] = ()
    compactness_ratio: float | None = None  # cluster 1 / cluster 0, two-cluster case
    bgss: float = 0.0
    wgss: float = 0.0

    def to_dict(self) -> dict:
        return {
            "compactness": list(self.compactness),
            "separation": self.separation,
            "sizes": list(self.sizes),
            "compactness_ratio": self.compactness_ratio,
            "bgss": self.bgss,
            "wgss": self.wgss,
        }


def quality_report(m: MetricTable, p: Partition) -> QualityReport:
    comp = compactness(m, p)
    sep = separation(m, p) if p.k >= 2 else None
    bgss, wgss = sum_of_squares(m, p)
    ratio = None
    if p.k == 2 and comp[0] > 0:
        ratio = comp[1] / comp[0]
    return QualityReport(
        compactness=tuple(comp),
        separation=sep,
        sizes=tuple(p.sizes()),
        compactness_ratio=ratio,
        bgss=bgss,
        wgss=wgss,
    )


@dataclass(frozen=True)
class RatioReport:
    """Two-cluster compactness ratios per method plus cross-method spreads."""

    ratios: dict[str, float]       # method -> compactness[1] / compactness[0]
    separations: dict[str, float]  # method -> separation
    compactness_relative: float    # max(ratio) / min(ratio) across methods
    separation_relative: float     # max(separation) / min(separation)

    def to_dict(self) -> dict:
        return {
            "ratios": dict(self.ratios),
            "separations": dict(self.separations),
            "compactness_relative": self.compactness_relative,
            "separation_relative": self.separation_relative,
        }


def ratio_report(reports: Mapping[str, QualityReport]) -> RatioReport:
    """Compare two-cluster quality reports across clustering methods."""
    if not reports:
        raise KstError("ratio_report needs at least one quality report")
    ratios, seps = {}, {}
    for method, qr in reports.items():
        if len(qr.compactness) != 2:
            raise KstError(f"report for {method!r} does not have exactly 2 clusters")
        if qr.compactness[0] == 0:
            raise KstError(f"report for {method!r} has zero compactness for cluster 0")
        if qr.separation is None:
            raise KstError(f"report for {method!r} has no separation value")
        ratios[method] = qr.compactness[1] / qr.compactness[0]
        seps[method] = qr.separation
    if min(seps.values()) <= 0:
        raise KstError("separation must be positive to compare across methods")
    if min(ratios.values()) <= 0:
        raise KstError("compactness ratios must be positive to compare across methods")
    return RatioReport(
        ratios=ratios,
        separations=seps,
        compactness_relative=max(ratios.values()) / min(ratios.values()),
        separation_relative=max(seps.values()) / min(seps.values()),
    )


def silhouette(m: MetricTable, p: Partition) -> float:
    """Mean silhouette coefficient over all points.

    Classic point-to-point form: a(i) is the mean distance to the other
    members of i's cluster, b(i) the smallest mean distance to any other
    cluster. Singletons score 0.
    """
    n = len(m.rows)
    if not 2 <= p.k <= n - 1:
        raise KstError(f"silhouette requires 2 <= k <= {n - 1}, got k={p.k}")
    assign = _check_partition(m, p)
    diff = m.data[:, None, :] - m.data[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=-1))
    counts = np.bincount(assign, minlength=p.k)
    # sum of distances from each point to every cluster
    sums = np.zeros((n, p.k))
    for c in range(p.k):
        sums[:, c] = dmat[:, assign == c].sum(axis=1)

    scores = np.zeros(n)
    for i in range(n):
        c = assign[i]
        if counts[c] == 1:
            continue  # singleton: s(i) = 0
        a = sums[i, c] / (counts[c] - 1)
        b = min(sums[i, o] / counts[o] for o in range(p.k) if o != c)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def calinski_harabasz(m: MetricTable, p: Partition) -> float:
    """(BGSS / (k-1)) / (WGSS / (n-k)); +inf when the partition is exact."""
    n = len(m.rows)
    if not 2 <= p.k <= n - 1:
        raise KstError(f"calinski_harabasz requires 2 <= k <= {n - 1}, got k={p.k}")
    bgss, wgss = sum_of_squares(m, p)
    if wgss == 0:
        warnings.warn("WGSS is zero; Calinski-Harabasz reported as +inf",
                      DegenerateResultWarning, stacklevel=2)
        return math.inf
    return (bgss / (p.k - 1)) / (wgss / (n - p.k))


def dunn_index(m: MetricTable, p: Partition) -> float:
    """Smallest between-cluster point distance over largest cluster diameter."""
    if p.k < 2:
        raise KstError("dunn_index requires at least 2 clusters")
    assign = _check_partition(m, p)
    diff = m.data[:, None, :] - m.data[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=-1))
    same = assign[:, None] == assign[None, :]
    diameter = float((dmat * same).max())
    if diameter == 0:
        warnings.warn("all clusters have zero diameter; Dunn reported as +inf",
                      DegenerateResultWarning, stacklevel=2)
        return math.inf
    inter = dmat[~same]
    return float(inter.min()) / diameter


def davies_bouldin(m: MetricTable, p: Partition) -> float:
    """Average worst-case (S_i + S_j) / centroid distance; lower is better."""
    if p.k < 2:
        raise KstError("davies_bouldin requires at least 2 clusters")
    assign = _check_partition(m, p)
    cents = _centroids(m, assign, p.k)
    scatter = np.array(compactness(m, p))
    worst = []
    for i in range(p.k):
        best = -math.inf
        for j in range(p.k):
            if j == i:
                continue
            gap = float(np.sqrt(((cents[i] - cents[j]) ** 2).sum()))
            if gap == 0:
                warnings.warn("coincident centroids; Davies-Bouldin reported as +inf",
                              DegenerateResultWarning, stacklevel=2)
                return math.inf
            best = max(best, (scatter[i] + scatter[j]) / gap)
        worst.append(best)
    return float(np.mean(worst))


def bic_score(m: MetricTable, p: Partition) -> float:
    """Spherical-Gaussian BIC of a partition; higher is better. Experimental.

    Uses the identical-spherical-variance mixture formulation with pooled
    variance WGSS / (n - k) and (k - 1) + k*d + 1 free parameters. Zero
    pooled variance (k = n, or duplicate-only clusters) is reported as -inf
    so degenerate partitions are never preferred.
    """
    n, d = m.data.shape
    assign = _check_partition(m, p)
    _, wgss = sum_of_squares(m, p)
    if n <= p.k or wgss <= 0:
        warnings.warn("zero pooled variance; BIC reported as -inf",
                      DegenerateResultWarning, stacklevel=2)
        return -math.inf
    sigma2 = wgss / (n - p.k)
    counts = np.bincount(assign, minlength=p.k)
    ll = (
        float((counts * np.log(counts)).sum())
        - n * math.log(n)
        - (n * d / 2.0) * math.log(2.0 * math.pi * sigma2)
        - (n - p.k) / 2.0
    )
    params = (p.k - 1) + p.k * d + 1
    return ll - (params / 2.0) * math.log(n)


@dataclass(frozen=True)
class GapCurve:
    """Gap statistic per k with its simulation standard error."""

    ks: tuple[int, ...]
    gap: tuple[float, ...]
    s: tuple[float, ...]
    log_w: tuple[float, ...]
    log_w_ref: tuple[float, ...]
    dropped_features: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "k": list(self.ks),
            "gap": list(self.gap),
            "s": list(self.s),
            "log_w": list(self.log_w),
            "log_w_ref": list(self.log_w_ref),
            "dropped_features": list(self.dropped_features),
        }


def _labels_for(x: np.ndarray, ks: Sequence[int], method: str, seed: int,
                n_init: int, max_iter: int, *stream_key: int) -> dict[int, np.ndarray]:
    """Cluster ``x`` once per k with the requested method."""
    out = {}
    if method == "agglomerative":
        steps = _ward_merge_steps(x) if x.shape[0] > 1 else []
        pairs = [(s[0], s[1]) for s in steps]
        for k in ks:
            comps = _components_at_k(pairs, x.shape[0], k)
            labels = np.empty(x.shape[0], dtype=int)
            for cid, comp in enumerate(comps):
                labels[comp] = cid
            out[k] = labels
    else:
        for k in ks:
            assign, _, _, _ = _kmeans_arrays(
                x, k, subseed(seed, *stream_key, k), n_init, max_iter
            )
            out[k] = assign
    return out


def _pooled_within_dispersion(x: np.ndarray, labels: np.ndarray) -> float:
    # sum over clusters of (1 / 2n_r) * sum of pairwise squared distances,
    # which equals the within-cluster sum of squares around the mean
    total = 0.0
    for c in np.unique(labels):
        pts = x[labels == c]
        total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def _log_dispersion(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    w = _pooled_within_dispersion(x, labels)
    if w <= 0.0:
        raise KstError(
            f"within-cluster dispersion is zero at k={k}; duplicate rows "
            f"(or all-constant features) make the gap statistic undefined"
        )
    return math.log(w)


def gap_statistic(
    m: MetricTable,
    method: str = "kmeans",
    k_max: int = 8,
    b: int = 50,
    seed: int = DEFAULT_SEED,
    *,
    k_min: int = 1,
    n_init: int = 10,
    max_iter: int = 300,
) -> GapCurve:
    """Gap statistic over k_min..k_max with ``b`` uniform reference datasets.

    References are drawn uniformly over each feature's observed [min, max];
    features with a degenerate range are generated as constants (they add
    nothing to any distance) and reported in ``dropped_features``. The whole
    curve is a deterministic function of (table, method, parameters, seed).
    """
    if method not in CLUSTER_METHODS:
        raise KstError(f"unknown clustering method {method!r}")
    n = len(m.rows)
    if not 1 <= k_min <= k_max <= n - 1:
        raise KstError(
            f"need 1 <= k_min <= k_max <= {n - 1} (within-cluster dispersion "
            f"vanishes at k = n), got {k_min}..{k_max}"
        )
    if b < 2:
        raise KstError(f"gap statistic needs at least 2 reference datasets, got {b}")
    x = m.data
    ks = list(range(k_min, k_max + 1))

    lo, hi = x.min(axis=0), x.max(axis=0)
    degenerate = [m.columns[j].name for j in range(x.shape[1]) if lo[j] == hi[j]]
    if degenerate:
        warnings.warn(
            f"features with a single observed value are constant in the gap "
            f"reference distribution: {degenerate}",
            DegenerateResultWarning, stacklevel=2,
        )

    rng = substream(seed, 0)
    refs = [rng.uniform(lo, hi, size=x.shape) for _ in range(b)]

    labels_data = _labels_for(x, ks, method, seed, n_init, max_iter, 1)
    log_w = [_log_dispersion(x, labels_data[k], k) for k in ks]

    log_w_ref = np.empty((b, len(ks)))
    for bi, ref in enumerate(refs):
        labels_ref = _labels_for(ref, ks, method, seed, n_init, max_iter, 2, bi)
        for kj, k in enumerate(ks):
            log_w_ref[bi, kj] = _log_dispersion(ref, labels_ref[k], k)

    ref_mean = log_w_ref.mean(axis=0)
    gap = ref_mean - np.array(log_w)
    s = log_w_ref.std(axis=0) * math.sqrt(1.0 + 1.0 / b)  # population std
    return GapCurve(
        ks=tuple(ks),
        gap=tuple(float(g) for g in gap),
        s=tuple(float(v) for v in s),
        log_w=tuple(log_w),
        log_w_ref=tuple(float(v) for v in ref_mean),
        dropped_features=tuple(degenerate),
    )


def tibshirani_select(curve: GapCurve) -> int:
    """Smallest k with Gap(k) >= Gap(k+1) - s(k+1); k_max when none qualifies."""
    if len(curve.ks) < 2:
        raise KstError("the gap selection rule needs at least 2 curve points")
    for i in range(len(curve.ks) - 1):
        if curve.gap[i] >= curve.gap[i + 1] - curve.s[i + 1]:
            return curve.ks[i]
    return curve.ks[-1]


def _gap_rule_stopped(curve: GapCurve) -> bool:
    return any(
        curve.gap[i] >= curve.gap[i + 1] - curve.s[i + 1]
        for i in range(len(curve.ks) - 1)
    )


@dataclass(frozen=True)
class CriterionResult:
    scores: dict[int, float]
    selected_k: int
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "selected_k": self.selected_k,
            "note": self.note,
        }


@dataclass(frozen=True)
class KSelectionReport:
    """Per-criterion scores and selections plus the consensus k."""

    criteria: dict[str, CriterionResult]
    consensus_k: int
    gap_curve: GapCurve | None = None

    def to_dict(self) -> dict:
        doc = {
            "criteria": {name: c.to_dict() for name, c in self.criteria.items()},
            "consensus_k": self.consensus_k,
        }
        doc["gap"] = self.gap_curve.to_dict() if self.gap_curve else None
        return doc


def _criterion_domain(name: str, n: int, ks: Sequence[int]) -> list[int]:
    if name in ("silhouette", "calinski_harabasz"):
        return [k for k in ks if 2 <= k <= n - 1]
    if name in ("dunn", "davies_bouldin"):
        return [k for k in ks if 2 <= k <= n]
    if name == "bic":
        return [k for k in ks if 1 <= k <= n]
    raise KstError(f"unknown criterion {name!r}")


def select_k(
    m: MetricTable,
    method: str = "agglomerative",
    criteria: Iterable[str] = DEFAULT_CRITERIA,
    k_range: Iterable[int] = range(1, 9),
    seed: int = DEFAULT_SEED,
    *,
    gap_b: int = 50,
    n_init: int = 10,
    max_iter: int = 300,
) -> KSelectionReport:
    """Evaluate the chosen criteria over candidate cluster counts.

    Each criterion is scored on the k values where it is defined (the
    silhouette, for example, skips k=1 and k=n) and picks its best k; ties go
    to the smaller k. The consensus is the mode of the per-criterion picks,
    again resolved toward smaller k.
    """
    if method not in CLUSTER_METHODS:
        raise KstError(f"unknown clustering method {method!r}")
    criteria = list(criteria)
    if not criteria:
        raise KstError("criteria must be non-empty")
    unknown = [c for c in criteria if c not in ALL_CRITERIA]
    if unknown:
        raise KstError(f"unknown criteria {unknown}; expected a subset of {list(ALL_CRITERIA)}")
    if len(set(criteria)) != len(criteria):
        raise KstError("criteria contains duplicates")
    n = len(m.rows)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise KstError("k_range is empty")
    if ks[0] < 1 or ks[-1] > n:
        raise KstError(f"k_range must stay within 1..{n}, got {ks[0]}..{ks[-1]}")

    # one partition per needed k
    needed = set()
    for name in criteria:
        if name != "gap":
            needed.update(_criterion_domain(name, n, ks))
    partitions: dict[int, Partition] = {}
    if needed:
        if method == "agglomerative":
            dendro = agglomerative_ward(m)
            for k in sorted(needed):
                partitions[k] = cut_dendrogram(dendro, k)
        else:
            for k in sorted(needed):
                partitions[k] = kmeans_fit(
                    m, k, subseed(seed, 3, k), n_init, max_iter
                ).partition()

    score_fn = {
        "silhouette": silhouette,
        "calinski_harabasz": calinski_harabasz,
        "dunn": dunn_index,
        "davies_bouldin": davies_bouldin,
        "bic": bic_score,
    }

    results: dict[str, CriterionResult] = {}
    gap_curve = None
    for name in criteria:
        if name == "gap":
            gap_ks = [k for k in ks if k <= n - 1]  # dispersion vanishes at k = n
            if len(gap_ks) < 2:
                results[name] = CriterionResult(
                    scores={}, selected_k=gap_ks[0] if gap_ks else ks[0],
                    note="single candidate k; gap rule not evaluated",
                )
                continue
            gap_curve = gap_statistic(
                m, method, gap_ks[-1], gap_b, seed,
                k_min=gap_ks[0], n_init=n_init, max_iter=max_iter,
            )
            note = None if _gap_rule_stopped(gap_curve) else \
                "no k satisfied the gap rule; largest candidate reported"
            results[name] = CriterionResult(
                scores=dict(zip(gap_curve.ks, gap_curve.gap)),
                selected_k=tibshirani_select(gap_curve),
                note=note,
            )
            continue
        domain = _criterion_domain(name, n, ks)
        if not domain:
            raise KstError(f"criterion {name!r} is not defined on any k in {ks}")
        scores = {k: float(score_fn[name](m, partitions[k])) for k in domain}
        if name in MINIMIZED_CRITERIA:
            best = min(scores.items(), key=lambda kv: (kv[1], kv[0]))
        else:
            best = min(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        results[name] = CriterionResult(scores=scores, selected_k=best[0])

    picks = [r.selected_k for r in results.values()]
    counts: dict[int, int] = {}
    for k in picks:
        counts[k] = counts.get(k, 0) + 1
    consensus = min(k for k, c in counts.items() if c == max(counts.values()))
    return KSelectionReport(criteria=results, consensus_k=consensus, gap_curve=gap_curve)
