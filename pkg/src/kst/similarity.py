"""Euclidean distances between kernels and similarity queries on top of them.

Smaller distance means more similar behavior. All query results are fully
deterministic: equal distances are broken by lexicographic label order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import Iterable, Sequence

import numpy as np

from .dataset import MetricTable
from .errors import KstError

_VARIANT_SUFFIX = re.compile(r"_\d+$")


def distance(p: Sequence[float] | np.ndarray, q: Sequence[float] | np.ndarray) -> float:
    """Euclidean distance between two metric vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise KstError(f"dimension mismatch: {p.shape} vs {q.shape}")
    d = p - q
    return float(np.sqrt((d * d).sum()))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric pairwise distance matrix with row labels."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        n = len(self.labels)
        if values.shape != (n, n):
            raise KstError(f"distance matrix shape {values.shape} does not match {n} labels")
        if len(set(self.labels)) != n:
            raise KstError("labels must be unique")
        if n and (np.diagonal(values) != 0).any():
            raise KstError("distance matrix diagonal must be zero")
        if n and ((values < 0).any() or not np.allclose(values, values.T, atol=1e-12)):
            raise KstError("distance matrix must be symmetric and non-negative")

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KstError(f"unknown label {label!r}") from None


def pairwise_distances(m: MetricTable) -> DistanceMatrix:
    """All-pairs Euclidean distances between table rows."""
    x = m.data
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    return DistanceMatrix(m.rows, d)


def nearest_neighbors(m: MetricTable, target: str, k: int) -> list[tuple[str, float]]:
    """The k rows closest to ``target``, ascending by distance.

    Equal distances are ordered lexicographically by label. ``target`` itself
    is excluded.
    """
    i = m.index_of(target)
    if not 1 <= k <= len(m.rows) - 1:
        raise KstError(f"k must be between 1 and {len(m.rows) - 1}, got {k}")
    diff = m.data - m.data[i]
    dists = np.sqrt((diff * diff).sum(axis=1))
    order = sorted(
        ((float(dists[j]), label) for j, label in enumerate(m.rows) if j != i)
    )
    return [(label, d) for d, label in order[:k]]


@dataclass(frozen=True)
class FamilyReport:
    """Distance summary of a target kernel against a family of related rows.

    ``relative`` is the distance to the closest kernel outside the family
    divided by the average distance to family rows: values above 1 mean the
    family really is closer than anything else. When ``relative`` is not
    supplied it is derived from the other fields.
    """

    target: str
    self_family_avg: float | None   # avg distance to same-kernel size variants
    counterpart_avg: float | None   # avg distance to the rest of the family
    family_avg: float               # avg distance to all family rows (target excluded)
    closest_other: tuple[str, float]
    relative: float | None = None
    meta: dict[str, str] = field(default_factory=lambda: {"family_weighting": "equal"})

    def __post_init__(self):
        if self.family_avg <= 0:
            raise KstError(f"family_avg must be positive, got {self.family_avg}")
        if self.relative is None:
            object.__setattr__(self, "relative", self.closest_other[1] / self.family_avg)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "self_family_avg": self.self_family_avg,
            "counterpart_avg": self.counterpart_avg,
            "family_avg": self.family_avg,
            "closest_other": {"label": self.closest_other[0], "distance": self.closest_other[1]},
            "relative": self.relative,
            "meta": dict(self.meta),
        }


def _base_kernel(label: str) -> str:
    # strip one size-variant suffix: "Apps_LTIMES_2" -> "Apps_LTIMES"
    return _VARIANT_SUFFIX.sub("", label)


def family_similarity(
    m: MetricTable, target: str, family_patterns: Iterable[str]
) -> FamilyReport:
    """Compare ``target`` against a glob-defined family of rows.

    The family is every row label matching any pattern (the target must
    match too). ``self_family_avg`` covers rows that are size variants of
    the target's own kernel; ``counterpart_avg`` covers the remaining family
    rows. All averages weight rows equally and exclude the target itself.
    """
    patterns = list(family_patterns)
    if not patterns:
        raise KstError("family_patterns must be non-empty")
    i = m.index_of(target)
    family = [lab for lab in m.rows if any(fnmatchcase(lab, p) for p in patterns)]
    if target not in family:
        raise KstError(f"target {target!r} does not match any family pattern")
    others = [lab for lab in m.rows if lab not in family]
    if not others:
        raise KstError("family patterns cover every row; nothing to compare against")

    diff = m.data - m.data[i]
    dists = dict(zip(m.rows, np.sqrt((diff * diff).sum(axis=1))))

    family_rows = [lab for lab in family if lab != target]
    if not family_rows:
        raise KstError("family contains only the target row")
    base = _base_kernel(target)
    self_rows = [lab for lab in family_rows if _base_kernel(lab) == base]
    counterpart_rows = [lab for lab in family_rows if _base_kernel(lab) != base]

    def avg(rows: list[str]) -> float | None:
        if not rows:
            return None
        return float(np.mean([dists[lab] for lab in rows]))

    closest = min((float(dists[lab]), lab) for lab in others)
    return FamilyReport(
        target=target,
        self_family_avg=avg(self_rows),
        counterpart_avg=avg(counterpart_rows),
        family_avg=avg(family_rows),
        closest_other=(closest[1], closest[0]),
    )


def geometric_mean(xs: Iterable[float]) -> float:
    """exp(mean(log xs)); all inputs must be strictly positive."""
    xs = [float(x) for x in xs]
    if not xs:
        raise KstError("geometric_mean of an empty sequence")
    if any(x <= 0 for x in xs):
        raise KstError("geometric_mean requires strictly positive values")
    return math.exp(sum(math.log(x) for x in xs) / len(xs))
