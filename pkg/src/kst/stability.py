"""Problem-size stability: where does a kernel's metric profile settle?

For one kernel measured at several problem sizes, adjacent sizes are compared
metric by metric as a percent difference. A kernel is stable from the
smallest size onward at which every subsequent adjacent pair stays below the
threshold (default 5%). Kernels whose last pair still exceeds the threshold
never stabilize and are annotated with that residual difference instead.

Cache-size reference lines (for plots of the size histogram) are user
supplied, never baked in: hardware cache capacities are inputs, not
constants of this analysis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

from .dataset import RawSample, aggregate_trials
from .errors import KstError

REL_BASES = ("larger", "smaller", "symmetric")
DEFAULT_THRESHOLD_PCT = 5.0


def _pct_diff(v_small: float, v_large: float, rel_base: str) -> float:
    """Percent difference between a metric at adjacent sizes.

    ``rel_base`` picks the denominator: the value at the larger size (the
    default), at the smaller size, or the mean of the two magnitudes.
    """
    if rel_base == "larger":
        denom = abs(v_large)
    elif rel_base == "smaller":
        denom = abs(v_small)
    else:
        denom = (abs(v_small) + abs(v_large)) / 2.0
    diff = abs(v_small - v_large)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return 100.0 * diff / denom


@dataclass(frozen=True)
class StabilityReport:
    """Adjacent-size percent differences and the stabilization point."""

    kernel: str
    platform: str
    sizes: tuple[int, ...]              # ascending
    pair_diff_pct: tuple[float, ...]    # max over metrics, one per adjacent pair
    min_stable_size: int | None         # None when never stable
    worst_residual_pct: float           # last pair's difference
    threshold_pct: float
    rel_base: str

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "platform": self.platform,
            "sizes": list(self.sizes),
            "pair_diff_pct": list(self.pair_diff_pct),
            "min_stable_size": self.min_stable_size,
            "worst_residual_pct": self.worst_residual_pct,
            "threshold_pct": self.threshold_pct,
            "rel_base": self.rel_base,
        }


def stability_series(
    samples: Iterable[RawSample],
    metrics: Sequence[str],
    threshold_pct: float = DEFAULT_THRESHOLD_PCT,
    rel_base: str = "larger",
) -> StabilityReport:
    """Per-size-pair percent differences for one kernel.

    ``samples`` must all belong to one (kernel, platform); repeated trials
    are averaged internally, so the result does not depend on trial order or
    on duplicated identical samples. At least two distinct sizes are needed,
    and every requested metric must be present at every size.
    """
    if threshold_pct <= 0:
        raise KstError(f"threshold_pct must be positive, got {threshold_pct}")
    if rel_base not in REL_BASES:
        raise KstError(f"rel_base must be one of {REL_BASES}, got {rel_base!r}")
    metrics = list(metrics)
    if not metrics:
        raise KstError("metrics must be non-empty")
    samples = list(samples)
    if not samples:
        raise KstError("no samples supplied")
    idents = {(s.kernel, s.platform) for s in samples}
    if len(idents) > 1:
        raise KstError(f"samples span multiple kernels/platforms: {sorted(idents)}")
    kernel, platform = idents.pop()

    aggregated, _ = aggregate_trials(samples)
    by_size = {s.problem_size_bytes: s for s in aggregated}
    sizes = sorted(by_size)
    if len(sizes) < 2:
        raise KstError(f"kernel {kernel!r} needs at least 2 distinct sizes, got {len(sizes)}")
    for size in sizes:
        missing = [name for name in metrics if name not in by_size[size].values]
        if missing:
            raise KstError(f"kernel {kernel!r} at {size} bytes is missing metrics {missing}")

    diffs = []
    for small, large in zip(sizes, sizes[1:]):
        vs, vl = by_size[small].values, by_size[large].values
        diffs.append(max(_pct_diff(vs[name], vl[name], rel_base) for name in metrics))

    min_stable = None
    for i in range(len(diffs)):
        if all(d < threshold_pct for d in diffs[i:]):
            min_stable = sizes[i]
            break
    return StabilityReport(
        kernel=kernel,
        platform=platform,
        sizes=tuple(sizes),
        pair_diff_pct=tuple(diffs),
        min_stable_size=min_stable,
        worst_residual_pct=diffs[-1],
        threshold_pct=threshold_pct,
        rel_base=rel_base,
    )


@dataclass(frozen=True)
class StabilitySummary:
    """Histogram of stabilization sizes across kernels."""

    histogram: dict[int, int]           # min_stable_size -> kernel count
    never_stable: tuple[str, ...]       # kernels with no stabilization point
    annotations: dict[str, float]       # user-supplied reference sizes (e.g. caches)

    def to_dict(self) -> dict:
        return {
            "histogram": {str(size): n for size, n in sorted(self.histogram.items())},
            "never_stable": list(self.never_stable),
            "annotations": dict(self.annotations),
        }


def stability_summary(
    reports: Iterable[StabilityReport],
    annotations: Mapping[str, float] | None = None,
) -> StabilitySummary:
    """Histogram min_stable_size across kernels; annotations pass through."""
    histogram: dict[int, int] = {}
    never = []
    for r in reports:
        if r.min_stable_size is None:
            never.append(r.kernel)
        else:
            histogram[r.min_stable_size] = histogram.get(r.min_stable_size, 0) + 1
    return StabilitySummary(
        histogram=dict(sorted(histogram.items())),
        never_stable=tuple(sorted(never)),
        annotations=dict(annotations or {}),
    )


def write_stability_csv(reports: Iterable[StabilityReport], dest: str | IO[str]) -> None:
    """One row per kernel: kernel, min_stable_size_bytes, worst_residual_pct."""
    own = isinstance(dest, str)
    fh = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(("kernel", "min_stable_size_bytes", "worst_residual_pct"))
        for r in reports:
            size = "" if r.min_stable_size is None else r.min_stable_size
            writer.writerow((r.kernel, size, repr(float(r.worst_residual_pct))))
    finally:
        if own:
            fh.close()
