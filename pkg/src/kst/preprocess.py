"""Column standardization with optional natural-log compression.

Metrics that span orders of magnitude (GPU transaction rates, instruction
rates) are log-transformed before standardization so that huge-valued
columns do not dominate Euclidean distances. Every retained column is then
shifted and scaled to zero mean and unit variance (population variance).
The fitted parameters are captured in a :class:`TransformSpec` so the exact
transform can be re-applied to other tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .dataset import COUNT, RATE, SCORE, TIME, MetricDescriptor, MetricTable
from .errors import KstError, ParseError

AUTO_LOG_RATIO = 100.0  # max/min above this triggers the log under the auto policy


@dataclass(frozen=True)
class ColumnTransform:
    """Fitted parameters for one column: optional log, then (v - mean) / std."""

    metric: str
    log: bool
    mean: float
    std: float


@dataclass(frozen=True)
class TransformSpec:
    """Per-column transform records, in table column order (retained columns only)."""

    columns: tuple[ColumnTransform, ...]

    def metric_names(self) -> tuple[str, ...]:
        return tuple(c.metric for c in self.columns)

    def to_json(self) -> str:
        records = [
            {"metric": c.metric, "log": c.log, "mean": c.mean, "std": c.std}
            for c in self.columns
        ]
        return json.dumps(records, indent=2) + "\n"

    @classmethod
    def from_json(cls, source: str | bytes | IO[str] | IO[bytes]) -> "TransformSpec":
        if hasattr(source, "read"):
            source = source.read()
        if isinstance(source, bytes):
            source = source.decode("utf-8")
        try:
            records = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid transform spec JSON: {exc}") from None
        if not isinstance(records, list):
            raise ParseError("transform spec must be a JSON array")
        cols = []
        for i, rec in enumerate(records):
            try:
                cols.append(
                    ColumnTransform(str(rec["metric"]), bool(rec["log"]),
                                    float(rec["mean"]), float(rec["std"]))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"transform spec record {i}: {exc}") from None
        spec = cls(tuple(cols))
        for c in spec.columns:
            if c.std <= 0:
                raise ParseError(f"transform spec column {c.metric!r} has non-positive std")
        return spec


def _resolve_log_columns(
    table: MetricTable, log_policy: str | Iterable[str], auto_ratio: float
) -> set[str]:
    if isinstance(log_policy, str):
        if log_policy == "none":
            return set()
        if log_policy != "auto":
            raise KstError(
                f"log_policy must be 'auto', 'none' or a list of metric names, got {log_policy!r}"
            )
        if auto_ratio <= 0:
            raise KstError(f"auto log ratio must be positive, got {auto_ratio}")
        chosen = set()
        for j, col in enumerate(table.columns):
            # fractions are never log-compressed; unknown-kind columns are
            # left alone too (use an explicit list for those)
            if col.kind not in (RATE, COUNT, TIME):
                continue
            vals = table.data[:, j]
            lo, hi = float(vals.min()), float(vals.max())
            if lo > 0 and hi / lo > auto_ratio:
                chosen.add(col.name)
        return chosen

    names = list(log_policy)
    known = set(table.column_names)
    unknown = [n for n in names if n not in known]
    if unknown:
        raise KstError(f"log policy names metrics not in the table: {unknown}")
    for name in names:
        vals = table.column_values(name)
        bad = np.nonzero(vals <= 0)[0]
        if len(bad):
            raise KstError(
                f"log target column {name!r} has non-positive value at row "
                f"{table.rows[bad[0]]!r}"
            )
    return set(names)


def fit_transform(
    table: MetricTable,
    log_policy: str | Iterable[str] = "auto",
    *,
    auto_ratio: float = AUTO_LOG_RATIO,
) -> tuple[MetricTable, TransformSpec]:
    """Standardize a table column-wise; returns the table and the fitted spec.

    ``log_policy`` is ``"auto"`` (apply the natural log to strictly positive
    rate/count/time columns whose max/min exceeds ``auto_ratio``), ``"none"``,
    or an explicit iterable of metric names. Zero-variance columns are
    dropped and recorded in the output table's meta.
    """
    if not table.rows:
        raise KstError("cannot standardize an empty table")
    log_columns = _resolve_log_columns(table, log_policy, auto_ratio)

    work = np.array(table.data, dtype=float)
    for j, col in enumerate(table.columns):
        if col.name in log_columns:
            work[:, j] = np.log(work[:, j])

    means = work.mean(axis=0)
    stds = work.std(axis=0)  # population variance
    keep = [j for j in range(work.shape[1]) if stds[j] > 0.0]
    dropped = [table.columns[j].name for j in range(work.shape[1]) if stds[j] == 0.0]
    if not keep:
        raise KstError("all columns have zero variance; nothing to standardize")

    out = (work[:, keep] - means[keep]) / stds[keep]
    spec = TransformSpec(
        tuple(
            ColumnTransform(
                table.columns[j].name,
                table.columns[j].name in log_columns,
                float(means[j]),
                float(stds[j]),
            )
            for j in keep
        )
    )
    columns = tuple(
        MetricDescriptor(table.columns[j].name, SCORE, table.columns[j].platform, "z-score")
        for j in keep
    )
    meta = dict(table.meta)
    meta["space"] = "standardized"
    meta["log_metrics"] = ",".join(sorted(log_columns))
    meta["dropped_zero_variance"] = ",".join(dropped)
    return MetricTable(table.rows, columns, out, meta), spec


def apply_transform(table: MetricTable, spec: TransformSpec) -> MetricTable:
    """Apply a fitted spec to a table whose columns cover the spec's metrics.

    Output has exactly the spec's columns in spec order. Applying a spec to
    the table it was fitted on reproduces :func:`fit_transform` output.
    """
    names = set(table.column_names)
    missing = [c.metric for c in spec.columns if c.metric not in names]
    if missing:
        raise KstError(f"table is missing metrics required by the spec: {missing}")
    if not spec.columns:
        raise KstError("transform spec has no columns")

    out = np.empty((len(table.rows), len(spec.columns)), dtype=float)
    columns = []
    for j, ct in enumerate(spec.columns):
        vals = np.array(table.column_values(ct.metric), dtype=float)
        if ct.log:
            bad = np.nonzero(vals <= 0)[0]
            if len(bad):
                raise KstError(
                    f"log target column {ct.metric!r} has non-positive value at row "
                    f"{table.rows[bad[0]]!r}"
                )
            vals = np.log(vals)
        out[:, j] = (vals - ct.mean) / ct.std
        src = table.columns[table.column_names.index(ct.metric)]
        columns.append(MetricDescriptor(ct.metric, SCORE, src.platform, "z-score"))
    meta = dict(table.meta)
    meta["space"] = "standardized"
    return MetricTable(table.rows, tuple(columns), out, meta)
