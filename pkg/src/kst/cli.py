"""Command-line interface.

Subcommands: ``cluster`` (partition kernels and describe the clusters),
``select-k`` (score candidate cluster counts), ``similar`` (family
similarity for one kernel), ``stability`` (problem-size stability per
kernel) and ``ingest-check`` (validate input files).

Outputs land in ``--out DIR`` under fixed file names. Runs are fully
deterministic: a single ``--seed`` (falling back to the ``KST_SEED``
environment variable, then to the built-in default) drives every random
draw, and rerunning a command with identical inputs and flags reproduces
every output file byte for byte.

Exit codes: 0 success, 2 usage or input error, 1 internal error. Errors are
reported as one line of JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .cluster import agglomerative_ward, cut_dendrogram, kmeans_fit
from .dataset import (
    ALL_SIZES,
    DEFAULT_METRICS,
    GPU_COUNTER_METRICS,
    GPU_RATE_METRICS,
    GPU_TIME_METRIC,
    MetricTable,
    RawSample,
    aggregate_trials,
    build_table,
    derive_gpu_rates,
    merge_platforms,
    parse_samples,
)
from .errors import KstError
from .preprocess import fit_transform
from .quality import (
    ALL_CRITERIA,
    DEFAULT_CRITERIA,
    quality_report,
    select_k,
)
from .report import emit_report, export_boxplot_data, format_metric_value, pca_project
from .rng import DEFAULT_SEED
from .similarity import family_similarity
from .stability import (
    DEFAULT_THRESHOLD_PCT,
    REL_BASES,
    stability_series,
    stability_summary,
    write_stability_csv,
)

SEED_ENV_VAR = "KST_SEED"


@dataclass
class RunConfig:
    """Resolved options for one CLI invocation."""

    command: str
    inputs: list[str]
    fmt: str = "auto"
    platform: str = "auto"
    size: int | str = ALL_SIZES
    gpu_size: int | str | None = None
    log_policy: str = "auto"
    log_metrics: list[str] = field(default_factory=list)
    log_ratio: float = 100.0
    method: str = "agglomerative"
    k: int = 2
    k_min: int = 1
    k_max: int = 8
    criteria: list[str] = field(default_factory=lambda: list(DEFAULT_CRITERIA))
    gap_b: int = 50
    seed: int = DEFAULT_SEED
    n_init: int = 10
    max_iter: int = 300
    out: str = "out"
    target: str = ""
    family: list[str] = field(default_factory=list)
    threshold_pct: float = DEFAULT_THRESHOLD_PCT
    rel_base: str = "larger"
    annotations: dict[str, float] = field(default_factory=dict)


def _size_policy(text: str) -> int | str:
    if text == ALL_SIZES:
        return ALL_SIZES
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"size must be a byte count or {ALL_SIZES!r}, got {text!r}"
        ) from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got {value}")
    return value


def _annotation(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(
            f"annotations take the form name=bytes, got {text!r}"
        )
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"annotation value is not a number: {text!r}") from None


def _add_common(p: argparse.ArgumentParser, *, dataset: bool = True) -> None:
    p.add_argument("--version", action="version", version=f"kst {__version__}")
    p.add_argument("--input", action="append", required=True, metavar="FILE",
                   help="input samples (CSV or JSON); repeatable")
    p.add_argument("--format", default="auto", choices=("auto", "csv", "json"),
                   help="input format (default: by file extension)")
    if dataset:
        p.add_argument("--platform", default="auto", choices=("auto", "cpu", "gpu", "both"),
                       help="which platform's metrics to analyze (default: what the data has)")
        p.add_argument("--size", type=_size_policy, default=ALL_SIZES, metavar="BYTES|all",
                       help="problem size to select, or 'all' for one row per size (default: all)")
        p.add_argument("--gpu-size", type=_size_policy, default=None, metavar="BYTES|all",
                       help="GPU problem size when merging platforms (default: --size)")
        p.add_argument("--log", default="auto", choices=("auto", "none", "explicit"),
                       dest="log_policy", help="natural-log policy before standardization")
        p.add_argument("--log-metrics", default="", metavar="M1,M2",
                       help="metrics to log under --log explicit")
        p.add_argument("--log-ratio", type=float, default=100.0, metavar="R",
                       help="max/min ratio that triggers the log under --log auto")
    p.add_argument("--seed", type=int, default=None, metavar="N",
                   help=f"RNG seed (default: ${SEED_ENV_VAR} or {DEFAULT_SEED})")
    p.add_argument("--out", default="out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kst",
        description="Quantify performance similarity of computational kernels "
                    "from hardware-metric profiles.",
    )
    parser.add_argument("--version", action="version", version=f"kst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="partition kernels and describe the clusters")
    _add_common(p)
    p.add_argument("--method", default="agglomerative", choices=("agglomerative", "kmeans"))
    p.add_argument("-k", type=int, default=2, help="number of clusters (default: 2)")
    p.add_argument("--n-init", type=int, default=10, help="k-means replicates (default: 10)")
    p.add_argument("--max-iter", type=int, default=300, help="k-means iteration cap")

    p = sub.add_parser("select-k", help="score candidate cluster counts")
    _add_common(p)
    p.add_argument("--method", default="agglomerative", choices=("agglomerative", "kmeans"))
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--criteria", default=",".join(DEFAULT_CRITERIA), metavar="C1,C2",
                   help=f"subset of {','.join(ALL_CRITERIA)}")
    p.add_argument("--gap-b", type=int, default=50, metavar="B",
                   help="gap-statistic reference datasets (default: 50)")
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=300)

    p = sub.add_parser("similar", help="family similarity for one kernel")
    _add_common(p)
    p.add_argument("--target", required=True, metavar="LABEL", help="row label to analyze")
    p.add_argument("--family", action="append", required=True, metavar="GLOB",
                   help="glob pattern defining the family; repeatable")

    p = sub.add_parser("stability", help="problem-size stability per kernel")
    _add_common(p, dataset=False)
    p.add_argument("--platform", default="auto", choices=("auto", "cpu", "gpu"),
                   help="restrict to one platform (default: analyze what the data has)")
    p.add_argument("--threshold-pct", type=float, default=DEFAULT_THRESHOLD_PCT,
                   help="stability threshold in percent (default: 5.0)")
    p.add_argument("--rel-base", default="larger", choices=REL_BASES,
                   help="denominator of the percent difference (default: larger)")
    p.add_argument("--annotate", action="append", type=_annotation, default=[],
                   metavar="NAME=BYTES", help="reference size to annotate (e.g. a cache); repeatable")

    p = sub.add_parser("ingest-check", help="validate input files and summarize them")
    p.add_argument("--version", action="version", version=f"kst {__version__}")
    p.add_argument("--input", action="append", required=True, metavar="FILE")
    p.add_argument("--format", default="auto", choices=("auto", "csv", "json"))
    return parser


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise KstError(f"${SEED_ENV_VAR} is not an integer: {env!r}") from None
    return DEFAULT_SEED


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command, inputs=list(args.input))
    cfg.fmt = args.format
    if hasattr(args, "seed"):
        cfg.seed = _resolve_seed(args)
    if hasattr(args, "out"):
        cfg.out = args.out
    for name in ("platform", "size", "gpu_size", "log_policy", "log_ratio", "method",
                 "k", "k_min", "k_max", "gap_b", "n_init", "max_iter", "target",
                 "threshold_pct", "rel_base"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "log_metrics", ""):
        cfg.log_metrics = [m.strip() for m in args.log_metrics.split(",") if m.strip()]
    if getattr(args, "criteria", ""):
        cfg.criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
    if getattr(args, "family", None):
        cfg.family = list(args.family)
    if getattr(args, "annotate", None):
        cfg.annotations = dict(args.annotate)
    return cfg


def _load_samples(cfg: RunConfig) -> list[RawSample]:
    samples: list[RawSample] = []
    seen: set[tuple] = set()
    for path in cfg.inputs:
        fmt = cfg.fmt
        if fmt == "auto":
            fmt = "json" if path.endswith(".json") else "csv"
        with open(path, "rb") as fh:
            parsed = parse_samples(fh, fmt)
        for s in parsed:
            if s.key() in seen:
                raise KstError(f"duplicate sample key {s.key()!r} across input files")
            seen.add(s.key())
        samples.extend(parsed)
    if not samples:
        raise KstError("input files contain no samples")
    return samples


def _derive_if_gpu(samples: list[RawSample]) -> list[RawSample]:
    out = []
    for s in samples:
        if s.platform == "gpu" and GPU_TIME_METRIC in s.values and all(
            c in s.values for c in GPU_COUNTER_METRICS
        ) and not all(r in s.values for r in GPU_RATE_METRICS):
            s = derive_gpu_rates(s)
        out.append(s)
    return out


def _platform_table(samples: list[RawSample], platform: str, size_policy: int | str) -> MetricTable:
    subset = [s for s in samples if s.platform == platform]
    if not subset:
        raise KstError(f"no {platform} samples in the input")
    if platform == "gpu":
        subset = _derive_if_gpu(subset)
    aggregated, _ = aggregate_trials(subset)
    return build_table(aggregated, DEFAULT_METRICS[platform], size_policy)


def _platform_mode(cfg: RunConfig, samples: list[RawSample]) -> str:
    present = {s.platform for s in samples}
    if cfg.platform != "auto":
        if cfg.platform in ("cpu", "gpu") and cfg.platform not in present:
            raise KstError(f"no {cfg.platform} samples in the input")
        if cfg.platform == "both" and present != {"cpu", "gpu"}:
            raise KstError("--platform both needs samples from both platforms")
        return cfg.platform
    return "both" if len(present) == 2 else present.pop()


def _build_raw_table(cfg: RunConfig, samples: list[RawSample]) -> MetricTable:
    mode = _platform_mode(cfg, samples)
    if mode in ("cpu", "gpu"):
        return _platform_table(samples, mode, cfg.size)
    gpu_size = cfg.gpu_size if cfg.gpu_size is not None else cfg.size
    cpu_table = _platform_table(samples, "cpu", cfg.size)
    gpu_table = _platform_table(samples, "gpu", gpu_size)
    return merge_platforms(cpu_table, gpu_table)


def _standardize(cfg: RunConfig, table: MetricTable):
    if cfg.log_policy == "explicit":
        if not cfg.log_metrics:
            raise KstError("--log explicit requires --log-metrics")
        policy: str | list[str] = cfg.log_metrics
    else:
        policy = cfg.log_policy
    return fit_transform(table, policy, auto_ratio=cfg.log_ratio)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_cluster(cfg: RunConfig) -> int:
    samples = _load_samples(cfg)
    raw = _build_raw_table(cfg, samples)
    std, spec = _standardize(cfg, raw)
    out = Path(cfg.out)

    if cfg.method == "agglomerative":
        dendro = agglomerative_ward(std)
        part = cut_dendrogram(dendro, cfg.k)
        _write(out / "dendrogram.json", emit_report({"dendrogram": dendro}))
    else:
        model = kmeans_fit(std, cfg.k, cfg.seed, cfg.n_init, cfg.max_iter)
        part = model.partition()
        _write(out / "kmeans.json", emit_report({"kmeans": model}))

    qr = quality_report(std, part)
    box = export_boxplot_data(std, part, raw=raw)
    _write(out / "partition.json", emit_report({"partition": part}))
    _write(out / "quality.json", emit_report({"quality": qr}))
    _write(out / "boxplot.json", emit_report({"boxplot": box}))
    _write(out / "transform.json", spec.to_json())

    if len(std.column_names) >= 2:
        assign = [part.labels[lab] for lab in std.rows]
        centroids = [
            std.data[[a == c for a in assign]].mean(axis=0) for c in range(part.k)
        ]
        proj = pca_project(std, centroids)
        _write(out / "projection.json", emit_report({"projection": proj}))

    print(f"rows: {len(std.rows)}  metrics: {len(std.column_names)}  "
          f"method: {cfg.method}  k: {cfg.k}")
    raw_cols = {c.name: c for c in raw.columns}
    for c in range(part.k):
        comp = qr.compactness[c]
        print(f"cluster {c} (n={qr.sizes[c]}): compactness {comp:.4f}")
        for name, stats in box.clusters[c].items():
            rendered = format_metric_value(raw_cols[name], stats["median"])
            print(f"  {name}: median {rendered}")
    if qr.separation is not None:
        print(f"separation: {qr.separation:.4f}")
    print(f"outputs written to {out}")
    return 0


def cmd_select_k(cfg: RunConfig) -> int:
    samples = _load_samples(cfg)
    raw = _build_raw_table(cfg, samples)
    std, _ = _standardize(cfg, raw)
    if cfg.k_min > cfg.k_max:
        raise KstError(f"--k-min {cfg.k_min} exceeds --k-max {cfg.k_max}")
    report = select_k(
        std,
        method=cfg.method,
        criteria=cfg.criteria,
        k_range=range(cfg.k_min, cfg.k_max + 1),
        seed=cfg.seed,
        gap_b=cfg.gap_b,
        n_init=cfg.n_init,
        max_iter=cfg.max_iter,
    )
    _write(Path(cfg.out) / "selection.json", emit_report({"selection": report}))
    for name, res in report.criteria.items():
        note = f"  ({res.note})" if res.note else ""
        print(f"{name}: k={res.selected_k}{note}")
    print(f"consensus: k={report.consensus_k}")
    print(f"outputs written to {cfg.out}")
    return 0


def cmd_similar(cfg: RunConfig) -> int:
    samples = _load_samples(cfg)
    raw = _build_raw_table(cfg, samples)
    std, _ = _standardize(cfg, raw)
    report = family_similarity(std, cfg.target, cfg.family)
    _write(Path(cfg.out) / "family.json", emit_report({"family": report}))

    def fmt(v: float | None) -> str:
        return "n/a" if v is None else f"{v:.4f}"

    print(f"target: {report.target}")
    print(f"avg distance to own size variants: {fmt(report.self_family_avg)}")
    print(f"avg distance to counterpart rows:  {fmt(report.counterpart_avg)}")
    print(f"avg distance to whole family:      {fmt(report.family_avg)}")
    print(f"closest non-family kernel: {report.closest_other[0]} "
          f"at {report.closest_other[1]:.4f} ({report.relative:.2f}x the family average)")
    print(f"outputs written to {cfg.out}")
    return 0


def cmd_stability(cfg: RunConfig) -> int:
    samples = _load_samples(cfg)
    present = sorted({s.platform for s in samples})
    platforms = [cfg.platform] if cfg.platform != "auto" else present
    missing = [p for p in platforms if p not in present]
    if missing:
        raise KstError(f"no {missing[0]} samples in the input")

    reports = []
    for platform in platforms:
        subset = [s for s in samples if s.platform == platform]
        if platform == "gpu":
            subset = _derive_if_gpu(subset)
        by_kernel: dict[str, list[RawSample]] = {}
        for s in subset:
            by_kernel.setdefault(s.kernel, []).append(s)
        for kernel in sorted(by_kernel):
            reports.append(
                stability_series(
                    by_kernel[kernel],
                    DEFAULT_METRICS[platform],
                    threshold_pct=cfg.threshold_pct,
                    rel_base=cfg.rel_base,
                )
            )

    out = Path(cfg.out) / "stability"
    multi_platform = len({r.kernel for r in reports}) != len(reports)
    for r in reports:
        name = f"{r.kernel}_{r.platform}" if multi_platform else r.kernel
        _write(out / f"{name}.json", emit_report({"stability": r}))
    summary = stability_summary(reports, cfg.annotations)
    _write(out / "summary.json", emit_report({"stability_summary": summary}))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        write_stability_csv(reports, fh)

    stable = [r for r in reports if r.min_stable_size is not None]
    print(f"kernels analyzed: {len(reports)}  stable: {len(stable)}  "
          f"never stable: {len(reports) - len(stable)}")
    for r in reports:
        if r.min_stable_size is None:
            print(f"  {r.kernel} ({r.platform}): never stable, "
                  f"residual {r.worst_residual_pct:.1f}%")
    print(f"outputs written to {out}")
    return 0


def cmd_ingest_check(cfg: RunConfig) -> int:
    samples = _load_samples(cfg)
    aggregated, spreads = aggregate_trials(samples)
    metrics = sorted({name for s in samples for name in s.values})
    worst_cv = 0.0
    worst_at = ""
    for sp in spreads:
        for name, cv in sp.cv.items():
            if cv > worst_cv:
                worst_cv = cv
                worst_at = f"{sp.kernel}/{name}"
    doc = {
        "samples": len(samples),
        "groups": len(aggregated),
        "kernels": sorted({s.kernel for s in samples}),
        "platforms": sorted({s.platform for s in samples}),
        "problem_sizes": sorted({s.problem_size_bytes for s in samples}),
        "metrics": metrics,
        "worst_trial_cv": worst_cv,
        "worst_trial_cv_at": worst_at,
    }
    sys.stdout.write(emit_report({"ingest": doc}))
    return 0


_COMMANDS = {
    "cluster": cmd_cluster,
    "select-k": cmd_select_k,
    "similar": cmd_similar,
    "stability": cmd_stability,
    "ingest-check": cmd_ingest_check,
}


def _error_json(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return _COMMANDS[args.command](cfg)
    except (KstError, OSError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2
    except Exception as exc:  # internal error
        print(_error_json(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
