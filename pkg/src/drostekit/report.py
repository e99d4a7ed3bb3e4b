"""Experiment records, aggregation, and report rendering.

One ExperimentRecord per (image, mask, backend) cell.  Records serialize to
RFC 4180 CSV (CRLF rows, minimal quoting) with a stable schema: the fixed
columns below, then one column per metric in configured order.  New metrics
append columns; existing columns never move or change meaning.

    image_index,mask_index,mask_seed,mask_class,backend,status,<metric>...

Wall times are deliberately kept out of the records CSV so that two runs of
the same seeded experiment produce byte-identical files; timings go to a
sidecar CSV instead.

The Markdown report renders two tables: per-backend metric means (split by
mask class and pooled, with the score polarity spelled out in the header so
a reader cannot misread the direction) and a one-way ANOVA table across
backends when at least two backends produced scores.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .stats import AnovaResult, anova_oneway

__all__ = [
    "ExperimentRecord",
    "MetricSummary",
    "ScoreReport",
    "metric_polarity",
    "read_records_csv",
    "render_report",
    "write_records_csv",
    "write_timings_csv",
]

_FIXED_COLUMNS = ("image_index", "mask_index", "mask_seed", "mask_class", "backend", "status")

# Score direction per metric; rendered into every table header.
_POLARITY = {
    "brisque": "lower is better",
    "dom": "higher is better",
    "koniq": "higher is better",
}

_SUBSETS = ("all", "pure_inpaint", "contains_outpaint")


def metric_polarity(metric: str) -> str:
    """Human-readable score direction for a metric name."""
    return _POLARITY.get(metric, "direction unspecified")


@dataclass(frozen=True)
class ExperimentRecord:
    """One inpainting cell: a backend applied to one (image, mask) pair."""

    image_index: int
    mask_index: int
    mask_seed: int
    mask_class: str
    backend: str
    status: str = "ok"
    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in ("ok", "failed"):
            raise DomainError(f"status must be 'ok' or 'failed', got {self.status!r}")
        if self.status == "failed" and self.scores:
            raise DomainError("failed records carry no scores")


def write_records_csv(records: list[ExperimentRecord], metrics: list[str], path: str | Path) -> None:
    """Write records sorted by (image, mask, backend-name) with a stable schema."""
    ordered = sorted(records, key=lambda r: (r.image_index, r.mask_index, r.backend))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_FIXED_COLUMNS) + list(metrics))
        for rec in ordered:
            row = [rec.image_index, rec.mask_index, rec.mask_seed, rec.mask_class, rec.backend, rec.status]
            for name in metrics:
                value = rec.scores.get(name)
                row.append("" if value is None else f"{value:.6f}")
            writer.writerow(row)


def read_records_csv(path: str | Path) -> tuple[list[ExperimentRecord], list[str]]:
    """Read a records CSV back; trailing header columns name the metrics."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing records file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][: len(_FIXED_COLUMNS)]) != _FIXED_COLUMNS:
        raise ConfigError(f"unrecognized records header in {path}")
    metrics = rows[0][len(_FIXED_COLUMNS):]
    records = []
    for row in rows[1:]:
        if len(row) != len(rows[0]):
            raise ConfigError(f"short row in {path}: {row!r}")
        scores = {}
        for name, cell in zip(metrics, row[len(_FIXED_COLUMNS):]):
            if cell != "":
                scores[name] = float(cell)
        records.append(
            ExperimentRecord(
                image_index=int(row[0]),
                mask_index=int(row[1]),
                mask_seed=int(row[2]),
                mask_class=row[3],
                backend=row[4],
                status=row[5],
                scores=scores,
            )
        )
    return records, metrics


def write_timings_csv(timings: list[tuple[int, int, str, float]], path: str | Path) -> None:
    """Sidecar wall-time log, one row per cell; not byte-stable across runs."""
    ordered = sorted(timings, key=lambda t: (t[0], t[1], t[2]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_index", "mask_index", "backend", "wall_time_s"])
        for image_index, mask_index, backend, seconds in ordered:
            writer.writerow([image_index, mask_index, backend, f"{seconds:.3f}"])


# ---------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class MetricSummary:
    """Mean/std/CV of one metric for one backend over one mask-class subset."""

    metric: str
    backend: str
    subset: str
    count: int
    mean: float
    std: float
    cv: float | None


def _summarize_group(metric: str, backend: str, subset: str, values: list[float]) -> MetricSummary:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    cv = None
    if arr.size >= 2 and mean != 0.0:
        cv = 100.0 * std / mean
    return MetricSummary(metric, backend, subset, int(arr.size), mean, std, cv)


@dataclass(frozen=True)
class ScoreReport:
    """Aggregated view of an experiment: summaries per backend and ANOVA per metric."""

    metrics: tuple[str, ...]
    backends: tuple[str, ...]
    summaries: tuple[MetricSummary, ...]
    anova: dict[str, AnovaResult]
    failed_cells: int
    total_cells: int

    @classmethod
    def from_records(cls, records: list[ExperimentRecord], metrics: list[str]) -> "ScoreReport":
        if not records:
            raise DomainError("no records to report on")
        backends = tuple(sorted({r.backend for r in records}))
        summaries = []
        for metric in metrics:
            for backend in backends:
                ok = [r for r in records if r.backend == backend and metric in r.scores]
                for subset in _SUBSETS:
                    values = [
                        r.scores[metric]
                        for r in ok
                        if subset == "all" or r.mask_class == subset
                    ]
                    if values:
                        summaries.append(_summarize_group(metric, backend, subset, values))
        anova = {}
        if len(backends) >= 2:
            for metric in metrics:
                groups = []
                for backend in backends:
                    vals = [r.scores[metric] for r in records if r.backend == backend and metric in r.scores]
                    if len(vals) >= 2:
                        groups.append(vals)
                if len(groups) >= 2:
                    try:
                        anova[metric] = anova_oneway(groups)
                    except DomainError:
                        pass  # e.g. zero within-group variance; leave the row out
        failed = sum(1 for r in records if r.status == "failed")
        return cls(tuple(metrics), backends, tuple(summaries), anova, failed, len(records))


# ---------------------------------------------------------------------------
# rendering

def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def _fmt(value: float | None, digits: int = 4) -> str:
    if value is None or not math.isfinite(value):
        return "-"
    return f"{value:.{digits}f}"


def render_mean_table(report: ScoreReport) -> str:
    """Per-backend metric means; columns carry the polarity so it cannot be misread."""
    header = ["Backend", "Masks"]
    for metric in report.metrics:
        header.append(f"{metric} ({metric_polarity(metric)})")
    rows = []
    for backend in report.backends:
        for subset in _SUBSETS:
            cells = {s.metric: s for s in report.summaries if s.backend == backend and s.subset == subset}
            if not cells:
                continue
            label = backend if subset == "all" else f"{backend} [{subset}]"
            count = max(s.count for s in cells.values())
            row = [label, str(count)]
            for metric in report.metrics:
                s = cells.get(metric)
                if s is None:
                    row.append("-")
                else:
                    cv = f", cv {_fmt(s.cv, 1)}%" if s.cv is not None else ""
                    row.append(f"{_fmt(s.mean)} ± {_fmt(s.std)}{cv}")
            rows.append(row)
    return _md_table(header, rows)


def render_anova_table(report: ScoreReport) -> str:
    """One-way ANOVA across backends, one row per metric."""
    header = ["Metric", "F", "df1", "df2", "Fcrit (p=0.05)", "reject H0"]
    rows = []
    for metric in report.metrics:
        res = report.anova.get(metric)
        if res is None:
            rows.append([metric, "-", "-", "-", "-", "-"])
        else:
            rows.append(
                [
                    metric,
                    _fmt(res.f_stat),
                    str(res.df1),
                    str(res.df2),
                    _fmt(res.fcrit_05),
                    "yes" if res.reject else "no",
                ]
            )
    return _md_table(header, rows)


def render_report(report: ScoreReport, title: str = "Inpainting experiment") -> str:
    """Full Markdown report: mean table, ANOVA table, failure note."""
    out = io.StringIO()
    out.write(f"# {title}\n\n")
    out.write(f"Backends: {', '.join(report.backends)}. ")
    out.write(f"Cells: {report.total_cells}")
    if report.failed_cells:
        out.write(f" ({report.failed_cells} failed, excluded from statistics)")
    out.write(".\n\n## Mean scores\n\n")
    out.write(render_mean_table(report))
    out.write("\n")
    if len(report.backends) >= 2:
        out.write("\n## One-way ANOVA across backends\n\n")
        out.write(render_anova_table(report))
        out.write("\n")
    out.write(
        "\nScore polarity: brisque falls as perceived quality rises; "
        "dom and koniq rise as perceived quality rises.\n"
    )
    return out.getvalue()
