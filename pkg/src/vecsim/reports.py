"""Report artifacts: CSV outputs, aggregation, and plain-text summaries.

Aggregates are always computed through ``aggregate_records`` over the flat
row schema of records.csv, so a summary recomputed from the CSV matches the
one produced by a live run byte for byte (modulo header comments).
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .sim import ComparisonResult, SimReport

RECORD_COLUMNS = [
    "workflow_id",
    "scheduler",
    "experiment",
    "scale",
    "outcome",
    "cluster",
    "attempts",
    "nodes_sampled",
    "search_latency_ms",
    "total_search_latency_ms",
    "recovery_s",
    "total_s",
    "productivity_rate",
    "predictions",
]

DECISION_COLUMNS = [
    "workflow_id",
    "scheduler",
    "cluster",
    "attempt",
    "node_id",
    "nodes_sampled",
    "search_latency_ms",
    "outcome",
]


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value, spec: str) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    if spec == "d":
        return str(int(value))
    return format(float(value), spec)


def _csv_text(columns: Sequence[str], rows: Iterable[Sequence[str]], header: str | None) -> str:
    import io

    buf = io.StringIO()
    if header:
        for line in header.rstrip("\n").split("\n"):
            buf.write(f"# {line}\n" if not line.startswith("#") else f"{line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def records_to_rows(report: SimReport, experiment: str, scale: int) -> list[dict]:
    rows = []
    for r in report.records:
        rows.append(
            {
                "workflow_id": r.workflow_id,
                "scheduler": r.scheduler,
                "experiment": experiment,
                "scale": scale,
                "outcome": r.outcome,
                "cluster": r.cluster_index,
                "attempts": len(r.attempts),
                "nodes_sampled": r.nodes_sampled,
                "search_latency_ms": (
                    r.search_latency_s * 1000.0 if not math.isnan(r.search_latency_s) else float("nan")
                ),
                "total_search_latency_ms": r.total_search_latency_s * 1000.0,
                "recovery_s": r.recovery_time_s,
                "total_s": r.total_execution_time_s,
                "productivity_rate": r.productivity_rate,
                "predictions": r.predictions_used,
            }
        )
    return rows


_RECORD_FORMATS = {
    "workflow_id": "d",
    "scale": "d",
    "cluster": "d",
    "attempts": "d",
    "nodes_sampled": "d",
    "search_latency_ms": ".6f",
    "total_search_latency_ms": ".6f",
    "recovery_s": ".3f",
    "total_s": ".3f",
    "productivity_rate": ".6f",
    "predictions": "d",
}


def write_records_csv(rows: Sequence[dict], path: str, header: str | None = None) -> None:
    out = []
    for row in rows:
        out.append(
            [
                _fmt(row[c], _RECORD_FORMATS[c]) if c in _RECORD_FORMATS else str(row[c])
                for c in RECORD_COLUMNS
            ]
        )
    atomic_write_text(path, _csv_text(RECORD_COLUMNS, out, header))


def read_records_csv(path: str) -> list[dict]:
    rows: list[dict] = []
    with open(path, newline="") as fh:
        data = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(data)
    for raw in reader:
        row: dict = {}
        for col in RECORD_COLUMNS:
            value = raw.get(col, "")
            spec = _RECORD_FORMATS.get(col)
            if spec is None:
                row[col] = value
            elif value == "":
                row[col] = None if spec == "d" else float("nan")
            elif spec == "d":
                row[col] = int(value)
            else:
                row[col] = float(value)
        rows.append(row)
    return rows


def aggregate_records(rows: Sequence[dict]) -> dict:
    """Summary stats keyed by (experiment, scale, scheduler)."""
    groups: dict[tuple[str, int, str], list[dict]] = {}
    for row in rows:
        key = (row["experiment"], int(row["scale"]), row["scheduler"])
        groups.setdefault(key, []).append(row)
    out: dict = {}
    for key, members in sorted(groups.items()):
        latencies = [
            r["search_latency_ms"]
            for r in members
            if r["search_latency_ms"] is not None and not math.isnan(r["search_latency_ms"])
        ]
        prods = [
            r["productivity_rate"]
            for r in members
            if r["outcome"] == "completed" and not math.isnan(r["productivity_rate"])
        ]
        recoveries = [r["recovery_s"] for r in members if r["outcome"] == "completed"]
        stats = {
            "count": len(members),
            "completed": sum(1 for r in members if r["outcome"] == "completed"),
            "failed": sum(1 for r in members if r["outcome"] == "failed"),
            "rejected": sum(1 for r in members if r["outcome"] == "rejected"),
            "mean_search_latency_ms": float(np.mean(latencies)) if latencies else float("nan"),
            "median_search_latency_ms": float(np.median(latencies)) if latencies else float("nan"),
            "mean_productivity": float(np.mean(prods)) if prods else float("nan"),
            "median_productivity": float(np.median(prods)) if prods else float("nan"),
            "p25_productivity": float(np.percentile(prods, 25)) if prods else float("nan"),
            "p75_productivity": float(np.percentile(prods, 75)) if prods else float("nan"),
            "mean_recovery_s": float(np.mean(recoveries)) if recoveries else float("nan"),
            "total_predictions": int(sum(r["predictions"] or 0 for r in members)),
        }
        out[key] = stats
    return out


def comparison_rows(comparison: ComparisonResult, instance_scale: int) -> list[dict]:
    """Flatten every run of a comparison into records.csv rows."""
    rows: list[dict] = []
    for (scale, scheduler), report in sorted(comparison.latency_reports.items()):
        rows.extend(records_to_rows(report, "latency", scale))
    for scheduler, report in sorted(comparison.productivity_reports.items()):
        rows.extend(records_to_rows(report, "productivity", instance_scale))
    return rows


def write_latency_by_instance_csv(
    comparison: ComparisonResult, path: str, header: str | None = None
) -> None:
    columns = ["workflow_id", "veca_ms", "vela_ms", "vecflex_ms"]
    rows = []
    for row in comparison.latency_by_instance:
        rows.append(
            [
                _fmt(row["workflow_id"], "d"),
                _fmt(row.get("veca"), ".6f"),
                _fmt(row.get("vela"), ".6f"),
                _fmt(row.get("vecflex"), ".6f"),
            ]
        )
    atomic_write_text(path, _csv_text(columns, rows, header))


def write_latency_by_scale_csv(
    comparison: ComparisonResult, path: str, header: str | None = None
) -> None:
    columns = ["scale", "scheduler", "mean_latency_ms"]
    rows = [
        [_fmt(scale, "d"), scheduler, _fmt(value, ".6f")]
        for scale, scheduler, value in comparison.latency_by_scale
    ]
    atomic_write_text(path, _csv_text(columns, rows, header))


def write_productivity_csv(
    comparison: ComparisonResult, path: str, header: str | None = None
) -> None:
    columns = ["scheduler", "workflow_id", "productivity_rate"]
    rows = [
        [scheduler, _fmt(wid, "d"), _fmt(value, ".6f")]
        for scheduler, wid, value in comparison.productivity
    ]
    atomic_write_text(path, _csv_text(columns, rows, header))


def write_decision_log_csv(
    log_rows: Sequence[dict], path: str, header: str | None = None
) -> None:
    rows = []
    for row in log_rows:
        cluster = row["cluster"]
        rows.append(
            [
                _fmt(row["workflow_id"], "d"),
                row["scheduler"],
                _fmt(cluster, "d") if cluster != "" else "",
                _fmt(row["attempt"], "d"),
                _fmt(row["node_id"], "d"),
                _fmt(row["nodes_sampled"], "d"),
                _fmt(row["search_latency_ms"], ".6f"),
                row["outcome"],
            ]
        )
    atomic_write_text(path, _csv_text(DECISION_COLUMNS, rows, header))


def _fmt_cell(value: float, width: int = 10) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-".rjust(width)
    return f"{value:.3f}".rjust(width)


def build_summary_text(aggregates: dict, meta_lines: Sequence[str] = ()) -> str:
    """Human-readable run summary built purely from aggregated record rows."""
    lines: list[str] = []
    for meta in meta_lines:
        lines.append(f"# {meta}")
    schedulers = sorted({key[2] for key in aggregates})
    order = [s for s in ("veca", "vela", "vecflex") if s in schedulers]
    order += [s for s in schedulers if s not in order]

    latency_keys = sorted(key for key in aggregates if key[0] == "latency")
    if latency_keys:
        scales = sorted({key[1] for key in latency_keys})
        lines.append("")
        lines.append("Node-search latency (mean per workflow, ms)")
        lines.append("  scale" + "".join(s.rjust(11) for s in order) + "  veca/vela".rjust(11))
        for scale in scales:
            cells = []
            by_sched = {}
            for s in order:
                stats = aggregates.get(("latency", scale, s))
                value = stats["mean_search_latency_ms"] if stats else float("nan")
                by_sched[s] = value
                cells.append(_fmt_cell(value, 11))
            ratio = float("nan")
            if (
                "veca" in by_sched
                and "vela" in by_sched
                and not math.isnan(by_sched["veca"])
                and not math.isnan(by_sched["vela"])
                and by_sched["vela"] > 0
            ):
                ratio = by_sched["veca"] / by_sched["vela"]
            lines.append(f"{scale:>7d}" + "".join(cells) + _fmt_cell(ratio, 11))

    prod_keys = sorted(key for key in aggregates if key[0] == "productivity")
    if prod_keys:
        lines.append("")
        lines.append("Productivity rate (completed workflows, %)")
        lines.append(
            "  scheduler   completed  failed  rejected"
            + "".join(h.rjust(11) for h in ("mean", "median", "p25", "p75"))
        )
        for key in prod_keys:
            stats = aggregates[key]
            scheduler = key[2]
            lines.append(
                f"  {scheduler:<12}{stats['completed']:>8d}{stats['failed']:>8d}{stats['rejected']:>10d}"
                + _fmt_cell(stats["mean_productivity"], 11)
                + _fmt_cell(stats["median_productivity"], 11)
                + _fmt_cell(stats["p25_productivity"], 11)
                + _fmt_cell(stats["p75_productivity"], 11)
            )

    other_keys = sorted(key for key in aggregates if key[0] not in ("latency", "productivity"))
    for key in other_keys:
        stats = aggregates[key]
        lines.append("")
        lines.append(
            f"Run experiment={key[0]} scale={key[1]} scheduler={key[2]}: "
            f"{stats['completed']}/{stats['count']} completed, "
            f"{stats['failed']} failed, {stats['rejected']} rejected; "
            f"mean latency {_fmt_cell(stats['mean_search_latency_ms'], 0).strip()} ms; "
            f"mean productivity {_fmt_cell(stats['mean_productivity'], 0).strip()}"
        )
    lines.append("")
    return "\n".join(lines)
