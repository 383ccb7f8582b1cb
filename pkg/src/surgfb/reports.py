"""Report rendering: comma-separated metric tables, structured summary
records, per-epoch curves, and plot-ready ROC points.

All numbers are written with fixed six-decimal formatting so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

from .evaluation import MetricsReport, ScoredInstance


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def write_summary(report: MetricsReport, path: str | Path) -> None:
    """One structured summary record (JSON, stable key order)."""
    obj = {
        "metrics": {k: round(v, 6) for k, v in report.scalars().items()},
        "std": {k: round(v, 6) for k, v in report.std.items()},
        "seeds": report.seeds,
    }
    if report.per_surgery:
        obj["per_surgery"] = [[n, c, round(f1, 6)] for n, c, f1 in report.per_surgery]
    if report.per_trainer:
        obj["per_trainer"] = [[n, c, round(f1, 6)] for n, c, f1 in report.per_trainer]
    if report.confidence:
        obj["confidence"] = [
            [t, round(pct, 6), None if acc is None else round(acc, 6)]
            for t, pct, acc in report.confidence
        ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_method_table(rows: list[tuple[str, MetricsReport]], path: str | Path) -> None:
    """Method comparison table: method, AUROC, precision, recall (mean and,
    when aggregated, std)."""
    lines = ["method,auroc,auroc_std,precision,precision_std,recall,recall_std"]
    for name, rep in rows:
        lines.append(
            ",".join(
                [
                    name,
                    _fmt(rep.auroc), _fmt(rep.std.get("auroc")),
                    _fmt(rep.precision), _fmt(rep.std.get("precision")),
                    _fmt(rep.recall), _fmt(rep.std.get("recall")),
                ]
            )
        )
    _write_lines(path, lines)


def write_group_table(rows: list[tuple[str, int, float]], group_key: str, path: str | Path) -> None:
    lines = [f"{group_key},n_instances,f1"]
    for name, count, f1 in rows:
        lines.append(f"{name},{count},{_fmt(f1)}")
    _write_lines(path, lines)


def write_confidence_table(rows: list[tuple[float, float, float | None]], path: str | Path) -> None:
    lines = ["confidence_threshold,pct_instances,accuracy"]
    for t, pct, acc in rows:
        lines.append(f"{_fmt(t)},{_fmt(pct)},{_fmt(acc)}")
    _write_lines(path, lines)


def write_curve(values: list[float], name: str, path: str | Path) -> None:
    """Per-epoch records, one JSON object per line."""
    lines = [json.dumps({"epoch": i, name: round(v, 6)}, sort_keys=True) for i, v in enumerate(values)]
    _write_lines(path, lines)


def roc_points(instances: list[ScoredInstance]) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) triples at every distinct score, plot-ready."""
    n_pos = sum(1 for i in instances if i.label == 1)
    n_neg = len(instances) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    points = []
    for t in sorted({i.score for i in instances}, reverse=True):
        tp = sum(1 for i in instances if i.score >= t and i.label == 1)
        fp = sum(1 for i in instances if i.score >= t and i.label == 0)
        points.append((t, fp / n_neg, tp / n_pos))
    return points


def write_roc_points(instances: list[ScoredInstance], path: str | Path) -> None:
    lines = ["threshold,fpr,tpr"]
    for t, fpr, tpr in roc_points(instances):
        lines.append(f"{_fmt(t)},{_fmt(fpr)},{_fmt(tpr)}")
    _write_lines(path, lines)


def _write_lines(path: str | Path, lines: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
