"""Metrics and reports: AUROC (exact pair semantics), precision/recall/F1,
per-group tables, confidence-threshold tables, and multi-seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. one class)."""


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties at
    half credit. Computed with midranks, so it matches brute-force pair
    counting exactly."""
    y = np.asarray(labels, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("scores and labels must be flat and aligned")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    sorted_s = s[order]
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0  # midrank, 1-based
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class PRF1:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)


def precision_recall_f1(predicted, labels) -> PRF1:
    """Binary precision/recall/F1 with positive class = behavior change.

    Zero-denominator cases report 0 and set the degenerate flag instead of
    raising, so sweeps over weak models complete.
    """
    p = np.asarray(predicted, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels must align")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    degenerate = (tp + fp) == 0 or (tp + fn) == 0
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return PRF1(precision, recall, f1, degenerate)


@dataclass
class ScoredInstance:
    """One test prediction with its grouping metadata."""

    clip_id: str
    score: float  # probability of the positive class
    label: int
    surgery_type: str = ""
    trainer_id: str = ""

    @property
    def predicted(self) -> int:
        return 1 if self.score >= 0.5 else 0

    @property
    def confidence(self) -> float:
        return max(self.score, 1.0 - self.score)


def per_group_f1(instances: list[ScoredInstance], group_key: str) -> list[tuple[str, int, float]]:
    """F1 per group, rows sorted by group name; counts sum to the total."""
    if group_key not in ("surgery_type", "trainer_id"):
        raise ValueError(f"unknown group key {group_key!r}")
    groups: dict[str, list[ScoredInstance]] = {}
    for inst in instances:
        name = getattr(inst, group_key)
        if not name:
            raise ValueError(f"clip {inst.clip_id} is missing {group_key}")
        groups.setdefault(name, []).append(inst)
    rows = []
    for name in sorted(groups):
        members = groups[name]
        prf = precision_recall_f1([m.predicted for m in members], [m.label for m in members])
        rows.append((name, len(members), prf.f1))
    return rows


def confidence_bins(
    instances: list[ScoredInstance],
    thresholds: tuple[float, ...] = (0.9, 0.85, 0.8, 0.75, 0.7),
) -> list[tuple[float, float, float | None]]:
    """(threshold, fraction of instances above it, accuracy of those) rows.

    Accuracy is None when no instance clears a threshold.
    """
    if any(not 0.5 < t < 1.0 for t in thresholds):
        raise ValueError("thresholds must lie in (0.5, 1)")
    if list(thresholds) != sorted(thresholds, reverse=True):
        raise ValueError("thresholds must be descending")
    n = len(instances)
    rows: list[tuple[float, float, float | None]] = []
    for t in thresholds:
        chosen = [i for i in instances if i.confidence > t]
        if not chosen:
            rows.append((t, 0.0, None))
            continue
        acc = sum(1 for i in chosen if i.predicted == i.label) / len(chosen)
        rows.append((t, len(chosen) / n, acc))
    return rows


@dataclass
class MetricsReport:
    """Scalar metrics plus the per-group and confidence tables for one run
    (or aggregated over seeds)."""

    auroc: float
    precision: float
    recall: float
    f1: float
    per_surgery: list[tuple[str, int, float]] = field(default_factory=list)
    per_trainer: list[tuple[str, int, float]] = field(default_factory=list)
    confidence: list[tuple[float, float, float | None]] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    std: dict[str, float] = field(default_factory=dict)

    _SCALARS = ("auroc", "precision", "recall", "f1")

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self._SCALARS}

    @classmethod
    def from_instances(cls, instances: list[ScoredInstance], seed: int | None = None) -> "MetricsReport":
        labels = [i.label for i in instances]
        preds = [i.predicted for i in instances]
        prf = precision_recall_f1(preds, labels)
        has_surgery = all(i.surgery_type for i in instances)
        has_trainer = all(i.trainer_id for i in instances)
        return cls(
            auroc=auroc([i.score for i in instances], labels),
            precision=prf.precision,
            recall=prf.recall,
            f1=prf.f1,
            per_surgery=per_group_f1(instances, "surgery_type") if has_surgery else [],
            per_trainer=per_group_f1(instances, "trainer_id") if has_trainer else [],
            confidence=confidence_bins(instances),
            seeds=[seed] if seed is not None else [],
        )


def aggregate_seeds(reports: list[MetricsReport]) -> MetricsReport:
    """Element-wise mean and sample standard deviation (n-1) over seeds."""
    if len(reports) < 2:
        raise ValueError("aggregation needs at least two reports")
    keys = MetricsReport._SCALARS
    values = {k: [r.scalars()[k] for r in reports] for k in keys}
    for k, vs in values.items():
        if any(v is None or not math.isfinite(v) for v in vs):
            raise ValueError(f"metric {k} missing or non-finite in a report")
    mean = {k: float(np.mean(v)) for k, v in values.items()}
    std = {k: float(np.std(v, ddof=1)) for k, v in values.items()}
    seeds = [s for r in reports for s in r.seeds]
    return MetricsReport(
        auroc=mean["auroc"],
        precision=mean["precision"],
        recall=mean["recall"],
        f1=mean["f1"],
        seeds=seeds,
        std=std,
    )
