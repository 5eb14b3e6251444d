"""ROC-AUC, average precision, F1 and the aggregated metric report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given labels (e.g. a single class)."""


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted as one half.

    Uses midranks, so the result equals the pairwise count exactly up to
    floating point rounding.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision; ties in score are ordered by original index."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive")
    order = np.lexsort((np.arange(s.size), -s))
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, s.size + 1)
    return float(precision[hits == 1].sum() / n_pos)


def f1(predictions, labels) -> float:
    p = np.asarray(predictions).reshape(-1).astype(np.int64)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("f1 needs equal-length, non-empty inputs")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


@dataclass
class MetricSummary:
    mean: float
    std: float
    count: int


@dataclass
class MetricReport:
    metrics: dict[str, MetricSummary]
    skipped_tasks: list[str] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: dict[str, Sequence[float]], skipped: Sequence[str] = ()) -> "MetricReport":
        out = {}
        for name, vals in samples.items():
            if len(vals) == 0:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            out[name] = MetricSummary(float(arr.mean()), float(arr.std()), int(arr.size))
        return cls(out, list(skipped))

    def to_text(self) -> str:
        lines = [f"{name}\t{m.mean:.6f}\t{m.std:.6f}\t{m.count}" for name, m in self.metrics.items()]
        if self.skipped_tasks:
            lines.append("skipped\t" + ",".join(self.skipped_tasks))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "metrics": {k: {"mean": v.mean, "std": v.std, "count": v.count} for k, v in self.metrics.items()},
            "skipped_tasks": list(self.skipped_tasks),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def __getitem__(self, name: str) -> MetricSummary:
        return self.metrics[name]

