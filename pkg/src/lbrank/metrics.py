"""Evaluation stack: NDCG, ROC/AUC, error rate, and unsupervised baselines.

The NDCG discount defaults to the configured gain increments, which makes
the scaled divergence of a ranking coincide with its NDCG loss when the
relevance grades equal the scores. The classic 1/log2(i+1) discount stays
available for comparability with LETOR conventions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import (
    ConcaveGain,
    QueryInstance,
    Ranking,
    ScoreList,
    SimplexWeights,
    as_score_list,
    ranking_from_scores,
    weighted_average_scores,
)

__all__ = [
    "RelevanceJudgments",
    "ndcg_at_k",
    "ndcg_loss",
    "roc_auc",
    "error_rate",
    "baseline_average",
    "baseline_borda",
    "write_metric_csv",
    "format_table",
]


@dataclass(frozen=True, eq=False)
class RelevanceJudgments:
    """Graded relevance over the N candidates of a query."""

    r: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.r, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("relevance must be a non-empty sequence")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("relevance grades must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "r", arr)

    @property
    def n(self) -> int:
        return int(self.r.size)

    @property
    def ideal_order(self) -> Ranking:
        """Ground-truth ranking: grades sorted descending, ties by index."""
        return ranking_from_scores(self.r)

    def has_relevant(self) -> bool:
        return bool(np.any(self.r > 0.0))


def _as_judgments(rel) -> RelevanceJudgments:
    return rel if isinstance(rel, RelevanceJudgments) else RelevanceJudgments(np.asarray(rel, float))


def ndcg_at_k(sigma: Ranking, rel, k: int, discount: ConcaveGain) -> float:
    """NDCG truncated at k with the truncated-ideal normalizer.

    Value in [0, 1]; exactly 1 when the top k of ``sigma`` matches a
    relevance-descending order up to ties among equal grades.
    """
    judgments = _as_judgments(rel)
    if sigma.n != judgments.n:
        raise ValueError("ranking and relevance lengths differ")
    if not 1 <= k <= sigma.n:
        raise ValueError(f"k={k} outside 1..{sigma.n}")
    if discount.capacity < k:
        raise ValueError(f"discount covers {discount.capacity} positions, need {k}")
    d = discount.increments[:k]
    ideal = float(np.sort(judgments.r)[::-1][:k] @ d)
    if ideal == 0.0:
        raise ValueError("no relevant candidates")
    return float(judgments.r[sigma.order[:k]] @ d) / ideal


def ndcg_loss(sigma: Ranking, rel, discount: ConcaveGain) -> float:
    """Full-list NDCG loss 1 - NDCG(sigma); in [0, 1]."""
    return 1.0 - ndcg_at_k(sigma, rel, sigma.n, discount)


def roc_auc(scores: ScoreList | Sequence[float] | np.ndarray, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    P(score_pos > score_neg) + 0.5 P(tie), computed from tie-averaged
    ranks. Both classes must be present. Invariant under any strictly
    increasing transform of the scores.
    """
    s = as_score_list(scores).scores
    y = np.asarray(labels)
    if y.shape != s.shape:
        raise ValueError("labels length does not match scores")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(s)
    pos_rank_sum = float(np.sum(ranks[y == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def error_rate(predicted: Sequence[int], truth: Sequence[int]) -> float:
    """Top-1 mismatch fraction between two index sequences."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predicted and truth must be non-empty and aligned")
    return float(np.mean(pred != true))


def baseline_average(q: QueryInstance) -> Ranking:
    """Uniform-mean baseline; agrees exactly with uniform-weight inference."""
    return ranking_from_scores(weighted_average_scores(q, SimplexWeights.uniform(q.k)))


def baseline_borda(q: QueryInstance) -> Ranking:
    """Borda count: position i in a list is worth N - 1 - i points.

    Every list votes through its own sorted order (ties by lower index);
    candidates are ranked by total points, ties again by lower index.
    """
    points = np.zeros(q.n, dtype=np.float64)
    for x in q.lists:
        order = ranking_from_scores(x).order
        points[order] += np.arange(q.n - 1, -1, -1, dtype=np.float64)
    return ranking_from_scores(points)


def write_metric_csv(path: str | Path, metric_columns: Sequence[str],
                     rows: Sequence[tuple[str, str, Sequence[float]]]) -> None:
    """CSV report: header, one row per (method, query), and a MEAN row per method.

    ``rows`` holds (method, query_id, values) with values aligned to
    ``metric_columns``. Means are computed here so every report carries them.
    """
    by_method: dict[str, list[Sequence[float]]] = {}
    ordered_methods: list[str] = []
    for method, _, values in rows:
        if method not in by_method:
            by_method[method] = []
            ordered_methods.append(method)
        by_method[method].append(values)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "query_id", *metric_columns])
        for method, query_id, values in rows:
            writer.writerow([method, query_id, *[repr(float(v)) for v in values]])
        for method in ordered_methods:
            means = np.mean(np.asarray(by_method[method], dtype=np.float64), axis=0)
            writer.writerow([method, "MEAN", *[repr(float(v)) for v in means]])


def format_table(col_headers: Sequence[str], row_labels: Sequence[str],
                 values: Sequence[Sequence[float]], precision: int = 4) -> str:
    """Aligned plain-text table; rows are methods, columns are metrics."""
    if len(row_labels) != len(values):
        raise ValueError("one value row required per label")
    body = [[f"{float(v):.{precision}f}" for v in row] for row in values]
    headers = ["Method", *col_headers]
    table_rows = [[label, *row] for label, row in zip(row_labels, body)]
    widths = [max([len(headers[c])] + [len(r[c]) for r in table_rows])
              for c in range(len(headers))]
    def fmt(cells):
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in table_rows)
    return "\n".join(lines)
