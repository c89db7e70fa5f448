"""
Discrimination metrics with bootstrap intervals.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import precision_recall_curve, roc_auc_score


def _check_binary(labels: np.ndarray, scores: np.ndarray):
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("Labels and scores must be one-dimensional arrays of the same length.")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("Labels must be 0 or 1.")
    if len(np.unique(labels)) < 2:
        raise ValueError("Metrics need at least one positive and one negative example.")


def auroc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """
    Area under the ROC curve: the fraction of (positive, negative) pairs ranked correctly, ties counting one half.
    """
    labels, scores = np.asarray(labels, dtype=int), np.asarray(scores, dtype=float)
    _check_binary(labels, scores)
    return float(roc_auc_score(labels, scores))


def auprc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """
    Area under the precision-recall curve. Precision at every recall step is replaced by its envelope, the best
    precision reached at that recall or higher, and the area is summed over the recall steps.
    """
    labels, scores = np.asarray(labels, dtype=int), np.asarray(scores, dtype=float)
    _check_binary(labels, scores)
    precision, recall, _ = precision_recall_curve(labels, scores)
    # recall is decreasing along the curve
    envelope = np.maximum.accumulate(precision)
    return float(-np.sum(np.diff(recall) * envelope[:-1]))


@dataclass
class BootstrapResult:
    estimate: float
    std: float
    lower: float
    upper: float
    n_resamples: int


def bootstrap(labels: Sequence[int], scores: Sequence[float], metric: Callable[[np.ndarray, np.ndarray], float],
              n_bootstrap: int = 1000, seed: int = 0, alpha: float = 0.05) -> BootstrapResult:
    """
    Percentile bootstrap of a metric. Resamples drawing a single class are skipped.

    :param labels: binary labels
    :param scores: predicted scores
    :param metric: a function of (labels, scores)
    :param n_bootstrap: the number of resamples
    :param seed: the seed of the resampling stream
    :param alpha: one minus the interval coverage
    :return: the point estimate with the standard deviation and interval of the resampled values
    """
    labels, scores = np.asarray(labels, dtype=int), np.asarray(scores, dtype=float)
    estimate = metric(labels, scores)
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_bootstrap):
        idx = rng.integers(0, len(labels), size=len(labels))
        if labels[idx].min() == labels[idx].max():
            continue
        values.append(metric(labels[idx], scores[idx]))
    if not values:
        logging.warning("Bootstrap drew no resample with both classes n=%d", len(labels))
        return BootstrapResult(estimate, float("nan"), float("nan"), float("nan"), 0)
    values = np.array(values)
    lower, upper = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return BootstrapResult(estimate, float(values.std(ddof=1)) if len(values) > 1 else 0.0, float(lower),
                           float(upper), len(values))


def binary_report(labels: Sequence[int], scores: Sequence[float], n_bootstrap: int = 1000,
                  seed: int = 0) -> Dict[str, BootstrapResult]:
    """
    AUROC and AUPRC of a set of scores, each with its bootstrap interval.
    """
    return {
        "auroc": bootstrap(labels, scores, auroc, n_bootstrap, seed),
        "auprc": bootstrap(labels, scores, auprc, n_bootstrap, seed),
    }


def report_frame(report: Dict[str, BootstrapResult], **columns) -> pd.DataFrame:
    """
    Flattens a metric report into rows of (metric, estimate, std, lower, upper), prefixed with constant columns.
    """
    rows = []
    for name, result in report.items():
        rows.append({**columns, "metric": name, "estimate": result.estimate, "std": result.std,
                     "lower": result.lower, "upper": result.upper, "n_resamples": result.n_resamples})
    return pd.DataFrame(rows)
