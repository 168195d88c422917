"""Ranking metrics for model comparison: ROC AUC and the KS statistic.

Both follow the credit-scoring conventions: AUC via the Mann-Whitney rank
statistic with ties averaged, KS as the maximum |TPR - FPR| over score
thresholds.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(Exception):
    pass


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("both classes must be present")
    return scores, labels, n_pos, n_neg


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    ranks = rankdata(scores)
    pos_rank_sum = float(np.sum(ranks[labels == 1]))
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def ks(scores, labels) -> float:
    """Maximum over thresholds of |TPR - FPR|."""
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # only evaluate at the last index of each tied score block
    boundary = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tpr = tp[boundary] / n_pos
    fpr = fp[boundary] / n_neg
    return float(np.max(np.abs(tpr - fpr)))
