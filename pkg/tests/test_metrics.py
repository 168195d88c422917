"""Ranking-metric tests against brute-force oracles.

AUC is checked against exhaustive pair counting and KS against an
exhaustive scan over every threshold, both independent of the
rank-statistic implementations under test.
"""

import numpy as np
import pytest

from fedada import metrics


def brute_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_ks(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    best = 0.0
    for thr in np.unique(scores):
        tpr = np.mean(pos >= thr)
        fpr = np.mean(neg >= thr)
        best = max(best, abs(tpr - fpr))
    return best


@pytest.mark.parametrize("seed", range(6))
def test_auc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    n = 60
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]  # both classes present
    scores = rng.normal(size=n)
    if seed % 2:  # ties
        scores = np.round(scores, 1)
    assert metrics.auc(scores, labels) == pytest.approx(
        brute_auc(scores, labels), abs=1e-12
    )


@pytest.mark.parametrize("seed", range(6))
def test_ks_matches_exhaustive_thresholds(seed):
    rng = np.random.default_rng(100 + seed)
    n = 60
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]
    scores = rng.normal(size=n)
    if seed % 2:
        scores = np.round(scores, 1)
    assert metrics.ks(scores, labels) == pytest.approx(
        brute_ks(scores, labels), abs=1e-12
    )


def test_auc_known_values():
    assert metrics.auc([0.1, 0.9], [0, 1]) == 1.0
    assert metrics.auc([0.9, 0.1], [0, 1]) == 0.0
    assert metrics.auc([0.5, 0.5], [0, 1]) == 0.5


def test_ks_known_values():
    # perfect separation gives KS 1
    assert metrics.ks([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    # all tied gives KS 0
    assert metrics.ks([0.5, 0.5], [0, 1]) == 0.0


def test_metric_validation():
    with pytest.raises(metrics.MetricError):
        metrics.auc([0.5, 0.5], [1, 1])  # one class missing
    with pytest.raises(metrics.MetricError):
        metrics.ks([0.5], [0, 1])  # length mismatch
    with pytest.raises(metrics.MetricError):
        metrics.auc(np.zeros((2, 2)), np.zeros((2, 2)))  # not 1-d
