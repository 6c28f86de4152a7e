"""Clustering agreement metrics: NMI, ACC, pairwise F-measure and ARI.

All four are computed from a contingency table between the ground-truth
classes and the predicted clusters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ContingencyTable:
    counts: np.ndarray  # classes x clusters

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(truth, pred) -> ContingencyTable:
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    if truth.shape != pred.shape:
        raise ValueError(f"label vectors differ in length: {truth.size} vs {pred.size}")
    if truth.size == 0:
        raise ValueError("empty label vectors")
    _, ti = np.unique(truth, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    counts = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(counts, (ti, pi), 1)
    return ContingencyTable(counts)


def _same_partition(table: ContingencyTable) -> bool:
    nz = table.counts > 0
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(truth, pred) -> float:
    """Mutual information over the larger of the two entropies (natural log).

    When an entropy is zero the ratio is 0/0; we return 1 if the two
    partitions are identical and 0 otherwise.
    """
    table = contingency(truth, pred)
    n = table.n
    h_true = _entropy(table.row_sums, n)
    h_pred = _entropy(table.col_sums, n)
    denom = max(h_true, h_pred)
    if denom == 0.0:
        return 1.0 if _same_partition(table) else 0.0
    nz = table.counts > 0
    pij = table.counts[nz] / n
    outer = np.outer(table.row_sums, table.col_sums)[nz] / (n * n)
    mi = float(np.sum(pij * np.log(pij / outer)))
    return min(max(mi / denom, 0.0), 1.0)


def acc(truth, pred) -> float:
    """Accuracy under the best one-to-one cluster-to-class map (Kuhn-Munkres)."""
    table = contingency(truth, pred)
    r, s = table.counts.shape
    size = max(r, s)
    weights = np.zeros((size, size), dtype=np.int64)
    weights[:r, :s] = table.counts
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum()) / table.n


def pair_counts(truth, pred):
    """``(tp, same_pred, same_truth)`` pair counts over all unordered pairs."""
    table = contingency(truth, pred)

    def comb2(x):
        x = np.asarray(x, dtype=np.int64)
        return int(np.sum(x * (x - 1) // 2))

    return comb2(table.counts), comb2(table.col_sums), comb2(table.row_sums)


def f_measure(truth, pred) -> float:
    """Harmonic mean of pairwise precision and recall.

    A pair is positive when both samples share a cluster.  If neither
    partition has a positive pair the score is undefined; a warning is
    issued and 0 returned.
    """
    if np.size(truth) < 2:
        raise ValueError("f_measure needs at least 2 samples")
    tp, same_pred, same_truth = pair_counts(truth, pred)
    if same_pred == 0 and same_truth == 0:
        warnings.warn("f_measure undefined: no co-clustered pairs in either partition",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    if tp == 0:
        return 0.0
    precision = tp / same_pred
    recall = tp / same_truth
    return 2.0 * precision * recall / (precision + recall)


def ari(truth, pred) -> float:
    """Adjusted Rand index."""
    if np.size(truth) < 2:
        raise ValueError("ari needs at least 2 samples")
    table = contingency(truth, pred)
    tp, sum_b, sum_a = pair_counts(truth, pred)
    n = table.n
    total = n * (n - 1) // 2
    # integer form of (index - expected) / (max_index - expected), scaled by 2 * total
    num = 2 * (tp * total - sum_a * sum_b)
    den = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if den == 0:
        return 1.0 if _same_partition(table) else 0.0
    return num / den


def evaluate(truth, pred) -> dict:
    """Report keyed like the result tables: nmi, acc, ar, f_measure."""
    return {
        "nmi": nmi(truth, pred),
        "acc": acc(truth, pred),
        "ar": ari(truth, pred),
        "f_measure": f_measure(truth, pred),
    }
