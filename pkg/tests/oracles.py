"""Independent reference implementations used to check the package's metrics.

Everything here is deliberately naive: O(n^2) pair counting for AUC and an
explicit threshold sweep for average precision. Slow but obviously correct.
"""

from __future__ import annotations

import numpy as np


def pairwise_auc(pos_scores, neg_scores) -> float:
    """AUC as the fraction of (pos, neg) pairs ranked correctly, ties at 1/2.

    Materializes the full pos x neg comparison matrix; the counts are exact
    integers, so this equals the per-pair loop bit for bit.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)[:, None]
    neg = np.asarray(neg_scores, dtype=np.float64)[None, :]
    wins = float((pos > neg).sum()) + 0.5 * float((pos == neg).sum())
    return wins / (pos.size * neg.size)


def sweep_average_precision(scores, labels) -> float:
    """Non-interpolated AP via an explicit sweep over distinct score cutoffs.

    AP = sum over recall steps of (recall_i - recall_{i-1}) * precision_i,
    where each step takes all samples with score >= cutoff as predicted
    positive. Ties are handled by only cutting between distinct scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    ap = 0.0
    prev_recall = 0.0
    for cut in sorted(set(scores.tolist()), reverse=True):
        taken = scores >= cut
        tp = int((labels & taken).sum())
        precision = tp / int(taken.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def reversed_perfect_ap(n_pos: int, n_neg: int) -> float:
    """Closed-form AP when every negative outranks every positive."""
    return sum(i / (n_neg + i) for i in range(1, n_pos + 1)) / n_pos
