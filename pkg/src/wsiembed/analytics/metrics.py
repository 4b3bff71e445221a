"""ROC AUC via the Mann-Whitney U statistic, ties counted as one half."""

import numpy as np
from scipy.stats import rankdata

from ..errors import NonFiniteInput, SingleClass


def roc_auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteInput("scores must be finite")
    positive = labels.astype(bool)
    if not np.array_equal(np.unique(labels.astype(np.int64)), np.array([0, 1])):
        raise SingleClass("roc_auc needs binary 0/1 labels with both classes present")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    # midranks make ties contribute exactly 1/2 per pos/neg pair
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
