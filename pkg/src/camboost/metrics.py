"""Average precision and mean average precision."""

from __future__ import annotations

import logging

import numpy as np

from .errors import DimensionError, UndefinedMetricError

log = logging.getLogger(__name__)


def average_precision(scores, labels) -> float:
    """Mean of precision@rank over the positives, no interpolation.

    Ties in score are broken by index ascending (a stable descending sort).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise DimensionError(f"scores {s.shape} and labels {y.shape} differ")
    npos = int(y.sum())
    if npos == 0:
        raise UndefinedMetricError("average precision undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, npos + 1) / ranks))


def per_class_ap(score_matrix, label_matrix) -> np.ndarray:
    """AP per column; NaN for columns without positives."""
    s = np.asarray(score_matrix, dtype=np.float64)
    y = np.asarray(label_matrix)
    if s.shape != y.shape or s.ndim != 2:
        raise DimensionError(f"score matrix {s.shape} and label matrix {y.shape} differ")
    out = np.full(s.shape[1], np.nan)
    for c in range(s.shape[1]):
        if y[:, c].any():
            out[c] = average_precision(s[:, c], y[:, c])
    return out


def mean_ap(score_matrix, label_matrix) -> float:
    aps = per_class_ap(score_matrix, label_matrix)
    skipped = int(np.isnan(aps).sum())
    if skipped == aps.size:
        raise UndefinedMetricError("no class has a positive label; mAP undefined")
    if skipped:
        log.info("mAP: skipped %d class(es) without positives", skipped)
    return float(np.nanmean(aps))
