"""Set accuracy and latency summaries."""

from __future__ import annotations

import numpy as np

from ..core import ResultSet


def _ids(s) -> frozenset:
    return s.user_ids if isinstance(s, ResultSet) else frozenset(s)


def precision_recall(pred, truth) -> tuple[float, float]:
    """Precision and recall; an empty side scores 1 only when the other is empty too."""
    p, t = _ids(pred), _ids(truth)
    hit = len(p & t)
    if not p and not t:
        return 1.0, 1.0
    precision = hit / len(p) if p else 0.0
    recall = hit / len(t) if t else 0.0
    return precision, recall


def f1(pred, truth) -> float:
    """Harmonic mean of precision and recall; 1 for two empty sets, 0 when exactly one is empty."""
    precision, recall = precision_recall(pred, truth)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def p95(times) -> float:
    return float(np.percentile(np.asarray(times, dtype=np.float64), 95)) if len(times) else 0.0
