"""SRCC / PLCC with midrank ties. Constant input raises instead of returning NaN."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedCorrelationError(ValueError):
    pass


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError("need at least two paired observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite value in paired series")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    r = float(np.dot(da, db) / (sa * sb))
    return min(1.0, max(-1.0, r))


def plcc(a, b) -> float:
    """Sample Pearson linear correlation."""
    return _pearson(*_paired(a, b))


def srcc(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of midranks."""
    a, b = _paired(a, b)
    return _pearson(rankdata(a), rankdata(b))


def correlations(a, b) -> tuple[float, float]:
    return srcc(a, b), plcc(a, b)
