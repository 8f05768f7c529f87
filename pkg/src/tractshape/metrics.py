"""Evaluation metrics: Pearson correlation and variance-normalized MSE."""

from __future__ import annotations

import numpy as np

from .errors import ZeroVariance


def pearson_r(xs, ys) -> float:
    """Pearson correlation coefficient; raises ZeroVariance on constant input."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError(f"need two equal-length 1-D arrays of size >= 2, got {xs.shape}, {ys.shape}")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise ZeroVariance("pearson_r undefined for constant input")
    r = float(np.sum(dx * dy) / (sx * sy))
    return max(-1.0, min(1.0, r))


def nmse(pred, gt) -> float:
    """Sum of squared errors over ground-truth total variance.

    0 is perfect; 1 matches the constant mean predictor. Invariant under
    adding a constant to both arguments or scaling both by a nonzero factor.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError(f"need two equal-length 1-D arrays of size >= 2, got {pred.shape}, {gt.shape}")
    denom = np.sum((gt - gt.mean()) ** 2)
    if denom == 0:
        raise ZeroVariance("nmse undefined for constant ground truth")
    return float(np.sum((pred - gt) ** 2) / denom)
