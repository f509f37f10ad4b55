"""Weighted circular and magnitude losses with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossReport:
    """Scalar loss value plus its gradient with respect to the prediction."""

    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class HybridLossReport:
    """Composite phase + magnitude loss; per-head reports are unscaled.

    The gradient of `total` with respect to the magnitude head is
    `lambda_mag * magnitude.gradient`.
    """

    total: float
    phase: LossReport
    magnitude: LossReport
    lambda_mag: float


def _grid(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=np.float64)


def cosine_loss(pred, target, weights=None) -> LossReport:
    """Mean weighted 1 - cos(pred - target); weights default to all ones.

    With mean-1 weights the value stays on the unweighted scale, where a
    uniformly random prediction scores 1 and an antipodal one scores 2.
    """
    p = _grid(pred)
    t = _grid(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    w = np.ones_like(p) if weights is None else _grid(weights)
    if w.shape != p.shape:
        raise ValueError(f"weight shape {w.shape} does not match {p.shape}")
    err = p - t
    n = p.size
    value = float(np.sum(w * (1.0 - np.cos(err))) / n)
    gradient = w * np.sin(err) / n
    return LossReport(value=value, gradient=gradient)


def magnitude_mse(pred, target) -> LossReport:
    """Mean squared error between normalized magnitude grids."""
    for m in (pred, target):
        if getattr(m, "normalized", True) is False:
            raise ValueError("magnitude MSE expects normalized magnitudes")
    p = _grid(pred)
    t = _grid(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    diff = p - t
    n = p.size
    value = float(np.sum(diff * diff) / n)
    gradient = 2.0 * diff / n
    return LossReport(value=value, gradient=gradient)


def hybrid_loss(
    pred_if,
    target_if,
    weights,
    pred_mag,
    target_mag,
    lambda_mag: float = 1.0,
) -> HybridLossReport:
    """Cosine phase loss plus lambda_mag times the magnitude reconstruction MSE."""
    if lambda_mag < 0.0:
        raise ValueError("lambda_mag must be nonnegative")
    phase = cosine_loss(pred_if, target_if, weights)
    magnitude = magnitude_mse(pred_mag, target_mag)
    total = phase.value + lambda_mag * magnitude.value
    return HybridLossReport(
        total=total, phase=phase, magnitude=magnitude, lambda_mag=lambda_mag
    )
