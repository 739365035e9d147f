"""Training losses: log-cosh and MSE, each returning (scalar, grad wrt pred)."""

from __future__ import annotations

import math

import numpy as np

_LN2 = math.log(2.0)


def logcosh_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ln(cosh(pred - target)), overflow-safe for any error size.

    ln cosh d = logaddexp(d, -d) - ln 2; the naive cosh overflows near
    |d| ~ 350 in float64.  Gradient is tanh(d) / n.
    """
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    d = pred - target
    loss = float(np.mean(np.logaddexp(d, -d))) - _LN2
    grad = np.tanh(d) / d.size
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error; gradient is 2 (pred - target) / n."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    d = pred - target
    loss = float(np.mean(d * d))
    grad = 2.0 * d / d.size
    return loss, grad


LOSSES = {"logcosh": logcosh_loss, "mse": mse_loss}
