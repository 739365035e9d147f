"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


def gradient_check(loss_fn, params, grads=None, *, n_samples: int = 200,
                   eps: float = 1e-5, seed: int = 0, floor: float = 1e-6,
                   kink_tol: float = 1e-3) -> float:
    """Max relative error of analytic gradients over sampled coordinates.

    `loss_fn()` re-evaluates the scalar loss from the current values of
    `params` (Parameter blocks, or anything with a writable `.value`);
    `grads` are the analytic gradients aligned with params, defaulting to
    each block's `.grad`.  Intended for float64 values: float32 rounding
    already eats most of a 1e-4 tolerance.

    The relative error denominator is max(|analytic|, |numeric|, floor).
    Coordinates where the loss is locally non-smooth (a pooling argmax or
    ReLU sign flips inside the probe interval) are flagged by re-probing at
    eps/2: if the two difference quotients disagree beyond `kink_tol`, the
    coordinate is excluded as a tie/kink point.  A genuinely wrong gradient
    is smooth, so both probes agree with each other and the error stands.
    """
    if grads is None:
        grads = [p.grad for p in params]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.value.size for p in params])
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    for c in np.sort(coords):
        i = int(np.searchsorted(offsets, c, side="right")) - 1
        j = int(c - offsets[i])
        flat = params[i].value.reshape(-1)
        orig = flat[j]

        def quotient(h):
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            return (up - down) / (2.0 * h)

        numeric = quotient(eps)
        analytic = float(np.asarray(grads[i]).reshape(-1)[j])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if err > worst:
            refined = quotient(eps / 2.0)
            spread = abs(numeric - refined) / max(abs(numeric), abs(refined), floor)
            if spread > kink_tol:
                continue
            worst = err
    return worst
