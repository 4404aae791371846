"""Fixed-step gradient descent with an Armijo backtracking safeguard."""

from __future__ import annotations

import numpy as np

ARMIJO_C = 1e-4
MAX_HALVINGS = 40


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during optimization."""


def descent_step(loss_fn, x: np.ndarray, f0: float, grad: np.ndarray, step_size: float):
    """One step ``x - t * grad`` with ``t = step_size`` halved until Armijo holds.

    Returns ``(x_new, t)``; ``t = 0`` if no halving satisfied the condition.
    At ordinary step sizes the first trial is accepted, so this is plain
    gradient descent; it only bites when a stiff term (a huge KL weight)
    would otherwise blow the iterate up.
    """
    if not np.all(np.isfinite(grad)) or not np.isfinite(f0):
        raise NumericError("non-finite loss or gradient")
    if step_size == 0:
        return x, 0.0
    gg = float((grad * grad).sum())
    if gg == 0.0:
        return x, 0.0
    t = step_size
    for _ in range(MAX_HALVINGS):
        cand = x - t * grad
        f = loss_fn(cand)
        if np.isfinite(f) and f <= f0 - ARMIJO_C * t * gg:
            return cand, t
        t *= 0.5
    return x, 0.0
