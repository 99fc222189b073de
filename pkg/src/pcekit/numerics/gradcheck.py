"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-5) -> float:
    """Entry-wise relative error.  The denominator never drops below
    ``floor``, so structurally zero gradients are judged on absolute error."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(loss_fn, tensors, h: float = 1e-5, max_entries: int | None = None, rng=None, floor: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn()`` must rebuild the graph and return a scalar tensor.  With
    ``max_entries`` only a random subset of entries per tensor is probed.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric, floor))
    for t in tensors:
        t.grad = None
    return worst
