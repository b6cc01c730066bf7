"""Central finite differences for checking hand-written backward passes."""
from __future__ import annotations

import numpy as np

EPS = 1e-5


def numerical_grad(f, x: np.ndarray, eps: float = EPS, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    ``f`` takes no arguments and reads ``x``.  When ``indices`` (flat
    positions) is given only those entries are filled; the rest stay NaN.
    """
    grad = np.full(x.shape, np.nan)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_error(analytic, numeric, scale=None) -> float:
    """max |a - n| / max(max |a|, max |n|) over the entries where ``numeric`` is defined.

    Scaling by the largest magnitude keeps near-zero components from
    dominating.  ``scale`` overrides the denominator, e.g. with the magnitude
    of a whole layer's gradient so that a parameter whose true gradient is
    exactly zero (a conv bias feeding batchnorm) is judged against it.
    """
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    if scale is None:
        scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return float(np.abs(a - n).max())
    return float(np.abs(a - n).max() / scale)


def joint_rel_error(pairs) -> float:
    """``rel_error`` over several (analytic, numeric) pairs treated as one vector."""
    pairs = list(pairs)
    scale = 0.0
    for a, n in pairs:
        mask = ~np.isnan(n)
        if mask.any():
            scale = max(scale, np.abs(a[mask]).max(), np.abs(n[mask]).max())
    return max((rel_error(a, n, scale) for a, n in pairs), default=0.0)


def sample_indices(size: int, limit: int, rng) -> np.ndarray:
    """All flat positions when ``size <= limit``, else ``limit`` distinct ones."""
    if size <= limit:
        return np.arange(size)
    return np.sort(rng.permutation(size)[:limit])
