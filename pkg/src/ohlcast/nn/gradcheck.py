"""Central finite differences, the independent oracle for every analytic gradient."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ohlcast.nn.optim import ParamTree


def finite_difference_gradient(
    loss_fn: Callable[[], float], params: ParamTree, step: float
) -> ParamTree:
    """Central differences (L(p+h) - L(p-h)) / 2h, entry by entry.

    ``loss_fn`` must read the arrays in ``params``; entries are perturbed in
    place and restored afterwards.
    """
    if step <= 0:
        raise ValueError("finite difference step must be positive")
    grads: ParamTree = {}
    for key, arr in params.items():
        if not arr.flags.c_contiguous:
            raise ValueError(f"parameter {key!r} must be C-contiguous to perturb in place")
        flat = arr.reshape(-1)
        g = np.empty(flat.shape)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = loss_fn()
            flat[idx] = orig - step
            minus = loss_fn()
            flat[idx] = orig
            g[idx] = (plus - minus) / (2.0 * step)
        grads[key] = g.reshape(arr.shape)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all entries.

    Accepts two ParamTrees or two bare arrays.  The floor keeps near-zero
    gradient pairs from inflating the ratio with finite-difference roundoff;
    for gradients above the floor this is the plain relative error.
    """
    if not isinstance(analytic, dict):
        analytic = {"": np.asarray(analytic)}
        numeric = {"": np.asarray(numeric)}
    worst = 0.0
    for key, a in analytic.items():
        n = numeric[key]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = np.abs(a - n) / denom
        worst = max(worst, float(err.max()))
    return worst
