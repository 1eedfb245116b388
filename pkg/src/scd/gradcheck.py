"""Central finite differences for auditing the hand-written backward passes."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place and restoring it."""
    out = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; 0 when both sides are below ``atol`` everywhere.

    Tensors whose true gradient is identically zero (e.g. a bias feeding a
    batchnorm) only carry round-off on the numeric side, hence the floor.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    diff = np.abs(a - n).max(initial=0.0)
    if scale < atol:
        return 0.0
    return float(diff / scale)


def check_gradients(f: Callable[[], float], params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                    h: float = 1e-5, atol: float = 1e-8) -> dict[str, float]:
    """Relative error per named tensor."""
    return {k: rel_error(grads[k], numeric_grad(f, params[k], h), atol) for k in params}
