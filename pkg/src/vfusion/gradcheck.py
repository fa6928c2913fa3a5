"""Central finite differences, used as the independent oracle for every backward."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(v) -> float:
    return float(v.data.reshape(-1)[0]) if isinstance(v, Tensor) else float(v)


def finite_diff_grad(f, x: Tensor, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Estimate ``df/dx`` element by element.

    ``f`` is called as ``f(x)`` while ``x`` is perturbed in place (and restored
    afterwards), so closures over other tensors holding ``x`` work too.
    ``indices`` restricts the estimate to a subset of flat positions; the
    remaining entries are left at zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices

    def call():
        with no_grad():
            return _scalar(f(x))

    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        fp = call()
        flat[i] = orig - eps
        fm = call()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
