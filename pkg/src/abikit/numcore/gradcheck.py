"""Central finite-difference checks for the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


def numeric_gradient(fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-4) -> np.ndarray:
    """d fn() / d wrt by central differences, perturbing ``wrt.data`` in place."""
    out = np.zeros_like(wrt.data, dtype=np.float64)
    flat = wrt.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def max_gradient_error(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-4) -> float:
    """Largest per-tensor relative error between autodiff and finite differences."""
    analytic = grad(fn(), tensors)
    errs = [relative_error(a, numeric_gradient(fn, t, h)) for a, t in zip(analytic, tensors)]
    return max(errs) if errs else 0.0
