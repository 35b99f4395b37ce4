"""Atypicality scores in summary space."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    pooled = np.concatenate([x, y], axis=0)
    h = float(np.median(pdist(pooled)))
    if h == 0:
        raise ValueError("all pooled summaries coincide; bandwidth undefined")
    return h


def summary_mmd(reference, observed, bandwidth: float | None = None) -> float:
    """Unbiased squared MMD with a Gaussian kernel (median-heuristic bandwidth by default)."""
    x = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    y = np.atleast_2d(np.asarray(observed, dtype=np.float64))
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("unbiased MMD needs at least two samples per set")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    h = bandwidth or median_bandwidth(x, y)

    def k(a, b):
        return np.exp(-cdist(a, b, "sqeuclidean") / (2 * h * h))

    n, m = x.shape[0], y.shape[0]
    kxx, kyy = k(x, x), k(y, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(term_x + term_y - 2 * k(x, y).mean())


def mahalanobis_score(reference, observed) -> np.ndarray | float:
    """Mahalanobis distance of ``observed`` row(s) from the reference cloud.

    The covariance is regularised by ``1e-6 * trace / dim`` on the diagonal.
    """
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 2:
        raise ValueError("reference must be (n, dim)")
    n, d = ref.shape
    if n <= d:
        raise ValueError(f"need more reference rows ({n}) than dimensions ({d})")
    obs = np.asarray(observed, dtype=np.float64)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    mean = ref.mean(0)
    cov = np.cov(ref, rowvar=False).reshape(d, d)
    cov = cov + 1e-6 * np.trace(cov) / d * np.eye(d)
    try:
        factor = linalg.cho_factor(cov)
    except linalg.LinAlgError as e:
        raise ValueError("covariance is singular after regularisation") from e
    diff = obs - mean
    sq = np.einsum("ij,ij->i", diff, linalg.cho_solve(factor, diff.T).T)
    out = np.sqrt(np.maximum(sq, 0))
    return float(out[0]) if single else out
