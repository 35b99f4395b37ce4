"""Point estimation heads trained under proper scoring rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import ops
from ..numcore.nn import MLP, Linear, Module
from ..numcore.rng import RngStream
from ..numcore.tensor import Tensor, as_tensor, no_grad


def _check_levels(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64).ravel()
    if levels.size == 0 or np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    return levels


def mean_score(estimate, target) -> Tensor:
    """Squared error, summed over dimensions and averaged over rows."""
    d = as_tensor(estimate) - target
    sq = d * d
    if sq.ndim <= 1:
        return ops.mean(sq)
    return ops.mean(ops.sum_(sq, axis=-1))


def quantile_score(estimates, target, levels) -> Tensor:
    """Pinball loss summed over levels and dimensions, averaged over rows.

    ``estimates`` has a level axis in position -2 (``(..., Q, D)``) and
    ``target`` is ``(..., D)``. A scalar target with one estimate per
    level is also accepted.
    """
    levels = _check_levels(levels)
    est = as_tensor(estimates)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=est.dtype)
    if est.ndim <= 1:
        # scalar target, one estimate per level
        est = est.reshape((1, levels.size, 1))
        tgt = tgt.reshape(1, 1, 1)
    else:
        tgt = tgt[..., None, :]
    u = est * -1.0 + tgt
    tau = levels.astype(est.dtype)[:, None]
    indicator = (u.data < 0).astype(est.dtype)
    loss = u * (tau - indicator)
    per_row = ops.sum_(ops.sum_(loss, axis=-1), axis=-1)
    return ops.mean(per_row)


@dataclass(frozen=True)
class PointConfig:
    widths: tuple[int, ...] = (128, 128)
    quantile_levels: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    include_mean: bool = True
    activation: str = "gelu"

    def __post_init__(self):
        if np.any(np.diff(_check_levels(self.quantile_levels)) <= 0):
            raise ValueError("quantile levels must be strictly increasing")


class PointInferenceNetwork(Module):
    """Shared trunk with a mean head and one head per quantile level."""

    def __init__(self, config: PointConfig, target_dim: int, cond_dim: int, rng: RngStream, dtype=np.float32):
        if cond_dim < 1:
            raise ValueError("point estimation needs a non-empty condition")
        self.config = config
        self.target_dim = target_dim
        self.trunk = MLP(cond_dim, config.widths, None, rng, config.activation, dtype=dtype)
        width = config.widths[-1] if config.widths else cond_dim
        self.mean_head = Linear(width, target_dim, rng, dtype=dtype) if config.include_mean else None
        self.quantile_head = Linear(width, len(config.quantile_levels) * target_dim, rng, dtype=dtype)

    def __call__(self, cond) -> dict[str, Tensor]:
        h = self.trunk(as_tensor(cond))
        out = {"quantiles": self.quantile_head(h).reshape((-1, len(self.config.quantile_levels), self.target_dim))}
        if self.mean_head is not None:
            out["mean"] = self.mean_head(h)
        return out

    def loss(self, theta, cond, stream=None) -> Tensor:
        out = self(cond)
        total = quantile_score(out["quantiles"], theta, self.config.quantile_levels)
        if "mean" in out:
            total = total + mean_score(out["mean"], theta)
        return total

    def estimate(self, cond) -> dict[str, np.ndarray]:
        with no_grad():
            return {k: v.data for k, v in self(cond).items()}
