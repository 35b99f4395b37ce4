"""Summary networks: learnable compressors to fixed-length vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import ops
from ..numcore.nn import MLP, Linear, Module, parameter
from ..numcore.rng import RngStream
from ..numcore.tensor import Tensor

_NEG = -1e30


@dataclass(frozen=True)
class DeepSetConfig:
    summary_dim: int = 8
    encoder_widths: tuple[int, ...] = (64, 64)
    decoder_widths: tuple[int, ...] = (64,)
    activation: str = "gelu"

    def __post_init__(self):
        if self.summary_dim < 1:
            raise ValueError("summary_dim must be at least 1")


class DeepSet(Module):
    """phi per element -> [mean, max] pooling -> rho.

    Masked elements are excluded from both pools, so appending padding
    leaves the output unchanged.
    """

    def __init__(self, config: DeepSetConfig, in_features: int, rng: RngStream, dtype=np.float32):
        self.config = config
        self.phi = MLP(in_features, config.encoder_widths, None, rng, config.activation, dtype=dtype)
        width = config.encoder_widths[-1]
        self.rho = MLP(2 * width, config.decoder_widths, config.summary_dim, rng, config.activation, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if x.ndim != 3:
            raise ValueError(f"DeepSet expects (batch, set_size, features), got {x.shape}")
        if x.shape[1] < 1:
            raise ValueError("empty set")
        h = self.phi(x)
        if mask is None:
            pooled_mean = ops.mean(h, axis=1)
            pooled_max = ops.max_(h, axis=1)
        else:
            m = np.asarray(mask, dtype=h.dtype)
            counts = m.sum(1)
            if np.any(counts == 0):
                raise ValueError("a row has every element masked")
            pooled_mean = ops.sum_(h * m[..., None], axis=1) / counts[:, None]
            pooled_max = ops.max_(ops.where(m[..., None] > 0, h, np.asarray(_NEG, dtype=h.dtype)), axis=1)
        return self.rho(ops.concatenate([pooled_mean, pooled_max], axis=-1))


@dataclass(frozen=True)
class TimeSeriesConfig:
    summary_dim: int = 32
    hidden_dim: int = 64
    projection_widths: tuple[int, ...] = (64,)
    activation: str = "gelu"

    def __post_init__(self):
        if self.summary_dim < 1 or self.hidden_dim < 1:
            raise ValueError("summary_dim and hidden_dim must be positive")


class TimeSeriesNetwork(Module):
    """Single GRU layer over time, final state through a small MLP.

    Steps flagged as padding by ``mask`` leave the hidden state untouched.
    """

    def __init__(self, config: TimeSeriesConfig, in_features: int, rng: RngStream, dtype=np.float32):
        self.config = config
        h = config.hidden_dim
        limit = 1.0 / np.sqrt(h)
        self.w_input = parameter(rng.uniform((in_features, 3 * h), -limit, limit).astype(dtype))
        self.w_hidden = parameter(rng.uniform((h, 3 * h), -limit, limit).astype(dtype))
        self.b_input = parameter(np.zeros(3 * h, dtype=dtype))
        self.b_hidden = parameter(np.zeros(3 * h, dtype=dtype))
        self.projection = MLP(h, config.projection_widths, config.summary_dim, rng, config.activation, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if x.ndim != 3:
            raise ValueError(f"TimeSeriesNetwork expects (batch, steps, features), got {x.shape}")
        batch, steps, _ = x.shape
        if steps < 1:
            raise ValueError("zero time steps")
        hd = self.config.hidden_dim
        gates_x = x @ self.w_input + self.b_input  # (B, T, 3H)
        state = Tensor(np.zeros((batch, hd), dtype=x.dtype))
        for t in range(steps):
            gx = gates_x[:, t, :]
            gh = state @ self.w_hidden + self.b_hidden
            r = ops.sigmoid(gx[:, :hd] + gh[:, :hd])
            z = ops.sigmoid(gx[:, hd : 2 * hd] + gh[:, hd : 2 * hd])
            n = ops.tanh(gx[:, 2 * hd :] + r * gh[:, 2 * hd :])
            new = n + z * (state - n)
            if mask is not None:
                m = np.asarray(mask[:, t], dtype=x.dtype)[:, None]
                new = state + m * (new - state)
            state = new
        return self.projection(state)
