"""Conditional affine coupling flow with a normal or Student-t latent space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..numcore import ops
from ..numcore.nn import MLP, Module
from ..numcore.rng import RngStream, row_streams
from ..numcore.tensor import Tensor, no_grad


@dataclass(frozen=True)
class CouplingFlowConfig:
    num_blocks: int = 6
    subnet_widths: tuple[int, ...] = (128, 128)
    clamp: float = 1.9
    base: str = "normal"
    dof: float = 50.0
    activation: str = "gelu"

    def __post_init__(self):
        if self.base not in ("normal", "student_t"):
            raise ValueError(f"unknown base distribution {self.base!r}")
        if self.num_blocks < 1 or self.clamp <= 0 or self.dof <= 0:
            raise ValueError("num_blocks, clamp and dof must be positive")


def _cat(parts: list[Tensor | None]) -> Tensor:
    parts = [p for p in parts if p is not None]
    return parts[0] if len(parts) == 1 else ops.concatenate(parts, axis=-1)


class CouplingBlock(Module):
    """Transforms the second half given the first half and the condition,
    then reverses the coordinate order so the next block sees the other half."""

    def __init__(self, dim, cond_dim, config: CouplingFlowConfig, rng, dtype):
        self.split = dim // 2
        self.out_dim = dim - self.split
        self.clamp = config.clamp
        self.net = MLP(
            self.split + cond_dim, config.subnet_widths, 2 * self.out_dim, rng, config.activation,
            zero_last=True, dtype=dtype,
        )

    def _scale_shift(self, x1, cond):
        if self.split == 0 and cond is None:
            inp = Tensor(np.zeros((x1.shape[0], 0), dtype=x1.dtype))
        else:
            inp = _cat([x1 if self.split else None, cond])
        h = self.net(inp)
        s = h[:, : self.out_dim]
        t = h[:, self.out_dim :]
        s = ops.tanh(s * (1.0 / self.clamp)) * self.clamp
        return s, t

    def forward(self, x: Tensor, cond: Tensor | None):
        x1, x2 = x[:, : self.split], x[:, self.split :]
        s, t = self._scale_shift(x1, cond)
        y2 = x2 * ops.exp(s) + t
        y = _cat([x1 if self.split else None, y2])
        return y[:, ::-1], ops.sum_(s, axis=-1)

    def inverse(self, y: Tensor, cond: Tensor | None) -> Tensor:
        y = y[:, ::-1]
        y1, y2 = y[:, : self.split], y[:, self.split :]
        s, t = self._scale_shift(y1, cond)
        x2 = (y2 - t) * ops.exp(-s)
        return _cat([y1 if self.split else None, x2])


class CouplingFlow(Module):
    def __init__(self, config: CouplingFlowConfig, target_dim: int, cond_dim: int, rng: RngStream, dtype=np.float32):
        self.config = config
        self.target_dim = target_dim
        self.cond_dim = cond_dim
        self.blocks = [CouplingBlock(target_dim, cond_dim, config, rng.child(i), dtype) for i in range(config.num_blocks)]

    def transformed_coordinates(self) -> set[int]:
        """Original coordinate indices that some block rescales."""
        order = np.arange(self.target_dim)
        touched: set[int] = set()
        for block in self.blocks:
            touched.update(order[block.split :].tolist())
            order = order[::-1]
        return touched

    def _cond(self, cond, n, dtype):
        if self.cond_dim == 0:
            return None
        if cond is None:
            raise ValueError("this flow expects a condition")
        return cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=dtype))

    def forward(self, x, cond=None) -> tuple[Tensor, Tensor]:
        """Data to latent; returns ``(z, log|det dz/dx|)``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        c = self._cond(cond, x.shape[0], x.dtype)
        log_det = Tensor(np.zeros(x.shape[0], dtype=x.dtype))
        for block in self.blocks:
            x, ld = block.forward(x, c)
            log_det = log_det + ld
        if not np.all(np.isfinite(x.data)):
            raise FloatingPointError("non-finite activations in coupling flow")
        return x, log_det

    def inverse(self, z, cond=None) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        c = self._cond(cond, z.shape[0], z.dtype)
        for block in reversed(self.blocks):
            z = block.inverse(z, c)
        if not np.all(np.isfinite(z.data)):
            raise FloatingPointError("non-finite activations in coupling flow")
        return z

    # -- latent distribution --------------------------------------------------
    def base_log_prob(self, z: Tensor) -> Tensor:
        d = self.target_dim
        sq = ops.sum_(z * z, axis=-1)
        if self.config.base == "normal":
            return sq * -0.5 - 0.5 * d * np.log(2 * np.pi)
        nu = self.config.dof
        const = gammaln((nu + d) / 2) - gammaln(nu / 2) - 0.5 * d * np.log(nu * np.pi)
        return ops.log(sq * (1.0 / nu) + 1.0) * (-(nu + d) / 2) + const

    def base_sample(self, n: int, stream: RngStream, dtype) -> np.ndarray:
        z = stream.normal((n, self.target_dim))
        if self.config.base == "student_t":
            z = z / np.sqrt(stream.chisquare(self.config.dof, (n, 1)) / self.config.dof)
        return z.astype(dtype)

    def _latents(self, streams, num_samples, dtype):
        return np.concatenate([self.base_sample(num_samples, s, dtype) for s in streams], axis=0)

    def log_prob(self, x, cond=None) -> Tensor:
        z, log_det = self.forward(x, cond)
        return self.base_log_prob(z) + log_det

    def loss(self, x, cond=None, stream=None) -> Tensor:
        return -ops.mean(self.log_prob(x, cond))

    def sample(self, cond, num_samples: int, stream=None, batch_size: int | None = None) -> np.ndarray:
        """Draws of shape ``(n_conditions, num_samples, target_dim)``.

        Row ``i`` draws its latents from ``stream.child(i)`` (or from the
        i-th entry when a list of streams is given), so results do not depend
        on how conditions are batched. ``cond`` may be ``None`` for an
        unconditional flow; ``batch_size`` then gives the number of rows.
        """
        dtype = self.blocks[0].net.layers[0].weight.dtype
        if cond is None:
            n = batch_size or 1
            c = None
        else:
            c = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=dtype)
            n = c.shape[0]
            c = np.repeat(c, num_samples, axis=0)
        z = self._latents(row_streams(stream, n), num_samples, dtype)
        with no_grad():
            x = self.inverse(Tensor(z), c)
        return x.data.reshape(n, num_samples, self.target_dim)
