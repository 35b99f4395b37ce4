"""Conditional flow matching on the linear path with a small noise floor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import ops
from ..numcore.nn import MLP, Module
from ..numcore.rng import RngStream, as_stream, row_streams
from ..numcore.tensor import Tensor, grad, no_grad

MAX_EXACT_TRACE_DIM = 16


@dataclass(frozen=True)
class FlowMatchingConfig:
    widths: tuple[int, ...] = (128, 128, 128)
    time_frequencies: int = 8
    sigma_min: float = 1e-4
    sample_steps: int = 100
    density_steps: int = 64
    activation: str = "gelu"

    def __post_init__(self):
        if not 0 <= self.sigma_min < 1:
            raise ValueError("sigma_min must lie in [0, 1)")
        if self.sample_steps < 1 or self.density_steps < 1:
            raise ValueError("step counts must be positive")


def time_embedding(t: np.ndarray, frequencies: int) -> np.ndarray:
    """``[t, sin(pi k t), cos(pi k t)]`` for ``k = 1..frequencies``; ``t`` has shape (B, 1)."""
    k = np.pi * np.arange(1, frequencies + 1)
    return np.concatenate([t, np.sin(t * k), np.cos(t * k)], axis=-1)


class FlowMatching(Module):
    def __init__(self, config: FlowMatchingConfig, target_dim: int, cond_dim: int, rng: RngStream, dtype=np.float32):
        self.config = config
        self.target_dim = target_dim
        self.cond_dim = cond_dim
        in_dim = target_dim + 1 + 2 * config.time_frequencies + cond_dim
        self.velocity_net = MLP(in_dim, config.widths, target_dim, rng, config.activation, dtype=dtype)
        self._dtype = dtype

    def velocity(self, x: Tensor, t, cond=None) -> Tensor:
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=self._dtype).reshape(-1, 1), (n, 1))
        parts = [x, Tensor(time_embedding(t, self.config.time_frequencies).astype(self._dtype))]
        if self.cond_dim:
            if cond is None:
                raise ValueError("this network expects a condition")
            parts.append(cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=self._dtype)))
        return self.velocity_net(ops.concatenate(parts, axis=-1))

    def loss(self, theta, cond=None, stream: RngStream | int | None = None) -> Tensor:
        stream = as_stream(stream)
        theta = np.asarray(theta.data if isinstance(theta, Tensor) else theta, dtype=self._dtype)
        x0 = stream.normal(theta.shape).astype(self._dtype)
        t = stream.uniform((theta.shape[0], 1)).astype(self._dtype)
        return flow_matching_loss(self, theta, x0, t, cond)

    def sample(self, cond, num_samples: int, stream=None,
               batch_size: int | None = None, steps: int | None = None) -> np.ndarray:
        """Euler integration from noise; per-row streams as in the coupling flow."""
        steps = steps or self.config.sample_steps
        if cond is None:
            n, c = batch_size or 1, None
        else:
            c = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=self._dtype)
            n = c.shape[0]
            c = np.repeat(c, num_samples, axis=0)
        x = np.concatenate([s.normal((num_samples, self.target_dim)) for s in row_streams(stream, n)]).astype(self._dtype)
        dt = 1.0 / steps
        with no_grad():
            for k in range(steps):
                x = x + dt * self.velocity(Tensor(x), k * dt, c).data
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite state during flow integration")
        return x.reshape(n, num_samples, self.target_dim)

    def _divergence(self, x: np.ndarray, t: float, cond) -> tuple[np.ndarray, np.ndarray]:
        xt = Tensor(x, requires_grad=True)
        v = self.velocity(xt, t, cond)
        trace = np.zeros(x.shape[0], dtype=np.float64)
        for j in range(self.target_dim):
            (g,) = grad(ops.sum_(v[:, j]), [xt])
            trace += g[:, j]
        return v.data, trace

    def log_prob(self, x, cond=None, steps: int | None = None) -> np.ndarray:
        """Log density by integrating the change of variables backwards from t=1 to t=0 (RK4)."""
        if self.target_dim > MAX_EXACT_TRACE_DIM:
            raise ValueError(f"exact trace limited to target_dim <= {MAX_EXACT_TRACE_DIM}")
        steps = steps or self.config.density_steps
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self._dtype)
        c = None if cond is None else np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=self._dtype)
        h = -1.0 / steps
        integral = np.zeros(x.shape[0])
        t = 1.0
        for _ in range(steps):
            v1, d1 = self._divergence(x, t, c)
            v2, d2 = self._divergence(x + 0.5 * h * v1, t + 0.5 * h, c)
            v3, d3 = self._divergence(x + 0.5 * h * v2, t + 0.5 * h, c)
            v4, d4 = self._divergence(x + h * v3, t + h, c)
            x = (x + h / 6 * (v1 + 2 * v2 + 2 * v3 + v4)).astype(self._dtype)
            integral += h / 6 * (d1 + 2 * d2 + 2 * d3 + d4)
            t += h
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite state during flow integration")
        base = -0.5 * np.sum(x.astype(np.float64) ** 2, -1) - 0.5 * self.target_dim * np.log(2 * np.pi)
        # integral runs from 1 down to 0, so it equals minus the forward-time integral of the trace
        return base + integral


def flow_matching_loss(net, theta: np.ndarray, x0: np.ndarray, t: np.ndarray, cond=None) -> Tensor:
    """Regression of the velocity field onto ``theta - (1 - sigma_min) x0`` at ``x_t``."""
    s = net.config.sigma_min
    xt = (1 - (1 - s) * t) * x0 + t * theta
    target = theta - (1 - s) * x0
    diff = net.velocity(Tensor(xt), t, cond) - target
    return ops.mean(ops.sum_(diff * diff, axis=-1))
