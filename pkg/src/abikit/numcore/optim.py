"""AdamW with an optional cosine learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class CosineDecay:
    initial: float
    final: float
    total_steps: int

    def __call__(self, step: int) -> float:
        if self.total_steps <= 0:
            return self.initial
        frac = min(step, self.total_steps) / self.total_steps
        return self.final + 0.5 * (self.initial - self.final) * (1 + math.cos(math.pi * frac))


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam.

    Moments are held in float64 regardless of parameter dtype; the update is
    computed in float64 and cast back.
    """

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    weight_decay: float = 0.004
    schedule: CosineDecay | None = None
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if not self.epsilon > 0 or self.weight_decay < 0:
            raise ValueError("epsilon must be positive and weight_decay non-negative")

    def current_lr(self) -> float:
        return self.schedule(self.step_count) if self.schedule else self.learning_rate

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``.

        Raises:
            FloatingPointError: naming the first parameter with a non-finite gradient.
        """
        if grads is None:
            grads = {k: p.grad for k, p in params.items()}
        if set(grads) != set(params):
            raise KeyError("gradients must be keyed identically to parameters")
        for name, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            w = p.data.astype(np.float64)
            w = w - lr * ((m / c1) / (np.sqrt(v / c2) + self.epsilon) + self.weight_decay * w)
            p.data = w.astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.m = {k[2:]: np.array(v, dtype=np.float64) for k, v in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v, dtype=np.float64) for k, v in arrays.items() if k.startswith("v/")}
        self.step_count = int(step_count)
