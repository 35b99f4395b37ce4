"""Parameter containers and small building blocks."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import Tensor

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": T.gelu,
    "relu": T.relu,
    "tanh": T.tanh,
    "softplus": T.softplus,
}


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            value = np.asarray(state[k])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {value.shape} vs {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def astype(self, dtype) -> Module:
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: RngStream, zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            # He-uniform for the GELU/ReLU family.
            limit = np.sqrt(6.0 / max(in_dim, 1))
            w = rng.uniform((in_dim, out_dim), -limit, limit) if in_dim > 0 else np.zeros((0, out_dim))
        self.weight = parameter(w.astype(dtype))
        self.bias = parameter(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class MLP(Module):
    """Dense stack ``in -> widths... -> out`` with activations between layers.

    ``zero_last`` zero-initialises the output layer so the net starts as the
    zero function.
    """

    def __init__(
        self,
        in_dim: int,
        widths: Sequence[int],
        out_dim: int | None,
        rng: RngStream,
        activation: str = "gelu",
        zero_last: bool = False,
        dtype=np.float32,
    ):
        dims = [in_dim, *widths]
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(dims[:-1], dims[1:])]
        if out_dim is not None:
            self.layers.append(Linear(dims[-1], out_dim, rng, zero_init=zero_last, dtype=dtype))
        self._act = ACTIVATIONS[activation]
        self._has_head = out_dim is not None

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or not self._has_head:
                x = self._act(x)
        return x


def to_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
