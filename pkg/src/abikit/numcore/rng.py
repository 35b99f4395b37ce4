"""Addressable random streams.

A stream is identified by ``(seed, stream_id)`` plus an optional path of child
indices. Children are derived, never drawn, so partitioning work across rows
or workers does not depend on execution order.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

_DISTRIBUTIONS = ("standard_normal", "uniform", "exponential", "randint")


class RngStream:
    """PCG64 generator keyed by ``(seed, stream_id, *path)``.

    ``counter`` counts draw calls made on this stream. ``spawn`` hands out
    fresh child streams in order, which is how training loops obtain a new,
    never-reused stream per batch.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.PCG64(seq))
        self.counter = 0
        self._spawned = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def child(self, index: int) -> RngStream:
        """Independent sub-stream; does not advance this stream."""
        return RngStream(self.seed, self.stream_id, (*self.path, index))

    @property
    def spawned(self) -> int:
        """Number of children handed out by :meth:`spawn`."""
        return self._spawned

    def spawn(self) -> RngStream:
        """Next unused child stream."""
        s = self.child(self._spawned)
        self._spawned += 1
        return s

    # -- draws ---------------------------------------------------------------
    def _tick(self):
        self.counter += 1
        return self.generator

    def normal(self, shape=(), loc=0.0, scale=1.0, dtype=np.float64) -> np.ndarray:
        if np.any(np.asarray(scale) < 0):
            raise ValueError("normal scale must be non-negative")
        z = self._tick().standard_normal(shape)
        return (loc + scale * z).astype(dtype, copy=False)

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float64) -> np.ndarray:
        if not high > low:
            raise ValueError("uniform needs high > low")
        return self._tick().uniform(low, high, shape).astype(dtype, copy=False)

    def exponential(self, shape=(), rate=1.0, dtype=np.float64) -> np.ndarray:
        if not rate > 0:
            raise ValueError(f"exponential rate must be positive, got {rate}")
        return self._tick().exponential(1.0 / rate, shape).astype(dtype, copy=False)

    def randint(self, low: int, high: int, shape=()) -> np.ndarray:
        if high <= low:
            raise ValueError("randint needs high > low")
        return self._tick().integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._tick().permutation(n)

    def chisquare(self, df: float, shape=()) -> np.ndarray:
        if not df > 0:
            raise ValueError("chi-square degrees of freedom must be positive")
        return self._tick().chisquare(df, shape)


def rng_draw(stream: RngStream, dist: str, shape, dtype=np.float64, **params) -> Tensor:
    """Draw a tensor from ``stream``.

    ``dist`` is one of ``standard_normal``, ``uniform`` (``low``, ``high``),
    ``exponential`` (``rate``) or ``randint`` (``low``, ``high``).
    """
    if dist == "standard_normal":
        return Tensor(stream.normal(shape, dtype=dtype))
    if dist == "uniform":
        return Tensor(stream.uniform(shape, params.get("low", 0.0), params.get("high", 1.0), dtype=dtype))
    if dist == "exponential":
        return Tensor(stream.exponential(shape, params.get("rate", 1.0), dtype=dtype))
    if dist == "randint":
        return Tensor(stream.randint(params["low"], params["high"], shape))
    raise ValueError(f"unknown distribution {dist!r}; expected one of {_DISTRIBUTIONS}")


def as_stream(rng: RngStream | int | None, stream_id: int = 0) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else int(rng), stream_id)


def row_streams(rng, n: int) -> list[RngStream]:
    """One stream per row: children of a single stream, or an explicit list."""
    if isinstance(rng, (list, tuple)):
        if len(rng) != n:
            raise ValueError(f"expected {n} streams, got {len(rng)}")
        return [as_stream(r) for r in rng]
    base = as_stream(rng)
    return [base.child(i) for i in range(n)]
