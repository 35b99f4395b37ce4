"""Composing stage functions into batched simulators.

A stage is a plain function whose argument names select the variables it
reads. Two argument names are reserved: ``rng`` receives a
``numpy.random.Generator`` and, for batched stages, ``batch_size`` receives
the number of rows. A stage returns a dict of new variables.

Stream partitioning: each ``sample`` call spawns one child stream from the
caller's stream. The meta function and batched stages draw from fixed
children of it; unbatched stage ``k`` on row ``r`` draws from
``call.child(2).child(r).child(k)``. Row streams therefore do not depend on
how rows are distributed across workers.
"""

from __future__ import annotations

import inspect
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..numcore.rng import RngStream, as_stream

NamedBatch = dict[str, np.ndarray]

_RESERVED = {"rng", "batch_size"}


class SimulationError(RuntimeError):
    pass


def batch_size_of(batch: NamedBatch) -> int:
    """Shared leading extent of all non-scalar entries.

    Raises:
        ValueError: if entries disagree.
    """
    sizes = {np.shape(v)[0] for v in batch.values() if np.ndim(v) > 0}
    if len(sizes) != 1:
        raise ValueError(f"entries disagree on batch size: {sorted(sizes)}")
    return sizes.pop()


def meta_names(batch: NamedBatch) -> list[str]:
    return [k for k, v in batch.items() if np.ndim(v) == 0]


def subset(batch: NamedBatch, index) -> NamedBatch:
    """Rows ``index`` of every batched entry; meta scalars pass through."""
    return {k: (v if np.ndim(v) == 0 else np.asarray(v)[index]) for k, v in batch.items()}


def concat_batches(batches: Sequence[NamedBatch]) -> NamedBatch:
    out = {}
    for k, v in batches[0].items():
        if np.ndim(v) == 0:
            out[k] = v
        else:
            out[k] = np.concatenate([b[k] for b in batches], axis=0)
    return out


@dataclass
class Stage:
    fn: Callable[..., dict]
    batched: bool = False
    name: str = ""
    params: tuple[str, ...] = field(default=())
    required: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        sig = inspect.signature(self.fn)
        self.name = self.name or getattr(self.fn, "__name__", "stage")
        self.params = tuple(sig.parameters)
        self.required = frozenset(
            n
            for n, p in sig.parameters.items()
            if p.default is inspect.Parameter.empty
            and p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)
            and n not in _RESERVED
        )


def _as_scalar(v):
    a = np.asarray(v)
    return a.item() if a.ndim == 0 else a


def _call_stage(stage: Stage, available: dict[str, Any], rng: RngStream, batch_size: int | None) -> dict:
    missing = stage.required - set(available)
    if missing:
        raise SimulationError(f"stage {stage.name!r} needs unresolved variables {sorted(missing)}")
    kwargs = {n: available[n] for n in stage.params if n in available}
    if "rng" in stage.params:
        kwargs["rng"] = rng.generator
    if "batch_size" in stage.params and batch_size is not None:
        kwargs["batch_size"] = batch_size
    out = stage.fn(**kwargs)
    if not isinstance(out, dict):
        raise SimulationError(f"stage {stage.name!r} must return a dict, got {type(out).__name__}")
    return out


def _run_unbatched_rows(stage: Stage, rows: list[dict], streams: list[RngStream]) -> list[dict]:
    return [_call_stage(stage, row, s, None) for row, s in zip(rows, streams)]


def _stack_rows(stage: Stage, outs: list[dict]) -> dict[str, np.ndarray]:
    stacked = {}
    for key in outs[0]:
        try:
            arr = np.stack([np.asarray(o[key]) for o in outs])
        except ValueError as e:
            raise SimulationError(
                f"stage {stage.name!r} produced rows of different shapes for {key!r}; "
                "only same-shape rows can be batched"
            ) from e
        stacked[key] = arr[:, None] if arr.ndim == 1 else arr
    return stacked


class Simulator:
    """Ordered stages plus an optional per-batch meta function."""

    def __init__(self, stages: Sequence[Stage], meta_fn: Callable[..., dict] | None = None):
        if not stages:
            raise ValueError("no stages")
        self.stages = list(stages)
        self.meta_fn = meta_fn

    def __repr__(self) -> str:
        names = ", ".join(s.name for s in self.stages)
        return f"Simulator([{names}], meta_fn={getattr(self.meta_fn, '__name__', None)})"

    def sample(self, batch_size: int, stream: RngStream | int | None = None, **fixed) -> NamedBatch:
        return self._sample(batch_size, as_stream(stream), None, **fixed)

    def sample_parallel(
        self,
        batch_size: int,
        stream: RngStream | int | None = None,
        workers: int = 2,
        backend: str = "thread",
        **fixed,
    ) -> NamedBatch:
        """Like ``sample`` but unbatched stages fan rows out over ``workers``.

        Results are identical to ``sample`` with the same stream. Batched
        stages always run in the calling thread. The ``process`` backend
        requires picklable (module-level) stage functions.
        """
        if workers < 1:
            raise ValueError("workers must be at least 1")
        if backend not in ("thread", "process"):
            raise ValueError(f"unknown backend {backend!r}")
        return self._sample(batch_size, as_stream(stream), (workers, backend), **fixed)

    def _sample(self, batch_size, stream, parallel, **fixed) -> NamedBatch:
        if int(batch_size) < 1:
            raise ValueError(f"batch_size must be at least 1, got {batch_size}")
        batch_size = int(batch_size)
        call = stream.spawn()

        meta: dict[str, Any] = dict(fixed)
        if self.meta_fn is not None:
            meta_stage = Stage(self.meta_fn, batched=True, name="meta_fn")
            meta.update(_call_stage(meta_stage, {}, call.child(0), None))
        batch: NamedBatch = {k: np.asarray(v) for k, v in meta.items()}
        rows: list[dict[str, Any]] = [dict(meta) for _ in range(batch_size)]

        executor = None
        if parallel is not None and parallel[0] > 1:
            pool = ThreadPoolExecutor if parallel[1] == "thread" else ProcessPoolExecutor
            executor = pool(max_workers=parallel[0])
        try:
            for k, stage in enumerate(self.stages):
                if stage.batched:
                    available = {**{n: batch[n] for n in batch}, **meta}
                    try:
                        out = _call_stage(stage, available, call.child(1).child(k), batch_size)
                    except SimulationError:
                        raise
                    except Exception as e:
                        raise SimulationError(f"stage {stage.name!r} failed: {e}") from e
                    new = {}
                    for key, v in out.items():
                        v = np.asarray(v)
                        if v.ndim == 0 or v.shape[0] != batch_size:
                            raise SimulationError(
                                f"batched stage {stage.name!r} returned {key!r} with shape {v.shape}, "
                                f"expected leading extent {batch_size}"
                            )
                        new[key] = v[:, None] if v.ndim == 1 else v
                    for r in range(batch_size):
                        rows[r].update({key: v[r] for key, v in new.items()})
                else:
                    streams = [call.child(2).child(r).child(k) for r in range(batch_size)]
                    inputs = [{n: _as_scalar(v) for n, v in row.items()} for row in rows]
                    try:
                        outs = self._map_rows(stage, inputs, streams, executor, parallel)
                    except SimulationError:
                        raise
                    except Exception as e:
                        raise SimulationError(f"stage {stage.name!r} failed: {e}") from e
                    for row, o in zip(rows, outs):
                        row.update(o)
                    new = _stack_rows(stage, outs)
                batch.update(new)
        finally:
            if executor is not None:
                executor.shutdown()
        return batch

    @staticmethod
    def _map_rows(stage, inputs, streams, executor, parallel):
        if executor is None:
            return _run_unbatched_rows(stage, inputs, streams)
        workers = parallel[0]
        bounds = np.linspace(0, len(inputs), workers + 1).astype(int)
        futures = [
            executor.submit(_run_unbatched_rows, stage, inputs[a:b], streams[a:b])
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        outs = []
        for f in futures:
            outs.extend(f.result())
        return outs


def make_simulator(
    stages: Sequence[Callable[..., dict]],
    meta_fn: Callable[..., dict] | None = None,
    batched: bool | Sequence[bool] = False,
) -> Simulator:
    """Chain ``stages`` into a :class:`Simulator`.

    Args:
        stages: functions run in order; each reads earlier outputs by name.
        meta_fn: called once per batch; its outputs are constant across rows
            and stored as 0-d entries.
        batched: whether each stage consumes and produces whole batches.
    """
    if not stages:
        raise ValueError("no stages")
    flags = [batched] * len(stages) if isinstance(batched, bool) else list(batched)
    if len(flags) != len(stages):
        raise ValueError("one batched flag per stage")
    return Simulator([Stage(fn, batched=b) for fn, b in zip(stages, flags)], meta_fn=meta_fn)


def sample(sim: Simulator, batch_size: int, stream: RngStream | int | None = None, **fixed) -> NamedBatch:
    return sim.sample(batch_size, stream, **fixed)


def sample_parallel(sim: Simulator, batch_size: int, stream=None, workers: int = 2, **kwargs) -> NamedBatch:
    return sim.sample_parallel(batch_size, stream, workers=workers, **kwargs)
