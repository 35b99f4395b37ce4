"""Named-array transform pipelines.

An :class:`Adapter` turns raw simulator output into the three protected
roles consumed by the networks and maps network output back to the
original variable names and scales::

    adapter = (
        Adapter()
        .broadcast("N", to="x")
        .as_set("x")
        .constrain("sigma", lower=0)
        .sqrt("N")
        .concatenate(["mu", "sigma"], into="inference_variables")
        .rename("x", "summary_variables")
        .rename("N", "inference_conditions")
    )

Non-invertible transforms (drop, keep, broadcast, dtype conversion) are
skipped when inverting.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

ROLES = ("inference_variables", "summary_variables", "inference_conditions")
_EPS = 1e-12


class AdapterError(ValueError):
    pass


def _names(names) -> tuple[str, ...]:
    return (names,) if isinstance(names, str) else tuple(names)


def _row_sum(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 0:
        return a
    return a.reshape(a.shape[0], -1).sum(-1)


class Transform:
    kind: str = ""
    invertible: bool = True

    def sources(self) -> tuple[str, ...]:
        return ()

    def targets(self) -> tuple[str, ...]:
        return self.sources()

    def forward(self, data: dict, ldj: dict | None) -> dict:
        raise NotImplementedError

    def inverse(self, data: dict) -> dict:
        return data

    def params(self) -> dict[str, Any]:
        raise NotImplementedError

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class _Elementwise(Transform):
    """Shared plumbing for per-variable bijections on named arrays."""

    def __init__(self, names):
        self.names = _names(names)

    def sources(self):
        return self.names

    def params(self):
        return {"names": list(self.names)}

    def _fwd(self, x):
        raise NotImplementedError

    def _inv(self, z):
        raise NotImplementedError

    def _log_jac(self, x):
        raise NotImplementedError

    def forward(self, data, ldj):
        for n in self.names:
            x = np.asarray(data[n])
            data[n] = self._fwd(x)
            if ldj is not None:
                ldj[n] = ldj.get(n, 0.0) + _row_sum(self._log_jac(x))
        return data

    def inverse(self, data):
        for n in self.names:
            data[n] = self._inv(np.asarray(data[n]))
        return data


class Sqrt(_Elementwise):
    kind = "sqrt"

    def _fwd(self, x):
        if np.any(x < 0):
            raise AdapterError("sqrt of negative values")
        return np.sqrt(x)

    def _inv(self, z):
        return np.square(z)

    def _log_jac(self, x):
        return -np.log(2.0) - 0.5 * np.log(np.maximum(x, _EPS))


class Log(_Elementwise):
    kind = "log"

    def _fwd(self, x):
        if np.any(x <= 0):
            raise AdapterError("log of non-positive values")
        return np.log(x)

    def _inv(self, z):
        return np.exp(z)

    def _log_jac(self, x):
        return -np.log(x)


def softplus_inverse(u):
    u = np.maximum(u, _EPS)
    return u + np.log(-np.expm1(-u))


def softplus(z):
    return np.logaddexp(0.0, z)


class ConstrainLower(_Elementwise):
    """x in (lower, inf) <-> z = softplus^-1(x - lower) in R."""

    kind = "constrain_lower"

    def __init__(self, names, lower: float = 0.0):
        super().__init__(names)
        self.lower = float(lower)

    def params(self):
        return {"names": list(self.names), "lower": self.lower}

    def _fwd(self, x):
        if np.any(x <= self.lower):
            raise AdapterError(f"values at or below lower bound {self.lower}")
        return softplus_inverse(x - self.lower).astype(x.dtype, copy=False)

    def _inv(self, z):
        return (self.lower + softplus(z)).astype(z.dtype, copy=False)

    def _log_jac(self, x):
        # d/du log(expm1(u)) = 1 / (1 - exp(-u))
        return -np.log(-np.expm1(-np.maximum(x - self.lower, _EPS)))


class Standardize(_Elementwise):
    """(x - mean) / sd with explicit constants broadcast over the trailing axis."""

    kind = "standardize"

    def __init__(self, names, mean, sd):
        super().__init__(names)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.sd = np.asarray(sd, dtype=np.float64)
        if np.any(self.sd <= 0):
            raise AdapterError("standardize needs strictly positive sd")

    def params(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "sd": self.sd.tolist()}

    def _fwd(self, x):
        return ((x - self.mean) / self.sd).astype(x.dtype, copy=False)

    def _inv(self, z):
        return (z * self.sd + self.mean).astype(z.dtype, copy=False)

    def _log_jac(self, x):
        return np.broadcast_to(-np.log(self.sd), x.shape)


class _AddAxis(Transform):
    tag = ""

    def __init__(self, names):
        self.names = _names(names)

    def sources(self):
        return self.names

    def params(self):
        return {"names": list(self.names)}

    def forward(self, data, ldj):
        for n in self.names:
            data[n] = np.asarray(data[n])[..., None]
        return data

    def inverse(self, data):
        for n in self.names:
            a = np.asarray(data[n])
            data[n] = a[..., 0] if a.shape[-1] == 1 else a
        return data


class AsSet(_AddAxis):
    kind = "as_set"
    tag = "set"


class AsTimeSeries(_AddAxis):
    kind = "as_time_series"
    tag = "time_series"


class Rename(Transform):
    kind = "rename"

    def __init__(self, from_key: str, to_key: str):
        self.from_key, self.to_key = from_key, to_key

    def sources(self):
        return (self.from_key,)

    def targets(self):
        return (self.to_key,)

    def params(self):
        return {"from_key": self.from_key, "to_key": self.to_key}

    def forward(self, data, ldj):
        data[self.to_key] = data.pop(self.from_key)
        if ldj is not None and self.from_key in ldj:
            ldj[self.to_key] = ldj.pop(self.from_key)
        return data

    def inverse(self, data):
        data[self.from_key] = data.pop(self.to_key)
        return data


class Drop(Transform):
    kind = "drop"
    invertible = False

    def __init__(self, names):
        self.names = _names(names)

    def sources(self):
        return self.names

    def targets(self):
        return ()

    def params(self):
        return {"names": list(self.names)}

    def forward(self, data, ldj):
        for n in self.names:
            del data[n]
        return data


class Keep(Transform):
    kind = "keep"
    invertible = False

    def __init__(self, names):
        self.names = _names(names)

    def sources(self):
        return self.names

    def params(self):
        return {"names": list(self.names)}

    def forward(self, data, ldj):
        for n in list(data):
            if n not in self.names:
                del data[n]
        return data


class Broadcast(Transform):
    """Expand per-batch scalars to ``(batch, 1)`` using the reference's batch extent."""

    kind = "broadcast"
    invertible = False

    def __init__(self, names, to: str):
        self.names, self.to = _names(names), to

    def sources(self):
        return (*self.names, self.to)

    def targets(self):
        return self.names

    def params(self):
        return {"names": list(self.names), "to": self.to}

    def forward(self, data, ldj):
        ref = np.asarray(data[self.to])
        if ref.ndim == 0:
            raise AdapterError(f"broadcast reference {self.to!r} has no batch axis")
        batch = ref.shape[0]
        for n in self.names:
            a = np.asarray(data[n])
            if a.ndim == 0:
                data[n] = np.full((batch, 1), a, dtype=a.dtype)
            elif a.shape[0] != batch:
                raise AdapterError(f"cannot broadcast {n!r} of shape {a.shape} to batch {batch}")
        return data


class ConvertDType(Transform):
    kind = "convert_dtype"
    invertible = False

    def __init__(self, from_dtype: str = "float64", to_dtype: str = "float32"):
        self.from_dtype, self.to_dtype = np.dtype(from_dtype), np.dtype(to_dtype)

    def params(self):
        return {"from_dtype": self.from_dtype.name, "to_dtype": self.to_dtype.name}

    def forward(self, data, ldj):
        for n, v in data.items():
            a = np.asarray(v)
            if a.dtype == self.from_dtype:
                data[n] = a.astype(self.to_dtype)
        return data


class Concatenate(Transform):
    """Join along the last axis; per-source extents are recorded on first use."""

    kind = "concatenate"

    def __init__(self, names, into: str, extents: Sequence[int] | None = None):
        self.names, self.into = _names(names), into
        self.extents = None if extents is None else [int(e) for e in extents]

    def sources(self):
        return self.names

    def targets(self):
        return (self.into,)

    def params(self):
        return {"names": list(self.names), "into": self.into, "extents": self.extents}

    def forward(self, data, ldj):
        parts = [np.asarray(data.pop(n)) for n in self.names]
        extents = [p.shape[-1] if p.ndim else 1 for p in parts]
        if self.extents is None:
            self.extents = extents
        elif extents != self.extents:
            raise AdapterError(f"concatenate into {self.into!r}: extents {extents} differ from recorded {self.extents}")
        try:
            data[self.into] = np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0].copy()
        except ValueError as e:
            shapes = [p.shape for p in parts]
            raise AdapterError(f"concatenate into {self.into!r}: incompatible shapes {shapes}") from e
        if ldj is not None:
            contrib = [ldj.pop(n) for n in self.names if n in ldj]
            if contrib:
                ldj[self.into] = sum(contrib)
        return data

    def inverse(self, data):
        if self.extents is None:
            raise AdapterError(f"concatenate into {self.into!r} has not seen data yet; cannot split")
        whole = np.asarray(data.pop(self.into))
        bounds = np.cumsum(self.extents)[:-1]
        for n, part in zip(self.names, np.split(whole, bounds, axis=-1)):
            data[n] = part
        return data


TRANSFORMS: dict[str, type[Transform]] = {
    cls.kind: cls
    for cls in (
        ConvertDType,
        Drop,
        Keep,
        Rename,
        Broadcast,
        Sqrt,
        Log,
        ConstrainLower,
        Standardize,
        AsSet,
        AsTimeSeries,
        Concatenate,
    )
}


class Adapter:
    """Ordered, immutable list of transforms applied to a dict of arrays."""

    def __init__(self, transforms: Sequence[Transform] = ()):
        self.transforms = tuple(transforms)
        tagged: dict[str, str] = {}
        for t in self.transforms:
            if isinstance(t, _AddAxis):
                for n in t.names:
                    if n in tagged:
                        raise AdapterError(f"{n!r} already tagged as {tagged[n]}")
                    tagged[n] = t.tag
        self.tags = tagged

    def __repr__(self) -> str:
        inner = "\n".join(f"  {i}: {t!r}" for i, t in enumerate(self.transforms))
        return f"Adapter([\n{inner}\n])" if inner else "Adapter([])"

    def __len__(self) -> int:
        return len(self.transforms)

    def _add(self, t: Transform) -> Adapter:
        return Adapter((*self.transforms, t))

    # -- fluent builders --------------------------------------------------
    def convert_dtype(self, from_dtype="float64", to_dtype="float32"):
        return self._add(ConvertDType(from_dtype, to_dtype))

    def drop(self, names):
        return self._add(Drop(names))

    def keep(self, names):
        return self._add(Keep(names))

    def rename(self, from_key, to_key):
        return self._add(Rename(from_key, to_key))

    def broadcast(self, names, to):
        return self._add(Broadcast(names, to))

    def sqrt(self, names):
        return self._add(Sqrt(names))

    def log(self, names):
        return self._add(Log(names))

    def constrain(self, names, lower=0.0):
        return self._add(ConstrainLower(names, lower))

    def standardize(self, names, mean, sd):
        return self._add(Standardize(names, mean, sd))

    def as_set(self, names):
        return self._add(AsSet(names))

    def as_time_series(self, names):
        return self._add(AsTimeSeries(names))

    def concatenate(self, names, into):
        return self._add(Concatenate(names, into))

    # -- application ---------------------------------------------------------
    def __call__(self, batch: dict, inverse: bool = False, strict: bool = True) -> dict:
        return self.inverse(batch, strict) if inverse else self.forward(batch, strict)

    def forward(self, batch: dict, strict: bool = True, log_det_jac: bool = False):
        """Apply transforms in order.

        With ``strict=False`` transforms whose sources are all absent are
        skipped (used for condition-only batches at inference time).
        With ``log_det_jac=True`` also returns per-variable log|dz/dx| summed
        over non-batch axes.
        """
        data = dict(batch)
        ldj: dict | None = {} if log_det_jac else None
        for i, t in enumerate(self.transforms):
            missing = [n for n in t.sources() if n not in data]
            if isinstance(t, Keep):
                missing = [] if not strict else missing
            if missing:
                if strict or len(missing) < len(t.sources()):
                    raise AdapterError(f"transform {i} ({t.kind}) is missing variable(s) {missing}")
                continue
            data = t.forward(data, ldj)
        return (data, ldj) if log_det_jac else data

    def inverse(self, batch: dict, strict: bool = True) -> dict:
        """Undo invertible transforms in reverse order; others are ignored."""
        data = dict(batch)
        for i in reversed(range(len(self.transforms))):
            t = self.transforms[i]
            if not t.invertible:
                continue
            missing = [n for n in t.targets() if n not in data]
            if missing:
                if strict:
                    raise AdapterError(f"inverse of transform {i} ({t.kind}) is missing {missing}")
                continue
            data = t.inverse(data)
        return data

    # -- static analysis / serialisation -------------------------------------
    def produces(self, name: str) -> bool:
        return any(name in t.targets() for t in self.transforms if not isinstance(t, Drop))

    def validate_roles(self, require=("inference_variables",)) -> None:
        for role in require:
            if not self.produces(role):
                raise AdapterError(f"adapter never produces {role!r}")

    def to_config(self) -> list[dict[str, Any]]:
        return [{"kind": t.kind, "params": t.params()} for t in self.transforms]

    @classmethod
    def from_config(cls, config: Sequence[dict[str, Any]]) -> Adapter:
        transforms = []
        for i, entry in enumerate(config):
            if set(entry) - {"kind", "params"}:
                raise AdapterError(f"transform {i}: unknown keys {sorted(set(entry) - {'kind', 'params'})}")
            kind = entry.get("kind")
            if kind not in TRANSFORMS:
                raise AdapterError(f"transform {i}: unknown kind {kind!r}")
            try:
                transforms.append(TRANSFORMS[kind](**entry.get("params", {})))
            except TypeError as e:
                raise AdapterError(f"transform {i} ({kind}): {e}") from e
        return cls(transforms)

    def swap_roles(self) -> Adapter:
        """Exchange inference variables and conditions (posterior <-> likelihood)."""
        config = self.to_config()
        if any("summary_variables" in _config_targets(c) for c in config):
            raise AdapterError("role swapping needs fixed-length data; remove summary_variables")
        swap = {"inference_variables": "inference_conditions", "inference_conditions": "inference_variables"}
        for c in config:
            p = c["params"]
            for key in ("into", "to_key"):
                if key in p:
                    p[key] = swap.get(p[key], p[key])
            if c["kind"] == "concatenate":
                p["extents"] = None
        return Adapter.from_config(config)


def _config_targets(entry: dict) -> tuple[str, ...]:
    p = entry["params"]
    return tuple(v for k, v in p.items() if k in ("into", "to_key"))
