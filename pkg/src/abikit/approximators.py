"""Trainable estimators: adapter + optional summary network + inference head."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .adapter import Adapter, AdapterError
from .networks import (
    INFERENCE_NETWORKS,
    SUMMARY_NETWORKS,
    Classifier,
    ClassifierConfig,
    FlowMatching,
    RatioEstimator,
    binary_ratio_loss,
    make_config,
    posterior_model_probs,
)
from .numcore import AdamW, CosineDecay, RngStream, Tensor, as_stream, backward, no_grad, ops
from .simulation.core import NamedBatch, batch_size_of, subset

IV, SV, IC = "inference_variables", "summary_variables", "inference_conditions"

# stream ids keep the randomness of each concern independent for a given seed
INIT_STREAM, SIM_STREAM, NOISE_STREAM, SHUFFLE_STREAM, VALID_STREAM = 1, 2, 3, 4, 5

CLASSIFIERS = {"classifier": (Classifier, ClassifierConfig)}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    num_batches_per_epoch: int = 100
    learning_rate: float = 1e-4
    final_learning_rate: float = 1e-6
    weight_decay: float = 0.004
    seed: int = 0
    validation: NamedBatch | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.num_batches_per_epoch < 1:
            raise ValueError("epochs must be >= 0; batch_size and num_batches_per_epoch >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    val_loss: list[float] | None = None

    def __len__(self) -> int:
        return len(self.loss)


class OfflineDataset:
    """Stored simulations visited once per epoch in a per-epoch shuffled order."""

    def __init__(self, data: NamedBatch, batch_size: int, seed: int = 0):
        self.data = data
        self.size = batch_size_of(data)
        if self.size < 1:
            raise ValueError("empty dataset")
        if batch_size > self.size:
            raise ValueError(f"batch_size {batch_size} exceeds dataset size {self.size}")
        self.batch_size = batch_size
        self.seed = seed

    @property
    def num_batches(self) -> int:
        return math.ceil(self.size / self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        return RngStream(self.seed, SHUFFLE_STREAM).child(epoch).permutation(self.size)

    def batches(self, epoch: int) -> Iterator[NamedBatch]:
        order = self.epoch_order(epoch)
        for start in range(0, self.size, self.batch_size):
            yield subset(self.data, order[start : start + self.batch_size])


def _spec_of(config) -> dict:
    for registry in (SUMMARY_NETWORKS, INFERENCE_NETWORKS, CLASSIFIERS):
        for kind, (_, cfg_cls) in registry.items():
            if type(config) is cfg_cls:
                return {"kind": kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(config).items()}}
    raise TypeError(f"unsupported network config {type(config).__name__}")


def _resolve(spec, registry):
    if spec is None:
        return None
    if isinstance(spec, dict):
        return make_config(registry, spec)
    return make_config(registry, _spec_of(spec))


def _as_array(x, dtype) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=dtype)


def _repeat_rows(batch: NamedBatch, index: int, times: int) -> NamedBatch:
    return {k: v if np.ndim(v) == 0 else np.repeat(np.asarray(v)[index : index + 1], times, axis=0) for k, v in batch.items()}


class Approximator:
    """Shared machinery; subclasses define the head and the loss."""

    kind = ""
    head_registry = INFERENCE_NETWORKS

    def __init__(
        self,
        adapter: Adapter,
        inference_network,
        summary_network=None,
        seed: int = 0,
        dtype=np.float32,
        mask_key: str | None = None,
    ):
        self.adapter = adapter
        self.head_cls, self.head_config = _resolve(inference_network, self.head_registry)
        resolved = _resolve(summary_network, SUMMARY_NETWORKS)
        self.summary_cls, self.summary_config = resolved if resolved else (None, None)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.mask_key = mask_key
        self.summary_net = None
        self.head = None
        self.dims: dict[str, int] | None = None
        self.optimizer: AdamW | None = None
        self.history = History()

    # -- construction -----------------------------------------------------------
    @property
    def built(self) -> bool:
        return self.head is not None

    def _dims_from(self, data: dict) -> dict[str, int]:
        dims = {"summary_features": 0, "condition_dim": 0, "target_dim": 0}
        if SV in data:
            if self.summary_cls is None:
                raise AdapterError("summary_variables produced but no summary network configured")
            dims["summary_features"] = int(np.shape(data[SV])[-1])
        elif self.summary_cls is not None:
            raise AdapterError("summary network configured but adapter produced no summary_variables")
        if IC in data:
            dims["condition_dim"] = int(np.shape(data[IC])[-1])
        if IV in data:
            dims["target_dim"] = int(np.shape(data[IV])[-1])
        return dims

    def build(self, dims: dict[str, int]) -> None:
        self.dims = dict(dims)
        init = RngStream(self.seed, INIT_STREAM)
        cond_dim = dims["condition_dim"]
        if self.summary_cls is not None:
            self.summary_net = self.summary_cls(self.summary_config, dims["summary_features"], init.child(0), self.dtype)
            cond_dim += self.summary_config.summary_dim
        self.head = self._make_head(dims, cond_dim, init.child(1))

    def _make_head(self, dims, cond_dim, rng):
        if dims["target_dim"] < 1:
            raise AdapterError("adapter produced no inference_variables")
        return self.head_cls(self.head_config, dims["target_dim"], cond_dim, rng, self.dtype)

    def _ensure_built(self, data: dict) -> None:
        if not self.built:
            self.build(self._dims_from(data))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        if self.summary_net is not None:
            out.update({f"summary.{k}": v for k, v in self.summary_net.parameters().items()})
        if self.head is not None:
            out.update({f"inference.{k}": v for k, v in self.head.parameters().items()})
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def build_from_batch(self, batch: NamedBatch) -> None:
        """Initialise networks from the shapes of one simulated batch."""
        self._ensure_built(self._adapt(batch))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise KeyError(f"parameter names differ: {sorted(set(params) ^ set(state))}")
        for k, p in params.items():
            value = np.asarray(state[k])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {value.shape} vs {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    # -- data flow --------------------------------------------------------------
    def _adapt(self, batch: NamedBatch, strict: bool = True) -> dict:
        return self.adapter.forward(batch, strict=strict)

    def _conditions(self, data: dict) -> Tensor | None:
        parts = []
        if self.summary_net is not None:
            if SV not in data:
                raise AdapterError("missing condition variables: summary_variables not produced")
            mask = data.get(self.mask_key) if self.mask_key else None
            parts.append(self.summary_net(Tensor(_as_array(data[SV], self.dtype)), mask))
        if self.dims and self.dims["condition_dim"]:
            if IC not in data:
                raise AdapterError("missing condition variables: inference_conditions not produced")
            parts.append(Tensor(_as_array(data[IC], self.dtype)))
        if not parts:
            return None
        return parts[0] if len(parts) == 1 else ops.concatenate(parts, axis=-1)

    def compute_loss(self, data: dict, stream: RngStream) -> Tensor:
        raise NotImplementedError

    # -- training ---------------------------------------------------------------
    def fit_online(self, simulator, config: TrainConfig, stream: RngStream | None = None) -> History:
        """Fresh simulations for every batch; the simulation stream advances once per batch."""
        sim_stream = stream if stream is not None else RngStream(config.seed, SIM_STREAM)

        def batches(epoch):
            for _ in range(config.num_batches_per_epoch):
                yield simulator.sample(config.batch_size, sim_stream)

        return self._train(batches, config.num_batches_per_epoch, config)

    def fit_offline(self, data: NamedBatch | OfflineDataset, config: TrainConfig) -> History:
        dataset = data if isinstance(data, OfflineDataset) else OfflineDataset(data, config.batch_size, config.seed)
        return self._train(dataset.batches, dataset.num_batches, config)

    def _train(self, epoch_batches: Callable[[int], Iterable[NamedBatch]], steps_per_epoch: int, config: TrainConfig) -> History:
        total = config.epochs * steps_per_epoch
        schedule = CosineDecay(config.learning_rate, config.final_learning_rate, total)
        self.optimizer = AdamW(config.learning_rate, weight_decay=config.weight_decay, schedule=schedule)
        noise = RngStream(config.seed, NOISE_STREAM)
        history = History(val_loss=[] if config.validation is not None else None)
        for epoch in range(config.epochs):
            running = []
            for b, batch in enumerate(epoch_batches(epoch)):
                data = self._adapt(batch)
                self._ensure_built(data)
                params = self.parameters()
                for p in params.values():
                    p.grad = None
                loss = self.compute_loss(data, noise.spawn())
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                backward(loss)
                self.optimizer.step(params)
                running.append(value)
            history.loss.append(float(np.mean(running)))
            if config.validation is not None:
                history.val_loss.append(self.validation_loss(config.validation, config.seed))
        self.history = history
        return history

    def validation_loss(self, batch: NamedBatch, seed: int = 0, chunk: int = 512) -> float:
        n = batch_size_of(batch)
        stream = RngStream(seed, VALID_STREAM)
        total = 0.0
        with no_grad():
            for i, start in enumerate(range(0, n, chunk)):
                part = subset(batch, slice(start, start + chunk))
                data = self._adapt(part)
                self._ensure_built(data)
                total += float(self.compute_loss(data, stream.child(i)).data) * batch_size_of(part)
        return total / n

    # -- persistence --------------------------------------------------------------
    def config(self) -> dict:
        return {
            "kind": self.kind,
            "adapter": self.adapter.to_config(),
            "inference_network": _spec_of(self.head_config),
            "summary_network": None if self.summary_config is None else _spec_of(self.summary_config),
            "seed": self.seed,
            "dtype": self.dtype.name,
            "mask_key": self.mask_key,
            "dims": self.dims,
            **self._extra_config(),
        }

    def _extra_config(self) -> dict:
        return {}


class ContinuousApproximator(Approximator):
    """Posterior (or, with swapped roles, likelihood) density estimator."""

    kind = "continuous"

    def __init__(self, *args, kind: str = "continuous", **kwargs):
        super().__init__(*args, **kwargs)
        if kind not in ("continuous", "likelihood_surrogate"):
            raise ValueError(f"unknown continuous kind {kind!r}")
        self.kind = kind

    def compute_loss(self, data, stream):
        return self.head.loss(_as_array(data[IV], self.dtype), self._conditions(data), stream)

    def _condition_array(self, conditions: NamedBatch) -> tuple[np.ndarray | None, int]:
        data = self._adapt(conditions, strict=False)
        with no_grad():
            cond = self._conditions(data)
        if cond is None:
            return None, batch_size_of(conditions)
        return cond.data, cond.shape[0]

    def sample(self, conditions: NamedBatch, num_samples: int, stream=None) -> dict[str, np.ndarray]:
        """Draws per original inference variable, shaped ``(n_datasets, num_samples, k)``.

        ``stream`` may be a list with one stream per dataset; otherwise a
        call stream is spawned and dataset ``i`` uses its ``i``-th child.
        """
        if not self.built:
            raise RuntimeError("approximator has not been trained or loaded")
        cond, n = self._condition_array(conditions)
        streams = stream if isinstance(stream, (list, tuple)) else as_stream(stream).spawn()
        draws = self.head.sample(cond, num_samples, streams, batch_size=n)
        flat = draws.reshape(n * num_samples, -1)
        named = self.adapter.inverse({IV: flat}, strict=False)
        return {k: np.asarray(v).reshape(n, num_samples, -1) for k, v in named.items()}

    def log_prob(self, data: NamedBatch) -> np.ndarray:
        """Log density in the original parameterisation (head density plus adapter Jacobian)."""
        if not self.built:
            raise RuntimeError("approximator has not been trained or loaded")
        adapted, ldj = self.adapter.forward(data, strict=True, log_det_jac=True)
        with no_grad():
            cond = self._conditions(adapted)
        target = _as_array(adapted[IV], self.dtype)
        if isinstance(self.head, FlowMatching):
            lp = self.head.log_prob(target, cond)
        else:
            with no_grad():
                lp = self.head.log_prob(target, cond).data
        return lp.astype(np.float64) + np.asarray(ldj.get(IV, 0.0), dtype=np.float64).reshape(-1)


def likelihood_surrogate(adapter: Adapter, inference_network, seed: int = 0, dtype=np.float32) -> ContinuousApproximator:
    """Density estimator of data given parameters, built by swapping adapter roles."""
    return ContinuousApproximator(adapter.swap_roles(), inference_network, seed=seed, dtype=dtype, kind="likelihood_surrogate")


class PointApproximator(Approximator):
    kind = "point"

    def compute_loss(self, data, stream):
        return self.head.loss(_as_array(data[IV], self.dtype), self._conditions(data))

    def estimate(self, conditions: NamedBatch) -> dict[str, dict[str, np.ndarray]]:
        """``name -> {"mean": (n, k), "quantiles": (n, levels, k)}`` in original units."""
        if not self.built:
            raise RuntimeError("approximator has not been trained or loaded")
        data = self._adapt(conditions, strict=False)
        with no_grad():
            raw = self.head.estimate(self._conditions(data))
        out: dict[str, dict[str, np.ndarray]] = {}
        for stat, arr in raw.items():
            lead = arr.shape[:-1]
            named = self.adapter.inverse({IV: arr.reshape(-1, arr.shape[-1])}, strict=False)
            for name, v in named.items():
                out.setdefault(name, {})[stat] = np.asarray(v).reshape(*lead, -1)
        return out

    @property
    def quantile_levels(self) -> tuple[float, ...]:
        return tuple(self.head_config.quantile_levels)


class ModelComparisonApproximator(Approximator):
    kind = "model_comparison"
    head_registry = CLASSIFIERS

    def __init__(self, adapter, classifier, num_models: int, summary_network=None, seed=0, dtype=np.float32,
                 mask_key=None, label_key: str = "model_index"):
        if num_models < 2:
            raise ValueError("model comparison needs at least two models")
        super().__init__(adapter, classifier, summary_network, seed, dtype, mask_key)
        self.num_models = num_models
        self.label_key = label_key

    def _make_head(self, dims, cond_dim, rng):
        if cond_dim < 1:
            raise AdapterError("classifier needs summary_variables or inference_conditions")
        return Classifier(self.head_config, cond_dim, self.num_models, rng, self.dtype)

    def compute_loss(self, data, stream):
        if self.label_key not in data:
            raise AdapterError(f"training batches need model labels under {self.label_key!r}")
        return self.head.loss(np.asarray(data[self.label_key]).ravel(), self._conditions(data))

    def classify(self, conditions: NamedBatch) -> np.ndarray:
        data = self._adapt(conditions, strict=False)
        with no_grad():
            return posterior_model_probs(self.head(self._conditions(data)))

    def _extra_config(self):
        return {"num_models": self.num_models, "label_key": self.label_key}


class RatioApproximator(Approximator):
    """Likelihood-to-evidence ratio by contrasting joint and shuffled pairs."""

    kind = "ratio"
    head_registry = CLASSIFIERS

    def _make_head(self, dims, cond_dim, rng):
        if dims["target_dim"] < 1 or cond_dim < 1:
            raise AdapterError("ratio estimation needs inference_variables and conditions")
        return RatioEstimator(self.head_config, dims["target_dim"], cond_dim, rng, self.dtype)

    def compute_loss(self, data, stream):
        return binary_ratio_loss(self.head, _as_array(data[IV], self.dtype), self._conditions(data), stream)

    def log_ratio(self, data: NamedBatch) -> np.ndarray:
        adapted = self._adapt(data)
        with no_grad():
            cond = self._conditions(adapted)
        return self.head.log_ratio(_as_array(adapted[IV], self.dtype), cond)


@dataclass
class LMLEstimate:
    mean: np.ndarray
    sd: np.ndarray
    degenerate: bool = False


def log_marginal_likelihood(posterior, likelihood, prior_log_density: Callable[[NamedBatch], np.ndarray],
                            data: NamedBatch, num_theta: int = 100, stream=None) -> LMLEstimate:
    """``log q(D|theta) + log p(theta) - log q(theta|D)`` averaged over posterior draws.

    ``posterior`` and ``likelihood`` need ``sample``/``log_prob`` over named
    batches, so trained approximators and exact oracles are interchangeable.
    The spread over draws is returned as an error measure.
    """
    if num_theta < 1:
        raise ValueError("num_theta must be positive")
    n = batch_size_of(data)
    draws = posterior.sample(data, num_theta, stream)
    means, sds = np.empty(n), np.empty(n)
    for i in range(n):
        joint = _repeat_rows(data, i, num_theta)
        for name, v in draws.items():
            joint[name] = np.asarray(v[i], dtype=np.float64)
        log_prior = np.asarray(prior_log_density(joint), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(log_prior)):
            raise ValueError("posterior draw outside the prior support")
        values = likelihood.log_prob(joint) + log_prior - posterior.log_prob(joint)
        means[i] = values.mean()
        sds[i] = values.std(ddof=1) if num_theta > 1 else 0.0
    degenerate = num_theta == 1
    if degenerate:
        warnings.warn("num_theta=1: spread of the estimate is undefined and reported as 0", RuntimeWarning, stacklevel=2)
    return LMLEstimate(means, sds, degenerate)


APPROXIMATORS = {
    "continuous": ContinuousApproximator,
    "likelihood_surrogate": ContinuousApproximator,
    "point": PointApproximator,
    "model_comparison": ModelComparisonApproximator,
    "ratio": RatioApproximator,
}


def approximator_from_config(config: dict) -> Approximator:
    """Rebuild an (untrained-parameter) approximator with the recorded dimensions."""
    kind = config["kind"]
    common = dict(seed=config["seed"], dtype=np.dtype(config["dtype"]), mask_key=config.get("mask_key"))
    adapter = Adapter.from_config(config["adapter"])
    if kind == "model_comparison":
        approx = ModelComparisonApproximator(adapter, config["inference_network"], config["num_models"],
                                             config["summary_network"], label_key=config["label_key"], **common)
    elif kind in ("continuous", "likelihood_surrogate"):
        approx = ContinuousApproximator(adapter, config["inference_network"], config["summary_network"], kind=kind, **common)
    elif kind in APPROXIMATORS:
        approx = APPROXIMATORS[kind](adapter, config["inference_network"], config["summary_network"], **common)
    else:
        raise ValueError(f"unknown approximator kind {kind!r}")
    if config.get("dims"):
        approx.build(config["dims"])
    return approx
