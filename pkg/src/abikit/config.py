"""Strict JSON workflow configuration.

Everything statically checkable is checked in :func:`parse_config`, before
any simulation or training: unknown keys, unknown transforms or networks,
missing adapter roles, bad quantile levels and out-of-range settings.
"""

from __future__ import annotations

import dataclasses
import importlib.util
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .adapter import Adapter, AdapterError, Keep
from .approximators import CLASSIFIERS, TrainConfig
from .networks import INFERENCE_NETWORKS, SUMMARY_NETWORKS, make_config
from .simulation import (
    ConjugateGaussianConfig,
    LotkaVolterraConfig,
    Simulator,
    conjugate_gaussian_simulator,
    gaussian_data_model,
    independent_model,
    make_lv_simulator,
    normal_model,
)


class ConfigError(ValueError):
    """Invalid configuration content; raised before any compute."""


def _lv(params):
    p = dict(params)
    expert = p.pop("expert", False)
    for key in ("t_span", "initial_state", "lags"):
        if key in p:
            p[key] = tuple(p[key])
    cfg = LotkaVolterraConfig(**p)
    outputs = {"alpha", "beta", "gamma", "delta", "x", "y", "t", "observed_x", "observed_y", "observed_t"}
    if cfg.obs_prob < 1:
        outputs.add("observed_mask")
    if expert:
        outputs |= {"means", "log_vars", "auto_corrs", "cross_corr", "period"}
    return make_lv_simulator(cfg, expert=bool(expert)), outputs


def _conjugate(params):
    return conjugate_gaussian_simulator(ConjugateGaussianConfig(**params)), {"mu", "x"}


def _normal(params):
    vary_n = params.get("vary_n", False)
    if set(params) - {"vary_n"}:
        raise TypeError(f"unexpected keys {sorted(set(params) - {'vary_n'})}")
    return normal_model(vary_n), {"mu", "sigma", "x"} | ({"N"} if vary_n else set())


def _gaussian_data(params):
    return gaussian_data_model(**params), {"x"}


def _independent(params):
    return independent_model(**params), {"mu", "x"}


# name -> factory(params) returning (simulator, output names)
MODELS: dict[str, Callable[[dict], tuple[Simulator, set[str]]]] = {
    "lotka_volterra": _lv,
    "conjugate_gaussian": _conjugate,
    "normal": _normal,
    "gaussian_data": _gaussian_data,
    "independent": _independent,
}


@dataclass
class ModelSpec:
    """A built-in simulator by ``name``, or ``function`` in a Python ``script`` returning a Simulator."""

    name: str | None = None
    params: dict = field(default_factory=dict)
    script: str | None = None
    function: str = "build_simulator"

    def __post_init__(self):
        if (self.name is None) == (self.script is None):
            raise ValueError("give exactly one of name or script")
        if self.name is not None and self.name not in MODELS:
            raise ValueError(f"unknown model {self.name!r}; choose from {sorted(MODELS)}")
        if not isinstance(self.params, dict):
            raise ValueError("params must be an object")

    def build(self, base_dir: Path | None = None) -> tuple[Simulator, set[str] | None]:
        if self.name is not None:
            try:
                return MODELS[self.name](self.params)
            except (TypeError, ValueError) as e:
                raise ValueError(f"bad params for {self.name!r}: {e}") from e
        path = Path(self.script)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            raise ValueError(f"stage script {str(path)!r} not found")
        spec = importlib.util.spec_from_file_location(path.stem, path)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        fn = getattr(module, self.function, None)
        if fn is None:
            raise ValueError(f"{path} defines no {self.function!r}")
        sim = fn(**self.params)
        if not isinstance(sim, Simulator):
            raise ValueError(f"{self.function} must return a Simulator")
        return sim, None


@dataclass
class NetworksSpec:
    approximator: str = "continuous"
    inference: dict = field(default_factory=lambda: {"kind": "coupling_flow"})
    summary: dict | None = None
    mask_key: str | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.approximator not in ("continuous", "point"):
            raise ValueError(f"approximator must be 'continuous' or 'point', got {self.approximator!r}")
        _, cfg = make_config(INFERENCE_NETWORKS, self.inference)
        is_point = self.inference.get("kind") == "point"
        if is_point != (self.approximator == "point"):
            raise ValueError(f"inference kind {self.inference.get('kind')!r} does not fit a {self.approximator} approximator")
        if self.summary is not None:
            make_config(SUMMARY_NETWORKS, self.summary)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class TrainingSpec:
    epochs: int = 10
    batch_size: int = 32
    num_batches_per_epoch: int = 100
    learning_rate: float = 5e-4
    final_learning_rate: float = 1e-6
    weight_decay: float = 0.004
    num_simulations: int = 5000
    validation_simulations: int = 0

    def __post_init__(self):
        self.train_config(0)
        if self.num_simulations < self.batch_size:
            raise ValueError("num_simulations must be at least batch_size")
        if self.validation_simulations < 0:
            raise ValueError("validation_simulations must be >= 0")

    def train_config(self, seed: int, validation=None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            num_batches_per_epoch=self.num_batches_per_epoch,
            learning_rate=self.learning_rate,
            final_learning_rate=self.final_learning_rate,
            weight_decay=self.weight_decay,
            seed=seed,
            validation=validation,
        )


@dataclass
class DiagnosticsSpec:
    num_datasets: int = 300
    num_samples: int = 1000
    band_alpha: float = 0.95
    alpha_grid: list | None = None

    def __post_init__(self):
        if self.num_datasets < 2 or self.num_samples < 2:
            raise ValueError("num_datasets and num_samples must be at least 2")
        if not 0 < self.band_alpha < 1:
            raise ValueError("band_alpha must lie in (0, 1)")
        if self.alpha_grid is not None:
            if not self.alpha_grid or any(not 0 < a < 1 for a in self.alpha_grid):
                raise ValueError("alpha_grid entries must lie in (0, 1)")
            tail = (1 - max(self.alpha_grid)) / 2
            if tail * self.num_samples < 1:
                raise ValueError(f"num_samples={self.num_samples} cannot resolve the alpha grid tails")


@dataclass
class ComparisonSpec:
    models: list
    adapter: list
    classifier: dict = field(default_factory=lambda: {"kind": "classifier"})
    summary: dict | None = None
    training: TrainingSpec = field(default_factory=TrainingSpec)

    def __post_init__(self):
        if not isinstance(self.models, list) or len(self.models) < 2:
            raise ValueError("comparison needs at least two models")
        make_config(CLASSIFIERS, self.classifier)
        if self.summary is not None:
            make_config(SUMMARY_NETWORKS, self.summary)


@dataclass
class WorkflowConfig:
    model: ModelSpec
    adapter: list
    networks: NetworksSpec = field(default_factory=NetworksSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    comparison: ComparisonSpec | None = None
    seed: int = 0
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("source")
        if out["comparison"] is None:
            out.pop("comparison")
        return out

    def with_seed(self, seed: int) -> WorkflowConfig:
        return dataclasses.replace(self, seed=int(seed))

    @property
    def base_dir(self) -> Path | None:
        return Path(self.source).parent if self.source else None


def _section(cls, obj, path: str, **nested):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object, got {type(obj).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if f.name != "source"}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = dict(obj)
    for key, (sub_cls, sub_nested) in nested.items():
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = _section(sub_cls, kwargs[key], f"{path}.{key}", **sub_nested)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and f.type in ("int", "float") and not _is_number(kwargs[f.name], f.type == "int"):
            raise ConfigError(f"{path}.{f.name}: expected {f.type}, got {kwargs[f.name]!r}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _is_number(v: Any, integral: bool) -> bool:
    if isinstance(v, bool):
        return False
    return isinstance(v, int) if integral else isinstance(v, (int, float))


def _check_adapter(spec: list, outputs: set[str] | None, path: str, roles=("inference_variables",)) -> Adapter:
    if not isinstance(spec, list):
        raise ConfigError(f"{path}: expected an ordered list of transforms")
    try:
        adapter = Adapter.from_config(spec)
        adapter.validate_roles(roles)
    except AdapterError as e:
        raise ConfigError(f"{path}: {e}") from e
    if outputs is not None:
        seen = set(outputs)
        for i, t in enumerate(adapter.transforms):
            if not isinstance(t, Keep):
                missing = [n for n in t.sources() if n not in seen]
                if missing:
                    raise ConfigError(f"{path}[{i}] ({t.kind}): unknown variable(s) {missing}; available {sorted(seen)}")
            seen |= set(t.targets())
    return adapter


def _model(obj, path: str, base_dir) -> tuple[ModelSpec, set[str] | None]:
    spec = _section(ModelSpec, obj, path)
    try:
        _, outputs = spec.build(base_dir) if spec.name is not None else (None, None)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    if spec.script is not None:
        script = Path(spec.script)
        if not script.is_absolute() and base_dir is not None:
            script = base_dir / script
        if not script.is_file():
            raise ConfigError(f"{path}: stage script {str(script)!r} not found")
    return spec, outputs


def parse_config(obj: dict, source: str | None = None) -> WorkflowConfig:
    """Validate a decoded JSON document into a :class:`WorkflowConfig`."""
    base_dir = Path(source).parent if source else None
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    required = {"model", "adapter"}
    if required - set(obj):
        raise ConfigError(f"missing section(s) {sorted(required - set(obj))}")
    known = {f.name for f in dataclasses.fields(WorkflowConfig)} - {"source"}
    if set(obj) - known:
        raise ConfigError(f"unknown section(s) {sorted(set(obj) - known)}")
    seed = obj.get("seed", 0)
    if not _is_number(seed, True) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")

    model, outputs = _model(obj["model"], "model", base_dir)
    networks = _section(NetworksSpec, obj.get("networks", {}), "networks")
    roles = ["inference_variables"] + (["summary_variables"] if networks.summary is not None else [])
    adapter = _check_adapter(obj["adapter"], outputs, "adapter", roles)
    if networks.summary is None and adapter.produces("summary_variables"):
        raise ConfigError("adapter produces summary_variables but networks.summary is not set")
    if not (adapter.produces("summary_variables") or adapter.produces("inference_conditions")) and networks.approximator == "point":
        raise ConfigError("point estimation needs summary_variables or inference_conditions")

    comparison = None
    if obj.get("comparison") is not None:
        comparison = _section(ComparisonSpec, obj["comparison"], "comparison", training=(TrainingSpec, {}))
        comparison.models = [_model(m, f"comparison.models[{i}]", base_dir)[0] for i, m in enumerate(comparison.models)]
        c_roles = ["summary_variables"] if comparison.summary is not None else []
        c_adapter = _check_adapter(comparison.adapter, None, "comparison.adapter", c_roles)
        if not (c_adapter.produces("summary_variables") or c_adapter.produces("inference_conditions")):
            raise ConfigError("comparison.adapter must produce summary_variables or inference_conditions")

    return WorkflowConfig(
        model=model,
        adapter=obj["adapter"],
        networks=networks,
        training=_section(TrainingSpec, obj.get("training", {}), "training"),
        diagnostics=_section(DiagnosticsSpec, obj.get("diagnostics", {}), "diagnostics"),
        comparison=comparison,
        seed=int(seed),
        source=source,
    )


def load_config(path) -> WorkflowConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file {str(path)!r} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    try:
        return parse_config(obj, str(path))
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
