from .classifier import (
    Classifier,
    ClassifierConfig,
    RatioEstimator,
    binary_ratio_loss,
    classifier_loss,
    posterior_model_probs,
)
from .coupling import CouplingFlow, CouplingFlowConfig
from .flow_matching import FlowMatching, FlowMatchingConfig, flow_matching_loss, time_embedding
from .point import PointConfig, PointInferenceNetwork, mean_score, quantile_score
from .summary import DeepSet, DeepSetConfig, TimeSeriesConfig, TimeSeriesNetwork

SUMMARY_NETWORKS = {
    "deep_set": (DeepSet, DeepSetConfig),
    "time_series": (TimeSeriesNetwork, TimeSeriesConfig),
}
INFERENCE_NETWORKS = {
    "coupling_flow": (CouplingFlow, CouplingFlowConfig),
    "flow_matching": (FlowMatching, FlowMatchingConfig),
    "point": (PointInferenceNetwork, PointConfig),
}


def make_config(registry: dict, spec: dict):
    """``{"kind": ..., **fields}`` to ``(network_class, config)``; list fields become tuples."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in registry:
        raise ValueError(f"unknown network kind {kind!r}; choose from {sorted(registry)}")
    cls, cfg_cls = registry[kind]
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}
    try:
        return cls, cfg_cls(**fields)
    except TypeError as exc:
        raise ValueError(f"bad fields for {kind!r}: {exc}") from None
