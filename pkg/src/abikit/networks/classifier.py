"""Softmax classifier heads for model comparison and ratio estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import ops
from ..numcore.nn import MLP, Module
from ..numcore.rng import RngStream, as_stream
from ..numcore.tensor import Tensor, as_tensor, no_grad


def classifier_loss(logits, labels) -> Tensor:
    """Mean categorical cross-entropy; ``labels`` are integer class indices."""
    logits = as_tensor(logits)
    labels = np.asarray(labels).astype(int).ravel()
    if labels.size != logits.shape[0]:
        raise ValueError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= logits.shape[-1]):
        raise ValueError("label out of range")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.size), labels] = 1
    return -ops.mean(ops.sum_(ops.log_softmax(logits, axis=-1) * onehot, axis=-1))


def posterior_model_probs(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max(-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(-1, keepdims=True)


@dataclass(frozen=True)
class ClassifierConfig:
    widths: tuple[int, ...] = (128, 128)
    activation: str = "gelu"


class Classifier(Module):
    def __init__(self, config: ClassifierConfig, in_dim: int, num_classes: int, rng: RngStream, dtype=np.float32):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.config = config
        self.num_classes = num_classes
        self.net = MLP(in_dim, config.widths, num_classes, rng, config.activation, dtype=dtype)

    def __call__(self, x) -> Tensor:
        return self.net(as_tensor(x))

    def loss(self, labels, features, stream=None) -> Tensor:
        return classifier_loss(self(features), labels)

    def probs(self, features) -> np.ndarray:
        with no_grad():
            return posterior_model_probs(self(features))


class RatioEstimator(Module):
    """Binary classifier between joint pairs and pairs with ``theta`` shuffled.

    At optimum the logit difference equals ``log p(x | theta) - log p(x)``.
    """

    def __init__(self, config: ClassifierConfig, theta_dim: int, cond_dim: int, rng: RngStream, dtype=np.float32):
        self.classifier = Classifier(config, theta_dim + cond_dim, 2, rng, dtype)
        self._dtype = dtype

    def logits(self, theta, cond) -> Tensor:
        return self.classifier(ops.concatenate([as_tensor(theta, self._dtype), as_tensor(cond, self._dtype)], axis=-1))

    def loss(self, theta, cond, stream: RngStream | int | None = None) -> Tensor:
        return binary_ratio_loss(self, theta, cond, stream)

    def log_ratio(self, theta, cond) -> np.ndarray:
        with no_grad():
            z = self.logits(theta, cond).data.astype(np.float64)
        return z[:, 1] - z[:, 0]


def binary_ratio_loss(estimator: RatioEstimator, theta, cond, stream: RngStream | int | None = None) -> Tensor:
    """Cross-entropy with joint pairs labelled 1 and within-batch shuffled pairs labelled 0."""
    theta = np.asarray(theta.data if isinstance(theta, Tensor) else theta)
    n = theta.shape[0]
    if n < 2:
        raise ValueError("batch size must be at least 2 to form shuffled pairs")
    perm = as_stream(stream).permutation(n)
    cond_t = as_tensor(cond, estimator._dtype)
    both_theta = np.concatenate([theta, theta[perm]], axis=0)
    both_cond = ops.concatenate([cond_t, cond_t], axis=0)
    labels = np.concatenate([np.ones(n, int), np.zeros(n, int)])
    return classifier_loss(estimator.logits(both_theta, both_cond), labels)
