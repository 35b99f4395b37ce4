"""Normal mean with known variance: a model whose posterior is known exactly.

Used as the ground-truth oracle throughout the test suite and diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..numcore.rng import RngStream, as_stream
from .core import Simulator, make_simulator


@dataclass(frozen=True)
class ConjugateGaussianConfig:
    prior_mean: float = 0.0
    prior_sd: float = 1.0
    obs_sd: float = 1.0
    n_obs: int = 10

    def __post_init__(self):
        if not (self.prior_sd > 0 and self.obs_sd > 0):
            raise ValueError("standard deviations must be positive")
        if self.n_obs < 1:
            raise ValueError("n_obs must be at least 1")


def conjugate_gaussian_simulator(cfg: ConjugateGaussianConfig | None = None) -> Simulator:
    cfg = cfg or ConjugateGaussianConfig()

    def prior(batch_size, rng):
        return {"mu": cfg.prior_mean + cfg.prior_sd * rng.standard_normal((batch_size, 1))}

    def likelihood(mu, rng):
        return {"x": mu + cfg.obs_sd * rng.standard_normal((mu.shape[0], cfg.n_obs))}

    return make_simulator([prior, likelihood], batched=True)


def conjugate_posterior(cfg: ConjugateGaussianConfig, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and sd of the mean parameter; ``x`` is ``(n_obs,)`` or ``(B, n_obs)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    precision = 1 / cfg.prior_sd**2 + n / cfg.obs_sd**2
    mean = (cfg.prior_mean / cfg.prior_sd**2 + x.sum(-1) / cfg.obs_sd**2) / precision
    return mean, np.full_like(mean, 1 / np.sqrt(precision))


def conjugate_log_marginal(cfg: ConjugateGaussianConfig, x) -> np.ndarray:
    """log p(x), from the joint Gaussian N(mu0 * 1, sigma0^2 I + tau0^2 11^T)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[-1]
    cov = cfg.obs_sd**2 * np.eye(n) + cfg.prior_sd**2 * np.ones((n, n))
    return stats.multivariate_normal(np.full(n, cfg.prior_mean), cov).logpdf(x).reshape(x.shape[0])


def conjugate_log_likelihood(cfg: ConjugateGaussianConfig, x, mu) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return stats.norm(np.asarray(mu, dtype=np.float64), cfg.obs_sd).logpdf(x).sum(-1)


def conjugate_log_prior(cfg: ConjugateGaussianConfig, mu) -> np.ndarray:
    return stats.norm(cfg.prior_mean, cfg.prior_sd).logpdf(np.asarray(mu, dtype=np.float64))


class ConjugatePosteriorOracle:
    """Drop-in for a trained posterior approximator, with exact answers."""

    variable = "mu"

    def __init__(self, cfg: ConjugateGaussianConfig):
        self.cfg = cfg

    def sample(self, conditions, num_samples: int, stream: RngStream | int | None = None):
        mean, sd = conjugate_posterior(self.cfg, conditions["x"])
        z = as_stream(stream).normal((mean.shape[0], num_samples, 1))
        return {"mu": mean[:, None, None] + sd[:, None, None] * z}

    def log_prob(self, data) -> np.ndarray:
        mean, sd = conjugate_posterior(self.cfg, data["x"])
        mu = np.asarray(data["mu"], dtype=np.float64).reshape(mean.shape)
        return stats.norm(mean, sd).logpdf(mu)


class ConjugateLikelihoodOracle:
    """Exact ``log p(x | mu)`` with the same interface as a likelihood surrogate."""

    def __init__(self, cfg: ConjugateGaussianConfig):
        self.cfg = cfg

    def log_prob(self, data) -> np.ndarray:
        mu = np.asarray(data["mu"], dtype=np.float64).reshape(-1, 1)
        return conjugate_log_likelihood(self.cfg, data["x"], mu)

    def sample(self, conditions, num_samples: int, stream=None):
        mu = np.asarray(conditions["mu"], dtype=np.float64).reshape(-1, 1, 1)
        z = as_stream(stream).normal((mu.shape[0], num_samples, self.cfg.n_obs))
        return {"x": mu + self.cfg.obs_sd * z}
