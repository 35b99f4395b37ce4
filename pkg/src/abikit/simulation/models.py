"""Small built-in models: the normal model with varying sample size, and
model-comparison pairs."""

from __future__ import annotations

import numpy as np

from .core import Simulator, make_simulator


def normal_prior(rng):
    return {"mu": rng.normal(), "sigma": rng.exponential()}


def normal_likelihood(mu, sigma, rng, N=10):
    return {"x": rng.normal(loc=mu, scale=sigma, size=N)}


def sample_size_meta(rng, low: int = 10, high: int = 100):
    return {"N": int(rng.integers(low, high))}


def normal_model(vary_n: bool = False) -> Simulator:
    """mu ~ N(0, 1), sigma ~ Exp(1), x_n ~ N(mu, sigma), unbatched stages."""
    return make_simulator(
        [normal_prior, normal_likelihood], meta_fn=sample_size_meta if vary_n else None
    )


def gaussian_data_model(loc: float, scale: float = 1.0, n_obs: int = 10) -> Simulator:
    """Data model without free parameters: ``x_n ~ N(loc, scale)``."""

    def data(batch_size, rng):
        return {"x": loc + scale * rng.standard_normal((batch_size, n_obs))}

    return make_simulator([data], batched=True)


def independent_model(n_obs: int = 5) -> Simulator:
    """Parameter drawn independently of the data; likelihood ratio is 1 everywhere."""

    def draw(batch_size, rng):
        return {
            "mu": rng.standard_normal((batch_size, 1)),
            "x": rng.standard_normal((batch_size, n_obs)),
        }

    return make_simulator([draw], batched=True)


class ModelMixture:
    """Simulate from J models with labels, equal counts per model."""

    def __init__(self, simulators: list[Simulator], prior_probs=None):
        if len(simulators) < 2:
            raise ValueError("model comparison needs at least two models")
        self.simulators = simulators
        self.prior_probs = np.full(len(simulators), 1 / len(simulators)) if prior_probs is None else np.asarray(prior_probs)

    @property
    def num_models(self) -> int:
        return len(self.simulators)

    def sample(self, batch_size: int, stream=None) -> dict[str, np.ndarray]:
        from ..numcore.rng import as_stream
        from .core import concat_batches

        stream = as_stream(stream)
        call = stream.spawn()
        counts = call.child(0).generator.multinomial(batch_size, self.prior_probs)
        parts = []
        for j, (sim, c) in enumerate(zip(self.simulators, counts)):
            if c == 0:
                continue
            b = sim.sample(int(c), call.child(1 + j))
            b["model_index"] = np.full((int(c), 1), j, dtype=np.float64)
            parts.append(b)
        out = concat_batches(parts)
        perm = call.child(99).permutation(batch_size)
        return {k: (v if np.ndim(v) == 0 else v[perm]) for k, v in out.items()}
