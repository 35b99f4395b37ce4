"""Lotka-Volterra predator-prey model with a noisy, thinned observation model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Simulator, make_simulator

PARAM_NAMES = ("alpha", "beta", "gamma", "delta")
PRIOR_LOW, PRIOR_SCALE = 0.1, 3.9


class EmptyObservationError(ValueError):
    """Every time step was dropped by the observation model."""


@dataclass(frozen=True)
class LotkaVolterraConfig:
    t_span: tuple[float, float] = (0.0, 5.0)
    t_steps: int = 100
    initial_state: tuple[float, float] = (1.0, 1.0)
    subsample: int = 10
    obs_prob: float = 1.0
    noise_scale: float = 0.1
    lags: tuple[int, ...] = (2, 5)

    def __post_init__(self):
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError("t_span must be increasing")
        if self.t_steps < 2:
            raise ValueError("t_steps must be at least 2")
        if min(self.initial_state) <= 0:
            raise ValueError("initial populations must be positive")
        if not 0 < self.obs_prob <= 1:
            raise ValueError("obs_prob must lie in (0, 1]")
        if self.noise_scale < 0 or self.subsample < 1:
            raise ValueError("noise_scale must be >= 0 and subsample >= 1")

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(self.t_span[0], self.t_span[1], self.t_steps)

    @property
    def num_observed(self) -> int:
        return len(range(0, self.t_steps, self.subsample))


def lv_rhs(state, params):
    """Time derivative ``(dx/dt, dy/dt)``; broadcasts over arrays."""
    x, y = state
    alpha, beta, gamma, delta = params
    return alpha * x - beta * x * y, -gamma * y + delta * x * y


def lv_invariant(x, y, params):
    """delta*x - gamma*ln(x) + beta*y - alpha*ln(y), conserved along exact orbits."""
    alpha, beta, gamma, delta = params
    return delta * x - gamma * np.log(x) + beta * y - alpha * np.log(y)


def integrate_rk4(rhs: Callable[[np.ndarray, float], np.ndarray], initial_state, t_grid) -> np.ndarray:
    """Classical fixed-step RK4, one step per grid interval.

    Args:
        rhs: ``rhs(state, t)`` returning an array shaped like ``state``.
        initial_state: state at ``t_grid[0]``, any shape.
        t_grid: strictly increasing times.

    Returns:
        Array of shape ``(len(t_grid), *state.shape)``.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.asarray(initial_state, dtype=np.float64)
    out = np.empty((len(t_grid), *y.shape))
    out[0] = y
    for i in range(len(t_grid) - 1):
        t, h = t_grid[i], t_grid[i + 1] - t_grid[i]
        k1 = rhs(y, t)
        k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(y + h * k3, t + h)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite state at time index {i + 1}")
        out[i + 1] = y
    return out


def ecology_model(alpha, beta, gamma, delta, t_span=(0.0, 5.0), t_steps=100, initial_state=(1.0, 1.0)):
    """Noise-free trajectories; parameters may be scalars or ``(B,)``/``(B, 1)`` arrays."""
    params = [np.reshape(np.asarray(p, dtype=np.float64), -1) for p in (alpha, beta, gamma, delta)]
    scalar = all(np.ndim(p) == 0 for p in (alpha, beta, gamma, delta))
    n = params[0].shape[0]
    t = np.linspace(t_span[0], t_span[1], t_steps)

    def rhs(state, _t):
        return np.stack(lv_rhs((state[:, 0], state[:, 1]), params), axis=-1)

    init = np.tile(np.asarray(initial_state, dtype=np.float64), (n, 1))
    traj = integrate_rk4(rhs, init, t)  # (T, n, 2)
    x, y = traj[..., 0].T, traj[..., 1].T
    if scalar:
        return dict(x=x[0], y=y[0], t=t)
    return dict(x=x, y=y, t=np.broadcast_to(t, x.shape).copy())


def observation_model(x, y, t, subsample=10, obs_prob=1.0, noise_scale=0.1, rng=None):
    """Multiplicative log-normal noise, then stride thinning and random dropping.

    Works on single series ``(T,)`` or batches ``(B, T)``. Kept steps are
    packed to the front of the stride grid; when ``obs_prob < 1`` the tail is
    zero-padded and ``observed_mask`` marks valid steps.

    Raises:
        EmptyObservationError: if a series loses every step.
    """
    rng = np.random.default_rng() if rng is None else rng
    x, y, t = (np.asarray(a, dtype=np.float64) for a in (x, y, t))
    if not x.shape == y.shape == t.shape:
        raise ValueError("x, y and t must have equal shapes")
    eps = rng.standard_normal((2, *x.shape))
    noisy_x = x * np.exp(noise_scale * eps[0])
    noisy_y = y * np.exp(noise_scale * eps[1])
    idx = np.arange(0, x.shape[-1], subsample)
    ox, oy, ot = noisy_x[..., idx], noisy_y[..., idx], t[..., idx]
    if obs_prob >= 1:
        return dict(observed_x=ox, observed_y=oy, observed_t=ot)

    keep = rng.uniform(size=ox.shape) < obs_prob
    if np.any(keep.sum(-1) == 0):
        raise EmptyObservationError("all time steps dropped; resample this row")
    # stable sort puts kept steps first, preserving time order
    order = np.argsort(~keep, axis=-1, kind="stable")
    mask = np.take_along_axis(keep, order, -1)
    pack = lambda a: np.where(mask, np.take_along_axis(a, order, -1), 0.0)  # noqa: E731
    return dict(observed_x=pack(ox), observed_y=pack(oy), observed_t=pack(ot), observed_mask=mask.astype(np.float64))


def lv_prior(rng=None, batch_size=None, z=None):
    """Scaled logit-normal prior on (0.1, 4.0) for each rate."""
    if z is None:
        rng = np.random.default_rng() if rng is None else rng
        z = rng.standard_normal(4 if batch_size is None else (batch_size, 4))
    z = np.asarray(z, dtype=np.float64)
    theta = 1.0 / (1.0 + np.exp(-z)) * PRIOR_SCALE + PRIOR_LOW
    return {name: theta[..., i] for i, name in enumerate(PARAM_NAMES)}


def _acf(s: np.ndarray, lag: int) -> np.ndarray:
    c = s - s.mean(-1, keepdims=True)
    return (c[..., :-lag] * c[..., lag:]).sum(-1) / (c * c).sum(-1)


def dominant_period(series: np.ndarray) -> np.ndarray:
    """Samples per cycle at the largest non-zero-frequency DFT magnitude."""
    s = np.asarray(series, dtype=np.float64)
    n = s.shape[-1]
    mags = np.abs(np.fft.rfft(s - s.mean(-1, keepdims=True), axis=-1))[..., 1:]
    k = np.argmax(mags, axis=-1) + 1
    return n / k


def expert_stats(observed_x, observed_y, lags: Sequence[int] = (2, 5)) -> dict[str, np.ndarray]:
    """Hand-crafted summaries of one series pair or a batch (time on the last axis).

    Raises:
        ValueError: if a series is too short for the lags or has zero variance.
    """
    x = np.asarray(observed_x, dtype=np.float64)
    y = np.asarray(observed_y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("series must have equal shapes")
    if x.shape[-1] <= max(lags) + 1:
        raise ValueError(f"series length {x.shape[-1]} too short for lags {list(lags)}")
    var_x, var_y = x.var(-1), y.var(-1)
    if np.any(var_x == 0) or np.any(var_y == 0):
        raise ValueError("zero-variance series: correlations undefined")
    means = np.stack([x.mean(-1), y.mean(-1)], -1)
    log_vars = np.stack([np.log(var_x), np.log(var_y)], -1)
    auto = [_acf(x, l) for l in lags] + [_acf(y, l) for l in lags]
    cx, cy = x - x.mean(-1, keepdims=True), y - y.mean(-1, keepdims=True)
    cross = (cx * cy).sum(-1) / np.sqrt((cx * cx).sum(-1) * (cy * cy).sum(-1))
    return dict(
        means=means,
        log_vars=log_vars,
        auto_corrs=np.stack(auto, -1),
        cross_corr=cross[..., None],
        period=dominant_period(x)[..., None],
    )


def make_lv_simulator(config: LotkaVolterraConfig | None = None, expert: bool = False) -> Simulator:
    """Vectorised LV simulator: prior -> ODE -> observation [-> expert stats]."""
    cfg = config or LotkaVolterraConfig()

    def prior(batch_size, rng):
        return lv_prior(rng, batch_size)

    def ecology(alpha, beta, gamma, delta):
        return ecology_model(alpha, beta, gamma, delta, cfg.t_span, cfg.t_steps, cfg.initial_state)

    def observe(x, y, t, rng):
        return observation_model(x, y, t, cfg.subsample, cfg.obs_prob, cfg.noise_scale, rng)

    def stats(observed_x, observed_y):
        return expert_stats(observed_x, observed_y, cfg.lags)

    stages = [prior, ecology, observe] + ([stats] if expert else [])
    return make_simulator(stages, batched=True)


def simulate_trajectories(theta: np.ndarray, config: LotkaVolterraConfig, t_steps: int | None = None, t_end=None):
    """Noise-free trajectories for an ``(n, 4)`` parameter array, optionally on a longer horizon."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 4)
    steps = t_steps or config.t_steps
    t_span = (config.t_span[0], config.t_span[1] if t_end is None else t_end)
    with np.errstate(over="ignore", invalid="ignore"):
        return ecology_model(*theta.T, t_span=t_span, t_steps=steps, initial_state=config.initial_state)
