"""High-level orchestration: simulate, train, sample, diagnose and save."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .adapter import Adapter
from .approximators import (
    ContinuousApproximator,
    History,
    ModelComparisonApproximator,
    PointApproximator,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import WorkflowConfig, parse_config
from .diagnostics import (
    DiagnosticReport,
    calibration_ecdf,
    compute_metrics,
    ecdf_figure,
    loss_figure,
    nrmse,
    recovery_figure,
    zscore_figure,
)
from .numcore import RngStream
from .simulation import LotkaVolterraConfig, ModelMixture, NamedBatch, SimulationError, batch_size_of
from .simulation.lotka_volterra import PARAM_NAMES, simulate_trajectories

# workflow-level stream ids, disjoint from those used inside approximators
TRAIN_DATA_STREAM, VALID_DATA_STREAM, TEST_DATA_STREAM = 10, 11, 12
SAMPLE_STREAM, DIAGNOSTIC_STREAM, PREDICTIVE_STREAM, COMPARISON_STREAM = 13, 14, 15, 16

FIGURES = ("loss.svg", "calibration_ecdf.svg", "recovery.svg", "zscore_contraction.svg")
MIN_ECDF_DATASETS = 20


class WorkflowError(RuntimeError):
    """A delegated failure, annotated with the config it came from."""


@dataclass
class PredictiveBands:
    """Per-time-step median and central 50% / 90% bands of re-simulated series."""

    t: np.ndarray
    median: dict[str, np.ndarray]
    lower50: dict[str, np.ndarray]
    upper50: dict[str, np.ndarray]
    lower90: dict[str, np.ndarray]
    upper90: dict[str, np.ndarray]
    draws: dict[str, np.ndarray]


def predictive_bands(t, trajectories: dict[str, np.ndarray]) -> PredictiveBands:
    qs = {name: np.quantile(np.asarray(v, dtype=np.float64), [0.05, 0.25, 0.5, 0.75, 0.95], axis=0) for name, v in trajectories.items()}
    pick = lambda i: {k: q[i] for k, q in qs.items()}  # noqa: E731
    return PredictiveBands(np.asarray(t), pick(2), pick(1), pick(3), pick(0), pick(4), dict(trajectories))


def lv_predictive(config: LotkaVolterraConfig, t_end: float | None = None, noise: bool = True):
    """Re-simulator for LV posterior draws on the full time grid, optionally extended to ``t_end``."""
    t0, t1 = config.t_span
    end = t1 if t_end is None else float(t_end)
    if end < t1:
        raise ValueError("t_end must not precede the observed horizon")
    # keep roughly the simulator's step size; the grid ends exactly at ``end``
    steps = int(np.ceil((end - t0) / (t1 - t0) * (config.t_steps - 1))) + 1

    def predict(params: dict[str, np.ndarray], stream: RngStream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        theta = np.concatenate([np.asarray(params[n], dtype=np.float64).reshape(-1, 1) for n in PARAM_NAMES], axis=1)
        traj = simulate_trajectories(theta, config, t_steps=steps, t_end=end)
        x, y = traj["x"], traj["y"]
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise SimulationError("re-simulation diverged for some posterior draws")
        if noise and config.noise_scale > 0:
            eps = stream.normal((2, *x.shape))
            x, y = x * np.exp(config.noise_scale * eps[0]), y * np.exp(config.noise_scale * eps[1])
        return traj["t"][0], {"x": x, "y": y}

    return predict


class BasicWorkflow:
    """Simulator, adapter and approximator gathered behind one object."""

    def __init__(self, config: WorkflowConfig | dict, approximator=None):
        self.config = config if isinstance(config, WorkflowConfig) else parse_config(config)
        self.simulator, _ = self.config.model.build(self.config.base_dir)
        self.adapter = Adapter.from_config(self.config.adapter)
        self.approximator = approximator if approximator is not None else self._make_approximator()

    def _make_approximator(self):
        net = self.config.networks
        cls = PointApproximator if net.approximator == "point" else ContinuousApproximator
        return cls(self.adapter, net.inference, net.summary, seed=self.config.seed, dtype=np.dtype(net.dtype), mask_key=net.mask_key)

    def _fail(self, what: str, err: Exception) -> WorkflowError:
        return WorkflowError(f"{self.config.source or '<config>'}: {what} failed: {type(err).__name__}: {err}")

    @property
    def history(self) -> History:
        return self.approximator.history

    @property
    def trained(self) -> bool:
        return self.approximator.built and len(self.approximator.history) > 0

    # -- data -----------------------------------------------------------------
    def simulate(self, n: int, stream: RngStream | None = None, workers: int = 1) -> NamedBatch:
        stream = stream if stream is not None else RngStream(self.config.seed, TRAIN_DATA_STREAM)
        try:
            if workers > 1:
                return self.simulator.sample_parallel(n, stream, workers=workers)
            return self.simulator.sample(n, stream)
        except Exception as e:
            raise self._fail("simulation", e) from e

    def simulate_test(self, n: int | None = None) -> NamedBatch:
        return self.simulate(n or self.config.diagnostics.num_datasets, RngStream(self.config.seed, TEST_DATA_STREAM))

    # -- training -------------------------------------------------------------
    def fit(self, mode: str = "offline", data: NamedBatch | None = None) -> History:
        """Train online (fresh simulations per batch) or offline (fixed data, simulated when absent)."""
        if mode not in ("online", "offline"):
            raise ValueError(f"mode must be 'online' or 'offline', got {mode!r}")
        tr, seed = self.config.training, self.config.seed
        validation = None
        if tr.validation_simulations:
            validation = self.simulate(tr.validation_simulations, RngStream(seed, VALID_DATA_STREAM))
        cfg = tr.train_config(seed, validation)
        try:
            if mode == "online":
                return self.approximator.fit_online(self.simulator, cfg, RngStream(seed, TRAIN_DATA_STREAM))
            if data is None:
                data = self.simulate(tr.num_simulations)
            return self.approximator.fit_offline(data, cfg)
        except WorkflowError:
            raise
        except Exception as e:
            raise self._fail(f"{mode} training", e) from e

    # -- inference --------------------------------------------------------------
    def _require_trained(self):
        if not self.approximator.built:
            raise ValueError("the approximator is untrained; fit or load a checkpoint first")

    def sample(self, conditions: NamedBatch, num_samples: int, stream: RngStream | None = None) -> dict[str, np.ndarray]:
        self._require_trained()
        if not isinstance(self.approximator, ContinuousApproximator):
            raise ValueError("sampling needs a continuous approximator")
        stream = stream if stream is not None else RngStream(self.config.seed, SAMPLE_STREAM)
        return self.approximator.sample(conditions, num_samples, stream)

    def estimate(self, conditions: NamedBatch, levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict[str, dict[str, np.ndarray]]:
        """Point estimates; continuous approximators summarise posterior draws at ``levels``."""
        self._require_trained()
        if isinstance(self.approximator, PointApproximator):
            return self.approximator.estimate(conditions)
        draws = self.sample(conditions, self.config.diagnostics.num_samples)
        return {k: {"mean": v.mean(1), "quantiles": np.moveaxis(np.quantile(v, levels, axis=1), 0, 1)} for k, v in draws.items()}

    # -- diagnostics --------------------------------------------------------------
    def _targets(self, test: NamedBatch, names) -> dict[str, np.ndarray]:
        missing = [n for n in names if n not in test]
        if missing:
            raise ValueError(f"test data lacks ground truths for {missing}")
        n = batch_size_of(test)
        return {k: np.asarray(test[k], dtype=np.float64).reshape(n, -1) for k in names}

    def compute_default_diagnostics(self, test: NamedBatch, num_samples: int | None = None) -> DiagnosticReport:
        """Metric table per inference variable.

        Prior variances are estimated from the ground truths of the test set,
        which is a prior sample by construction.
        """
        self._require_trained()
        diag = self.config.diagnostics
        if isinstance(self.approximator, PointApproximator):
            est = self.approximator.estimate(test)
            targets = self._targets(test, est)
            levels = np.asarray(self.approximator.quantile_levels)
            rows, nr, cov = [], [], []
            for name, stats in est.items():
                mid = stats["quantiles"][:, int(np.argmin(np.abs(levels - 0.5)))]
                for j in range(mid.shape[1]):
                    rows.append(name if mid.shape[1] == 1 else f"{name}[{j}]")
                    nr.append(nrmse(mid[:, j], targets[name][:, j])[0])
                    hit = targets[name][:, None, j] <= stats["quantiles"][:, :, j]
                    cov.append(np.mean(np.abs(hit.mean(0) - levels)))
            return DiagnosticReport(rows, {"NRMSE": np.array(nr), "quantile_coverage_error": np.array(cov)})
        draws = self.sample(test, num_samples or diag.num_samples, RngStream(self.config.seed, DIAGNOSTIC_STREAM))
        targets = self._targets(test, draws)
        prior_var = {k: v.var(0, ddof=1) for k, v in targets.items()}
        try:
            return compute_metrics(draws, targets, prior_var, RngStream(self.config.seed, DIAGNOSTIC_STREAM).child(0), diag.alpha_grid)
        except ValueError as e:
            raise ValueError(f"diagnostics: {e}") from e

    def plot_default_diagnostics(self, test: NamedBatch, outdir, report: DiagnosticReport | None = None) -> list[Path]:
        """Write loss, calibration ECDF (difference), recovery and z-score/contraction SVGs."""
        if not self.trained:
            raise ValueError("the approximator is untrained; fit or load a checkpoint first")
        if not isinstance(self.approximator, ContinuousApproximator):
            raise ValueError("default diagnostic plots need posterior draws from a continuous approximator")
        m = batch_size_of(test)
        if m < MIN_ECDF_DATASETS:
            raise ValueError(f"the calibration ECDF needs at least {MIN_ECDF_DATASETS} test datasets, got {m}")
        report = report or self.compute_default_diagnostics(test)
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        band = self.config.diagnostics.band_alpha
        bands = {k: calibration_ecdf(r, band, difference=True) for k, r in report.series["ranks"].items()}
        figures = (
            loss_figure(self.history.loss, self.history.val_loss),
            ecdf_figure(bands),
            recovery_figure(report.series["recovery"]),
            zscore_figure(report.series["zscore"]),
        )
        paths = []
        for name, fig in zip(FIGURES, figures):
            fig.save(outdir / name)
            paths.append(outdir / name)
        return paths

    def posterior_predictive(self, row: NamedBatch, num_draws: int,
                             predict: Callable | None = None, t_end: float | None = None,
                             stream: RngStream | None = None) -> PredictiveBands:
        """Re-simulate observables from posterior draws for a single dataset."""
        if batch_size_of(row) != 1:
            raise ValueError("posterior_predictive takes exactly one dataset")
        stream = stream if stream is not None else RngStream(self.config.seed, PREDICTIVE_STREAM)
        if predict is None:
            if self.config.model.name != "lotka_volterra":
                raise ValueError("no default re-simulator for this model; pass predict")
            params = {k: tuple(v) if isinstance(v, list) else v for k, v in self.config.model.params.items() if k != "expert"}
            predict = lv_predictive(LotkaVolterraConfig(**params), t_end)
        draws = {k: v[0] for k, v in self.sample(row, num_draws, stream.child(0)).items()}
        try:
            t, series = predict(draws, stream.child(1))
        except SimulationError:
            raise
        except Exception as e:
            raise SimulationError(f"re-simulation failed: {e}") from e
        return predictive_bands(t, series)

    # -- persistence ----------------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(path, self.approximator, {"workflow": self.config.to_dict()})

    @classmethod
    def load(cls, path, config: WorkflowConfig | None = None) -> BasicWorkflow:
        approx, extra = load_checkpoint(path)
        if config is None:
            if "workflow" not in extra:
                raise ValueError("checkpoint carries no workflow config; pass one explicitly")
            config = parse_config(extra["workflow"])
        return cls(config, approximator=approx)


def fit_comparison(config: WorkflowConfig) -> ModelComparisonApproximator:
    """Train a model-comparison classifier online on the configured model set."""
    comp = config.comparison
    if comp is None:
        raise ValueError("config has no comparison section")
    sims = [m.build(config.base_dir)[0] for m in comp.models]
    mixture = ModelMixture(sims)
    approx = ModelComparisonApproximator(Adapter.from_config(comp.adapter), comp.classifier, len(sims), comp.summary, seed=config.seed)
    try:
        approx.fit_online(mixture, comp.training.train_config(config.seed), RngStream(config.seed, COMPARISON_STREAM))
    except Exception as e:
        raise WorkflowError(f"{config.source or '<config>'}: comparison training failed: {type(e).__name__}: {e}") from e
    return approx
