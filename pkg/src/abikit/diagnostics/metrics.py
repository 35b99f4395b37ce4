"""Calibration, recovery and contraction metrics over posterior draws.

Shapes: ``estimates`` are ``(M, L, D)`` posterior draws for ``M`` datasets,
``targets`` are the ``(M, D)`` ground truths. 2-D estimates ``(M, L)`` and
1-D targets are treated as a single variable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from ..numcore.rng import RngStream, as_stream

DEFAULT_ALPHA_GRID = np.linspace(0.005, 0.995, 20)
NULL_REPLICATES = 1000


def _prepare(estimates, targets) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimates, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if est.ndim == 2:
        est = est[..., None]
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    if est.ndim != 3 or tgt.ndim != 2 or est.shape[0] != tgt.shape[0] or est.shape[2] != tgt.shape[1]:
        raise ValueError(f"shape mismatch: estimates {est.shape} vs targets {tgt.shape}")
    return est, tgt


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def fractional_ranks(estimates, targets, stream: RngStream | int | None = None) -> np.ndarray:
    """Share of draws below the truth, ties split uniformly at random."""
    est, tgt = _prepare(estimates, targets)
    if est.shape[1] < 2:
        raise ValueError("need at least two draws per dataset")
    below = (est < tgt[:, None, :]).sum(1)
    ties = (est == tgt[:, None, :]).sum(1)
    u = as_stream(stream).uniform(below.shape) if np.any(ties) else 0.0
    return (below + u * ties) / est.shape[1]


def evaluation_grid(m: int) -> np.ndarray:
    """``K = min(m, 100)`` points ``k / K``; rank sets ``{k / m}`` then have ECDF equal to the grid."""
    k = min(m, 100)
    return np.arange(1, k + 1) / k


def _ecdf_counts(ranks: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``counts[..., k] = #(ranks <= z_k)`` along the last rank axis."""
    srt = np.sort(ranks, axis=-1)
    flat = srt.reshape(-1, srt.shape[-1])
    out = np.stack([np.searchsorted(row, z, side="right") for row in flat])
    return out.reshape(*srt.shape[:-1], z.size)


def _gamma_from_counts(counts: np.ndarray, m: int, z: np.ndarray) -> np.ndarray:
    lower = stats.binom.cdf(counts, m, z)
    upper = stats.binom.sf(counts - 1, m, z)
    return np.min(2 * np.minimum(lower, upper), axis=-1)


def _check_m(m: int) -> None:
    if m < 20:
        raise ValueError(f"need at least 20 ranks, got {m}")


def log_gamma(ranks) -> np.ndarray:
    """Raw ``ln gamma`` per variable: the smallest two-sided binomial tail of the rank ECDF."""
    r = _as_2d(ranks)
    m = r.shape[0]
    _check_m(m)
    z = evaluation_grid(m)
    counts = _ecdf_counts(r.T, z)
    with np.errstate(divide="ignore"):
        return np.log(_gamma_from_counts(counts, m, z))


@lru_cache(maxsize=64)
def _null_gammas(m: int, replicates: int, seed: int) -> np.ndarray:
    z = evaluation_grid(m)
    ranks = RngStream(seed, 0).uniform((replicates, m))
    return _gamma_from_counts(_ecdf_counts(ranks, z), m, z)


def log_gamma_threshold(m: int, alpha: float = 0.05, replicates: int = NULL_REPLICATES, seed: int = 0) -> float:
    """``alpha`` quantile of ``ln gamma`` under uniform ranks, by simulation."""
    _check_m(m)
    return float(np.log(np.quantile(_null_gammas(m, replicates, seed), alpha)))


def calibration_log_gamma(ranks, alpha: float = 0.05) -> np.ndarray:
    """``ln gamma`` relative to the simulated null ``alpha`` quantile; positive means no evidence of miscalibration."""
    r = _as_2d(ranks)
    return log_gamma(r) - log_gamma_threshold(r.shape[0], alpha)


@dataclass
class ECDFBands:
    z: np.ndarray
    ecdf: np.ndarray  # (K, D)
    lower: np.ndarray  # (K,)
    upper: np.ndarray  # (K,)
    difference: bool = False

    def inside(self) -> np.ndarray:
        """Per variable: does the whole ECDF lie within the bands."""
        return np.all((self.ecdf >= self.lower[:, None] - 1e-12) & (self.ecdf <= self.upper[:, None] + 1e-12), axis=0)


def calibration_ecdf(ranks, band_alpha: float = 0.95, difference: bool = False) -> ECDFBands:
    """Rank ECDF with simultaneous bands at coverage ``band_alpha``.

    A curve lies inside the bands exactly when its gamma statistic is at
    least the ``1 - band_alpha`` quantile of the simulated null.
    """
    if not 0 < band_alpha < 1:
        raise ValueError("band_alpha must lie in (0, 1)")
    r = _as_2d(ranks)
    m = r.shape[0]
    _check_m(m)
    z = evaluation_grid(m)
    threshold = np.quantile(_null_gammas(m, NULL_REPLICATES, 0), 1 - band_alpha)
    counts = np.arange(m + 1)[:, None]
    ok = 2 * np.minimum(stats.binom.cdf(counts, m, z), stats.binom.sf(counts - 1, m, z)) >= threshold
    lower = np.argmax(ok, axis=0) / m
    upper = (m - np.argmax(ok[::-1], axis=0)) / m
    ecdf = _ecdf_counts(r.T, z).T / m
    if difference:
        ecdf, lower, upper = ecdf - z[:, None], lower - z, upper - z
    return ECDFBands(z, ecdf, lower, upper, difference)


def calibration_error(estimates, targets, alpha_grid=None) -> np.ndarray:
    """Mean absolute gap between nominal and empirical central-interval coverage."""
    est, tgt = _prepare(estimates, targets)
    alphas = DEFAULT_ALPHA_GRID if alpha_grid is None else np.asarray(alpha_grid, dtype=np.float64)
    if np.any((alphas <= 0) | (alphas >= 1)):
        raise ValueError("alpha grid must lie in (0, 1)")
    tail = (1 - alphas.max()) / 2
    if tail * est.shape[1] < 1:
        raise ValueError(f"{est.shape[1]} draws cannot resolve the {tail:.4f} quantile; use more draws or a narrower grid")
    errs = []
    for a in alphas:
        lo = np.quantile(est, (1 - a) / 2, axis=1)
        hi = np.quantile(est, (1 + a) / 2, axis=1)
        coverage = np.mean((tgt >= lo) & (tgt <= hi), axis=0)
        errs.append(np.abs(coverage - a))
    return np.mean(errs, axis=0)


def posterior_contraction(estimates, prior_variance=None, prior_samples=None) -> np.ndarray:
    """``1 - mean(posterior variance / prior variance)`` per variable."""
    est = np.asarray(estimates, dtype=np.float64)
    est = est[..., None] if est.ndim == 2 else est
    if prior_variance is None:
        if prior_samples is None:
            raise ValueError("give prior_variance or prior_samples")
        prior_variance = _as_2d(prior_samples).var(0, ddof=1)
    pv = np.broadcast_to(np.asarray(prior_variance, dtype=np.float64), (est.shape[2],))
    if np.any(pv <= 0):
        raise ValueError("prior variance must be positive")
    return 1 - np.mean(est.var(1, ddof=1) / pv, axis=0)


def nrmse(estimates, targets) -> np.ndarray:
    """RMSE of point estimates divided by the target range over the test set.

    Posterior draws ``(M, L, D)`` are reduced to their means first.
    """
    est = np.asarray(estimates, dtype=np.float64)
    tgt = _as_2d(targets)
    if est.ndim == 3:
        est = est.mean(1)
    est = _as_2d(est)
    if tgt.shape[0] < 2 or est.shape != tgt.shape:
        raise ValueError(f"need matching (M>=2, D) inputs, got {est.shape} and {tgt.shape}")
    span = tgt.max(0) - tgt.min(0)
    if np.any(span == 0):
        raise ValueError("targets have zero range")
    return np.sqrt(np.mean((est - tgt) ** 2, axis=0)) / span


@dataclass
class Recovery:
    truth: np.ndarray  # (M, D)
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    r: np.ndarray  # (D,)


def _pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(0)
    b = b - b.mean(0)
    denom = np.sqrt((a * a).sum(0) * (b * b).sum(0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.clip(np.where(denom > 0, (a * b).sum(0) / denom, 0.0), -1, 1)


def recovery(estimates, targets) -> Recovery:
    """Posterior median with central 50% interval against the truth."""
    est, tgt = _prepare(estimates, targets)
    if est.shape[0] < 2:
        raise ValueError("need at least two datasets")
    lo, med, hi = np.quantile(est, [0.25, 0.5, 0.75], axis=1)
    return Recovery(tgt, med, lo, hi, _pearson(med, tgt))


def recovery_from_estimates(quantiles, levels, targets) -> Recovery:
    """Recovery series from point-estimate quantile heads ``(M, Q, D)``."""
    q = np.asarray(quantiles, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    tgt = _as_2d(targets)
    mid = int(np.argmin(np.abs(levels - 0.5)))
    lo, hi = int(np.argmin(levels)), int(np.argmax(levels))
    return Recovery(tgt, q[:, mid], q[:, lo], q[:, hi], _pearson(q[:, mid], tgt))


def zscore_contraction(estimates, targets, prior_variance) -> tuple[np.ndarray, np.ndarray]:
    """Per-dataset posterior z-score and contraction, each ``(M, D)``."""
    est, tgt = _prepare(estimates, targets)
    sd = est.std(1, ddof=1)
    if np.any(sd == 0):
        raise ValueError("zero posterior standard deviation")
    pv = np.asarray(prior_variance, dtype=np.float64)
    if np.any(pv <= 0):
        raise ValueError("prior variance must be positive")
    return (est.mean(1) - tgt) / sd, 1 - sd**2 / pv


@dataclass
class QuantileCoverage:
    levels: np.ndarray
    coverage: np.ndarray  # (Q, D)
    lower: np.ndarray  # (Q,)
    upper: np.ndarray

    def inside(self) -> np.ndarray:
        return np.all((self.coverage >= self.lower[:, None]) & (self.coverage <= self.upper[:, None]), axis=0)


def calibration_ecdf_from_quantiles(quantiles, targets, levels, band: float = 0.99) -> QuantileCoverage:
    """Empirical ``P(truth <= estimate_tau)`` per level with pointwise binomial bands."""
    levels = np.asarray(levels, dtype=np.float64)
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be sorted ascending")
    q = np.asarray(quantiles, dtype=np.float64)
    q = q[..., None] if q.ndim == 2 else q
    tgt = _as_2d(targets)
    m = tgt.shape[0]
    coverage = np.mean(tgt[:, None, :] <= q, axis=0)
    lo = stats.binom.ppf((1 - band) / 2, m, levels) / m
    hi = stats.binom.ppf((1 + band) / 2, m, levels) / m
    return QuantileCoverage(levels, coverage, lo, hi)


METRIC_COLUMNS = ("NRMSE", "log_gamma", "calibration_error", "posterior_contraction")


@dataclass
class DiagnosticReport:
    variables: list[str]
    metrics: dict[str, np.ndarray]
    series: dict[str, object] = field(default_factory=dict, repr=False)

    def row(self, variable: str) -> dict[str, float]:
        i = self.variables.index(variable)
        return {k: float(v[i]) for k, v in self.metrics.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = [c for c in METRIC_COLUMNS if c in self.metrics] + [c for c in self.metrics if c not in METRIC_COLUMNS]
        writer.writerow(["variable", *cols])
        for i, name in enumerate(self.variables):
            writer.writerow([name, *(f"{float(self.metrics[c][i]):.6g}" for c in cols)])
        return buf.getvalue()


def compute_metrics(draws: dict[str, np.ndarray], targets: dict[str, np.ndarray], prior_variance: dict[str, np.ndarray],
                    stream: RngStream | int | None = None, alpha_grid=None) -> DiagnosticReport:
    """Standard table over named variables; multi-dimensional variables expand to ``name[i]`` rows."""
    stream = as_stream(stream)
    names, cols = [], {c: [] for c in METRIC_COLUMNS}
    series = {"ranks": {}, "recovery": {}, "zscore": {}}
    for name in draws:
        est, tgt = _prepare(draws[name], targets[name])
        pv = np.broadcast_to(np.asarray(prior_variance[name], dtype=np.float64), (est.shape[2],))
        ranks = fractional_ranks(est, tgt, stream.spawn())
        cols["NRMSE"].extend(nrmse(est, tgt))
        cols["log_gamma"].extend(calibration_log_gamma(ranks))
        cols["calibration_error"].extend(calibration_error(est, tgt, alpha_grid))
        cols["posterior_contraction"].extend(posterior_contraction(est, pv))
        labels = [name] if est.shape[2] == 1 else [f"{name}[{i}]" for i in range(est.shape[2])]
        names.extend(labels)
        rec = recovery(est, tgt)
        z, c = zscore_contraction(est, tgt, pv)
        for j, label in enumerate(labels):
            series["ranks"][label] = ranks[:, j]
            series["recovery"][label] = (rec.truth[:, j], rec.center[:, j], rec.lower[:, j], rec.upper[:, j], float(rec.r[j]))
            series["zscore"][label] = (c[:, j], z[:, j])
    return DiagnosticReport(names, {k: np.asarray(v) for k, v in cols.items()}, series)
