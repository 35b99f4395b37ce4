"""Conjugate-Gaussian check: trained posterior and evidence against closed forms, plus model comparison.

    python scripts/conjugate.py --outdir runs/conjugate [--config scripts/configs/conjugate.json]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from abikit.approximators import TrainConfig, likelihood_surrogate, log_marginal_likelihood
from abikit.config import load_config
from abikit.numcore import RngStream
from abikit.simulation import ConjugateGaussianConfig, conjugate_log_marginal, conjugate_log_prior, conjugate_posterior
from abikit.workflow import BasicWorkflow, fit_comparison

HERE = Path(__file__).parent


def run(config_path, outdir: Path) -> dict:
    cfg = load_config(config_path)
    conj = ConjugateGaussianConfig(**cfg.model.params)
    wf = BasicWorkflow(cfg)
    wf.fit("online")
    outdir.mkdir(parents=True, exist_ok=True)
    wf.save(outdir / "checkpoint.abic")

    test = wf.simulate_test(100)
    draws = wf.sample(test, 2000, RngStream(cfg.seed, 1))["mu"][..., 0]
    mean, sd = conjugate_posterior(conj, test["x"])

    likelihood = likelihood_surrogate(wf.approximator.adapter, cfg.networks.inference, seed=cfg.seed)
    likelihood.fit_online(wf.simulator, TrainConfig(epochs=20, batch_size=64, learning_rate=1e-3, seed=cfg.seed))
    data = {"x": test["x"][:20]}
    lml = log_marginal_likelihood(wf.approximator, likelihood, lambda b: conjugate_log_prior(conj, b["mu"][:, 0]), data,
                                  100, RngStream(cfg.seed, 2))

    comparison = fit_comparison(cfg)
    held_out = {"x": np.concatenate([np.full((1, conj.n_obs), -2.0), np.full((1, conj.n_obs), 2.0)])}
    summary = {
        "mean_abs_mean_error": float(np.mean(np.abs(draws.mean(1) - mean))),
        "mean_sd_relative_error": float(np.mean(np.abs(draws.std(1, ddof=1) - sd) / sd)),
        "max_abs_lml_error": float(np.max(np.abs(lml.mean - conjugate_log_marginal(conj, data["x"])))),
        "mean_lml_sd": float(lml.sd.mean()),
        "model_probs_at_-2_and_2": comparison.classify(held_out).round(4).tolist(),
    }
    report = wf.compute_default_diagnostics(wf.simulate_test())
    (outdir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=HERE / "configs" / "conjugate.json")
    parser.add_argument("--outdir", type=Path, default=Path("runs/conjugate"))
    args = parser.parse_args()
    print(json.dumps(run(args.config, args.outdir), indent=2))
    print(Path(args.outdir, "metrics.csv").read_text())
