import math
import warnings

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from abikit.adapter import Adapter, AdapterError
from abikit.approximators import (
    ContinuousApproximator,
    ModelComparisonApproximator,
    OfflineDataset,
    PointApproximator,
    RatioApproximator,
    TrainConfig,
    TrainingError,
    approximator_from_config,
    likelihood_surrogate,
    log_marginal_likelihood,
)
from abikit.networks import ClassifierConfig, CouplingFlowConfig, DeepSetConfig, PointConfig
from abikit.numcore import RngStream
from abikit.simulation import (
    ConjugateGaussianConfig,
    ConjugateLikelihoodOracle,
    ConjugatePosteriorOracle,
    ModelMixture,
    conjugate_gaussian_simulator,
    conjugate_log_marginal,
    conjugate_log_prior,
    gaussian_data_model,
    make_simulator,
    normal_model,
)

SMALL_FLOW = {"kind": "coupling_flow", "num_blocks": 2, "subnet_widths": [16, 16]}


def conj_adapter():
    return Adapter().concatenate(["mu"], into="inference_variables").concatenate(["x"], into="inference_conditions")


def normal_model_adapter():
    return (
        Adapter()
        .as_set("x")
        .constrain("sigma", lower=0)
        .concatenate(["mu", "sigma"], into="inference_variables")
        .rename("x", "summary_variables")
    )


def small_continuous(seed=0):
    return ContinuousApproximator(conj_adapter(), SMALL_FLOW, seed=seed)


def test_fit_online_step_count_determinism_and_fresh_streams():
    cfg = TrainConfig(epochs=2, num_batches_per_epoch=3, batch_size=16, learning_rate=1e-3, seed=4)
    sim = conjugate_gaussian_simulator()
    a, b = small_continuous(), small_continuous()
    stream = RngStream(4, 2)
    ha = a.fit_online(sim, cfg, stream=stream)
    hb = b.fit_online(sim, cfg)
    assert a.optimizer.step_count == 6 and len(ha) == 2 and ha.val_loss is None
    assert stream.spawned == 6
    assert ha.loss == hb.loss
    sa, sb = a.state_dict(), b.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_online_step_arithmetic():
    cfg = TrainConfig(epochs=50, num_batches_per_epoch=200, batch_size=32)
    assert cfg.epochs * cfg.num_batches_per_epoch == 10_000


def test_zero_epochs_leaves_parameters():
    approx = small_continuous()
    sim = conjugate_gaussian_simulator()
    approx.build_from_batch(sim.sample(4, 0))
    before = approx.state_dict()
    hist = approx.fit_online(sim, TrainConfig(epochs=0))
    assert len(hist) == 0
    assert all(np.array_equal(before[k], v) for k, v in approx.state_dict().items())


def test_offline_epochs_are_permutations_and_validation_aligned():
    sims = conjugate_gaussian_simulator().sample(1024, 1)
    ds = OfflineDataset(sims, 64, seed=3)
    assert ds.num_batches == 16
    for epoch in range(3):
        assert np.array_equal(np.sort(ds.epoch_order(epoch)), np.arange(1024))
    assert not np.array_equal(ds.epoch_order(0), ds.epoch_order(1))
    seen = np.concatenate([b["mu"][:, 0] for b in ds.batches(0)])
    assert np.array_equal(np.sort(seen), np.sort(sims["mu"][:, 0]))
    approx = small_continuous()
    val = conjugate_gaussian_simulator().sample(100, 2)
    hist = approx.fit_offline(ds, TrainConfig(epochs=2, batch_size=64, learning_rate=1e-3, validation=val))
    assert approx.optimizer.step_count == 32
    assert len(hist.loss) == len(hist.val_loss) == 2
    with pytest.raises(ValueError, match="exceeds"):
        OfflineDataset(val, 101)


def test_overfitting_demo():
    sim = conjugate_gaussian_simulator()
    approx = ContinuousApproximator(conj_adapter(), {"kind": "coupling_flow", "num_blocks": 4, "subnet_widths": [64, 64]})
    train = sim.sample(32, RngStream(10))
    held_out = sim.sample(512, RngStream(11))
    hist = approx.fit_offline(train, TrainConfig(epochs=300, batch_size=32, learning_rate=3e-3, validation=held_out))
    assert hist.loss[-1] < hist.val_loss[-1]


def test_non_finite_loss_aborts_with_location():
    def bad(batch_size, rng):
        mu = rng.normal(size=(batch_size, 1))
        mu[0, 0] = np.nan
        return {"mu": mu, "x": rng.normal(size=(batch_size, 10))}

    with pytest.raises((TrainingError, FloatingPointError), match="epoch 0, batch 0|non-finite"):
        small_continuous().fit_online(make_simulator([bad], batched=True), TrainConfig(epochs=1, num_batches_per_epoch=2))


def test_sample_shapes_and_constraint():
    approx = ContinuousApproximator(normal_model_adapter(), SMALL_FLOW, DeepSetConfig(summary_dim=8, encoder_widths=(8,), decoder_widths=(8,)))
    sims = normal_model().sample(10, RngStream(0))
    approx.build_from_batch(sims)
    draws = approx.sample({"x": sims["x"]}, 1000, RngStream(1))
    assert draws["mu"].shape == (10, 1000, 1) and draws["sigma"].shape == (10, 1000, 1)
    assert np.all(draws["sigma"] > 0)
    with pytest.raises(AdapterError):
        approx.sample({"y": sims["x"]}, 5)


def test_amortized_sampling_matches_single_calls():
    approx = small_continuous()
    sims = conjugate_gaussian_simulator().sample(6, 0)
    approx.build_from_batch(sims)
    for p in approx.parameters().values():
        p.data += 0.05 * np.random.default_rng(0).normal(size=p.shape).astype(p.dtype)
    base = RngStream(9)
    together = approx.sample({"x": sims["x"]}, 50, [base.child(i) for i in range(6)])["mu"]
    for i in range(6):
        single = approx.sample({"x": sims["x"][i : i + 1]}, 50, [base.child(i)])["mu"]
        assert np.max(np.abs(single[0] - together[i])) < 1e-5


def test_log_prob_untrained_equals_base_plus_jacobian():
    approx = ContinuousApproximator(normal_model_adapter(), SMALL_FLOW, DeepSetConfig(summary_dim=4, encoder_widths=(4,), decoder_widths=(4,)))
    sims = normal_model().sample(5, RngStream(2))
    approx.build_from_batch(sims)
    lp = approx.log_prob(sims)
    mu, sigma = sims["mu"][:, 0], sims["sigma"][:, 0]
    z = np.log(np.expm1(sigma))
    jac = -np.log(-np.expm1(-sigma))
    expected = stats.norm.logpdf(mu) + stats.norm.logpdf(z) + jac
    assert np.allclose(lp, expected, atol=1e-5)
    bad = dict(sims, sigma=-sims["sigma"])
    with pytest.raises(AdapterError):
        approx.log_prob(bad)


def test_log_prob_quadrature_in_constrained_space():
    ad = Adapter().constrain("s", lower=0).concatenate(["s"], into="inference_variables").concatenate(["c"], into="inference_conditions")
    approx = ContinuousApproximator(ad, {"kind": "coupling_flow", "num_blocks": 3, "subnet_widths": [8]}, dtype=np.float64)
    approx.build_from_batch({"s": np.ones((2, 1)), "c": np.zeros((2, 1))})
    rng = np.random.default_rng(0)
    for p in approx.parameters().values():
        p.data = p.data + 0.2 * rng.normal(size=p.shape)
    grid = np.concatenate([np.geomspace(1e-9, 1e-2, 2000, endpoint=False), np.linspace(1e-2, 80, 40001)])
    lp = approx.log_prob({"s": grid[:, None], "c": np.full((grid.size, 1), 0.7)})
    assert abs(trapezoid(np.exp(lp), grid) - 1) < 0.02


def test_softplus_jacobian_relation():
    ad = Adapter().constrain("s", lower=0).concatenate(["s"], into="inference_variables")
    approx = ContinuousApproximator(ad, SMALL_FLOW, dtype=np.float64)
    approx.build_from_batch({"s": np.ones((1, 1))})
    s = np.array([[0.5], [1.0], [2.0]])
    lp = approx.log_prob({"s": s})
    z = np.log(np.expm1(s[:, 0]))
    assert np.allclose(lp - stats.norm.logpdf(z), np.log(1 / (1 - np.exp(-s[:, 0]))), atol=1e-12)


def test_point_estimate_shapes():
    sims = normal_model().sample(300, RngStream(3))
    approx = PointApproximator(normal_model_adapter(), PointConfig(widths=(8,)), DeepSetConfig(summary_dim=4, encoder_widths=(4,), decoder_widths=(4,)))
    approx.build_from_batch(sims)
    est = approx.estimate({"x": sims["x"]})
    assert est["mu"]["mean"].shape == (300, 1) and est["mu"]["quantiles"].shape == (300, 5, 1)
    assert approx.quantile_levels == (0.1, 0.3, 0.5, 0.7, 0.9)
    median_only = PointApproximator(conj_adapter(), PointConfig(widths=(8,), quantile_levels=(0.5,)))
    conj = conjugate_gaussian_simulator().sample(4, 0)
    median_only.build_from_batch(conj)
    assert median_only.estimate(conj)["mu"]["quantiles"].shape == (4, 1, 1)


def test_model_comparison_three_models_rows_sum_to_one():
    mix = ModelMixture([gaussian_data_model(-1), gaussian_data_model(0), gaussian_data_model(1)])
    ad = Adapter().concatenate(["x"], into="inference_conditions")
    approx = ModelComparisonApproximator(ad, ClassifierConfig(widths=(8,)), 3)
    approx.fit_online(mix, TrainConfig(epochs=1, num_batches_per_epoch=5, batch_size=32, learning_rate=1e-3))
    p = approx.classify(mix.sample(20, 5))
    assert p.shape == (20, 3) and np.allclose(p.sum(1), 1, atol=1e-6)
    with pytest.raises(ValueError):
        ModelComparisonApproximator(ad, ClassifierConfig(), 1)


def test_ratio_approximator_trains_and_scores():
    approx = RatioApproximator(conj_adapter(), ClassifierConfig(widths=(16,)))
    hist = approx.fit_online(conjugate_gaussian_simulator(), TrainConfig(epochs=2, num_batches_per_epoch=20, batch_size=64, learning_rate=1e-3))
    assert len(hist) == 2
    assert approx.log_ratio(conjugate_gaussian_simulator().sample(7, 3)).shape == (7,)


# -- log marginal likelihood --------------------------------------------------------


def test_lml_exact_components_give_zero_spread():
    cfg = ConjugateGaussianConfig(n_obs=1)
    data = {"x": np.array([[0.0], [1.3]])}
    est = log_marginal_likelihood(
        ConjugatePosteriorOracle(cfg), ConjugateLikelihoodOracle(cfg), lambda b: conjugate_log_prior(cfg, b["mu"][:, 0]), data, 50, 0
    )
    assert est.mean[0] == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-10)
    assert np.allclose(est.mean, conjugate_log_marginal(cfg, data["x"]), atol=1e-10)
    assert np.all(est.sd < 1e-10) and not est.degenerate


def test_lml_single_draw_flags_and_support_error():
    cfg = ConjugateGaussianConfig(n_obs=1)
    post, lik = ConjugatePosteriorOracle(cfg), ConjugateLikelihoodOracle(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = log_marginal_likelihood(post, lik, lambda b: conjugate_log_prior(cfg, b["mu"][:, 0]), {"x": np.zeros((1, 1))}, 1)
    assert est.degenerate and est.sd[0] == 0 and caught
    with pytest.raises(ValueError, match="support"):
        log_marginal_likelihood(post, lik, lambda b: np.full(len(b["mu"]), -np.inf), {"x": np.zeros((1, 1))}, 3)


# -- likelihood surrogate -----------------------------------------------------------


def test_likelihood_surrogate_matches_analytic_likelihood():
    cfg = ConjugateGaussianConfig(n_obs=1)
    approx = likelihood_surrogate(conj_adapter(), {"kind": "coupling_flow", "num_blocks": 4, "subnet_widths": [32, 32]})
    assert approx.adapter.swap_roles().to_config() == conj_adapter().to_config()
    approx.fit_online(
        conjugate_gaussian_simulator(cfg),
        TrainConfig(epochs=10, num_batches_per_epoch=200, batch_size=128, learning_rate=2e-3, seed=1),
    )
    grid = np.linspace(-6, 6, 601)
    for mu in (-1.5, 0.0, 0.8, 2.0):
        lp = approx.log_prob({"mu": np.full((grid.size, 1), mu), "x": grid[:, None]})
        tv = 0.5 * trapezoid(np.abs(np.exp(lp) - stats.norm(mu, 1).pdf(grid)), grid)
        assert tv < 0.1
        draws = approx.sample({"mu": np.array([[mu]])}, 4000, RngStream(2))["x"]
        assert abs(draws.mean() - mu) < 0.05
    with pytest.raises(AdapterError):
        likelihood_surrogate(normal_model_adapter(), SMALL_FLOW)


def test_config_roundtrip_reproduces_samples():
    approx = ContinuousApproximator(normal_model_adapter(), SMALL_FLOW, DeepSetConfig(summary_dim=4, encoder_widths=(4,), decoder_widths=(4,)))
    sims = normal_model().sample(8, RngStream(0))
    approx.fit_offline(sims, TrainConfig(epochs=1, batch_size=8, learning_rate=1e-3))
    clone = approximator_from_config(approx.config())
    clone.load_state_dict(approx.state_dict())
    a = approx.sample({"x": sims["x"]}, 20, 3)
    b = clone.sample({"x": sims["x"]}, 20, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
