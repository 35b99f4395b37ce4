import copy
import csv
import io
import json
import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abikit import container
from abikit.checkpoint import load_checkpoint, save_checkpoint
from abikit.cli import main
from abikit.config import ConfigError, load_config, parse_config
from abikit.container import ContainerError
from abikit.numcore import RngStream
from abikit.simulation import LotkaVolterraConfig, subset
from abikit.workflow import FIGURES, BasicWorkflow, WorkflowError, lv_predictive, predictive_bands

LV_ADAPTER = [
    {"kind": "drop", "params": {"names": ["x", "y", "t", "observed_t"]}},
    {"kind": "log", "params": {"names": ["alpha", "beta", "gamma", "delta"]}},
    {"kind": "concatenate", "params": {"names": ["alpha", "beta", "gamma", "delta"], "into": "inference_variables"}},
    {"kind": "log", "params": {"names": ["observed_x", "observed_y"]}},
    {"kind": "as_time_series", "params": {"names": ["observed_x", "observed_y"]}},
    {"kind": "concatenate", "params": {"names": ["observed_x", "observed_y"], "into": "summary_variables"}},
]

CONJ_ADAPTER = [
    {"kind": "concatenate", "params": {"names": ["mu"], "into": "inference_variables"}},
    {"kind": "concatenate", "params": {"names": ["x"], "into": "inference_conditions"}},
]


def lv_config(**over):
    cfg = {
        "seed": 3,
        "model": {"name": "lotka_volterra"},
        "adapter": LV_ADAPTER,
        "networks": {
            "inference": {"kind": "coupling_flow", "num_blocks": 2, "subnet_widths": [16]},
            "summary": {"kind": "time_series", "summary_dim": 8, "hidden_dim": 8, "projection_widths": [8]},
        },
        "training": {"epochs": 2, "batch_size": 16, "num_simulations": 64, "validation_simulations": 32},
        "diagnostics": {"num_datasets": 30, "num_samples": 400},
    }
    cfg.update(over)
    return cfg


def conj_config(**over):
    cfg = {
        "seed": 1,
        "model": {"name": "conjugate_gaussian"},
        "adapter": CONJ_ADAPTER,
        "networks": {"inference": {"kind": "coupling_flow", "num_blocks": 2, "subnet_widths": [32, 32]}},
        "training": {"epochs": 4, "batch_size": 64, "num_batches_per_epoch": 100, "learning_rate": 2e-3},
        "diagnostics": {"num_datasets": 100, "num_samples": 400},
    }
    cfg.update(over)
    return cfg


@pytest.fixture(scope="module")
def lv_wf():
    wf = BasicWorkflow(lv_config())
    wf.fit("offline")
    return wf


# -- container -----------------------------------------------------------------------


def test_container_layout(tmp_path):
    arrays = {"a": np.arange(5, dtype=np.float32), "b": np.eye(3), "n": np.int64(7), "m": np.array([True, False])}
    path = tmp_path / "c.abic"
    container.write(path, arrays)
    raw = path.read_bytes()
    magic, version, mlen = struct.unpack("<4sHQ", raw[:14])
    assert magic == b"ABIC" and version == 1
    entries = json.loads(raw[14 : 14 + mlen])["entries"]
    assert [e["name"] for e in entries] == ["a", "b", "n", "m"]
    assert all(e["offset"] % 64 == 0 for e in entries)
    b = entries[1]
    assert np.array_equal(np.frombuffer(raw[b["offset"] : b["offset"] + b["length"]], "<f8").reshape(3, 3), np.eye(3))
    back = container.read(path)
    for k, v in arrays.items():
        assert back[k].dtype == np.asarray(v).dtype and np.array_equal(back[k], v)


@given(st.lists(st.tuples(st.sampled_from(["f4", "f8", "i8", "u1"]), st.lists(st.integers(0, 4), max_size=3)), min_size=1, max_size=6),
       st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_container_random_access(specs, seed):
    rng = np.random.default_rng(seed)
    arrays = {f"e{i}": (rng.normal(size=shape) * 100).astype(dt) for i, (dt, shape) in enumerate(specs)}
    raw = container.encode(arrays)
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".abic", delete=False) as fh:
        fh.write(raw)
    entries = container.manifest(fh.name)
    spans = sorted((e["offset"], e["offset"] + e["length"]) for e in entries)
    assert all(a1 <= b0 for (_, a1), (b0, _) in zip(spans, spans[1:]))
    for name in reversed(list(arrays)):
        assert np.array_equal(container.read_entry(fh.name, name), arrays[name])
    assert container.encode(arrays) == raw


def test_container_errors(tmp_path):
    path = tmp_path / "c.abic"
    container.write(path, {"w": np.ones((10, 10))})
    raw = path.read_bytes()
    for i, bad in enumerate([raw[:-8], raw[:10], b"XXXX" + raw[4:], raw[:4] + struct.pack("<H", 2) + raw[6:]]):
        p = tmp_path / f"bad{i}.abic"
        p.write_bytes(bad)
        with pytest.raises(ContainerError):
            container.read(p)
    with pytest.raises(ContainerError):
        container.encode({"h": np.ones(2, dtype=np.float16)})


# -- checkpoint ----------------------------------------------------------------------


def test_checkpoint_round_trip_bitwise(lv_wf, tmp_path):
    path = tmp_path / "ckpt.abic"
    lv_wf.save(path)
    loaded = BasicWorkflow.load(path)
    test = lv_wf.simulate(5, RngStream(0, 77))
    a = lv_wf.sample(test, 50, RngStream(1, 2))
    b = loaded.sample(test, 50, RngStream(1, 2))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert loaded.history.loss == lv_wf.history.loss and loaded.history.val_loss == lv_wf.history.val_loss
    opt_a, opt_b = lv_wf.approximator.optimizer, loaded.approximator.optimizer
    assert opt_a.step_count == opt_b.step_count
    assert all(np.array_equal(opt_a.m[k], opt_b.m[k]) and np.array_equal(opt_a.v[k], opt_b.v[k]) for k in opt_a.m)

    entries = container.manifest(path)
    n_params = len(lv_wf.approximator.parameters())
    assert len(entries) == n_params + 2 * n_params + 1
    dtypes = {e["name"].split("/")[0]: e["dtype"] for e in entries}
    assert dtypes == {"param": "f4", "m": "f8", "v": "f8", "metadata": "u1"}


def test_checkpoint_version_and_truncation(lv_wf, tmp_path):
    path = tmp_path / "ckpt.abic"
    save_checkpoint(path, lv_wf.approximator)
    arrays = container.read(path)
    meta = container.parse_json_entry(arrays["metadata"])
    meta["format_version"] = 99
    arrays["metadata"] = container.json_entry(meta)
    newer = tmp_path / "newer.abic"
    container.write(newer, arrays)
    with pytest.raises(ContainerError, match="version"):
        load_checkpoint(newer)
    cut = tmp_path / "cut.abic"
    cut.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ContainerError):
        load_checkpoint(cut)


def test_checkpoint_needs_built_approximator():
    wf = BasicWorkflow(conj_config())
    with pytest.raises(ValueError):
        save_checkpoint("unused.abic", wf.approximator)


# -- config --------------------------------------------------------------------------


def test_config_round_trip_and_seed():
    cfg = parse_config(lv_config())
    assert parse_config(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 3


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda c: c.update(extra=1), "unknown section"),
        (lambda c: c["training"].update(epoks=3), "unknown key"),
        (lambda c: c["adapter"].append({"kind": "sqaure", "params": {"names": ["x"]}}), "unknown kind"),
        (lambda c: c["adapter"].insert(0, {"kind": "log", "params": {"names": ["alpah"]}}), "unknown variable"),
        (lambda c: c["adapter"].pop(2), "inference_variables"),
        (lambda c: c["networks"].pop("summary"), "summary"),
        (lambda c: c["networks"]["inference"].update(kind="nope"), "unknown network kind"),
        (lambda c: c["networks"].update(approximator="point"), "does not fit"),
        (lambda c: c["model"].update(name="nope"), "unknown model"),
        (lambda c: c["model"].update(params={"t_steps": 1}), "t_steps"),
        (lambda c: c["training"].update(batch_size="32"), "expected int"),
        (lambda c: c["diagnostics"].update(band_alpha=1.5), "band_alpha"),
        (lambda c: c["diagnostics"].update(alpha_grid=[0.5, 0.999]), "resolve"),
        (lambda c: c.update(seed=-1), "seed"),
    ],
)
def test_config_rejections(mutate, message):
    cfg = copy.deepcopy(lv_config())
    mutate(cfg)
    with pytest.raises(ConfigError, match=message):
        parse_config(cfg)


def test_bad_quantile_levels_rejected():
    cfg = conj_config(networks={"approximator": "point", "inference": {"kind": "point", "quantile_levels": [0.9, 0.1]}})
    with pytest.raises(ConfigError):
        parse_config(cfg)


def test_stage_script_model(tmp_path):
    (tmp_path / "model.py").write_text(
        "from abikit.simulation import make_simulator\n"
        "def build_simulator(n_obs=3):\n"
        "    def draw(batch_size, rng):\n"
        "        mu = rng.standard_normal((batch_size, 1))\n"
        "        return {'mu': mu, 'x': mu + rng.standard_normal((batch_size, n_obs))}\n"
        "    return make_simulator([draw], batched=True)\n"
    )
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(conj_config(model={"script": "model.py", "params": {"n_obs": 4}})))
    wf = BasicWorkflow(load_config(path))
    assert wf.simulate(6)["x"].shape == (6, 4)


# -- workflow ------------------------------------------------------------------------


def test_conjugate_workflow_diagnostics():
    wf = BasicWorkflow(conj_config())
    history = wf.fit("online")
    assert len(history.loss) == 4 and history.loss[-1] < history.loss[0]
    report = wf.compute_default_diagnostics(wf.simulate_test())
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert [r["variable"] for r in rows] == ["mu"]
    row = {k: float(v) for k, v in rows[0].items() if k != "variable"}
    assert row["NRMSE"] < 0.1 and row["posterior_contraction"] > 0.8 and row["calibration_error"] < 0.1


def test_point_workflow():
    cfg = conj_config(networks={"approximator": "point", "inference": {"kind": "point", "widths": [32, 32]}})
    wf = BasicWorkflow(cfg)
    wf.fit("online")
    est = wf.estimate(wf.simulate(10))
    assert est["mu"]["quantiles"].shape == (10, 5, 1)
    report = wf.compute_default_diagnostics(wf.simulate_test())
    assert report.variables == ["mu"] and report.metrics["NRMSE"][0] < 0.15
    with pytest.raises(ValueError):
        wf.sample(wf.simulate(2), 10)


def test_plots_emit_four_svgs(lv_wf, tmp_path):
    test = lv_wf.simulate_test()
    paths = lv_wf.plot_default_diagnostics(test, tmp_path)
    assert [p.name for p in paths] == list(FIGURES)
    for p in paths[1:]:
        root = ET.parse(p).getroot()
        titles = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
        assert all(name in titles or any(t and t.startswith(name) for t in titles) for name in ("alpha", "beta", "gamma", "delta"))
    ET.parse(paths[0])
    with pytest.raises(ValueError, match="at least 20"):
        lv_wf.plot_default_diagnostics(subset(test, slice(0, 10)), tmp_path / "small")


def test_untrained_workflow_refuses():
    wf = BasicWorkflow(conj_config())
    with pytest.raises(ValueError, match="untrained"):
        wf.compute_default_diagnostics(wf.simulate(30))
    with pytest.raises(ValueError, match="untrained"):
        wf.plot_default_diagnostics(wf.simulate(30), "unused")


def test_fit_errors_are_annotated(tmp_path):
    cfg = lv_config(adapter=LV_ADAPTER[:3] + [{"kind": "as_time_series", "params": {"names": ["observed_x"]}},
                                             {"kind": "concatenate", "params": {"names": ["observed_x", "x"], "into": "summary_variables"}}])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    wf = BasicWorkflow(load_config(path))
    with pytest.raises(WorkflowError, match="bad.json"):
        wf.fit("offline")


def test_posterior_predictive(lv_wf):
    row = lv_wf.simulate(1, RngStream(5, 5))
    one = lv_wf.posterior_predictive(row, 1)
    for name in ("x", "y"):
        assert np.array_equal(one.median[name], one.draws[name][0])
        assert np.array_equal(one.lower90[name], one.upper90[name])
    bands = lv_wf.posterior_predictive(row, 20, t_end=8.0)
    assert bands.t[-1] == pytest.approx(8.0) and bands.median["x"].shape == bands.t.shape
    assert np.all(bands.lower90["x"] <= bands.lower50["x"]) and np.all(bands.upper50["x"] <= bands.upper90["x"])


def test_predictive_spread_grows_beyond_horizon():
    cfg = LotkaVolterraConfig()
    rng = RngStream(0, 1)
    theta = np.array([1.0, 1.5, 1.2, 0.8]) * np.exp(0.05 * rng.normal((50, 4)))
    params = dict(zip(("alpha", "beta", "gamma", "delta"), theta.T))
    t, series = lv_predictive(cfg, t_end=15.0, noise=False)(params, rng)
    for name in ("x", "y"):
        mad = np.median(np.abs(series[name] - np.median(series[name], 0)), 0)
        windows = [mad[(t >= a) & (t < a + 5)].mean() for a in (0, 5, 10)]
        assert windows[0] < windows[1] < windows[2]
    b = predictive_bands(t, series)
    assert np.all(b.upper90["x"] - b.lower90["x"] >= 0)


# -- CLI -----------------------------------------------------------------------------


def _run(args):
    return main([str(a) for a in args])


def test_cli_pipeline_is_deterministic(tmp_path):
    cfg = tmp_path / "lv.json"
    cfg.write_text(json.dumps(lv_config(training={"epochs": 1, "batch_size": 16, "num_simulations": 48})))
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert _run(["--seed", 4, "simulate", "--config", cfg, "--n", 48, "--out", d / "train.abic"]) == 0
        assert _run(["simulate", "--seed", 8, "--config", cfg, "--n", 30, "--out", d / "test.abic", "--workers", 2]) == 0
        assert _run(["train", "--config", cfg, "--mode", "offline", "--data", d / "train.abic", "--out", d / "ckpt.abic"]) == 0
        assert _run(["sample", "--ckpt", d / "ckpt.abic", "--data", d / "test.abic", "--num-samples", 20, "--out", d / "draws.abic"]) == 0
        assert _run(["estimate", "--ckpt", d / "ckpt.abic", "--data", d / "test.abic", "--out", d / "est.abic"]) == 0
        assert _run(["diagnose", "--ckpt", d / "ckpt.abic", "--test", d / "test.abic", "--outdir", d / "diag"]) == 0
        outs.append(d)
    for name in ("train.abic", "test.abic", "ckpt.abic", "draws.abic", "est.abic", "diag/metrics.csv", *(f"diag/{f}" for f in FIGURES)):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    draws = container.read(outs[0] / "draws.abic")
    assert draws["alpha"].shape == (30, 20, 1) and draws["alpha"].dtype == np.float32
    assert container.read(outs[0] / "est.abic")["delta/quantiles"].shape == (30, 5, 1)
    assert container.read(outs[0] / "train.abic")["observed_x"].shape == (48, 10)


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(conj_config()))
    assert _run(["simulate", "--n", 5, "--out", tmp_path / "x.abic"]) == 1
    assert "usage" in capsys.readouterr().err
    assert _run(["simulate", "--config", cfg, "--n", 5, "--out", tmp_path / "x.abic", "--bogus"]) == 1
    assert _run(["frobnicate"]) == 1
    assert _run(["simulate", "--config", tmp_path / "missing.json", "--n", 5, "--out", tmp_path / "x.abic"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(conj_config(adapter=[{"kind": "explode", "params": {}}])))
    assert _run(["train", "--config", bad, "--mode", "online", "--out", tmp_path / "c.abic"]) == 1
    junk = tmp_path / "junk.abic"
    junk.write_bytes(b"not a container")
    assert _run(["sample", "--ckpt", junk, "--data", junk, "--num-samples", 3, "--out", tmp_path / "o.abic"]) == 1
    assert _run(["simulate", "--config", cfg, "--n", 5, "--out", tmp_path / "x.abic"]) == 0
    assert _run(["compare", "--config", cfg, "--test", tmp_path / "x.abic", "--out", tmp_path / "p.abic"]) == 1
    # a valid config whose data lack a variable fails at runtime
    assert _run(["train", "--config", cfg, "--mode", "offline", "--data", tmp_path / "x.abic", "--out", tmp_path / "c.abic"]) == 2


def test_cli_compare(tmp_path):
    comparison = {
        "models": [{"name": "gaussian_data", "params": {"loc": -2.0}}, {"name": "gaussian_data", "params": {"loc": 2.0}}],
        "adapter": [{"kind": "concatenate", "params": {"names": ["x"], "into": "inference_conditions"}}],
        "classifier": {"kind": "classifier", "widths": [16]},
        "training": {"epochs": 2, "batch_size": 32, "num_batches_per_epoch": 50, "learning_rate": 1e-3},
    }
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(conj_config(comparison=comparison)))
    data = {"x": np.concatenate([np.full((5, 10), -2.0), np.full((5, 10), 2.0)]).astype(np.float32)}
    container.write(tmp_path / "t.abic", data)
    assert _run(["compare", "--config", cfg, "--test", tmp_path / "t.abic", "--out", tmp_path / "p.abic"]) == 0
    probs = container.read(tmp_path / "p.abic")["model_probs"]
    assert probs.shape == (10, 2) and np.all(probs[:5, 0] > 0.9) and np.all(probs[5:, 1] > 0.9)
