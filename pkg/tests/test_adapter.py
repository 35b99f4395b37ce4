import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from abikit.adapter import Adapter, AdapterError
from abikit.numcore import RngStream
from abikit.simulation import normal_model


def normal_model_adapter():
    return (
        Adapter()
        .broadcast("N", to="x")
        .as_set("x")
        .constrain("sigma", lower=0)
        .sqrt("N")
        .concatenate(["mu", "sigma"], into="inference_variables")
        .rename("x", "summary_variables")
        .rename("N", "inference_conditions")
    )


def test_normal_model_pipeline_roles():
    sims = normal_model(vary_n=True).sample(5, RngStream(0))
    out = normal_model_adapter()(sims)
    assert out["inference_variables"].shape == (5, 2)
    assert out["summary_variables"].shape == (5, int(sims["N"]), 1)
    assert out["inference_conditions"].shape == (5, 1)
    assert np.allclose(out["inference_conditions"], math.sqrt(int(sims["N"])))


def test_normal_model_pipeline_inverse_restores_parameters():
    sims = normal_model().sample(5, RngStream(1))
    sims["N"] = np.asarray(10)
    ad = normal_model_adapter()
    back = ad(ad(sims), inverse=True)
    assert np.allclose(back["mu"], sims["mu"])
    assert np.allclose(back["sigma"], sims["sigma"], rtol=1e-6)


def test_empty_pipeline_is_identity():
    batch = {"a": np.arange(3.0)}
    assert Adapter()(batch)["a"] is batch["a"]


def test_missing_name_reports_index():
    with pytest.raises(AdapterError, match="transform 1"):
        Adapter().sqrt("a").log("b")({"a": np.ones(2)})


def test_broadcast_convention():
    out = Adapter().broadcast("N", to="x")({"N": np.asarray(10), "x": np.zeros((5, 10))})
    assert out["N"].shape == (5, 1) and np.all(out["N"] == 10)
    same = np.ones((5, 1))
    assert Adapter().broadcast("N", to="x")({"N": same, "x": np.zeros((5, 3))})["N"] is same
    with pytest.raises(AdapterError):
        Adapter().broadcast("N", to="x")({"N": np.asarray(10)})


def test_constrain_lower_examples():
    ad = Adapter().constrain("s", lower=1.0)
    z = ad({"s": np.array([1.0 + math.log(2)])})["s"]
    assert z[0] == pytest.approx(0.0, abs=1e-12)
    back = ad({"s": np.array([-30.0, 0.0, 40.0])}, inverse=True)["s"]
    assert np.all(back > 1.0)
    x = np.array([3.7])
    rt = Adapter().constrain("s", 0)(Adapter().constrain("s", 0)({"s": x}), inverse=True)["s"]
    assert abs(rt[0] - 3.7) < 1e-6
    with pytest.raises(AdapterError):
        ad({"s": np.array([0.5])})


def test_constrain_roundtrip_range():
    x = np.logspace(-6, 4, 200)
    ad = Adapter().constrain("s", 0.0)
    rt = ad(ad({"s": x}), inverse=True)["s"]
    assert np.max(np.abs(rt - x) / x) < 1e-6


def test_as_set_and_time_series():
    ad = Adapter().as_set("x")
    out = ad({"x": np.zeros((4, 10))})
    assert out["x"].shape == (4, 10, 1)
    assert ad(out, inverse=True)["x"].shape == (4, 10)
    assert ad.tags == {"x": "set"}
    with pytest.raises(AdapterError, match="already tagged"):
        Adapter().as_set("x").as_time_series("x")


def test_concatenate_examples():
    ad = Adapter().concatenate(["a", "b"], into="c")
    batch = {"a": np.ones((3, 1)), "b": np.zeros((3, 1))}
    out = ad(batch)
    assert out["c"].shape == (3, 2)
    back = ad(out, inverse=True)
    assert np.array_equal(back["a"], batch["a"]) and np.array_equal(back["b"], batch["b"])
    single = Adapter().concatenate(["a"], into="c")({"a": batch["a"]})
    assert np.array_equal(single["c"], batch["a"]) and single["c"] is not batch["a"]
    with pytest.raises(AdapterError, match="incompatible"):
        Adapter().concatenate(["a", "b"], into="c")({"a": np.ones((3, 1)), "b": np.ones((4, 1))})


def test_standardize_examples():
    ad = Adapter().standardize("x", 0.0, 1.0)
    x = np.array([[1.0, -2.0]])
    assert np.array_equal(ad({"x": x})["x"], x)
    assert Adapter().standardize("x", 5.0, 2.0)({"x": np.array([5.0])})["x"][0] == 0
    with pytest.raises(AdapterError):
        Adapter().standardize("x", 0.0, 0.0)
    x32 = np.random.default_rng(0).normal(size=(100, 3)).astype(np.float32)
    ad = Adapter().standardize("x", [1.0, 2.0, 3.0], [0.5, 2.0, 4.0])
    rt = ad(ad({"x": x32}), inverse=True)["x"]
    assert np.max(np.abs(rt - x32)) < 10 * np.finfo(np.float32).eps * np.max(np.abs(x32) + 3)


def test_dtype_conversion_skipped_on_inverse():
    ad = Adapter().convert_dtype().rename("a", "b")
    out = ad({"a": np.ones(3)})
    assert out["b"].dtype == np.float32
    assert ad(out, inverse=True)["a"].dtype == np.float32


@given(
    arrays(np.float32, (6, 2), elements=st.floats(0.0625, 50, width=32)),
    arrays(np.float32, (6, 1), elements=st.floats(-5, 5, width=32)),
)
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(pos, real):
    ad = (
        Adapter()
        .log("p")
        .standardize("p", [0.5, -0.5], [2.0, 0.5])
        .constrain("q", lower=-10.0)
        .concatenate(["p", "q"], into="inference_variables")
        .drop("junk")
    )
    out = ad({"p": pos, "q": real, "junk": np.zeros(6)})
    back = ad(out, inverse=True)
    assert np.allclose(back["p"], pos, rtol=1e-5)
    assert np.allclose(back["q"], real, rtol=1e-5, atol=1e-5)
    assert "junk" not in back


@given(arrays(np.float64, (5,), elements=st.floats(0.5, 20)))
@settings(max_examples=30, deadline=None)
def test_order_sensitivity(x):
    a = Adapter().sqrt("v").standardize("v", 0.1, 2.0)({"v": x})["v"]
    b = Adapter().standardize("v", 0.1, 2.0).sqrt("v")({"v": x})["v"]
    assert not np.allclose(a, b)


def test_log_det_jacobian_matches_finite_difference():
    ad = Adapter().constrain("s", 0.0).sqrt("n").concatenate(["s"], into="inference_variables")
    x = np.array([[0.3], [2.0], [7.5]])
    _, ldj = ad.forward({"s": x, "n": np.ones((3, 1))}, log_det_jac=True)
    h = 1e-6
    up = ad({"s": x + h, "n": np.ones((3, 1))})["inference_variables"]
    dn = ad({"s": x - h, "n": np.ones((3, 1))})["inference_variables"]
    fd = np.log((up - dn) / (2 * h)).ravel()
    assert np.allclose(ldj["inference_variables"], fd, atol=1e-6)


def test_roles_and_config_roundtrip():
    ad = normal_model_adapter()
    ad.validate_roles()
    with pytest.raises(AdapterError):
        Adapter().sqrt("x").validate_roles()
    clone = Adapter.from_config(ad.to_config())
    assert clone.to_config() == ad.to_config()
    with pytest.raises(AdapterError, match="unknown kind"):
        Adapter.from_config([{"kind": "fourier", "params": {}}])


def test_swap_roles_twice_is_identity():
    ad = Adapter().concatenate(["mu"], into="inference_variables").concatenate(["x"], into="inference_conditions")
    swapped = ad.swap_roles()
    out = swapped({"mu": np.zeros((2, 1)), "x": np.ones((2, 3))})
    assert out["inference_variables"].shape == (2, 3)
    assert swapped.swap_roles().to_config() == Adapter.from_config(ad.to_config()).to_config()
    with pytest.raises(AdapterError):
        normal_model_adapter().swap_roles()
