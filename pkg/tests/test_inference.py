import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescope.errors import ConfigError
from bayescope.inference import (
    UncertaintyReport,
    derive_rng,
    predict,
    predict_batch,
    report_from_passes,
    worker_cap,
)
from bayescope.models import ModelSpec, build
from bayescope.training import TrainConfig, train


@pytest.fixture(scope="module")
def bayes_model():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (128, 2))
    y = x[:, 0] + 0.1 * rng.normal(size=128)
    model = build(ModelSpec(variant="bcnn_sigma", seed=1, hidden=(16, 16)))
    train(model, (x, y), TrainConfig(epochs=5, seed=2))
    return model


def test_report_arithmetic():
    r = report_from_passes([1.0, 2.0, 3.0], [0.5, 0.5, 0.5])
    assert r.mu_hat == 2.0
    assert r.epistemic_var == pytest.approx(2 / 3, rel=1e-15)
    assert r.aleatoric_var == 0.5
    assert r.total_var == r.epistemic_var + r.aleatoric_var
    assert r.passes == 3


def test_total_var_is_derived():
    with pytest.raises(TypeError):
        UncertaintyReport(1.0, 0.1, 0.2, 20, True, 99.0)
    r = UncertaintyReport(1.0, 0.1, 0.2, 20)
    assert r.total_var == 0.1 + 0.2


def test_single_pass_has_zero_epistemic(bayes_model):
    r = predict(bayes_model, np.array([0.2, -0.3]), passes=1, rng=np.random.default_rng(0))
    assert r.epistemic_var == 0.0 and r.passes == 1
    assert report_from_passes([7.0], [1.0]).epistemic_var == 0.0


def test_bad_passes(bayes_model):
    with pytest.raises(ConfigError):
        predict(bayes_model, np.zeros(2), passes=0)
    with pytest.raises(ConfigError):
        predict_batch(bayes_model, np.zeros((2, 2)), passes=0)
    with pytest.raises(ConfigError):
        report_from_passes([], [])


@pytest.mark.parametrize("variant", ["cnn", "cnn_sigma"])
def test_deterministic_variants_have_zero_epistemic(variant):
    model = build(ModelSpec(variant=variant, seed=3))
    xs = np.random.default_rng(1).uniform(-2, 2, (10, 2))
    for r in predict_batch(model, xs, 20, base_seed=4):
        assert r.epistemic_var == 0.0
    if variant == "cnn_sigma":
        x = xs[:1]
        lv = model.forward(x, "mean").log_var.item()
        assert r.aleatoric_learned
        assert predict(model, x[0]).aleatoric_var == pytest.approx(math.exp(lv), rel=1e-15)


@pytest.mark.parametrize("variant", ["cnn", "bcnn"])
def test_non_sigma_variants_report_fixed_variance(variant):
    r = predict(build(ModelSpec(variant=variant)), np.zeros(2), 5, np.random.default_rng(0))
    assert r.aleatoric_var == 1.0
    assert not r.aleatoric_learned


def test_bayesian_passes_give_positive_epistemic(bayes_model):
    r = predict(bayes_model, np.array([0.5, 0.5]), 20, np.random.default_rng(3))
    assert r.epistemic_var > 0
    assert r.aleatoric_var > 0


def test_batch_of_one_equals_predict(bayes_model):
    x = np.array([[0.1, 0.9]])
    assert predict_batch(bayes_model, x, 20, base_seed=7) == [predict(bayes_model, x[0], 20, derive_rng(7, 0))]


def test_parallelism_does_not_change_results(bayes_model):
    xs = np.random.default_rng(5).uniform(-1, 1, (24, 2))
    serial = predict_batch(bayes_model, xs, 20, base_seed=11, parallelism=1)
    parallel = predict_batch(bayes_model, xs, 20, base_seed=11, parallelism=8)
    assert serial == parallel  # dataclass equality on exact floats


def test_worker_cap_env(monkeypatch):
    monkeypatch.setenv("BAYESCOPE_THREADS", "2")
    assert worker_cap(8) == 2
    monkeypatch.delenv("BAYESCOPE_THREADS")
    assert worker_cap(0) == 1


def test_empty_batch(bayes_model):
    assert predict_batch(bayes_model, np.zeros((0, 2)), 20) == []


def test_pass_order_invariance(bayes_model):
    x = np.array([[0.3, -0.2]])
    outs = []
    for s in range(20):
        res = bayes_model.forward(x, "sample", np.random.default_rng(s), compute_kl=False)
        outs.append((res.mu.item(), math.exp(res.log_var.item())))
    mus, vs = np.array(outs).T
    base = report_from_passes(mus, vs)
    for perm_seed in range(5):
        perm = np.random.default_rng(perm_seed).permutation(20)
        assert report_from_passes(mus[perm], vs[perm]) == base


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(1e-6, 1e3)), min_size=1, max_size=40), st.randoms())
def test_report_properties(pairs, rnd):
    mus, vs = map(np.array, zip(*pairs))
    r = report_from_passes(mus, vs)
    assert r.epistemic_var >= 0 and r.aleatoric_var >= 0
    assert r.epistemic_var == pytest.approx(np.var(mus), rel=1e-9, abs=1e-9)
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    assert report_from_passes(mus[idx], vs[idx]) == r


def test_more_passes_reduce_mu_hat_spread(bayes_model):
    x = np.array([0.4, 0.1])
    spread = {}
    for passes in (20, 2000):
        spread[passes] = np.std([predict(bayes_model, x, passes, derive_rng(100, k)).mu_hat for k in range(8)])
    assert spread[2000] < spread[20]
