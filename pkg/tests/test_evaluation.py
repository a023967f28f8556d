import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescope import evaluation
from bayescope.errors import ConfigError
from bayescope.inference import UncertaintyReport


def reports(mus, ep=0.0, al=1.0):
    ep = np.broadcast_to(ep, np.shape(mus))
    al = np.broadcast_to(al, np.shape(mus))
    return [UncertaintyReport(float(m), float(e), float(a), 20) for m, e, a in zip(mus, ep, al)]


def test_mae_examples():
    y = np.array([13.0, 15.0, 20.0])
    assert evaluation.mae(reports(y), y) == (0.0, 0.0)
    assert evaluation.mae(reports(y + 1), y) == (1.0, 0.0)
    assert evaluation.mae(reports([1.0, 3.0]), [1.0, 1.0]) == (1.0, 1.0)
    with pytest.raises(ConfigError):
        evaluation.mae([], [])
    with pytest.raises(ConfigError):
        evaluation.mae(reports([1.0]), [1.0, 2.0])


def test_coverage_examples():
    y = np.arange(5.0)
    assert evaluation.coverage(reports(y, al=0.3), y, 1.0) == 1.0
    assert evaluation.coverage(reports(y + 0.5), y, 1e-9) == 0.0
    with pytest.raises(ConfigError):
        evaluation.coverage(reports(y), y, 0.0)


def test_coverage_gaussian_oracle():
    rng = np.random.default_rng(0)
    n = 10_000
    var = rng.uniform(0.1, 4.0, n)
    ep = var * rng.uniform(0, 1, n)
    y = rng.normal(0.0, np.sqrt(var))
    preds = reports(np.zeros(n), ep, var - ep)
    assert evaluation.coverage(preds, y, 1.0) == pytest.approx(0.6827, abs=0.01)
    assert evaluation.coverage(preds, y, 2.0) == pytest.approx(0.9545, abs=0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 3)), min_size=1, max_size=30),
       st.floats(0.1, 3), st.floats(0.0, 3))
def test_coverage_monotone_in_z(rows, z, dz):
    mus, var = map(np.array, zip(*rows))
    preds = reports(mus, al=var)
    y = np.zeros(len(rows))
    assert evaluation.coverage(preds, y, z) <= evaluation.coverage(preds, y, z + dz)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.randoms())
def test_mae_permutation_invariant(errs, rnd):
    y = np.zeros(len(errs))
    base = evaluation.mae(reports(errs), y)
    idx = list(range(len(errs)))
    rnd.shuffle(idx)
    m, s = evaluation.mae(reports(np.array(errs)[idx]), y)
    assert m == pytest.approx(base[0], rel=1e-12, abs=1e-12)
    assert s == pytest.approx(base[1], rel=1e-12, abs=1e-12)


def test_profile_bins():
    assert len(evaluation.uncertainty_profile(reports([3.0]), [17.3])) == 1
    rng = np.random.default_rng(1)
    y = rng.uniform(13, 25, 2000)
    prof = evaluation.uncertainty_profile(reports(y, rng.uniform(0, 1, 2000), rng.uniform(0, 1, 2000)), y)
    assert len(prof) == 12
    assert [b.age_lo for b in prof] == list(range(13, 25))
    assert sum(b.count for b in prof) == 2000


def test_profile_matches_independent_groupby():
    rng = np.random.default_rng(2)
    y = rng.uniform(13, 25, 500)
    ep, al = rng.uniform(0, 2, 500), rng.uniform(0, 2, 500)
    prof = evaluation.uncertainty_profile(reports(y, ep, al), y, bin_width=1.5)
    groups = {}
    for yi, e, a in zip(y, ep, al):
        groups.setdefault(int(yi // 1.5), []).append((e, a))
    assert len(prof) == len(groups)
    for b in prof:
        g = np.array(groups[int(round(b.age_lo / 1.5))])
        assert b.count == len(g)
        assert abs(b.mean_epistemic_var - g[:, 0].mean()) < 1e-12
        assert abs(b.mean_aleatoric_var - g[:, 1].mean()) < 1e-12


def test_saturation_ratio():
    y = np.array([14.0, 15.0, 21.0, 23.0, 18.5])
    al = np.array([0.5, 0.5, 2.0, 1.0, 99.0])
    assert evaluation.saturation_ratio(reports(y, al=al), y) == pytest.approx(3.0)


def test_scatter_data():
    y = np.array([14.0, 21.0])
    rows = evaluation.scatter_data(reports(y + 1, ep=[0.0, 0.25], al=[4.0, 1.0]), y)
    assert len(rows) == 2
    assert rows[1] == {"true_age": 21.0, "mu_hat": 22.0, "epistemic_std": 0.5, "aleatoric_std": 1.0}
    lines = evaluation.scatter_csv(reports(y), y).splitlines()
    assert lines[0] == "true_age,mu_hat,epistemic_std,aleatoric_std" and len(lines) == 3


def test_report_validates_against_schema():
    rng = np.random.default_rng(3)
    y = rng.uniform(13, 25, 50)
    rep = evaluation.evaluate(reports(y + rng.normal(size=50), 0.1, 1.0), y, "bcnn_sigma")
    doc = json.loads(rep.to_json())
    jsonschema.validate(doc, evaluation.REPORT_SCHEMA)
    assert doc["n"] == 50 and set(doc["coverage"]) == {"1", "2"}
    doc["mae"] = -1.0
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, evaluation.REPORT_SCHEMA)
