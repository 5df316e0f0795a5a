from collections import defaultdict

import numpy as np
import pytest

from j2r.dataset import TrialDataset
from j2r.nuisance import (FitCache, ModelSpec, NuisanceError, NuisanceModel, coefficient_rows, delta,
                          fit_nuisances, fit_outcome_means, fit_propensity, fit_response)
from j2r.regress import BasisSpec
from j2r.sim import DiscreteOracle

SAT = NuisanceModel(basis=BasisSpec(saturated=True))
SAT_SPEC = ModelSpec(ps=SAT, rp=SAT, om=SAT)


def _key(*vals):
    return tuple(float(v) for v in vals)


def group_mean(keys, values):
    """Empirical conditional mean by exact key match (plain Python oracle)."""
    acc = defaultdict(lambda: [0.0, 0])
    for k, v in zip(keys, values):
        acc[k][0] += v
        acc[k][1] += 1
    return {k: s / c for k, (s, c) in acc.items()}


@pytest.fixture(scope="module")
def disc():
    orc = DiscreteOracle(t=2)
    ds = orc.sample(4000, np.random.default_rng(11))
    return orc, ds


def test_intercept_only_propensity_is_treated_fraction():
    rng = np.random.default_rng(0)
    ds = TrialDataset(covariates=rng.normal(size=(300, 2)), treatment=rng.integers(0, 2, 300),
                      outcomes=rng.normal(size=(300, 1)))
    none = NuisanceModel(features=lambda b: np.empty((b.shape[0], 0)), history=False)
    f = fit_propensity(ds, ModelSpec(ps=none), 1)
    assert f.predict(np.zeros((3, 2))) == pytest.approx([ds.treatment.mean()] * 3, abs=1e-10)


def test_second_propensity_uses_observed_history():
    y = np.array([[3.0, 1.0], [np.nan, np.nan], [1.0, 2.0], [2.0, np.nan], [0.5, 0.2]])
    ds = TrialDataset(covariates=[[0.1], [-0.2], [0.3], [0.0], [0.7]], treatment=[1, 1, 0, 0, 1], outcomes=y)
    f = fit_propensity(ds, ModelSpec(), 2)
    assert f.rows == 4
    h1 = np.column_stack([ds.covariates, ds.outcomes[:, :1]])
    assert ModelSpec().ps.design_inputs(h1, ds.p).shape[1] == ds.p + 1


def test_single_arm_propensity_fails():
    ds = TrialDataset(covariates=[[0.0], [1.0]], treatment=[1, 1], outcomes=[[1.0], [2.0]])
    with pytest.raises(NuisanceError, match="time 1"):
        fit_propensity(ds, ModelSpec(), 1)


def test_fully_observed_response_is_clipped_constant():
    ds = TrialDataset(covariates=[[0.0], [1.0], [2.0], [3.0]], treatment=[1, 0, 1, 0], outcomes=[[1.0]] * 4)
    f = fit_response(ds, ModelSpec(), 1, 1)
    assert f.predict(np.zeros((2, 1))) == pytest.approx([0.99, 0.99])
    assert any("constant" in d for d in f.diagnostics)


def test_empty_response_subset_fails():
    ds = TrialDataset(covariates=[[0.0], [1.0]], treatment=[1, 1], outcomes=[[1.0], [2.0]])
    with pytest.raises(NuisanceError, match="empty"):
        fit_response(ds, ModelSpec(), 1, 0)


def test_saturated_response_equals_cell_frequencies(disc):
    _, ds = disc
    x, a, r = ds.covariates, ds.treatment, ds.response
    for arm in (0, 1):
        f = fit_response(ds, SAT_SPEC, 1, arm)
        rows = a == arm
        freq = group_mean([_key(*xi) for xi in x[rows]], r[rows, 0])
        for cell, p in freq.items():
            assert f.predict(np.array([cell]))[0] == pytest.approx(p, abs=1e-8)
        # second time: among R1 = 1, conditional on (X, Y1)
        f2 = fit_response(ds, SAT_SPEC, 2, arm)
        rows2 = rows & (r[:, 0] == 1)
        freq2 = group_mean([_key(*xi, y) for xi, y in zip(x[rows2], ds.outcomes[rows2, 0])], r[rows2, 1])
        for cell, p in freq2.items():
            assert f2.predict(np.array([cell]))[0] == pytest.approx(p, abs=1e-8)


def test_saturated_outcome_mean_equals_composed_sample_means(disc):
    _, ds = disc
    x, a, r, y = ds.covariates, ds.treatment, ds.response, ds.outcomes
    # inner: E[Y2 | X, Y1, R2 = 1, A = 0]
    sel = (a == 0) & (r[:, 1] == 1)
    inner = group_mean([_key(*xi, y1) for xi, y1 in zip(x[sel], y[sel, 0])], y[sel, 1])
    # outer: E[inner(X, Y1) | X, R1 = 1, A = 0]
    sel1 = (a == 0) & (r[:, 0] == 1)
    outer = group_mean([_key(*xi) for xi in x[sel1]],
                       [inner[_key(*xi, y1)] for xi, y1 in zip(x[sel1], y[sel1, 0])])
    _, vals = fit_outcome_means(ds, SAT_SPEC, 0)
    for i in range(ds.n):
        assert vals[i, 0] == pytest.approx(outer[_key(*x[i])], abs=1e-8)
        if r[i, 0] == 1:
            assert vals[i, 1] == pytest.approx(inner[_key(*x[i], y[i, 0])], abs=1e-8)
        if r[i, 1] == 1:
            assert vals[i, 2] == y[i, 1]


def test_saturated_pattern_means_equal_composed_sample_means(disc):
    _, ds = disc
    x, a, r, y = ds.covariates, ds.treatment, ds.response, ds.outcomes
    ns = fit_nuisances(ds, SAT_SPEC)
    v = ns.values
    pi2_1 = v.pi[1][:, 1]
    m0_1 = v.m0[:, 1]
    sel1 = (a == 1) & (r[:, 0] == 1)
    k1 = [_key(*xi) for xi in x[sel1]]
    g2 = group_mean(k1, ((1 - pi2_1) * m0_1)[sel1])
    # g3: E[ pi2(1,H1) * E[Y2 | H1, R2=1, A=1] | X, R1=1, A=1 ]
    sel2 = (a == 1) & (r[:, 1] == 1)
    mu1 = group_mean([_key(*xi, y1) for xi, y1 in zip(x[sel2], y[sel2, 0])], y[sel2, 1])
    g3 = group_mean(k1, [pi2_1[i] * mu1[_key(*x[i], y[i, 0])] for i in np.flatnonzero(sel1)])
    for i in range(ds.n):
        assert v.g[i, 0] == pytest.approx(g2[_key(*x[i])], abs=1e-8)
        assert v.g[i, 1] == pytest.approx(g3[_key(*x[i])], abs=1e-8)


def test_tower_property_on_saturated_fits(disc):
    _, ds = disc
    v = fit_nuisances(ds, SAT_SPEC).values
    sel = (ds.treatment == 0) & (ds.response[:, 0] == 1)
    means = group_mean([_key(*xi) for xi in ds.covariates[sel]], v.m0[sel, 1])
    for i in range(ds.n):
        assert v.m0[i, 0] == pytest.approx(means[_key(*ds.covariates[i])], abs=1e-8)


def test_delta_matches_density_ratio_identity_on_sample(disc):
    _, ds = disc
    x, a, r, y = ds.covariates, ds.treatment, ds.response, ds.outcomes
    v = fit_nuisances(ds, SAT_SPEC).values
    # Bayes-rule form: pi1(1,x) p(y1|x,A=1,R1=1) / {pi1(0,x) p(y1|x,A=0,R1=1)}
    for i in np.flatnonzero(r[:, 0] == 1):
        xi, y1 = x[i], y[i, 0]
        same_x = np.all(x == xi, axis=1)
        ratio = 1.0
        for arm, sign in ((1, 1), (0, -1)):
            arm_x = same_x & (a == arm)
            pi1 = np.mean(r[arm_x, 0])
            resp = arm_x & (r[:, 0] == 1)
            py = np.mean(y[resp, 0] == y1)
            ratio *= (pi1 * py) ** sign
        assert v.delta[i, 1] == pytest.approx(ratio, rel=1e-6)
    assert np.all(v.delta[:, 0] == 1.0)


def test_delta_matches_density_ratio_identity_in_population():
    orc = DiscreteOracle(t=2)
    ds, _ = orc.enumerate()
    v = orc.exact_values(ds)
    for i in np.flatnonzero(ds.response[:, 0] == 1):
        x, y1 = tuple(ds.covariates[i]), ds.outcomes[i, 0]
        lemma = orc.pi1(1, x) * orc.py1(1, x, y1) / (orc.pi1(0, x) * orc.py1(0, x, y1))
        assert v.delta[i, 1] == pytest.approx(lemma, rel=1e-12)


def test_delta_is_one_for_constant_propensity():
    e = np.full((5, 3), 0.3)
    assert np.all(delta(e) == 1.0)


def test_constant_outcome_gives_constant_means():
    rng = np.random.default_rng(4)
    n = 200
    y = np.full((n, 2), 4.5)
    y[rng.random(n) < 0.2, :] = np.nan
    late = rng.random(n) < 0.2
    y[late, 1] = np.nan
    ds = TrialDataset(covariates=rng.normal(size=(n, 2)), treatment=rng.integers(0, 2, n), outcomes=y)
    v = fit_nuisances(ds).values
    dom = ~np.isnan(v.m0)
    assert np.allclose(v.m0[dom], 4.5, atol=1e-10)
    assert np.allclose(v.m1_0, 4.5, atol=1e-10)


def test_pattern_mean_vanishes_when_everyone_stays():
    rng = np.random.default_rng(5)
    n = 300
    a = rng.integers(0, 2, n)
    y = rng.normal(size=(n, 2)) + 3
    y[rng.random(n) < 0.3, :] = np.nan
    # treated subjects observed at time 1 are always observed at time 2
    late = (a == 0) & (rng.random(n) < 0.3)
    y[late, 1] = np.nan
    ds = TrialDataset(covariates=rng.normal(size=(n, 1)), treatment=a, outcomes=y)
    v = fit_nuisances(ds).values
    assert np.all(v.pi[1][ds.response[:, 0] == 1, 1] == pytest.approx(0.99))
    assert np.max(np.abs(v.g[:, 0])) <= 0.01 * np.nanmax(np.abs(v.m0[:, 1])) * 1.5


def test_probabilities_within_clip_bounds(disc):
    _, ds = disc
    v = fit_nuisances(ds).values
    for arr in (v.e, v.pi[0], v.pi[1]):
        vals = arr[~np.isnan(arr)]
        assert np.all((vals >= 0.01) & (vals <= 0.99))


def test_small_subset_falls_back_with_diagnostic():
    rng = np.random.default_rng(6)
    n = 12
    ds = TrialDataset(covariates=rng.normal(size=(n, 3)), treatment=np.tile([0, 1], n // 2),
                      outcomes=rng.normal(size=(n, 1)))
    spline = NuisanceModel(basis=BasisSpec.spline(4))
    ns = fit_nuisances(ds, ModelSpec(ps=spline, rp=spline, om=spline))
    assert any("identity basis" in d for d in ns.diagnostics)


def test_refit_is_bitwise_deterministic(disc):
    _, ds = disc
    a = fit_nuisances(ds).values
    b = fit_nuisances(ds, cache=FitCache()).values
    for x, y in [(a.e, b.e), (a.m0, b.m0), (a.g, b.g), (a.pi[0], b.pi[0]), (a.delta, b.delta)]:
        assert x.tobytes() == y.tobytes()


def test_coefficient_rows_cover_every_fit(disc):
    _, ds = disc
    names = {r["nuisance"] for r in coefficient_rows(fit_nuisances(ds))}
    assert names == {"e_1", "e_2", "pi_1_0", "pi_1_1", "pi_2_0", "pi_2_1", "mu0_2", "mu0_1", "mu1_2", "mu1_1",
                     "g2_1", "g3_2", "g3_1"}
