import json

import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from cdkit.stats import (DesignError, DesignSpec, build_design, fit_design, ols_fit,
                         predict_years, trend_slope, with_random_control, yearly_means)

from helpers import ols_oracle


def _rel(a, b):
    return np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), 1e-300))


def _fixture(seed, n=50, k=3, hetero=False):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(k - 1)])
    noise = rng.normal(size=n) * ((1 + np.abs(X[:, 1])) if hetero else 1.0)
    y = X @ np.arange(1, k + 1) + noise
    return X, y, rng.integers(0, 7, size=n)


# -- ols_fit -----------------------------------------------------------------

def test_exact_two_points():
    # two points and two parameters leave no residual df; use three collinear points
    f = ols_fit([[1, 1], [1, 2], [1, 3]], [2, 4, 6], ["const", "x"])
    assert f.params == pytest.approx([0, 2], abs=1e-12)
    assert f.r2 == 1.0
    assert np.all(f.se < 1e-12)


def test_n_not_above_k():
    with pytest.raises(ValueError, match="must exceed"):
        ols_fit([[1, 1], [1, 2]], [2, 4])


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_against_matrix_oracle(seed):
    X, y, g = _fixture(seed, hetero=seed == 2)
    for kind, okind in (("classical", "classical"), ("robust_hc1", "hc1"),
                        ("robust_hc0", "hc0"), ("clustered", "cluster")):
        f = ols_fit(X, y, se_kind=kind, clusters=g)
        beta, cov = ols_oracle(X, y, okind, clusters=list(g))
        assert _rel(f.params, beta) < 1e-10
        assert _rel(f.se, np.sqrt(np.diag(cov))) < 1e-10


@pytest.mark.parametrize("seed", [4, 5])
def test_against_statsmodels(seed):
    X, y, g = _fixture(seed, n=120, k=4, hetero=True)
    for kind, cov_type, kw in (("classical", "nonrobust", None), ("robust_hc1", "HC1", None),
                               ("robust_hc0", "HC0", None),
                               ("clustered", "cluster", {"groups": g})):
        f = ols_fit(X, y, se_kind=kind, clusters=g)
        r = sm.OLS(y, X).fit(cov_type=cov_type, cov_kwds=kw)
        assert _rel(f.se, r.bse) < 1e-10
        assert f.r2 == pytest.approx(r.rsquared, rel=1e-12)
    r = sm.OLS(y, X).fit()
    assert np.allclose(ols_fit(X, y).pvalues, r.pvalues, rtol=1e-9)


def test_clusters_of_identical_rows():
    X = np.array([[1, 0.0], [1, 1.0], [1, 2.0], [1, 3.0], [1, 4.0]])
    X = np.repeat(X, 3, axis=0)
    y = np.array([0.1, 1.3, 1.9, 3.2, 3.8]).repeat(3)
    cl = np.repeat(np.arange(5), 3)
    f = ols_fit(X, y, se_kind="clustered", clusters=cl)
    _, cov = ols_oracle(X, y, "cluster", clusters=list(cl))
    assert _rel(f.se, np.sqrt(np.diag(cov))) < 1e-10


def test_clustered_singletons_equal_hc1_up_to_factors():
    X, y, _ = _fixture(7)
    n, k = X.shape
    c = ols_fit(X, y, se_kind="clustered", clusters=np.arange(n))
    h = ols_fit(X, y, se_kind="robust_hc1")
    # G = N: cluster factor N/(N-1)*(N-1)/(N-k) = N/(N-k), HC1's factor
    assert _rel(c.cov, h.cov) < 1e-10


def test_residual_orthogonality_and_psd():
    X, y, g = _fixture(8, n=80, k=4, hetero=True)
    for kind in ("classical", "robust_hc1", "clustered"):
        f = ols_fit(X, y, se_kind=kind, clusters=g)
        assert np.max(np.abs(X.T @ f.residuals)) <= 1e-9 * np.abs(X).max() * np.abs(y).max() * len(y)
        assert np.allclose(f.cov, f.cov.T)
        assert np.linalg.eigvalsh(f.cov).min() >= -1e-12


def test_collinear_later_column_dropped():
    X, y, _ = _fixture(9)
    X2 = np.column_stack([X, 2 * X[:, 1] - X[:, 2]])
    with pytest.warns(UserWarning, match="collinear"):
        f = ols_fit(X2, y, ["const", "a", "b", "a_b"])
    assert f.dropped_columns == ["a_b"]
    assert f.names == ["const", "a", "b"]
    assert _rel(f.params, ols_fit(X, y).params) < 1e-10


def test_clustered_needs_two_clusters():
    X, y, _ = _fixture(1)
    with pytest.raises(ValueError, match="at least 2"):
        ols_fit(X, y, se_kind="clustered", clusters=np.zeros(len(y)))
    with pytest.raises(ValueError, match="cluster ids"):
        ols_fit(X, y, se_kind="clustered")


def test_fit_json(tmp_path):
    X, y, _ = _fixture(1)
    f = ols_fit(X, y, ["const", "a", "b"], se_kind="robust_hc1")
    f.to_json(tmp_path / "f.json")
    d = json.loads((tmp_path / "f.json").read_text())
    assert [c["name"] for c in d["coefficients"]] == ["const", "a", "b"]
    assert set(d["coefficients"][0]) == {"name", "b", "se", "p", "ci_low", "ci_high"}
    assert d["N"] == 50 and d["se_kind"] == "robust_hc1" and d["dropped_columns"] == 0
    c = d["coefficients"][1]
    assert c["ci_high"] - c["b"] == pytest.approx(1.96 * c["se"])


# -- designs -----------------------------------------------------------------

def _table(seed=0, n=300, years=(2000, 2001, 2002), n_groups=6):
    rng = np.random.default_rng(seed)
    yr = rng.choice(years, size=n)
    grp = rng.integers(0, n_groups, size=n)
    x = rng.normal(size=n)
    eff = {y: 0.1 * i for i, y in enumerate(sorted(years))}
    cd = np.array([eff[v] for v in yr]) + 0.3 * x + 0.05 * grp + rng.normal(scale=0.2, size=n)
    return pd.DataFrame({
        "id": [f"w{i:04d}" for i in range(n)], "year": yr, "cd": cd,
        "bcite_count": rng.integers(0, 10, size=n), "zero_bcite": rng.random(n) < 0.2,
        "field": [f"f{g % 3}" for g in grp], "subfield": [f"s{g}" for g in grp],
        "author_count": rng.integers(1, 6, size=n), "unlinked_ref_count": rng.integers(0, 3, size=n),
        "x": x,
    })


def test_year_dummies_only_design():
    t = _table(n=30)
    d = build_design(t, None, DesignSpec())
    assert d.names == ["const", "year=2001", "year=2002"]
    assert d.X.shape == (30, 3)


def test_base_year_validation():
    t = _table(n=30)
    assert build_design(t, None, DesignSpec(base_year=2001)).names[1:] == ["year=2000", "year=2002"]
    with pytest.raises(DesignError, match="base year 1999 missing"):
        build_design(t, None, DesignSpec(base_year=1999))


def test_spec_invariants():
    with pytest.raises(ValueError, match="cluster_key"):
        DesignSpec(se_kind="clustered")
    with pytest.raises(ValueError, match="cluster_key"):
        DesignSpec(cluster_key="id")
    with pytest.raises(ValueError, match="unknown controls"):
        DesignSpec(controls=("nope",))


def test_zero_bcite_passthrough():
    t = _table(n=40)
    d = build_design(t, None, DesignSpec(controls=("zero_bcite_dummy",)))
    assert np.array_equal(d.X[:, d.names.index("zero_bcite_dummy")], t["zero_bcite"].astype(float))


def test_field_year_aggregates_hand_computed():
    t = pd.DataFrame({
        "id": [f"w{i}" for i in range(10)],
        "field": ["bio", "bio", "bio", "phy", "phy", "bio", "phy", "phy", "bio", "phy"],
        "year": [2000, 2000, 2001, 2000, 2000, 2001, 2001, 2001, 2000, 2000],
        "bcite_count": list(range(1, 11)),
        "author_count": [1, 1, 2, 2, 3, 3, 4, 4, 5, 5],
        "cd": np.linspace(-0.5, 0.5, 10),
    })
    d = build_design(t, None, DesignSpec(controls=("mean_cited_field_year", "n_new_works_field_year",
                                                   "mean_authors_field_year")))
    got = d.X[:, d.names.index("mean_cited_field_year")]
    want = {("bio", 2000): 4.0, ("bio", 2001): 4.5, ("phy", 2000): 19 / 3, ("phy", 2001): 7.5}
    assert got == pytest.approx([want[(f, y)] for f, y in zip(t.field, t.year)])
    nw = {("bio", 2000): 3, ("bio", 2001): 2, ("phy", 2000): 3, ("phy", 2001): 2}
    assert d.X[:, d.names.index("n_new_works_field_year")].tolist() == \
        [nw[(f, y)] for f, y in zip(t.field, t.year)]
    ma = {("bio", 2000): 7 / 3, ("bio", 2001): 2.5, ("phy", 2000): 10 / 3, ("phy", 2001): 4.0}
    assert d.X[:, d.names.index("mean_authors_field_year")] == \
        pytest.approx([ma[(f, y)] for f, y in zip(t.field, t.year)])


def test_missing_metadata_column():
    t = _table(n=20).drop(columns=["unlinked_ref_count"])
    with pytest.raises(DesignError, match="unlinked_ref_count"):
        build_design(t, None, DesignSpec(controls=("unlinked_refs",)))
    with pytest.raises(DesignError, match="cd_random"):
        build_design(t, None, DesignSpec(controls=("cd_random",)))


def test_listwise_deletion_counted():
    t = _table(n=50)
    t.loc[[0, 3, 7], "cd"] = np.nan
    d = build_design(t, None, DesignSpec())
    assert d.dropped_rows == 3 and d.X.shape[0] == 47
    f = fit_design(d)
    assert f.n == 47 and f.dropped_rows == 3


def test_dummy_and_within_fe_agree():
    t = _table(seed=3, n=2000, n_groups=40)
    t["x2"] = t["x"] ** 2
    base = dict(controls=("zero_bcite_dummy", "n_cited"), fixed_effects="subfield")
    fits = {}
    for kind, cl in (("classical", None), ("robust_hc1", None), ("clustered", "field")):
        for method in ("dummy", "within"):
            spec = DesignSpec(**base, fe_method=method, se_kind=kind, cluster_key=cl)
            fits[method] = fit_design(build_design(t, None, spec))
        d, w = fits["dummy"], fits["within"]
        assert w.absorbed_groups == 40 and d.df_resid == w.df_resid
        for name in w.names:
            assert d.coef(name) == pytest.approx(w.coef(name), rel=1e-8, abs=1e-12)
            assert d.stderr(name) == pytest.approx(w.stderr(name), rel=1e-8)
        assert d.r2 == pytest.approx(w.r2, rel=1e-10)


def test_fe_auto_threshold():
    t = _table(n=200, n_groups=6)
    assert build_design(t, None, DesignSpec(fixed_effects="subfield")).fe_method == "dummy"
    assert build_design(t, None, DesignSpec(fixed_effects="subfield",
                                            fe_threshold=5)).fe_method == "within"


# -- predictions -------------------------------------------------------------

def test_saturated_year_model_reproduces_means():
    t = _table(n=500, years=tuple(range(1990, 2000)))
    d = build_design(t, None, DesignSpec(se_kind="classical"))
    f = fit_design(d)
    p = predict_years(f, d)
    means = t.groupby("year")["cd"].mean()
    assert np.allclose(p["predicted"].to_numpy(), means.loc[p["year"]].to_numpy(), atol=1e-12)
    # coefficients are per-year mean differences from the base year
    for y in range(1991, 2000):
        assert f.coef(f"year={y}") == pytest.approx(means[y] - means[1990], abs=1e-12)


def test_intercept_only_flat_curve():
    t = _table(n=100)
    d = build_design(t, None, DesignSpec(year_dummies=False))
    p = predict_years(fit_design(d), d)
    assert len(p) == 3 and np.allclose(p["predicted"], t["cd"].mean(), atol=1e-12)


def test_prediction_profile_with_fe_and_controls():
    t = _table(seed=2, n=800, n_groups=8)
    spec = dict(controls=("zero_bcite_dummy",), fixed_effects="subfield")
    pd_ = predict_years(*_fit_pair(t, DesignSpec(**spec, fe_method="dummy")))
    pw = predict_years(*_fit_pair(t, DesignSpec(**spec, fe_method="within")))
    assert np.allclose(pd_["predicted"], pw["predicted"], atol=1e-10)
    # at sample means the yearly predictions average back to the sample mean
    d = build_design(t, None, DesignSpec(**spec, fe_method="dummy"))
    w = pd.Series(d.years).value_counts().sort_index().to_numpy()
    assert np.average(pd_["predicted"], weights=w) == pytest.approx(t["cd"].mean(), abs=1e-10)


def _fit_pair(t, spec):
    d = build_design(t, None, spec)
    return fit_design(d), d


def test_predict_unknown_year():
    t = _table(n=60)
    d = build_design(t, None, DesignSpec())
    with pytest.raises(KeyError, match="absent"):
        predict_years(fit_design(d), d, years=[1999])


def test_planted_gap_recovered():
    rng = np.random.default_rng(12)
    years = np.arange(1945, 2011)
    yr = rng.choice(years, size=6000)
    planted = -0.002 * (yr - 1945)
    t = pd.DataFrame({"year": yr, "cd": 0.2 + planted + rng.normal(scale=0.1, size=yr.size)})
    d = build_design(t, None, DesignSpec(base_year=1945))
    f = fit_design(d)
    p = predict_years(f, d).set_index("year")
    gap = p.loc[2010, "predicted"] - p.loc[1945, "predicted"]
    assert abs(gap - (-0.002 * 65)) < 2 * f.stderr("year=2010")


# -- trend slopes ------------------------------------------------------------

def test_trend_linear_and_constant():
    f = trend_slope([(y, 60 - 0.19 * (y - 1950)) for y in range(1950, 2011)])
    assert f.coef("year") == pytest.approx(-0.19, abs=1e-12)
    assert trend_slope([(y, 42.0) for y in range(2000, 2010)]).coef("year") == pytest.approx(0, abs=1e-12)


def test_trend_errors():
    with pytest.raises(ValueError, match="3 distinct years"):
        trend_slope([(2000, 1.0), (2001, 2.0), (2001, 3.0)])
    f = trend_slope([(2000, None), (2001, 1.0), (2002, 2.0), (2003, 3.0)])
    assert f.n == 3


def test_trend_ci_coverage():
    # a single block of 100 has ~13% chance of < 93 hits at exact 95% coverage,
    # so the >= 93% bar is applied to the pooled rate over ten blocks
    rng = np.random.default_rng(0)
    years = np.repeat(np.arange(1980, 2011), 3)
    hits = 0
    for _ in range(1000):
        vals = 50 - 0.19 * (years - 1980) + rng.normal(scale=2.0, size=years.size)
        f = trend_slope(zip(years, vals))
        j = f.names.index("year")
        hits += f.ci_low[j] <= -0.19 <= f.ci_high[j]
    assert hits >= 930


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 60))
def test_orthogonality_property(seed, n):
    X, y, _ = _fixture(seed, n=n, k=3)
    f = ols_fit(X, y)
    assert np.max(np.abs(X.T @ f.residuals)) <= 1e-8 * max(1.0, np.abs(y).sum())


def test_with_random_control_stacking():
    from cdkit.rewire import RewireConfig, build_ensemble
    from cdkit.metrics import compute_all
    from cdkit.synth import SyntheticSpec, generate_synthetic
    g = generate_synthetic(SyntheticSpec(n_years=5, works_first_year=40), seed=1)
    ens = build_ensemble(g, RewireConfig(replicates=3))
    t = compute_all(g)
    s = with_random_control(t, ens)
    assert len(s) == 3 * len(t)
    assert np.array_equal(s["cd_random"].to_numpy()[: len(t)], ens.replicates["cd"][0],
                          equal_nan=True)
    m = with_random_control(t, ens, stacked=False)
    assert np.array_equal(m["cd_random"].to_numpy(), ens.mean("cd"), equal_nan=True)
    d = build_design(s, g, DesignSpec(controls=("cd_random",), se_kind="clustered",
                                      cluster_key="id"))
    f = fit_design(d)
    assert "cd_random" in f.names


def test_yearly_means():
    t = pd.DataFrame({"year": [1, 1, 2, 2, 2], "v": [1.0, 3.0, 2.0, 2.0, np.nan]})
    out = yearly_means(t, "v")
    assert out["n"].tolist() == [2, 2] and out["mean"].tolist() == [2.0, 2.0]
    assert out["ci_low"].iloc[0] == pytest.approx(2 - 1.96 * np.sqrt(2) / np.sqrt(2))
