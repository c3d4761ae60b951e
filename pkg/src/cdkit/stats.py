"""OLS with year dummies, controls, fixed effects and sandwich covariances.

The solver is a Householder QR of the design; a column whose diagonal
entry in ``R`` is negligible relative to its own norm is linearly
dependent on the columns before it and is dropped, so the later column of
a collinear set always goes first.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .graph import CitationGraph
from .metrics import attach_metadata

log = logging.getLogger(__name__)

SE_KINDS = ("classical", "robust_hc0", "robust_hc1", "clustered")
CONTROLS = ("zero_bcite_dummy", "n_cited", "n_new_works_field_year", "mean_cited_field_year",
            "mean_authors_field_year", "unlinked_refs", "cd_random")
Z95 = 1.96


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    response: str = "cd"
    year_dummies: bool = True
    base_year: Optional[int] = None
    controls: tuple = ()
    fixed_effects: Optional[str] = None
    cluster_key: Optional[str] = None
    se_kind: str = "robust_hc1"
    fe_method: Optional[str] = None
    fe_threshold: int = 1000
    year_column: str = "year"

    def __post_init__(self):
        if self.se_kind not in SE_KINDS:
            raise ValueError(f"se_kind must be one of {SE_KINDS}")
        if (self.se_kind == "clustered") != (self.cluster_key is not None):
            raise ValueError("cluster_key is required exactly when se_kind='clustered'")
        bad = [c for c in self.controls if c not in CONTROLS]
        if bad:
            raise ValueError(f"unknown controls {bad}; choose from {CONTROLS}")
        if self.fe_method not in (None, "dummy", "within"):
            raise ValueError("fe_method must be None, 'dummy' or 'within'")


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list
    spec: DesignSpec
    years: np.ndarray
    year_levels: list
    base_year: Optional[int]
    groups: Optional[np.ndarray] = None
    group_levels: list = field(default_factory=list)
    fe_method: Optional[str] = None
    clusters: Optional[np.ndarray] = None
    dropped_rows: int = 0


@dataclass
class RegressionFit:
    names: list
    params: np.ndarray
    cov: np.ndarray
    se_kind: str
    n: int
    df_resid: int
    r2: float
    dropped_columns: list = field(default_factory=list)
    dropped_rows: int = 0
    absorbed_groups: int = 0
    x_means: Optional[np.ndarray] = None
    y_mean: float = float("nan")
    residuals: Optional[np.ndarray] = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def tvalues(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.params / self.se

    @property
    def pvalues(self) -> np.ndarray:
        return 2 * stats.t.sf(np.abs(self.tvalues), self.df_resid)

    @property
    def ci_low(self) -> np.ndarray:
        return self.params - Z95 * self.se

    @property
    def ci_high(self) -> np.ndarray:
        return self.params + Z95 * self.se

    def _pos(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no coefficient {name!r}") from None

    def coef(self, name: str) -> float:
        return float(self.params[self._pos(name)])

    def stderr(self, name: str) -> float:
        return float(self.se[self._pos(name)])

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({"name": self.names, "b": self.params, "se": self.se,
                             "p": self.pvalues, "ci_low": self.ci_low, "ci_high": self.ci_high})

    def to_dict(self) -> dict:
        return {
            "coefficients": self.table().to_dict(orient="records"),
            "se_kind": self.se_kind,
            "ci_multiplier": Z95,
            "N": self.n,
            "df_resid": self.df_resid,
            "R2": self.r2,
            "absorbed_groups": self.absorbed_groups,
            "dropped_rows": self.dropped_rows,
            "dropped_columns": len(self.dropped_columns),
            "dropped_column_names": list(self.dropped_columns),
        }

    def to_json(self, dest) -> None:
        with open(dest, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=True)
            fh.write("\n")


# -- design assembly ----------------------------------------------------------

def _field_year_aggregates(graph: Optional[CitationGraph], table: pd.DataFrame) -> pd.DataFrame:
    if graph is not None:
        corpus = pd.DataFrame({
            "field": [w.field for w in graph.nodes],
            "year": graph.years,
            "bcite": np.asarray(graph.out_degree, dtype=np.float64),
            "authors": pd.array([w.author_count for w in graph.nodes], dtype="Float64"),
        })
    else:
        corpus = pd.DataFrame({"field": table["field"], "year": table["year"],
                               "bcite": table["bcite_count"].astype(np.float64),
                               "authors": table["author_count"].astype("Float64")})
    corpus = corpus.dropna(subset=["field"])
    agg = corpus.groupby(["field", "year"], sort=True).agg(
        n_new_works_field_year=("bcite", "size"),
        mean_cited_field_year=("bcite", "mean"),
        mean_authors_field_year=("authors", "mean"),
    ).reset_index()
    agg["mean_authors_field_year"] = agg["mean_authors_field_year"].astype(np.float64)
    return agg


def _control_column(name, table):
    source = {"zero_bcite_dummy": "zero_bcite", "n_cited": "bcite_count",
              "unlinked_refs": "unlinked_ref_count", "cd_random": "cd_random"}.get(name, name)
    if source not in table:
        raise DesignError(f"control {name!r} needs column {source!r}, which is absent")
    return pd.to_numeric(table[source].astype("Float64"), errors="coerce").astype(np.float64)


def build_design(metrics: pd.DataFrame, graph: Optional[CitationGraph],
                 spec: DesignSpec) -> Design:
    """Assemble the design matrix and response for ``spec``.

    Field-by-year aggregates are computed from the whole corpus in ``graph``
    (from ``metrics`` itself when no graph is given). Rows missing any
    required value are dropped and counted.
    """
    table = metrics.copy()
    needs_meta = any(c in spec.controls for c in ("unlinked_refs", "n_new_works_field_year",
                                                  "mean_cited_field_year",
                                                  "mean_authors_field_year"))
    keys = [k for k in (spec.fixed_effects, spec.cluster_key) if k]
    if graph is not None and (needs_meta or any(k not in table for k in keys)):
        table = attach_metadata(table, graph)
    for col in [spec.response, spec.year_column] + keys:
        if col not in table:
            raise DesignError(f"column {col!r} absent from data")
    fy = [c for c in spec.controls if c.endswith("_field_year")]
    if fy:
        if "field" not in table:
            raise DesignError("field-by-year controls need a 'field' column")
        agg = _field_year_aggregates(graph, table)
        table = table.drop(columns=[c for c in fy if c in table]).merge(
            agg[["field", "year"] + fy], on=["field", "year"], how="left")

    cols = {"__y": pd.to_numeric(table[spec.response].astype("Float64"),
                                 errors="coerce").astype(np.float64)}
    for c in spec.controls:
        cols[c] = _control_column(c, table)
    frame = pd.DataFrame(cols, index=table.index)
    frame["__year"] = table[spec.year_column]
    for k in keys:
        frame["__key_" + k] = table[k]
    keep = frame.notna().all(axis=1).to_numpy()
    dropped = int((~keep).sum())
    if dropped:
        log.info("dropped %d rows with undefined values", dropped)
    frame = frame.loc[keep]
    n = len(frame)

    years = frame["__year"].to_numpy(dtype=np.int64)
    year_levels = sorted(set(years.tolist()))
    base = None
    blocks, names = [np.ones((n, 1))], ["const"]
    if spec.year_dummies:
        base = year_levels[0] if spec.base_year is None else spec.base_year
        if base not in year_levels:
            raise DesignError(f"base year {base} missing from data")
        others = [y for y in year_levels if y != base]
        blocks.append((years[:, None] == np.asarray(others)[None, :]).astype(np.float64))
        names += [f"year={y}" for y in others]
    if spec.controls:
        blocks.append(frame[list(spec.controls)].to_numpy(dtype=np.float64))
        names += list(spec.controls)

    groups = None
    levels = []
    fe_method = None
    if spec.fixed_effects:
        labels = frame["__key_" + spec.fixed_effects].astype(str).to_numpy()
        levels, groups = np.unique(labels, return_inverse=True)
        levels = levels.tolist()
        fe_method = spec.fe_method or ("within" if len(levels) > spec.fe_threshold else "dummy")
        if fe_method == "dummy" and len(levels) > 1:
            dummies = np.zeros((n, len(levels) - 1))
            rows = np.flatnonzero(groups > 0)
            dummies[rows, groups[rows] - 1] = 1.0
            blocks.append(dummies)
            names += [f"{spec.fixed_effects}={lv}" for lv in levels[1:]]

    clusters = None
    if spec.cluster_key:
        clusters = pd.factorize(frame["__key_" + spec.cluster_key].astype(str), sort=True)[0]

    return Design(X=np.hstack(blocks), y=frame["__y"].to_numpy(dtype=np.float64), names=names,
                  spec=spec, years=years, year_levels=year_levels, base_year=base,
                  groups=groups, group_levels=levels, fe_method=fe_method, clusters=clusters,
                  dropped_rows=dropped)


# -- estimation ---------------------------------------------------------------

def _demean(a, groups, n_groups):
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    if a.ndim == 1:
        sums = np.bincount(groups, weights=a, minlength=n_groups)
        return a - (sums / counts)[groups]
    out = np.empty_like(a)
    for j in range(a.shape[1]):
        sums = np.bincount(groups, weights=a[:, j], minlength=n_groups)
        out[:, j] = a[:, j] - (sums / counts)[groups]
    return out


def ols_fit(X, y, names: Optional[Sequence[str]] = None, se_kind: str = "classical",
            clusters=None, absorb=None, tol: float = 1e-10) -> RegressionFit:
    """Least squares via QR with classical, HC0/HC1 or cluster-robust covariance.

    ``absorb`` takes integer group codes and sweeps group means out of
    ``X`` and ``y`` first (the within estimator); the first column of ``X``
    must then be the intercept, which is absorbed along with the groups.
    """
    if se_kind not in SE_KINDS:
        raise ValueError(f"se_kind must be one of {SE_KINDS}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per response value")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    n = X.shape[0]
    x_means = X.mean(axis=0) if n else np.zeros(X.shape[1])
    y_mean = float(y.mean()) if n else float("nan")
    absorbed = 0
    if absorb is not None:
        absorb = np.asarray(absorb)
        absorbed = int(absorb.max()) + 1 if n else 0
        if names and names[0] == "const":
            X, names, x_means = X[:, 1:], names[1:], x_means[1:]
        X = _demean(X, absorb, absorbed)
        yw = _demean(y, absorb, absorbed)
    else:
        yw = y

    # column screening: |R_jj| measures x_j orthogonal to the columns before it
    if X.shape[1]:
        R0 = linalg.qr(X, mode="r")[0]
        diag = np.abs(np.diag(R0))[: X.shape[1]]
        diag = np.concatenate([diag, np.zeros(X.shape[1] - diag.size)])
        norms = np.linalg.norm(X, axis=0)
        keep = diag > tol * np.maximum(norms, 1e-300)
    else:
        keep = np.zeros(0, dtype=bool)
    dropped = [nm for nm, k in zip(names, keep) if not k]
    if dropped:
        warnings.warn(f"dropped collinear columns: {dropped}", stacklevel=2)
    X = X[:, keep]
    names = [nm for nm, k in zip(names, keep) if k]
    x_means = x_means[keep]
    k = X.shape[1]
    k_total = k + absorbed
    if n <= k_total:
        raise ValueError(f"N={n} must exceed the number of parameters ({k_total})")

    Q, R = np.linalg.qr(X)
    beta = linalg.solve_triangular(R, Q.T @ yw)
    resid = yw - X @ beta
    Rinv = linalg.solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    rss = float(resid @ resid)
    df_resid = n - k_total

    if se_kind == "classical":
        cov = rss / df_resid * bread
    elif se_kind in ("robust_hc0", "robust_hc1"):
        xe = X * resid[:, None]
        cov = bread @ (xe.T @ xe) @ bread
        if se_kind == "robust_hc1":
            cov *= n / df_resid
    else:
        if clusters is None:
            raise ValueError("clustered covariance needs cluster ids")
        codes = pd.factorize(np.asarray(clusters), sort=True)[0]
        G = int(codes.max()) + 1
        if G < 2:
            raise ValueError("clustered covariance needs at least 2 clusters")
        u = np.zeros((G, k))
        np.add.at(u, codes, X * resid[:, None])
        cov = bread @ (u.T @ u) @ bread * (G / (G - 1)) * ((n - 1) / df_resid)
    cov = (cov + cov.T) / 2

    yc = y - y_mean
    tss = float(yc @ yc)
    r2 = 1 - rss / tss if tss > 0 else (1.0 if rss == 0 else float("nan"))
    return RegressionFit(names=names, params=beta, cov=cov, se_kind=se_kind, n=n,
                         df_resid=df_resid, r2=r2, dropped_columns=dropped,
                         absorbed_groups=absorbed, x_means=x_means, y_mean=y_mean,
                         residuals=resid)


def fit_design(design: Design) -> RegressionFit:
    spec = design.spec
    fit = ols_fit(design.X, design.y, design.names, se_kind=spec.se_kind,
                  clusters=design.clusters,
                  absorb=design.groups if design.fe_method == "within" else None)
    fit.dropped_rows = design.dropped_rows
    return fit


# -- predictions and trends ---------------------------------------------------

def predict_years(fit: RegressionFit, design: Design, years=None) -> pd.DataFrame:
    """Predicted response per year with delta-method 95% intervals.

    Every non-year column is held at its sample mean, which puts controls at
    their means and fixed effects at their group-share weighted average.
    Under absorbed fixed effects the prediction is centred on the sample
    mean of the response and the interval omits intercept uncertainty.
    """
    years = design.year_levels if years is None else list(years)
    absorbed = fit.absorbed_groups > 0
    rows = []
    for yr in years:
        if yr not in design.year_levels:
            raise KeyError(f"year {yr} absent from the fitted data")
        a = fit.x_means.copy()
        for j, nm in enumerate(fit.names):
            if nm.startswith("year="):
                a[j] = 1.0 if nm == f"year={yr}" else 0.0
        if design.spec.year_dummies and yr != design.base_year and f"year={yr}" not in fit.names:
            raise KeyError(f"year {yr} dummy was dropped from the fit")
        if absorbed:
            d = a - fit.x_means
            pred = fit.y_mean + float(d @ fit.params)
        else:
            d = a
            pred = float(a @ fit.params)
        se = float(np.sqrt(max(d @ fit.cov @ d, 0.0)))
        rows.append((yr, pred, pred - Z95 * se, pred + Z95 * se, se))
    return pd.DataFrame(rows, columns=["year", "predicted", "ci_low", "ci_high", "se"])


def trend_slope(series, se_kind: str = "robust_hc1") -> RegressionFit:
    """Regress a (percentile) value on calendar year: ``value ~ const + year``.

    ``series`` holds ``(year, value)`` pairs; pairs with undefined values
    are skipped.
    """
    arr = np.asarray([(float(yr), np.nan if v is None else float(v)) for yr, v in series],
                     dtype=np.float64).reshape(-1, 2)
    arr = arr[~np.isnan(arr[:, 1])]
    if np.unique(arr[:, 0]).size < 3:
        raise ValueError("trend_slope needs at least 3 distinct years")
    yr = arr[:, 0]
    X = np.column_stack([np.ones(len(yr)), yr])
    return ols_fit(X, arr[:, 1], ["const", "year"], se_kind=se_kind)


def with_random_control(table: pd.DataFrame, ensemble, stacked: bool = True) -> pd.DataFrame:
    """Add ``cd_random`` from a rewired ensemble.

    ``stacked`` repeats each work once per replicate (cluster on ``id``);
    otherwise ``cd_random`` is the replicate mean.
    """
    pos = {nid: i for i, nid in enumerate(ensemble.ids)}
    idx = table["id"].map(pos)
    if idx.isna().any():
        raise KeyError("table has works missing from the ensemble")
    idx = idx.to_numpy(dtype=np.int64)
    reps = ensemble.replicates["cd"]
    if not stacked:
        out = table.copy()
        out["cd_random"] = ensemble.mean("cd")[idx]
        return out
    parts = []
    for k in range(reps.shape[0]):
        part = table.copy()
        part["cd_random"] = reps[k, idx]
        part["replicate"] = k
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def yearly_means(table: pd.DataFrame, column: str, year_column: str = "year") -> pd.DataFrame:
    """Plot-ready per-year mean with a normal 95% interval."""
    vals = pd.to_numeric(table[column].astype("Float64"), errors="coerce").astype(np.float64)
    df = pd.DataFrame({"year": table[year_column], "v": vals}).dropna()
    g = df.groupby("year", sort=True)["v"]
    out = pd.DataFrame({"n": g.size(), "mean": g.mean(), "sd": g.std(ddof=1)}).reset_index()
    half = Z95 * out["sd"] / np.sqrt(out["n"])
    out["ci_low"] = out["mean"] - half
    out["ci_high"] = out["mean"] + half
    return out[["year", "n", "mean", "ci_low", "ci_high"]]
