"""CD-index family and auxiliary disruptiveness measures.

Per-focal functions (:func:`cd_components`, :func:`cyg`, ...) work directly
on Python sets and are meant for inspection and cross-checking;
:func:`compute_all` runs the compiled kernel over every node and is what the
pipelines use. Both follow the same conventions:

* the forward window covers citing years ``[year_f, year_f + window]``
  (``year_f + 1`` as lower bound when ``include_same_year`` is off);
* a citer is J-type when it shares at least ``threshold`` references with
  the focal work, otherwise I-type;
* K-type works are in-window non-citers sharing at least one reference,
  whatever the threshold;
* a metric that cannot be computed is ``None`` (``NaN`` in tables), never 0.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import _kernels
from .graph import CitationGraph

METRIC_COLUMNS = ("id", "year", "n_i", "n_j", "n_k", "bcite_count", "cd", "cd_nok",
                  "is_d", "cyg", "mean_ref_age", "zero_bcite", "cd_equals_one")


@dataclass(frozen=True)
class MetricConfig:
    window: int = 5
    threshold: int = 1
    include_same_year: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")

    def in_window(self, focal_year, year):
        lo = focal_year if self.include_same_year else focal_year + 1
        return lo <= year <= focal_year + self.window


@dataclass(frozen=True)
class CdComponents:
    n_i: int
    n_j: int
    n_k: int
    bcite_count: int


@dataclass(frozen=True)
class MetricsRecord:
    id: str
    year: int
    cd: Optional[float]
    cd_nok: Optional[float]
    is_d: Optional[bool]
    cyg: Optional[float]
    mean_ref_age: Optional[float]
    components: CdComponents
    zero_bcite: bool
    cd_equals_one: bool


def cd_components(graph: CitationGraph, focal: str,
                  config: MetricConfig = MetricConfig()) -> CdComponents:
    f = graph._idx(focal)
    yf = graph.years[f]
    years = graph.years
    refs_f = set(graph.references(f).tolist())
    citers = set(c for c in graph.citers(f).tolist() if config.in_window(yf, years[c]))

    n_i = n_j = 0
    for c in citers:
        shared = len(refs_f.intersection(graph.references(c).tolist()))
        if shared >= config.threshold:
            n_j += 1
        else:
            n_i += 1

    coupled = set()
    for r in refs_f:
        coupled.update(w for w in graph.citers(r).tolist()
                       if w != f and config.in_window(yf, years[w]))
    n_k = len(coupled - citers)
    return CdComponents(n_i, n_j, n_k, len(refs_f))


def cd_index(c: CdComponents) -> Optional[float]:
    den = c.n_i + c.n_j + c.n_k
    return (c.n_i - c.n_j) / den if den > 0 else None


def cd_nok(c: CdComponents) -> Optional[float]:
    den = c.n_i + c.n_j
    return (c.n_i - c.n_j) / den if den > 0 else None


def is_d(cd: Optional[float]) -> Optional[bool]:
    if cd is None or (isinstance(cd, float) and math.isnan(cd)):
        return None
    return cd > 0


def cyg(graph: CitationGraph, focal: str,
        config: MetricConfig = MetricConfig()) -> Optional[float]:
    """Citation year gap.

    Mean of ``year(r) - year(focal)`` over every (citer, reference) pair,
    where the citer is an in-window citer of ``focal`` and ``r`` ranges over
    the citer's full reference list (``focal`` itself included). Citers that
    lean on older literature push the value negative.
    """
    f = graph._idx(focal)
    yf = int(graph.years[f])
    total = n = 0
    for c in graph.citers(f).tolist():
        if not config.in_window(yf, graph.years[c]):
            continue
        for r in graph.references(c).tolist():
            total += int(graph.years[r]) - yf
            n += 1
    return total / n if n else None


def mean_reference_age(graph: CitationGraph, focal: str) -> Optional[float]:
    f = graph._idx(focal)
    refs = graph.references(f)
    if refs.size == 0:
        return None
    return int((graph.years[f] - graph.years[refs]).sum()) / int(refs.size)


def metrics_record(graph: CitationGraph, focal: str,
                   config: MetricConfig = MetricConfig()) -> MetricsRecord:
    comp = cd_components(graph, focal, config)
    cd = cd_index(comp)
    return MetricsRecord(
        id=focal,
        year=int(graph.node(focal).year),
        cd=cd,
        cd_nok=cd_nok(comp),
        is_d=is_d(cd),
        cyg=cyg(graph, focal, config),
        mean_ref_age=mean_reference_age(graph, focal),
        components=comp,
        zero_bcite=comp.bcite_count == 0,
        cd_equals_one=cd == 1.0,
    )


def _chunks(n, workers):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n, workers + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def component_arrays(graph: CitationGraph, config: MetricConfig = MetricConfig(),
                     workers: int = 1) -> dict:
    """Raw per-node counts from the compiled kernel, in index order.

    Keys: ``n_i``, ``n_j``, ``n_k``, ``gap_sum``, ``gap_n`` (CYG numerator
    and pair count) and ``ref_citation_sum`` (in-window citations received
    by the focal work's references, the focal work's own excluded).
    """
    n = len(graph)
    out = {k: np.zeros(n, np.int64)
           for k in ("n_i", "n_j", "n_k", "gap_sum", "gap_n", "ref_citation_sum")}
    focals = np.arange(n, dtype=np.int64)

    def run(span):
        a, b = span
        _kernels.components_chunk(
            graph.ref_ptr, graph.ref_idx, graph.cit_ptr, graph.cit_idx, graph.years,
            focals[a:b], config.window, config.threshold, config.include_same_year,
            out["n_i"][a:b], out["n_j"][a:b], out["n_k"][a:b],
            out["gap_sum"][a:b], out["gap_n"][a:b], out["ref_citation_sum"][a:b])

    spans = _chunks(n, workers)
    if len(spans) <= 1:
        for s in spans:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(run, spans))
    return out


def cd_arrays(n_i, n_j, n_k):
    """Vectorised ``cd`` and ``cd_nok`` with NaN for undefined."""
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    n_k = np.asarray(n_k, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        den = n_i + n_j + n_k
        cd = np.where(den > 0, (n_i - n_j) / den, np.nan)
        den2 = n_i + n_j
        nok = np.where(den2 > 0, (n_i - n_j) / den2, np.nan)
    return cd, nok


def compute_all(graph: CitationGraph, config: MetricConfig = MetricConfig(),
                workers: int = 1) -> pd.DataFrame:
    """One row per work, ordered by id, with the columns in ``METRIC_COLUMNS``."""
    arr = component_arrays(graph, config, workers)
    bcite = np.asarray(graph.out_degree, dtype=np.int64)
    cd, nok = cd_arrays(arr["n_i"], arr["n_j"], arr["n_k"])
    with np.errstate(invalid="ignore", divide="ignore"):
        cyg_v = np.where(arr["gap_n"] > 0, arr["gap_sum"] / np.maximum(arr["gap_n"], 1), np.nan)
        age_sum = np.zeros(len(graph), np.int64)
        np.add.at(age_sum, graph.src, graph.years[graph.src] - graph.years[graph.dst])
        age = np.where(bcite > 0, age_sum / np.maximum(bcite, 1), np.nan)
    defined = ~np.isnan(cd)
    is_d_v = pd.array(np.where(defined, cd > 0, False), dtype="boolean")
    is_d_v[~defined] = pd.NA
    return pd.DataFrame({
        "id": pd.Series(graph.ids, dtype=object),
        "year": graph.years.copy(),
        "n_i": arr["n_i"], "n_j": arr["n_j"], "n_k": arr["n_k"],
        "bcite_count": bcite.copy(),
        "cd": cd, "cd_nok": nok, "is_d": is_d_v,
        "cyg": cyg_v, "mean_ref_age": age,
        "zero_bcite": bcite == 0,
        "cd_equals_one": cd == 1.0,
    })


def attach_metadata(table: pd.DataFrame, graph: CitationGraph) -> pd.DataFrame:
    """Join node metadata columns onto a metrics table by id."""
    meta = pd.DataFrame({
        "id": [w.id for w in graph.nodes],
        "field": [w.field for w in graph.nodes],
        "subfield": [w.subfield for w in graph.nodes],
        "doctype": [w.doctype for w in graph.nodes],
        "language": [w.language for w in graph.nodes],
        "author_count": pd.array([w.author_count for w in graph.nodes], dtype="Int64"),
        "unlinked_ref_count": [w.unlinked_ref_count for w in graph.nodes],
    })
    cols = [c for c in meta.columns if c == "id" or c not in table.columns]
    return table.merge(meta[cols], on="id", how="left", validate="one_to_one")


def percentile_normalize(values: Sequence) -> np.ndarray:
    """Pooled percentile ranks ``100 * (rank - 0.5) / n`` with average ties.

    ``None``/``NaN`` entries stay ``NaN`` and do not count towards ``n``.
    """
    x = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    out = np.full(x.shape, np.nan)
    ok = ~np.isnan(x)
    n = int(ok.sum())
    if n:
        out[ok] = 100.0 * (rankdata(x[ok], method="average") - 0.5) / n
    return out


def write_metrics(table: pd.DataFrame, dest) -> None:
    """Serialise with empty fields for undefined values and 0/1 booleans."""
    out = table.copy()
    for col in ("is_d", "zero_bcite", "cd_equals_one"):
        if col in out:
            out[col] = out[col].astype("boolean").astype("Int8")
    out.to_csv(dest, index=False, na_rep="", lineterminator="\n")


def read_metrics(source) -> pd.DataFrame:
    table = pd.read_csv(source, dtype={"id": str}, keep_default_na=False,
                        na_values=[""])
    for col in ("is_d", "zero_bcite", "cd_equals_one"):
        if col in table:
            table[col] = table[col].astype("Int8").astype("boolean")
    for col in ("zero_bcite", "cd_equals_one"):
        if col in table and not table[col].isna().any():
            table[col] = table[col].astype(bool)
    return table
