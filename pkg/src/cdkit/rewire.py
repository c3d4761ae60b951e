"""Degree- and year-stratum-preserving rewired null networks.

Edges are grouped by ``(citing_year, cited_year)`` and each group is
shuffled independently with a chain of double-edge swaps. Swaps only
exchange cited endpoints between two edges of the same group, so every
node's in- and out-degree, and every node's citation counts per
citing/cited year, survive exactly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import _kernels
from .graph import CitationGraph
from .metrics import MetricConfig, cd_arrays, component_arrays

QUANTITIES = ("n_i", "n_j", "n_k", "cd", "cd_nok")


@dataclass(frozen=True)
class RewireConfig:
    replicates: int = 10
    swaps_per_edge: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.swaps_per_edge > 0:
            raise ValueError("swaps_per_edge must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def stratum_rng(seed: int, replicate_index: int, citing_year: int,
                cited_year: int) -> np.random.Generator:
    """Independent stream per (seed, replicate, stratum)."""
    key = (int(replicate_index), int(citing_year) & 0xFFFFFFFF, int(cited_year) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def strata(graph: CitationGraph) -> dict:
    """Edge positions (into ``graph.src``/``graph.dst``) per year pair."""
    cy = graph.years[graph.src]
    cb = graph.years[graph.dst]
    if cy.size == 0:
        return {}
    order = np.lexsort((cb, cy))
    keys = np.stack([cy[order], cb[order]], axis=1)
    cut = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    out = {}
    for part in np.split(order, cut):
        out[(int(cy[part[0]]), int(cb[part[0]]))] = part
    return out


def rewire_edges(graph: CitationGraph, config: RewireConfig, replicate_index: int,
                 groups: Optional[dict] = None):
    """Rewired ``(src, dst)`` arrays; ``src`` is unchanged."""
    groups = strata(graph) if groups is None else groups
    dst = graph.dst.copy()
    for (cy, cb), pos in groups.items():
        m = pos.size
        if m < 2:
            continue
        attempts = math.ceil(config.swaps_per_edge * m)
        rng = stratum_rng(config.seed, replicate_index, cy, cb)
        pick_a = rng.integers(0, m, size=attempts)
        pick_b = rng.integers(0, m - 1, size=attempts)
        s = graph.src[pos].copy()
        d = dst[pos].copy()
        _kernels.swap_chain(s, d, pick_a, pick_b)
        dst[pos] = d
    return graph.src, dst


def rewire(graph: CitationGraph, config: RewireConfig, replicate_index: int) -> CitationGraph:
    src, dst = rewire_edges(graph, config, replicate_index)
    return graph.with_edges(src, dst)


def _quantities(graph, metric_config):
    arr = component_arrays(graph, metric_config)
    cd, nok = cd_arrays(arr["n_i"], arr["n_j"], arr["n_k"])
    return {"n_i": arr["n_i"].astype(np.float64), "n_j": arr["n_j"].astype(np.float64),
            "n_k": arr["n_k"].astype(np.float64), "cd": cd, "cd_nok": nok,
            "ref_citation_sum": arr["ref_citation_sum"].astype(np.float64)}


def _summarise(values):
    """Column-wise mean and sample sd over defined (non-NaN) replicates.

    Columns whose defined values are all identical get exactly that value
    and sd 0, so a degenerate spread is never masked by rounding noise.
    """
    ok = ~np.isnan(values)
    k = ok.sum(axis=0)
    filled = np.where(ok, values, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(k > 0, filled.sum(axis=0) / k, np.nan)
        dev = np.where(ok, values - mean, 0.0)
        sd = np.where(k > 1, np.sqrt((dev ** 2).sum(axis=0) / (k - 1)), np.nan)
    lo = np.where(ok, values, np.inf).min(axis=0)
    hi = np.where(ok, values, -np.inf).max(axis=0)
    same = (k > 0) & (lo == hi)
    mean = np.where(same, lo, mean)
    sd = np.where(same & (k > 1), 0.0, sd)
    return mean, sd


@dataclass
class RewireEnsemble:
    ids: tuple
    config: RewireConfig
    metric_config: MetricConfig
    observed: dict
    replicates: dict          # quantity -> (K, n) array
    replicate_edges: list = field(default_factory=list)

    def __post_init__(self):
        self._summary = {q: _summarise(v) for q, v in self.replicates.items()}

    def mean(self, quantity: str) -> np.ndarray:
        return self._summary[quantity][0]

    def sd(self, quantity: str) -> np.ndarray:
        return self._summary[quantity][1]

    def summary_frame(self, quantities=QUANTITIES) -> pd.DataFrame:
        """Long table: id, quantity, observed, random_mean, random_sd, z."""
        parts = []
        for q in quantities:
            obs = self.observed[q]
            mean, sd = self.mean(q), self.sd(q)
            parts.append(pd.DataFrame({
                "id": self.ids, "quantity": q, "observed": obs,
                "random_mean": mean, "random_sd": sd, "z": zscore_array(obs, mean, sd),
            }))
        return pd.concat(parts, ignore_index=True).sort_values(
            ["id", "quantity"], kind="mergesort", ignore_index=True)


def build_ensemble(graph: CitationGraph, config: RewireConfig = RewireConfig(),
                   metric_config: MetricConfig = MetricConfig(), workers: int = 1,
                   keep_edges: bool = False) -> RewireEnsemble:
    """Rewire ``config.replicates`` times and compute metrics on each copy."""
    groups = strata(graph)
    K = config.replicates
    n = len(graph)
    reps = {q: np.empty((K, n)) for q in QUANTITIES + ("ref_citation_sum",)}
    edges = [None] * K

    def run(k):
        src, dst = rewire_edges(graph, config, k, groups)
        g = graph.with_edges(src, dst)
        for q, v in _quantities(g, metric_config).items():
            reps[q][k] = v
        if keep_edges:
            edges[k] = (g.src, g.dst)

    if workers <= 1 or K == 1:
        for k in range(K):
            run(k)
    else:
        with ThreadPoolExecutor(max_workers=min(workers, K)) as pool:
            list(pool.map(run, range(K)))
    return RewireEnsemble(
        ids=graph.ids, config=config, metric_config=metric_config,
        observed=_quantities(graph, metric_config), replicates=reps,
        replicate_edges=edges if keep_edges else [])


def zscore(observed, random_mean, random_sd) -> Optional[float]:
    vals = (observed, random_mean, random_sd)
    if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in vals):
        return None
    if random_sd == 0:
        return None
    return (observed - random_mean) / random_sd


def zscore_array(observed, mean, sd) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sd > 0, (observed - mean) / np.where(sd > 0, sd, 1.0), np.nan)


@dataclass(frozen=True)
class ZScoreRecord:
    id: str
    z_cd: Optional[float]
    z_cd_nok: Optional[float]
    z_n_i: Optional[float]
    z_n_j: Optional[float]
    z_n_k: Optional[float]
    random_mean: dict
    random_sd: dict


def _opt(v):
    return None if np.isnan(v) else float(v)


def component_zscores(graph: CitationGraph, ensemble: RewireEnsemble,
                      metric_config: Optional[MetricConfig] = None,
                      exclude_zero_bcite: bool = False) -> list:
    """Per-work z-scores of the three components, CD and CD without n_K."""
    if metric_config is not None and metric_config != ensemble.metric_config:
        raise ValueError("ensemble was built with a different MetricConfig")
    if tuple(graph.ids) != tuple(ensemble.ids):
        raise ValueError("ensemble does not belong to this graph")
    z = {q: zscore_array(ensemble.observed[q], ensemble.mean(q), ensemble.sd(q))
         for q in QUANTITIES}
    out = []
    for i, nid in enumerate(graph.ids):
        if exclude_zero_bcite and graph.out_degree[i] == 0:
            continue
        out.append(ZScoreRecord(
            id=nid, z_cd=_opt(z["cd"][i]), z_cd_nok=_opt(z["cd_nok"][i]),
            z_n_i=_opt(z["n_i"][i]), z_n_j=_opt(z["n_j"][i]), z_n_k=_opt(z["n_k"][i]),
            random_mean={q: _opt(ensemble.mean(q)[i]) for q in QUANTITIES},
            random_sd={q: _opt(ensemble.sd(q)[i]) for q in QUANTITIES},
        ))
    return out
