"""Configuration-model predictions for rewired citation strata, and checks.

The closed forms are:

    p_ij  = c_i * b_j / (2 m)
    p_hij = c_i * c_h / (<b> n_c) * (<b^2> - <b>) / <b>

where ``c`` are in-degrees of cited works, ``b`` out-degrees of citing
works, ``m`` the stratum edge count and ``n_c`` the number of works in the
citing year. The normalisation of ``<b>`` is a convention:
``"undirected"`` uses ``2m / n_c`` (undirected stub counting) and ``"directed"``
uses ``m / n_c`` (one stub per citation). :func:`verify_cocitation` measures
which one the rewirer actually follows.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .graph import CitationGraph
from .rewire import stratum_rng, strata

CONVENTIONS = ("undirected", "directed")


class OutOfRegimeWarning(UserWarning):
    """A linear configuration-model probability came out above 1."""


@dataclass(frozen=True)
class StratumMoments:
    cited_year: int
    citing_year: int
    m: int
    n_c: int
    mean_b: float
    mean_b2: float
    convention: str = "undirected"


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")


def stratum_moments(graph: CitationGraph, t_b: int, t_c: int,
                    convention: str = "undirected") -> StratumMoments:
    """Out-degree moments of year ``t_c`` works counting only cites into ``t_b``.

    Every work published in ``t_c`` counts towards ``n_c``, including those
    making no such citation. An empty citing year gives ``n_c = 0`` and zero
    moments.
    """
    _check_convention(convention)
    if t_b > t_c:
        raise ValueError("t_b must not be later than t_c")
    citing = np.flatnonzero(graph.years == t_c)
    n_c = int(citing.size)
    mask = (graph.years[graph.src] == t_c) & (graph.years[graph.dst] == t_b)
    m = int(mask.sum())
    if n_c == 0:
        return StratumMoments(t_b, t_c, m, 0, 0.0, 0.0, convention)
    b = np.bincount(graph.src[mask], minlength=len(graph))[citing]
    mean_b = (2 * m if convention == "undirected" else m) / n_c
    mean_b2 = float((b.astype(np.float64) ** 2).sum() / n_c)
    return StratumMoments(t_b, t_c, m, n_c, float(mean_b), mean_b2, convention)


def edge_probability(c_i, b_j, m, convention: str = "undirected") -> float:
    """``c_i b_j / (2m)`` (``/ m`` under the directed convention).

    Values above 1 are returned unchanged with an :class:`OutOfRegimeWarning`;
    the linear form assumes a sparse, large-``m`` stratum.
    """
    _check_convention(convention)
    if m <= 0:
        raise ValueError("m must be > 0")
    p = c_i * b_j / ((2 if convention == "undirected" else 1) * m)
    if p > 1:
        warnings.warn(f"p_ij = {p:.4g} > 1: outside the sparse regime", OutOfRegimeWarning,
                      stacklevel=2)
    return p


def cocitation_probability(c_i, c_h, moments: StratumMoments) -> float:
    if moments.mean_b <= 0:
        raise ValueError("mean out-degree must be > 0")
    if moments.n_c <= 0:
        raise ValueError("n_c must be > 0")
    b1, b2 = moments.mean_b, moments.mean_b2
    return (c_i * c_h / (b1 * moments.n_c)) * (b2 - b1) / b1


def limiting_cd(n_i, ref_citation_sum) -> float:
    """CD once J-type citations have vanished: ``n_I / (n_I + sum c_r)``."""
    den = n_i + ref_citation_sum
    if den <= 0:
        raise ValueError("n_i + ref_citation_sum must be > 0")
    return n_i / den


@dataclass
class BucketCheck:
    c_lo: int
    c_hi: int
    pairs: int
    cocitations: int
    empirical: float
    se: float
    predicted: dict
    passed: dict


def verify_cocitation(graph: CitationGraph, t_b: int, t_c: int, draws: int = 1000,
                      seed: int = 0, swaps_per_edge: float = 10.0, min_count: int = 30,
                      n_se: float = 3.0) -> dict:
    """Monte Carlo check of ``p_hij`` on one stratum.

    Each draw rewires the ``t_c -> t_b`` stratum from the observed edges.
    Cited works are bucketed by their (smaller, larger) in-degree within the
    stratum; the empirical rate of a bucket is the number of co-citations
    per pair per draw. A bucket passes under a convention when the
    prediction lies within ``n_se`` binomial standard errors of the
    empirical rate. Buckets with fewer than ``min_count`` observed
    co-citations are not assessed.
    """
    groups = strata(graph)
    pos = groups.get((t_c, t_b))
    if pos is None or pos.size < 2:
        raise ValueError(f"stratum {t_c}->{t_b} has fewer than 2 edges")
    src = graph.src[pos].copy()
    dst0 = graph.dst[pos].copy()
    m = pos.size
    in_deg = np.bincount(dst0, minlength=len(graph))
    cited = np.flatnonzero(graph.years == t_b)
    hist = np.bincount(in_deg[cited])
    n_deg = hist.size
    tally = np.zeros(n_deg * n_deg, np.int64)
    attempts = math.ceil(swaps_per_edge * m)
    for d in range(draws):
        rng = stratum_rng(seed, d, t_c, t_b)
        pick_a = rng.integers(0, m, size=attempts)
        pick_b = rng.integers(0, m - 1, size=attempts)
        dst = dst0.copy()
        _kernels.swap_chain(src, dst, pick_a, pick_b)
        _kernels.cocitation_tally(src, dst, in_deg, n_deg, tally)

    moments = {c: stratum_moments(graph, t_b, t_c, c) for c in CONVENTIONS}
    buckets = []
    for lo in range(1, n_deg):
        for hi in range(lo, n_deg):
            pairs = hist[lo] * (hist[lo] - 1) // 2 if lo == hi else hist[lo] * hist[hi]
            count = int(tally[lo * n_deg + hi])
            if pairs == 0 or count < min_count:
                continue
            trials = int(pairs) * draws
            p_hat = count / trials
            se = math.sqrt(p_hat * (1 - p_hat) / trials)
            pred = {c: cocitation_probability(lo, hi, mo) for c, mo in moments.items()}
            buckets.append(BucketCheck(lo, hi, int(pairs), count, p_hat, se, pred,
                                       {c: bool(abs(p_hat - v) <= n_se * se)
                                        for c, v in pred.items()}))

    summary = {}
    for c in CONVENTIONS:
        ok = sum(b.passed[c] for b in buckets)
        summary[c] = {"buckets": len(buckets), "passed": ok,
                      "pass_rate": ok / len(buckets) if buckets else float("nan")}
    best = max(CONVENTIONS, key=lambda c: summary[c]["passed"])
    return {
        "stratum": {"citing_year": t_c, "cited_year": t_b, "m": int(m),
                    "n_c": moments["undirected"].n_c},
        "moments": {c: asdict(mo) for c, mo in moments.items()},
        "draws": draws, "seed": seed, "swaps_per_edge": swaps_per_edge,
        "n_se": n_se, "min_count": min_count,
        "summary": summary,
        "matching_convention": best,
        "buckets": [asdict(b) for b in buckets],
    }


def verify_limiting_cd(ensemble) -> dict:
    """Mean absolute gap between replicate CD and the J-free limit.

    Uses every (replicate, work) pair where both are defined; the limit is
    evaluated with the work's in-window citer count and the in-window
    citations its references receive from works other than itself.
    """
    n_cit = ensemble.observed["n_i"] + ensemble.observed["n_j"]
    refsum = ensemble.replicates["ref_citation_sum"]
    cd = ensemble.replicates["cd"]
    den = n_cit[None, :] + refsum
    with np.errstate(invalid="ignore", divide="ignore"):
        lim = np.where(den > 0, n_cit[None, :] / den, np.nan)
    ok = ~np.isnan(lim) & ~np.isnan(cd)
    gap = np.abs(cd[ok] - lim[ok])
    return {"pairs": int(ok.sum()),
            "mean_abs_deviation": float(gap.mean()) if gap.size else float("nan"),
            "max_abs_deviation": float(gap.max()) if gap.size else float("nan")}


def write_report(report: dict, dest) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
