"""Synthetic citation corpora with planted coupling behaviour.

:func:`generate_synthetic` grows a corpus year by year. Each new work draws
its first reference by preferential attachment (or uniformly), and every
further reference is, with probability ``rho(year)``, copied from the
reference list of a work it already cites. Copying is triadic closure: a
later work citing ``f`` and one of ``f``'s references is exactly a J-type
citation of ``f``, so a rising ``rho`` plants declining disruptiveness.

:func:`configuration_corpus` builds the structureless layered graphs used
to check the configuration-model predictions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .graph import CitationGraph, WorkNode

DEFAULT_FIELDS = ("biology", "physics", "history", "economics", "computer science")


@dataclass(frozen=True)
class SyntheticSpec:
    start_year: int = 1950
    n_years: int = 20
    works_first_year: int = 100
    growth_rate: float = 0.0
    ref_mean: float = 6.0
    ref_dispersion: Optional[float] = 4.0
    closure_rate: float = 0.3
    closure_trend: float = 0.0
    attachment: float = 0.7
    zero_ref_share: float = 0.05
    lookback: Optional[int] = None
    fields: Tuple[str, ...] = DEFAULT_FIELDS
    subfields_per_field: int = 3
    mean_authors: float = 2.0
    author_trend: float = 0.05
    unlinked_mean: float = 0.5
    non_article_share: float = 0.08

    def __post_init__(self):
        if self.n_years < 1 or self.works_first_year < 0:
            raise ValueError("n_years must be >= 1 and works_first_year >= 0")
        if self.ref_mean < 0 or self.mean_authors < 0 or self.unlinked_mean < 0:
            raise ValueError("means must be >= 0")
        for name in ("attachment", "zero_ref_share", "non_article_share"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for k in range(self.n_years):
            if not 0 <= self.rho(k) <= 1:
                raise ValueError(f"closure rate leaves [0, 1] in year offset {k}")
        if self.ref_dispersion is not None and self.ref_dispersion <= 0:
            raise ValueError("ref_dispersion must be > 0")

    def rho(self, offset: int) -> float:
        return self.closure_rate + self.closure_trend * offset

    def works_in_year(self, offset: int) -> int:
        return int(round(self.works_first_year * (1 + self.growth_rate) ** offset))


def _draw_count(rng, mean, dispersion):
    if mean <= 0:
        return 0
    if dispersion is None:
        return int(rng.poisson(mean))
    p = dispersion / (dispersion + mean)
    return int(rng.negative_binomial(dispersion, p))


def generate_synthetic(spec: SyntheticSpec, seed: int) -> CitationGraph:
    """Grow a corpus from ``spec``; identical ``(spec, seed)`` gives an identical graph.

    The first year has nothing to cite. Later works asking for more
    references than there are earlier works are truncated with a warning.
    """
    rng = np.random.default_rng(seed)
    nodes = []
    src, dst = [], []
    refs_of = []              # reference lists by index
    year_start = []           # first index of each year
    stubs_by_year = []        # cited indices, one entry per citation received
    truncated = 0
    width = len(str(max(1, sum(spec.works_in_year(k) for k in range(spec.n_years)))))

    for k in range(spec.n_years):
        year = spec.start_year + k
        first = len(nodes)
        year_start.append(first)
        lo_year = 0 if spec.lookback is None else max(0, k - spec.lookback)
        lo = year_start[lo_year]
        pool = first - lo
        stubs = np.concatenate(stubs_by_year[lo_year:k]) if k > lo_year else np.zeros(0, np.int64)
        rho = spec.rho(k)
        new_stubs = []

        for _ in range(spec.works_in_year(k)):
            i = len(nodes)
            fld = spec.fields[int(rng.integers(len(spec.fields)))] if spec.fields else None
            sub = f"{fld}/{int(rng.integers(spec.subfields_per_field))}" if fld else None
            article = rng.random() >= spec.non_article_share
            doctype = "Article" if article else ("Editorial Material" if rng.random() < 0.5 else "Letter")
            language = "en" if rng.random() < 0.95 else "de"
            authors = 1 + int(rng.poisson(max(0.0, spec.mean_authors - 1 + spec.author_trend * k)))
            unlinked = int(rng.poisson(spec.unlinked_mean))
            nodes.append(WorkNode(id=f"w{i:0{width}d}", year=year, field=fld, subfield=sub,
                                  doctype=doctype, language=language, author_count=authors,
                                  unlinked_ref_count=unlinked))

            want = 0 if rng.random() < spec.zero_ref_share else _draw_count(
                rng, spec.ref_mean, spec.ref_dispersion)
            if want > pool:
                if k > 0:
                    truncated += 1
                want = pool
            chosen = []
            seen = set()
            tries = 0
            while len(chosen) < want and tries < 20 * want + 20:
                tries += 1
                r = -1
                if chosen and rng.random() < rho:
                    via = chosen[int(rng.integers(len(chosen)))]
                    cand = [x for x in refs_of[via] if x >= lo and x not in seen]
                    if cand:
                        r = cand[int(rng.integers(len(cand)))]
                if r < 0:
                    if stubs.size and rng.random() < spec.attachment:
                        r = int(stubs[int(rng.integers(stubs.size))])
                    else:
                        r = lo + int(rng.integers(pool))
                if r in seen:
                    continue
                seen.add(r)
                chosen.append(r)
            refs_of.append(chosen)
            for r in chosen:
                src.append(i)
                dst.append(r)
            new_stubs.extend(chosen)
        stubs_by_year.append(np.asarray(new_stubs, dtype=np.int64))

    if truncated:
        warnings.warn(f"{truncated} works asked for more references than earlier works exist; "
                      "reference lists truncated", stacklevel=2)
    return CitationGraph(nodes, np.asarray(src, np.int64), np.asarray(dst, np.int64))


def configuration_corpus(n_per_year: int, n_years: int = 3, ref_mean: float = 3.0,
                         ref_dispersion: Optional[float] = 1.5, max_refs: int = 40,
                         start_year: int = 2000, seed: int = 0) -> CitationGraph:
    """Layered corpus with no coupling structure.

    Year 0 works cite nothing. Each later work makes ``1 + NB(ref_mean - 1,
    ref_dispersion)`` references (capped at ``max_refs``) drawn uniformly
    without replacement from all earlier works. The out-degree distribution,
    and hence the expected in-degree, does not depend on ``n_per_year``.
    """
    rng = np.random.default_rng(seed)
    n = n_per_year * n_years
    width = len(str(max(1, n)))
    nodes = [WorkNode(id=f"w{i:0{width}d}", year=start_year + i // n_per_year,
                      doctype="Article", language="en")
             for i in range(n)]
    src, dst = [], []
    for k in range(1, n_years):
        prior = k * n_per_year
        for i in range(k * n_per_year, (k + 1) * n_per_year):
            b = min(1 + _draw_count(rng, ref_mean - 1, ref_dispersion), max_refs, prior)
            for r in rng.choice(prior, size=b, replace=False):
                src.append(i)
                dst.append(int(r))
    return CitationGraph(nodes, np.asarray(src, np.int64), np.asarray(dst, np.int64))
