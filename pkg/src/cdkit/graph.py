"""Citation graph loading, validation and neighbourhood queries.

A :class:`CitationGraph` is immutable once built. Node ids are opaque
strings; internally every node gets a dense integer index (ids sorted
lexicographically) and adjacency is held in CSR form in both directions so
the metric and rewiring kernels can work on flat integer arrays.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

NODE_COLUMNS = ("id", "year", "field", "subfield", "doctype", "language",
                "author_count", "unlinked_ref_count")
EDGE_COLUMNS = ("citing_id", "cited_id")

_ACTIONS = ("error", "drop", "keep")
_SAMPLE_LIMIT = 10


class GraphFormatError(ValueError):
    """Raised for malformed input rows or policy violations during load."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


@dataclass(frozen=True)
class WorkNode:
    id: str
    year: int
    field: Optional[str] = None
    subfield: Optional[str] = None
    doctype: Optional[str] = None
    language: Optional[str] = None
    author_count: Optional[int] = None
    unlinked_ref_count: int = 0


@dataclass(frozen=True)
class ValidationPolicy:
    """What to do with each kind of offending edge.

    ``self_loops`` and ``year_order`` accept ``error``, ``drop`` or ``keep``;
    ``duplicates`` and ``dangling`` accept ``error`` or ``drop`` (a dangling
    edge has nowhere to live, and the adjacency is set-based).
    """

    self_loops: str = "drop"
    year_order: str = "drop"
    duplicates: str = "drop"
    dangling: str = "drop"
    allow_same_year: bool = True
    year_min: int = 0
    year_max: int = 9999

    def __post_init__(self):
        for name in ("self_loops", "year_order"):
            if getattr(self, name) not in _ACTIONS:
                raise ValueError(f"{name} must be one of {_ACTIONS}")
        for name in ("duplicates", "dangling"):
            if getattr(self, name) not in ("error", "drop"):
                raise ValueError(f"{name} must be 'error' or 'drop'")
        if self.year_min > self.year_max:
            raise ValueError("year_min > year_max")

    @classmethod
    def strict(cls, **kw):
        return cls(self_loops="error", year_order="error", duplicates="error",
                   dangling="error", **kw)

    @classmethod
    def lenient(cls, **kw):
        return cls(self_loops="keep", year_order="keep", **kw)

    def is_year_violation(self, citing_year, cited_year):
        if self.allow_same_year:
            return citing_year < cited_year
        return citing_year <= cited_year


@dataclass
class ValidationReport:
    dangling_edge_count: int = 0
    duplicate_edge_count: int = 0
    self_loop_count: int = 0
    year_violation_count: int = 0
    dangling_samples: list = field(default_factory=list)
    duplicate_samples: list = field(default_factory=list)
    self_loop_samples: list = field(default_factory=list)
    year_violation_samples: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.dangling_edge_count or self.duplicate_edge_count
                    or self.self_loop_count or self.year_violation_count)

    def _note(self, kind, edge):
        setattr(self, f"{kind}_count", getattr(self, f"{kind}_count") + 1)
        kind = kind.replace("_edge", "")
        samples = getattr(self, f"{kind}_samples")
        if len(samples) < _SAMPLE_LIMIT:
            samples.append(list(edge))

    def to_dict(self) -> dict:
        return {
            "dangling_edge_count": self.dangling_edge_count,
            "duplicate_edge_count": self.duplicate_edge_count,
            "self_loop_count": self.self_loop_count,
            "year_violation_count": self.year_violation_count,
            "samples": {
                "dangling": self.dangling_samples,
                "duplicate": self.duplicate_samples,
                "self_loop": self.self_loop_samples,
                "year_violation": self.year_violation_samples,
            },
        }


def _csr(keys, values, n):
    order = np.lexsort((values, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, keys + 1, 1)
    np.cumsum(ptr, out=ptr)
    return ptr, values[order].astype(np.int64)


class CitationGraph:
    """Immutable directed citation network.

    Edges point from the citing work to the cited work. ``out_degree[i]`` is
    the number of references ``b_i`` made by work ``i``; ``in_degree[i]`` is
    the number of citations ``c_i`` it receives.
    """

    def __init__(self, nodes: Sequence[WorkNode], src, dst,
                 policy: Optional[ValidationPolicy] = None,
                 load_report: Optional[ValidationReport] = None):
        nodes = list(nodes)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        order = sorted(range(len(nodes)), key=lambda i: nodes[i].id)
        if order != list(range(len(nodes))):
            # src/dst index the caller's node order; re-express them in id order
            remap = np.empty(len(nodes), dtype=np.int64)
            remap[order] = np.arange(len(nodes))
            src, dst = remap[src], remap[dst]
            nodes = [nodes[i] for i in order]
        self.nodes: tuple = tuple(nodes)
        self.ids: tuple = tuple(w.id for w in nodes)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            dup = [k for k, v in Counter(self.ids).items() if v > 1][0]
            raise GraphFormatError(f"duplicate node id {dup!r}")
        self.policy = policy or ValidationPolicy()
        self.load_report = load_report or ValidationReport()

        n = len(nodes)
        self.years = np.array([w.year for w in nodes], dtype=np.int64)
        order = np.lexsort((dst, src))
        self.src = src[order]
        self.dst = dst[order]
        self.ref_ptr, self.ref_idx = _csr(self.src, self.dst, n)
        self.cit_ptr, self.cit_idx = _csr(self.dst, self.src, n)
        self.out_degree = np.diff(self.ref_ptr)
        self.in_degree = np.diff(self.cit_ptr)
        for arr in (self.years, self.src, self.dst, self.ref_ptr, self.ref_idx,
                    self.cit_ptr, self.cit_idx, self.out_degree, self.in_degree):
            arr.setflags(write=False)
        yrs, counts = np.unique(self.years, return_counts=True)
        self.year_counts = {int(y): int(c) for y, c in zip(yrs, counts)}

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return f"CitationGraph(nodes={len(self)}, edges={self.n_edges})"

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def node(self, nid: str) -> WorkNode:
        return self.nodes[self._idx(nid)]

    def _idx(self, nid: str) -> int:
        try:
            return self.index[nid]
        except KeyError:
            raise KeyError(f"unknown work id {nid!r}") from None

    def references(self, i: int) -> np.ndarray:
        return self.ref_idx[self.ref_ptr[i]:self.ref_ptr[i + 1]]

    def citers(self, i: int) -> np.ndarray:
        return self.cit_idx[self.cit_ptr[i]:self.cit_ptr[i + 1]]

    def edges(self):
        """Iterate ``(citing_id, cited_id)`` pairs in index order."""
        ids = self.ids
        for s, d in zip(self.src.tolist(), self.dst.tolist()):
            yield ids[s], ids[d]

    def with_edges(self, src, dst) -> "CitationGraph":
        """New graph over the same nodes with a replacement edge set."""
        return CitationGraph(self.nodes, src, dst, policy=self.policy)

    def stratum_counts(self) -> Counter:
        """Edge counts keyed by ``(citing_year, cited_year)``."""
        pairs = zip(self.years[self.src].tolist(), self.years[self.dst].tolist())
        return Counter(pairs)


def neighborhood(graph: CitationGraph, focal: str):
    """Return ``(references, citers)`` of ``focal`` as frozensets of ids."""
    i = graph._idx(focal)
    ids = graph.ids
    refs = frozenset(ids[j] for j in graph.references(i).tolist())
    cites = frozenset(ids[j] for j in graph.citers(i).tolist())
    return refs, cites


def validate(graph: CitationGraph) -> ValidationReport:
    """Recount offending edges over the graph's full edge set."""
    report = ValidationReport()
    policy = graph.policy
    seen = set()
    years = graph.years
    for s, d in zip(graph.src.tolist(), graph.dst.tolist()):
        edge = (graph.ids[s], graph.ids[d])
        if (s, d) in seen:
            report._note("duplicate_edge", edge)
        seen.add((s, d))
        if s == d:
            report._note("self_loop", edge)
        elif policy.is_year_violation(years[s], years[d]):
            report._note("year_violation", edge)
    return report


# -- text I/O ---------------------------------------------------------------

Source = Union[str, os.PathLike, io.TextIOBase, Iterable[str]]


def _open(source: Source):
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise FileNotFoundError(f"input not found: {source}")
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def _read_rows(source: Source, delimiter: str, required: Sequence[str]):
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GraphFormatError("missing header row", line=1) from None
        for col in required:
            if col not in header:
                raise GraphFormatError(f"missing required column {col!r}", line=1)
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) > len(header):
                raise GraphFormatError(f"expected at most {len(header)} fields, got {len(row)}",
                                       line=reader.line_num)
            rec = {h: (row[k].strip() if k < len(row) else "") for k, h in enumerate(header)}
            yield reader.line_num, rec
    finally:
        if owned:
            fh.close()


def _opt_str(v):
    return v if v != "" else None


def _parse_int(rec, col, line, optional):
    v = rec.get(col, "")
    if v == "":
        if optional:
            return None
        raise GraphFormatError("missing value", line=line, column=col)
    try:
        return int(v)
    except ValueError:
        raise GraphFormatError(f"not an integer: {v!r}", line=line, column=col) from None


def read_nodes(source: Source, delimiter=",", policy: Optional[ValidationPolicy] = None):
    policy = policy or ValidationPolicy()
    nodes = []
    seen = set()
    for line, rec in _read_rows(source, delimiter, ("id", "year")):
        nid = rec["id"]
        if not nid:
            raise GraphFormatError("empty id", line=line, column="id")
        if nid in seen:
            raise GraphFormatError(f"duplicate node id {nid!r}", line=line, column="id")
        seen.add(nid)
        year = _parse_int(rec, "year", line, optional=False)
        if not policy.year_min <= year <= policy.year_max:
            raise GraphFormatError(f"year {year} outside [{policy.year_min}, {policy.year_max}]",
                                   line=line, column="year")
        authors = _parse_int(rec, "author_count", line, optional=True)
        unlinked = _parse_int(rec, "unlinked_ref_count", line, optional=True)
        for col, v in (("author_count", authors), ("unlinked_ref_count", unlinked)):
            if v is not None and v < 0:
                raise GraphFormatError("negative count", line=line, column=col)
        nodes.append(WorkNode(
            id=nid, year=year,
            field=_opt_str(rec.get("field", "")),
            subfield=_opt_str(rec.get("subfield", "")),
            doctype=_opt_str(rec.get("doctype", "")),
            language=_opt_str(rec.get("language", "")),
            author_count=authors,
            unlinked_ref_count=unlinked or 0,
        ))
    return nodes


def _apply(action, report, kind, edge, line, message):
    if action == "error":
        raise GraphFormatError(f"{message}: {edge[0]!r} -> {edge[1]!r}", line=line)
    report._note(kind, edge)
    return action == "keep"


def load_graph(nodes_source: Source, edges_source: Source,
               policy: Optional[ValidationPolicy] = None,
               delimiter: str = ",") -> CitationGraph:
    """Parse node and edge tables into a :class:`CitationGraph`.

    Offending edges are dropped, kept or fatal according to ``policy``; the
    tally of what was seen in the raw input is attached as
    ``graph.load_report``.
    """
    policy = policy or ValidationPolicy()
    nodes = read_nodes(nodes_source, delimiter, policy)
    index = {w.id: i for i, w in enumerate(nodes)}
    years = [w.year for w in nodes]
    report = ValidationReport()
    src, dst = [], []
    seen = set()
    for line, rec in _read_rows(edges_source, delimiter, EDGE_COLUMNS):
        a, b = rec["citing_id"], rec["cited_id"]
        for col, v in (("citing_id", a), ("cited_id", b)):
            if not v:
                raise GraphFormatError("empty id", line=line, column=col)
        edge = (a, b)
        ia, ib = index.get(a), index.get(b)
        if ia is None or ib is None:
            _apply(policy.dangling, report, "dangling_edge", edge, line,
                   "unresolvable edge endpoint")
            continue
        if (ia, ib) in seen:
            _apply(policy.duplicates, report, "duplicate_edge", edge, line, "duplicate edge")
            continue
        if ia == ib:
            if not _apply(policy.self_loops, report, "self_loop", edge, line, "self-loop"):
                continue
        elif policy.is_year_violation(years[ia], years[ib]):
            if not _apply(policy.year_order, report, "year_violation", edge, line,
                          "citing work older than cited work"):
                continue
        seen.add((ia, ib))
        src.append(ia)
        dst.append(ib)

    if not report.clean:
        msg = ("load dropped/flagged edges: dangling=%d duplicate=%d self_loop=%d "
               "year_violation=%d" % (report.dangling_edge_count, report.duplicate_edge_count,
                                      report.self_loop_count, report.year_violation_count))
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    src_arr = np.asarray(src, dtype=np.int64)
    dst_arr = np.asarray(dst, dtype=np.int64)
    return CitationGraph(nodes, src_arr, dst_arr, policy=policy, load_report=report)


def _fmt(v):
    return "" if v is None else str(v)


def write_nodes(graph: CitationGraph, dest, delimiter=","):
    _write_node_rows(graph.nodes, dest, delimiter)


def _write_node_rows(nodes, dest, delimiter=","):
    fh, owned = (open(dest, "w", newline="", encoding="utf-8"), True) \
        if isinstance(dest, (str, os.PathLike)) else (dest, False)
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for n in nodes:
            w.writerow([n.id, n.year, _fmt(n.field), _fmt(n.subfield), _fmt(n.doctype),
                        _fmt(n.language), _fmt(n.author_count), n.unlinked_ref_count])
    finally:
        if owned:
            fh.close()


def write_edges(graph: CitationGraph, dest, delimiter=","):
    fh, owned = (open(dest, "w", newline="", encoding="utf-8"), True) \
        if isinstance(dest, (str, os.PathLike)) else (dest, False)
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        w.writerows(graph.edges())
    finally:
        if owned:
            fh.close()


def from_records(nodes: Iterable[WorkNode], edges: Iterable[tuple],
                 policy: Optional[ValidationPolicy] = None) -> CitationGraph:
    """Build a graph from in-memory nodes and ``(citing_id, cited_id)`` pairs.

    Goes through the same text path as :func:`load_graph`, so every policy
    check applies.
    """
    nbuf, ebuf = io.StringIO(), io.StringIO()
    _write_node_rows(nodes, nbuf)
    w = csv.writer(ebuf, lineterminator="\n")
    w.writerow(EDGE_COLUMNS)
    w.writerows(edges)
    nbuf.seek(0)
    ebuf.seek(0)
    return load_graph(nbuf, ebuf, policy=policy)
