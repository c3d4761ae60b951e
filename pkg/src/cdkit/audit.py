"""Corpus audits: crosswalks, filtering, prevalence shares and coverage tables."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional

import numpy as np
import pandas as pd

UNMAPPED_POLICIES = ("keep_as_other", "drop", "error")
OTHER = "All others"
BUILTIN_CROSSWALKS = {
    "fields": "fields_sciscinet_wos.csv",
    "wos_doctypes": "doctypes_wos.csv",
    "dimensions_doctypes": "doctypes_dimensions.csv",
}
# exclusion report attributes a dropped row to the first criterion it fails
FILTER_ORDER = ("year", "doctype", "field", "language", "zero_bcite", "cd_equals_one")


class UnmappedLabelError(ValueError):
    pass


@dataclass(frozen=True)
class Crosswalk:
    """Many-to-one map from raw labels to meta categories.

    Labels that already are a meta category map to themselves, so applying
    a crosswalk to its own output changes nothing.
    """
    mapping: Mapping[str, str]
    unmapped: str = "keep_as_other"
    other_label: str = OTHER

    def __post_init__(self):
        if self.unmapped not in UNMAPPED_POLICIES:
            raise ValueError(f"unmapped must be one of {UNMAPPED_POLICIES}")
        bad = [k for k, v in self.mapping.items() if not isinstance(v, str) or not v.strip()]
        if bad:
            raise ValueError(f"empty meta category for labels {bad}")
        if not self.other_label:
            raise ValueError("other_label must be nonempty")

    @classmethod
    def from_csv(cls, path, unmapped: str = "keep_as_other", delimiter: str = ",") -> "Crosswalk":
        """Read a two-column ``raw_label, meta_category`` file with header."""
        mapping = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["raw_label", "meta_category"]:
                raise ValueError(f"{path}: header must be raw_label,meta_category")
            for lineno, row in enumerate(reader, start=2):
                if not row or not any(c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
                raw, cat = row[0].strip(), row[1].strip()
                if raw in mapping:
                    raise ValueError(f"{path}:{lineno}: duplicate raw label {raw!r}")
                mapping[raw] = cat
        return cls(mapping, unmapped)

    @classmethod
    def builtin(cls, name: str, unmapped: str = "keep_as_other") -> "Crosswalk":
        """One of the shipped crosswalks: ``fields``, ``wos_doctypes``, ``dimensions_doctypes``."""
        try:
            fname = BUILTIN_CROSSWALKS[name]
        except KeyError:
            raise KeyError(f"unknown crosswalk {name!r}; choose from {sorted(BUILTIN_CROSSWALKS)}") from None
        with resources.as_file(resources.files("cdkit") / "data" / fname) as path:
            return cls.from_csv(path, unmapped)

    @property
    def categories(self) -> frozenset:
        return frozenset(self.mapping.values())

    def lookup(self, label) -> Optional[str]:
        if label in self.mapping:
            return self.mapping[label]
        if label in self.categories or label == self.other_label:
            return label
        return None


def apply_crosswalk(table: pd.DataFrame, crosswalk: Crosswalk, column: str,
                    out_column: Optional[str] = None):
    """Map ``column`` through ``crosswalk`` into ``out_column``.

    Returns ``(table, report)``; the report counts unmapped rows per raw
    label. Missing values count as unmapped.
    """
    if column not in table:
        raise KeyError(f"column {column!r} absent from table")
    out_column = out_column or f"{column}_category"
    raw = table[column]
    mapped = raw.map(lambda v: None if pd.isna(v) else crosswalk.lookup(v))
    miss = mapped.isna().to_numpy()
    labels = raw[miss].astype(object).where(raw[miss].notna(), "<missing>")
    unmapped = {str(k): int(v) for k, v in labels.value_counts(sort=False).sort_index().items()}
    if miss.any() and crosswalk.unmapped == "error":
        raise UnmappedLabelError(f"unmapped labels in {column!r}: {sorted(unmapped)}")
    out = table.copy()
    out[out_column] = mapped
    dropped = 0
    if crosswalk.unmapped == "keep_as_other":
        out.loc[miss, out_column] = crosswalk.other_label
    elif crosswalk.unmapped == "drop":
        out = out.loc[~miss].reset_index(drop=True)
        dropped = int(miss.sum())
    report = {"column": column, "out_column": out_column, "policy": crosswalk.unmapped,
              "rows": int(len(table)), "unmapped": int(miss.sum()), "dropped": dropped,
              "unmapped_labels": unmapped}
    return out, report


@dataclass(frozen=True)
class FilterCriteria:
    """Conjunctive corpus filter. ``None`` leaves a dimension unrestricted."""
    include_doctypes: Optional[frozenset] = frozenset({"Research articles"})
    include_fields: Optional[frozenset] = None
    exclude_languages: frozenset = frozenset()
    exclude_zero_bcite: bool = False
    exclude_cd_equal_one: bool = False
    year_min: Optional[int] = None
    year_max: Optional[int] = None
    doctype_column: str = "doctype_category"
    field_column: str = "field"

    def __post_init__(self):
        for name in ("include_doctypes", "include_fields"):
            v = getattr(self, name)
            if v is not None:
                if not v:
                    raise ValueError(f"{name} must be nonempty or None (unrestricted)")
                object.__setattr__(self, name, frozenset(v))
        object.__setattr__(self, "exclude_languages", frozenset(self.exclude_languages))
        if self.year_min is not None and self.year_max is not None and self.year_min > self.year_max:
            raise ValueError("year_min must not exceed year_max")


def _column(table, name):
    if name not in table:
        raise KeyError(f"filter needs column {name!r}, which is absent")
    return table[name]


def _true(series) -> np.ndarray:
    return series.astype("boolean").fillna(False).to_numpy(dtype=bool)


def _failures(table: pd.DataFrame, c: FilterCriteria) -> dict:
    fails = {}
    if c.year_min is not None or c.year_max is not None:
        yr = _column(table, "year").to_numpy()
        bad = np.zeros(len(table), dtype=bool)
        if c.year_min is not None:
            bad |= yr < c.year_min
        if c.year_max is not None:
            bad |= yr > c.year_max
        fails["year"] = bad
    if c.include_doctypes is not None:
        fails["doctype"] = ~_column(table, c.doctype_column).isin(c.include_doctypes).to_numpy()
    if c.include_fields is not None:
        fails["field"] = ~_column(table, c.field_column).isin(c.include_fields).to_numpy()
    if c.exclude_languages:
        fails["language"] = _column(table, "language").isin(c.exclude_languages).to_numpy()
    if c.exclude_zero_bcite:
        fails["zero_bcite"] = _true(_column(table, "zero_bcite"))
    if c.exclude_cd_equal_one:
        fails["cd_equals_one"] = _true(_column(table, "cd_equals_one"))
    return fails


def filter_corpus(table: pd.DataFrame, criteria: FilterCriteria):
    """Keep rows passing every criterion.

    Returns ``(kept, report)``. Each excluded row is charged to the first
    criterion it fails in the order year, doctype, field, language,
    zero_bcite, cd_equals_one. Missing doctype or field values fail an
    include set; missing flags never trigger an exclusion.
    """
    fails = _failures(table, criteria)
    charged = np.zeros(len(table), dtype=bool)
    counts = {}
    for name in FILTER_ORDER:
        if name not in fails:
            continue
        hit = fails[name] & ~charged
        counts[name] = int(hit.sum())
        charged |= hit
    kept = table.loc[~charged].reset_index(drop=True)
    report = {"input": int(len(table)), "kept": int(len(kept)), "excluded": int(charged.sum()),
              "excluded_by": counts, "order": [n for n in FILTER_ORDER if n in counts]}
    return kept, report


def group_share(table: pd.DataFrame, group_keys, predicate: str = "zero_bcite") -> pd.DataFrame:
    """Per-group row count and share of rows where ``predicate`` is true.

    Missing predicate values count as false; missing keys form their own
    group. Output is sorted by the keys.
    """
    keys = [group_keys] if isinstance(group_keys, str) else list(group_keys)
    for k in keys + [predicate]:
        _column(table, k)
    frame = table[keys].copy()
    frame["__hit"] = _true(table[predicate]).astype(np.int64)
    g = frame.groupby(keys, dropna=False, sort=True, observed=True)["__hit"]
    out = pd.DataFrame({"count": g.size(), "n_true": g.sum()}).reset_index()
    out = out[out["count"] > 0].reset_index(drop=True)
    out["share"] = out["n_true"] / out["count"]
    return out


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Rows: references recorded in A (yes/no). Columns: same for B."""
    yes_yes: int = 0
    yes_no: int = 0
    no_yes: int = 0
    no_no: int = 0
    row_label: str = "A"
    col_label: str = "B"

    @property
    def total(self) -> int:
        return self.yes_yes + self.yes_no + self.no_yes + self.no_no

    def counts(self) -> np.ndarray:
        return np.array([[self.yes_yes, self.yes_no], [self.no_yes, self.no_no]], dtype=np.int64)

    def percentages(self) -> np.ndarray:
        tot = self.total
        return self.counts() * (100.0 / tot) if tot else np.zeros((2, 2))

    def transpose(self) -> "ContingencyTable2x2":
        return ContingencyTable2x2(self.yes_yes, self.no_yes, self.yes_no, self.no_no,
                                   self.col_label, self.row_label)

    def to_dict(self) -> dict:
        pct = self.percentages()
        return {"row_label": self.row_label, "col_label": self.col_label, "total": self.total,
                "counts": {"yes_yes": self.yes_yes, "yes_no": self.yes_no,
                           "no_yes": self.no_yes, "no_no": self.no_no},
                "percent": {"yes_yes": pct[0, 0], "yes_no": pct[0, 1],
                            "no_yes": pct[1, 0], "no_no": pct[1, 1]}}

    def to_frame(self) -> pd.DataFrame:
        pct = self.percentages()
        c = self.counts()
        rows = []
        for i, ra in enumerate(("yes", "no")):
            for j, cb in enumerate(("yes", "no")):
                rows.append((f"{self.row_label}={ra}", f"{self.col_label}={cb}", c[i, j], pct[i, j]))
        return pd.DataFrame(rows, columns=["row", "column", "count", "percent"])


def has_references(table: pd.DataFrame, predicate: str = "zero_bcite",
                   count_unlinked: bool = True) -> np.ndarray:
    """True where a work has recorded references.

    A work counts as recorded when ``predicate`` is false, or, with
    ``count_unlinked``, when it has unlinked references.
    """
    rec = ~_true(_column(table, predicate))
    if count_unlinked and "unlinked_ref_count" in table:
        unl = pd.to_numeric(table["unlinked_ref_count"], errors="coerce").fillna(0).to_numpy()
        rec |= unl > 0
    return rec


def coverage_contingency(table_a: pd.DataFrame, table_b: pd.DataFrame, match_key: str = "id",
                         predicate: str = "zero_bcite", count_unlinked: bool = True,
                         labels=("A", "B")) -> ContingencyTable2x2:
    """Cross-tabulate reference coverage of works matched across two corpora."""
    for name, t in zip(labels, (table_a, table_b)):
        key = _column(t, match_key)
        if key.duplicated().any():
            raise ValueError(f"duplicate {match_key!r} values in table {name}")
    a = pd.DataFrame({"k": table_a[match_key].to_numpy(),
                      "a": has_references(table_a, predicate, count_unlinked)})
    b = pd.DataFrame({"k": table_b[match_key].to_numpy(),
                      "b": has_references(table_b, predicate, count_unlinked)})
    j = a.merge(b, on="k", how="inner")
    ra, cb = j["a"].to_numpy(), j["b"].to_numpy()
    return ContingencyTable2x2(int((ra & cb).sum()), int((ra & ~cb).sum()),
                               int((~ra & cb).sum()), int((~ra & ~cb).sum()),
                               labels[0], labels[1])


def write_json(obj, dest) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (set, frozenset)):
        return sorted(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
