"""``cdkit`` command-line front end.

Every subcommand writes into an output directory together with a
``manifest.json`` recording the seed, the resolved configuration and its
hash, input and output checksums and library versions. Nothing
time-dependent is recorded, so reruns are byte-identical.

Settings come from, in increasing priority: built-in defaults, an INI file
given with ``--config`` (one section per subcommand), and command-line
flags. ``CDKIT_WORKERS`` sets the default worker count.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .audit import (Crosswalk, FilterCriteria, apply_crosswalk, coverage_contingency,
                    filter_corpus, group_share, write_json)
from .graph import ValidationPolicy, load_graph, validate, write_edges, write_nodes
from .metrics import (MetricConfig, attach_metadata, compute_all, percentile_normalize,
                      read_metrics, write_metrics)
from .nullmodel import verify_cocitation, verify_limiting_cd
from .rewire import RewireConfig, build_ensemble
from .stats import DesignSpec, build_design, fit_design, predict_years, trend_slope, yearly_means
from .synth import SyntheticSpec, configuration_corpus, generate_synthetic

log = logging.getLogger("cdkit")

WORKERS_ENV = "CDKIT_WORKERS"
POLICIES = {"default": ValidationPolicy, "strict": ValidationPolicy.strict,
            "lenient": ValidationPolicy.lenient}
YEARLY_METRICS = ("cd", "cd_nok", "cyg", "mean_ref_age")


class CliError(Exception):
    pass


# -- settings resolution ------------------------------------------------------

def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_or_none(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _list(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return list(text)
    return [s.strip() for s in str(text).split(",") if s.strip()]


class Settings:
    """Flag value if given, else config-file value, else default."""

    def __init__(self, args, cfg: configparser.ConfigParser, section: str):
        self.args = args
        self.cfg = cfg
        self.section = section
        self.resolved = {}

    def get(self, name, default=None, conv=str):
        flag = getattr(self.args, name, None)
        if flag is not None:
            value = flag
        elif self.cfg.has_option(self.section, name):
            value = conv(self.cfg.get(self.section, name))
        elif self.cfg.has_option("run", name):
            value = conv(self.cfg.get("run", name))
        else:
            value = default
        self.resolved[name] = sorted(value) if isinstance(value, (set, frozenset)) else value
        return value


def _load_config(path):
    cfg = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"input not found: {path}")
        cfg.read(path, encoding="utf-8")
    return cfg


def _default_workers():
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


# -- manifest and output ------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions():
    import numba
    import scipy
    return {"cdkit": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "numba": numba.__version__}


class Run:
    def __init__(self, command, out_dir, overwrite):
        self.command = command
        self.out = Path(out_dir)
        if self.out.exists():
            if not self.out.is_dir():
                raise CliError(f"output path exists and is not a directory: {self.out}")
            if any(self.out.iterdir()) and not overwrite:
                raise CliError(f"output directory not empty: {self.out} (use --overwrite)")
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.inputs = {}
        self.notes = []

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def add_input(self, label, path):
        if path is None:
            return None
        if not Path(path).is_file():
            raise FileNotFoundError(f"input not found: {path}")
        self.inputs[label] = {"path": os.path.basename(str(path)), "sha256": _sha256(path)}
        return path

    def finish(self, settings: dict, seed=None):
        # where the run wrote to is not part of what it computed
        settings = {k: v for k, v in settings.items() if k not in ("out", "overwrite")}
        config = json.dumps(settings, sort_keys=True, default=str)
        manifest = {
            "command": self.command,
            "seed": seed,
            "config": json.loads(config),
            "config_hash": hashlib.sha256(config.encode()).hexdigest(),
            "inputs": self.inputs,
            "outputs": {n: _sha256(self.out / n) for n in sorted(set(self.outputs))},
            "notes": self.notes,
            "versions": _versions(),
        }
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_csv(frame: pd.DataFrame, path):
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n", float_format="%.12g")


def _load(run, s):
    nodes = run.add_input("nodes", s.get("nodes"))
    edges = run.add_input("edges", s.get("edges"))
    if nodes is None or edges is None:
        raise CliError("--nodes and --edges are required")
    policy = s.get("policy", "default")
    if policy not in POLICIES:
        raise CliError(f"policy must be one of {sorted(POLICIES)}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        graph = load_graph(nodes, edges, POLICIES[policy]())
    run.notes += [str(w.message) for w in caught]
    return graph


def _metric_config(s):
    return MetricConfig(window=s.get("window", 5, int), threshold=s.get("threshold", 1, int),
                        include_same_year=s.get("include_same_year", True, _bool))


def _yearly_percentiles(table):
    parts = []
    for m in YEARLY_METRICS:
        frame = pd.DataFrame({"year": table["year"], "v": percentile_normalize(table[m])})
        ym = yearly_means(frame, "v")
        ym.insert(0, "metric", m + "_percentile")
        parts.append(ym)
    return pd.concat(parts, ignore_index=True)


# -- subcommands --------------------------------------------------------------

def cmd_metrics(args, cfg):
    s = Settings(args, cfg, "metrics")
    run = Run("metrics", s.get("out"), s.get("overwrite", False, _bool))
    graph = _load(run, s)
    mc = _metric_config(s)
    workers = args.workers or _default_workers()
    table = compute_all(graph, mc, workers=workers)
    write_metrics(table, run.path("metrics.csv"))
    write_json({"load": graph.load_report.to_dict(), "graph": validate(graph).to_dict(),
                "nodes": len(graph), "edges": graph.n_edges},
               run.path("validation.json"))
    _write_csv(_yearly_percentiles(table), run.path("yearly_percentiles.csv"))
    run.finish(s.resolved)


def cmd_rewire(args, cfg):
    s = Settings(args, cfg, "rewire")
    run = Run("rewire", s.get("out"), s.get("overwrite", False, _bool))
    graph = _load(run, s)
    mc = _metric_config(s)
    rc = RewireConfig(replicates=s.get("replicates", 10, int),
                      swaps_per_edge=s.get("swaps_per_edge", 10.0, float),
                      seed=s.get("seed", 0, int))
    write_reps = s.get("write_edges", False, _bool)
    ens = build_ensemble(graph, rc, mc, workers=args.workers or _default_workers(),
                         keep_edges=write_reps)
    _write_csv(ens.summary_frame(), run.path("ensemble_summary.csv"))
    if write_reps:
        width = len(str(rc.replicates - 1))
        for k, (src, dst) in enumerate(ens.replicate_edges):
            write_edges(graph.with_edges(src, dst), run.path(f"edges_rep{k:0{width}d}.csv"))
    run.finish(s.resolved, seed=rc.seed)


def cmd_nullcheck(args, cfg):
    s = Settings(args, cfg, "nullcheck")
    run = Run("nullcheck", s.get("out"), s.get("overwrite", False, _bool))
    graph = _load(run, s)
    seed = s.get("seed", 0, int)
    years = sorted(set(graph.years.tolist()))
    t_c = s.get("citing_year", years[-1] if years else None, int)
    t_b = s.get("cited_year", years[-2] if len(years) > 1 else None, int)
    if t_c is None or t_b is None:
        raise CliError("graph needs at least two publication years")
    report = verify_cocitation(graph, t_b, t_c, draws=s.get("draws", 1000, int), seed=seed,
                               swaps_per_edge=s.get("swaps_per_edge", 10.0, float),
                               min_count=s.get("min_count", 30, int),
                               n_se=s.get("n_se", 3.0, float))
    reps = s.get("replicates", 10, int)
    if reps > 0:
        ens = build_ensemble(graph, RewireConfig(reps, s.get("swaps_per_edge", 10.0, float), seed),
                             _metric_config(s), workers=args.workers or _default_workers())
        report["limiting_cd"] = verify_limiting_cd(ens)
        report["rewired_mean"] = {q: float(np.nanmean(ens.replicates[q]))
                                  for q in ("n_j", "cd", "cd_nok")}
    write_json(report, run.path("nullcheck.json"))
    run.finish(s.resolved, seed=seed)


def cmd_regress(args, cfg):
    s = Settings(args, cfg, "regress")
    run = Run("regress", s.get("out"), s.get("overwrite", False, _bool))
    table = read_metrics(run.add_input("metrics", s.get("metrics")))
    graph = None
    if s.get("nodes") is not None or s.get("edges") is not None:
        graph = _load(run, s)
    random_path = run.add_input("random", s.get("random_summary"))
    if random_path is not None:
        rnd = pd.read_csv(random_path, dtype={"id": str})
        rnd = rnd[rnd["quantity"] == "cd"][["id", "random_mean"]]
        table = table.merge(rnd.rename(columns={"random_mean": "cd_random"}), on="id", how="left")
    cluster = s.get("cluster_key")
    spec = DesignSpec(response=s.get("response", "cd"),
                      year_dummies=s.get("year_dummies", True, _bool),
                      base_year=s.get("base_year", None, _int_or_none),
                      controls=tuple(_list(s.get("controls", [], _list)) or ()),
                      fixed_effects=s.get("fixed_effects") or None,
                      cluster_key=cluster or None,
                      se_kind=s.get("se_kind", "clustered" if cluster else "robust_hc1"),
                      fe_method=s.get("fe_method") or None,
                      fe_threshold=s.get("fe_threshold", 1000, int))
    design = build_design(table, graph, spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_design(design)
    run.notes += [str(w.message) for w in caught]
    fit.to_json(run.path("fit.json"))
    _write_csv(predict_years(fit, design)[["year", "predicted", "ci_low", "ci_high"]],
               run.path("predictions.csv"))
    trend_metrics = _list(s.get("trend", [], _list)) or []
    if trend_metrics:
        rows = {}
        for m in trend_metrics:
            if m not in table:
                raise CliError(f"trend metric {m!r} absent from metrics table")
            pct = percentile_normalize(table[m])
            tf = trend_slope(zip(table["year"].tolist(), pct.tolist()), se_kind=spec.se_kind
                             if spec.se_kind != "clustered" else "robust_hc1")
            rows[m] = tf.to_dict()
        write_json(rows, run.path("trend.json"))
    run.finish(s.resolved)


def _crosswalk(ref, unmapped):
    if ref is None or ref == "none":
        return None
    if Path(ref).is_file():
        return Crosswalk.from_csv(ref, unmapped)
    return Crosswalk.builtin(ref, unmapped)


def cmd_audit(args, cfg):
    s = Settings(args, cfg, "audit")
    run = Run("audit", s.get("out"), s.get("overwrite", False, _bool))
    table = read_metrics(run.add_input("metrics", s.get("metrics")))
    if s.get("nodes") is not None:
        graph = _load(run, s)
        table = attach_metadata(table, graph)
    unmapped = s.get("unmapped", "keep_as_other")
    reports = []
    for column, default in (("doctype", "wos_doctypes"), ("field", "none")):
        cw = _crosswalk(s.get(f"{column}_crosswalk", default), unmapped)
        if cw is not None:
            table, rep = apply_crosswalk(table, cw, column)
            reports.append(rep)
    write_json(reports, run.path("crosswalk_report.json"))

    include_doctypes = s.get("include_doctypes", ["Research articles"], _list)
    include_fields = s.get("include_fields", None, _list)
    field_column = "field_category" if "field_category" in table else "field"
    crit = FilterCriteria(
        include_doctypes=frozenset(include_doctypes) if include_doctypes else None,
        include_fields=frozenset(include_fields) if include_fields else None,
        exclude_languages=frozenset(s.get("exclude_languages", [], _list) or ()),
        exclude_zero_bcite=s.get("exclude_zero_bcite", False, _bool),
        exclude_cd_equal_one=s.get("exclude_cd_equal_one", False, _bool),
        year_min=s.get("year_min", None, _int_or_none),
        year_max=s.get("year_max", None, _int_or_none),
        doctype_column="doctype_category" if "doctype_category" in table else "doctype",
        field_column=field_column)
    kept, frep = filter_corpus(table, crit)
    write_json(frep, run.path("filter_report.json"))
    write_metrics(kept, run.path("filtered_metrics.csv"))

    keys = _list(s.get("group_by", [field_column, "year"], _list))
    for pred in ("zero_bcite", "cd_equals_one"):
        _write_csv(group_share(table, keys, pred), run.path(f"share_{pred}.csv"))

    other = run.add_input("compare", s.get("compare"))
    if other is not None:
        tb = read_metrics(other)
        nodes_b = run.add_input("compare_nodes", s.get("compare_nodes"))
        if nodes_b is not None and "unlinked_ref_count" not in tb:
            from .graph import read_nodes
            meta = pd.DataFrame({"id": [w.id for w in read_nodes(nodes_b)],
                                 "unlinked_ref_count": [w.unlinked_ref_count
                                                        for w in read_nodes(nodes_b)]})
            tb = tb.merge(meta, on="id", how="left")
        ct = coverage_contingency(table, tb, s.get("match_key", "id"),
                                  count_unlinked=s.get("count_unlinked", True, _bool))
        write_json(ct.to_dict(), run.path("coverage.json"))
        _write_csv(ct.to_frame(), run.path("coverage.csv"))
    run.finish(s.resolved)


def cmd_synth(args, cfg):
    s = Settings(args, cfg, "synth")
    run = Run("synth", s.get("out"), s.get("overwrite", False, _bool))
    seed = s.get("seed", 0, int)
    model = s.get("model", "growth")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if model == "growth":
            d = SyntheticSpec()
            spec = SyntheticSpec(
                start_year=s.get("start_year", d.start_year, int),
                n_years=s.get("n_years", d.n_years, int),
                works_first_year=s.get("works_per_year", d.works_first_year, int),
                growth_rate=s.get("growth_rate", d.growth_rate, float),
                ref_mean=s.get("ref_mean", d.ref_mean, float),
                ref_dispersion=s.get("ref_dispersion", d.ref_dispersion, float),
                closure_rate=s.get("closure_rate", d.closure_rate, float),
                closure_trend=s.get("closure_trend", d.closure_trend, float),
                attachment=s.get("attachment", d.attachment, float))
            graph = generate_synthetic(spec, seed)
        elif model == "configuration":
            graph = configuration_corpus(s.get("works_per_year", 1000, int),
                                         n_years=s.get("n_years", 3, int),
                                         ref_mean=s.get("ref_mean", 3.0, float),
                                         start_year=s.get("start_year", 2000, int), seed=seed)
        else:
            raise CliError("model must be 'growth' or 'configuration'")
    run.notes += [str(w.message) for w in caught]
    write_nodes(graph, run.path("nodes.csv"))
    write_edges(graph, run.path("edges.csv"))
    run.finish(s.resolved, seed=seed)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; sections named after subcommands")
    common.add_argument("--out", help="output directory")
    common.add_argument("--overwrite", action="store_const", const=True,
                        help="allow writing into a non-empty output directory")
    common.add_argument("--workers", type=int,
                        help=f"worker threads (default ${WORKERS_ENV} or 1); never changes output")
    common.add_argument("-v", "--verbose", action="store_true")

    graph_in = argparse.ArgumentParser(add_help=False)
    graph_in.add_argument("--nodes", help="node table (id,year,...)")
    graph_in.add_argument("--edges", help="edge table (citing_id,cited_id)")
    graph_in.add_argument("--policy", choices=sorted(POLICIES))

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument("--window", type=int)
    window.add_argument("--threshold", type=int)
    window.add_argument("--no-same-year", dest="include_same_year", action="store_const",
                        const=False, help="exclude works from the focal year")

    p = argparse.ArgumentParser(prog="cdkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cdkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("metrics", parents=[common, graph_in, window],
                        help="CD index family for every work")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("rewire", parents=[common, graph_in, window],
                        help="rewired ensemble and per-work z-scores")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--swaps-per-edge", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--write-edges", action="store_const", const=True)
    sp.set_defaults(func=cmd_rewire)

    sp = sub.add_parser("nullcheck", parents=[common, graph_in, window],
                        help="check configuration-model predictions on one stratum")
    sp.add_argument("--cited-year", type=int)
    sp.add_argument("--citing-year", type=int)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--swaps-per-edge", type=float)
    sp.add_argument("--min-count", type=int)
    sp.add_argument("--n-se", type=float)
    sp.add_argument("--replicates", type=int, help="ensemble size for the limiting-CD check (0 skips)")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_nullcheck)

    sp = sub.add_parser("regress", parents=[common, graph_in],
                        help="OLS of a metric on year dummies and controls")
    sp.add_argument("--metrics", help="metrics table from 'cdkit metrics'")
    sp.add_argument("--random-summary", help="ensemble_summary.csv for the cd_random control")
    sp.add_argument("--response")
    sp.add_argument("--no-year-dummies", dest="year_dummies", action="store_const", const=False)
    sp.add_argument("--base-year", type=int)
    sp.add_argument("--controls", type=_list, help="comma-separated control names")
    sp.add_argument("--fixed-effects")
    sp.add_argument("--cluster-key")
    sp.add_argument("--se-kind", choices=["classical", "robust_hc0", "robust_hc1", "clustered"])
    sp.add_argument("--fe-method", choices=["dummy", "within"])
    sp.add_argument("--fe-threshold", type=int)
    sp.add_argument("--trend", type=_list, help="metrics whose pooled percentile gets a trend slope")
    sp.set_defaults(func=cmd_regress)

    sp = sub.add_parser("audit", parents=[common, graph_in],
                        help="crosswalks, filtering, prevalence shares, coverage tables")
    sp.add_argument("--metrics")
    sp.add_argument("--doctype-crosswalk", help="builtin name, CSV path or 'none'")
    sp.add_argument("--field-crosswalk", help="builtin name, CSV path or 'none'")
    sp.add_argument("--unmapped", choices=["keep_as_other", "drop", "error"])
    sp.add_argument("--include-doctypes", type=_list)
    sp.add_argument("--include-fields", type=_list)
    sp.add_argument("--exclude-languages", type=_list)
    sp.add_argument("--exclude-zero-bcite", action="store_const", const=True)
    sp.add_argument("--exclude-cd-equal-one", action="store_const", const=True)
    sp.add_argument("--year-min", type=int)
    sp.add_argument("--year-max", type=int)
    sp.add_argument("--group-by", type=_list)
    sp.add_argument("--compare", help="second metrics table for the coverage contingency")
    sp.add_argument("--compare-nodes", help="node table of the second corpus")
    sp.add_argument("--match-key")
    sp.add_argument("--no-count-unlinked", dest="count_unlinked", action="store_const",
                    const=False)
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    sp.add_argument("--model", choices=["growth", "configuration"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--start-year", type=int)
    sp.add_argument("--n-years", type=int)
    sp.add_argument("--works-per-year", type=int)
    sp.add_argument("--growth-rate", type=float)
    sp.add_argument("--ref-mean", type=float)
    sp.add_argument("--ref-dispersion", type=float)
    sp.add_argument("--closure-rate", type=float)
    sp.add_argument("--closure-trend", type=float)
    sp.add_argument("--attachment", type=float)
    sp.set_defaults(func=cmd_synth)
    return p


def _error_json(exc):
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        if args.out is None and cfg.has_option(args.command, "out"):
            args.out = cfg.get(args.command, "out")
        if args.out is None:
            raise CliError("--out is required")
        args.func(args, cfg)
    except Exception as exc:  # every failure becomes a JSON error and nonzero exit
        log.debug("failure", exc_info=True)
        err = _error_json(exc)
        print(json.dumps(err), file=sys.stderr)
        if args.out and Path(args.out).is_dir():
            with open(Path(args.out) / "error.json", "w", encoding="utf-8") as fh:
                json.dump(err, fh, indent=2)
                fh.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
