"""Scenario configs, experiment runners, and report/CSV emission.

A scenario is a single JSON document::

    {"version": 1, "experiment": "check_quadruples", "seed": 7,
     "surface": {"family": "quadratic_form", "dimension": 2, "params": {...}},
     "region": {"center": [0, 0], "radius": 0.5},
     "quadruples": {"count": 100}}

Every random choice is derived from ``seed`` by name, so a scenario run twice
writes byte-identical ``report.json`` and CSV files. Wall-clock timings go to
a separate ``timings.json``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from ._random import derive_seed, rng_for
from .curvature import PAIR_NAMES, SearchOptions, sample_quadruple_condition, search_violation
from .errors import ConfigValidationError, ConvexCurvError
from .functions import FunctionSpec, Region, convexity_check, spec_from_dict
from .metric import DistanceOptions, GraphSurface, distance_matrix
from .regularization import InfSupConvolution, Mollified, regularization_report

SCHEMA_VERSION = 1
EXPERIMENTS = ("check_quadruples", "distance", "search_violation", "mollify_convergence",
               "infsup_convergence", "boundary_chart", "full_pipeline")
#: values below this are treated as roundoff by the "decreasing" flag
MONOTONE_ATOL = 1e-9

_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_point = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_ladder = {"type": "array", "items": _pos, "minItems": 1}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "required": ["version", "seed", "surface", "region"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "surface": {"type": "object", "required": ["family", "dimension"],
                    "properties": {"family": {"type": "string"}, "dimension": _pos_int,
                                   "params": {"type": "object"}}},
        "region": {"type": "object", "required": ["center", "radius"], "additionalProperties": False,
                   "properties": {"center": _point, "radius": _pos}},
        "lipschitz": _pos,
        "distance": {"type": "object", "additionalProperties": False,
                     "properties": {"k_max": {"type": "integer", "minimum": 2}, "m": _pos_int, "tol": _pos,
                                    "multistart": _pos_int, "m_max": _pos_int,
                                    "max_iter": _pos_int}},
        "points": {"type": "array", "items": _point},
        "point_count": {"type": "integer", "minimum": 2},
        "quadruples": {"type": "object", "additionalProperties": False,
                       "properties": {"count": _pos_int, "histogram_bins": _pos_int}},
        "search": {"type": "object", "additionalProperties": False,
                   "properties": {"seeds": _pos_int, "initial_step": _pos, "min_step": _pos,
                                  "max_evals": _pos_int}},
        "mollify": {"type": "object", "additionalProperties": False,
                    "properties": {"ladder": _ladder, "probes": _pos_int, "length_paths": _pos_int,
                                   "quadrature": {"type": "object"}}},
        "infsup": {"type": "object", "additionalProperties": False,
                   "properties": {"ladder": _ladder, "probes": _pos_int, "grid": {"type": "integer", "minimum": 3},
                                  "zoom": {"type": "integer", "minimum": 3},
                                  "search_radius": _pos}},
        "chart": {"type": "object", "additionalProperties": False,
                  "properties": {"points": {"type": "array", "items": {"type": "number"}},
                                 "convexity_samples": _pos_int}},
    },
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate_config(config: dict) -> dict:
    """Schema plus semantic checks; raises :class:`ConfigValidationError` naming the field."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = _path(err.absolute_path)
        raise ConfigValidationError(err.message, path)
    n = config["surface"]["dimension"]
    if len(config["region"]["center"]) != n:
        raise ConfigValidationError("dimension does not match surface.dimension", "region.center")
    for i, p in enumerate(config.get("points", [])):
        if len(p) != n:
            raise ConfigValidationError(f"expected dimension {n}", f"points[{i}]")
    R = config["region"]["radius"]
    for key in ("mollify", "infsup"):
        ladder = config.get(key, {}).get("ladder", [])
        for i in range(1, len(ladder)):
            if not ladder[i] < ladder[i - 1]:
                raise ConfigValidationError("ladder must be strictly decreasing",
                                            f"{key}.ladder[{i}]")
    for i, d in enumerate(config.get("mollify", {}).get("ladder", [])):
        if not d < R / 2:
            raise ConfigValidationError(f"delta={d} must be < R/2 = {R / 2}",
                                        f"mollify.ladder[{i}]")
    try:
        DistanceOptions.from_dict(config.get("distance", {}))
    except ConvexCurvError as exc:
        raise ConfigValidationError(str(exc), "distance") from exc
    try:
        spec_from_dict(config["surface"])
    except (ConvexCurvError, KeyError, TypeError, ValueError) as exc:
        raise ConfigValidationError(str(exc), "surface") from exc
    return config


def load_config(path: str | Path) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"invalid JSON ({exc})", "<root>") from exc
    return config


# --------------------------------------------------------------------------
# JSON / CSV helpers


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars/arrays become Python, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# experiment units


@dataclass
class ConvergenceTable:
    kind: str
    rows: list[dict]
    reports: list[dict]
    flags: dict[str, dict[str, bool]]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": self.rows, "reports": self.reports, "flags": self.flags}


def monotonicity_flags(values: list[float | None]) -> dict[str, bool]:
    """``decreasing`` allows ties only once both values are below the roundoff floor."""
    vals = [v for v in values if v is not None and math.isfinite(v)]
    pairs = list(zip(vals, vals[1:]))
    return {"strictly_decreasing": bool(pairs) and all(b < a for a, b in pairs),
            "decreasing": bool(pairs) and all(b < a or max(a, b) <= MONOTONE_ATOL for a, b in pairs)}


def build_regularizer(kind: str, original: FunctionSpec, level: float, region: Region,
                      options: dict) -> FunctionSpec:
    if kind == "mollified":
        return Mollified(original, level, options.get("quadrature") or {})
    if kind == "inf_sup":
        radius = options.get("search_radius")
        if radius is None:
            radius = region.radius + 3.0 * max(1.0, options.get("lipschitz", 1.0)) * level
        return InfSupConvolution(original, level, Region(region.center, radius), None,
                                 options.get("grid"), options.get("zoom"))
    raise ValueError(f"unknown regularizer {kind!r}")


def convergence_experiment(original: FunctionSpec, kind: str, ladder: list[float], region: Region,
                           probes: int = 64, rng_seed: int = 0, options: dict | None = None) -> ConvergenceTable:
    """One regularization report per level, plus monotonicity flags per column."""
    options = dict(options or {})
    if any(not b < a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly decreasing")
    reports = []
    for level in ladder:
        reg = build_regularizer(kind, original, level, region, options)
        rep = regularization_report(original, reg, region, probes, derive_seed(rng_seed, "ladder", kind),
                                    length_paths=options.get("length_paths", 4))
        reports.append(rep)
    rows = [r.row() for r in reports]
    flags = {col: monotonicity_flags([row[col] for row in rows])
             for col in ("sup_dev", "grad_dev", "length_dev")}
    flags["lipschitz"] = {"ratio_le_1": all(r.lip_ratio <= 1 + 1e-6 for r in reports)}
    flags["convexity"] = {"no_violations": all(r.convexity_violations == 0 for r in reports)}
    if kind == "mollified":
        flags["sup_dev"]["within_L_level"] = all(r.sup_dev <= r.lipschitz * r.level * (1 + 1e-9) for r in reports)
    if kind == "inf_sup":
        flags["second_diff_max"] = {"within_bound": all(r.second_diff_max <= r.second_diff_bound * (1 + 1e-6)
                                                        for r in reports)}
    return ConvergenceTable(kind, rows, [r.to_dict() for r in reports], flags)


def _histogram(excesses: list[float], bins: int) -> list[list[float]]:
    vals = np.array([e for e in excesses if math.isfinite(e)], dtype=float)
    if vals.size == 0:
        return []
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins)]


@dataclass
class Context:
    config: dict
    surface: GraphSurface
    region: Region
    opts: DistanceOptions
    seed: int
    jobs: int = 1
    tables: dict[str, tuple[list[str], list[list[Any]]]] = field(default_factory=dict)


def _run_quadruples(ctx: Context) -> dict:
    qcfg = ctx.config.get("quadruples", {})
    agg = sample_quadruple_condition(ctx.surface, ctx.region, qcfg.get("count", 100), ctx.opts,
                                     derive_seed(ctx.seed, "quadruples"), ctx.jobs)
    n = ctx.surface.dimension
    header = ["quad_id"]
    for name in PAIR_NAMES:
        header += [f"d_{name}_value", f"d_{name}_lower", f"d_{name}_upper"]
    header += ["angle_bac", "angle_cap", "angle_pab", "excess", "slack", "verdict"]
    header += [f"{name}{i}" for name in "abcp" for i in range(n)]
    rows = []
    for i, r in enumerate(agg.reports):
        row: list[Any] = [i]
        for e in r.distances:
            row += [e.value, e.lower_bound, e.upper_bound]
        row += [*r.angles, r.excess, r.slack, r.verdict.value, *r.quad.as_array().ravel().tolist()]
        rows.append(row)
    ctx.tables["quadruples"] = (header, rows)
    excesses = [r.excess for r in agg.reports]
    ctx.tables["excess_histogram"] = (["bin_left", "bin_right", "count"],
                                      _histogram(excesses, qcfg.get("histogram_bins", 20)))
    out = agg.to_dict()
    out["nonfinite_excess"] = sum(1 for e in excesses if not math.isfinite(e))
    return out


def _points(ctx: Context) -> np.ndarray:
    if "points" in ctx.config:
        return np.asarray(ctx.config["points"], dtype=float)
    return ctx.region.sample(rng_for(ctx.seed, "points"), ctx.config.get("point_count", 4))


def _run_distance(ctx: Context) -> dict:
    P = _points(ctx)
    D = distance_matrix(ctx.surface, P, ctx.opts.with_seed(derive_seed(ctx.seed, "distance")), ctx.jobs)
    k = len(P)
    rows = []
    for i in range(k):
        for j in range(i + 1, k):
            e = D[i][j]
            rows.append([i, j, e.value, e.lower_bound, e.upper_bound, e.error, e.k, e.m, e.converged])
    ctx.tables["distances"] = (["i", "j", "value", "lower", "upper", "error", "k", "m", "converged"], rows)
    return {"points": P.tolist(),
            "matrix": [[D[i][j].value for j in range(k)] for i in range(k)],
            "pairs": [{"i": i, "j": j, **{kk: v for kk, v in D[i][j].to_dict().items()}}
                      for i in range(k) for j in range(i + 1, k)]}


def _run_search(ctx: Context) -> dict:
    scfg = ctx.config.get("search", {})
    rep = search_violation(ctx.surface, ctx.region, ctx.opts, derive_seed(ctx.seed, "search"),
                           SearchOptions(**scfg))
    n = ctx.surface.dimension
    ctx.tables["search_violation"] = (
        ["excess", "slack", "margin", "verdict", *[f"{c}{i}" for c in "abcp" for i in range(n)]],
        [[rep.excess, rep.slack, rep.margin, rep.verdict.value, *rep.quad.as_array().ravel().tolist()]])
    out = rep.to_dict(with_witnesses=True)
    out["margin"] = rep.margin
    return out


def _run_ladder(ctx: Context, kind: str) -> dict:
    key = "mollify" if kind == "mollified" else "infsup"
    cfg = dict(ctx.config.get(key, {}))
    ladder = cfg.pop("ladder", [0.2, 0.1, 0.05, 0.025] if key == "mollify" else [0.1, 0.05, 0.02])
    probes = cfg.pop("probes", 64)
    cfg.setdefault("lipschitz", ctx.surface.lipschitz)
    table = convergence_experiment(ctx.surface.function, kind, ladder, ctx.region, probes,
                                   derive_seed(ctx.seed, key), cfg)
    cols = ["level", "sup_dev", "lip_ratio", "convexity_gap", "grad_dev", "length_dev", "second_diff_max"]
    ctx.tables[f"{key}_convergence"] = (cols, [[row[c] for c in cols] for row in table.rows])
    return table.to_dict()


def _run_chart(ctx: Context) -> dict:
    spec = ctx.surface.function
    ccfg = ctx.config.get("chart", {})
    pts = ccfg.get("points", [0.0, 0.3, 0.6]) if spec.dimension == 1 else []
    values = [[t, float(spec(np.array([t])))] for t in pts]
    conv = convexity_check(spec, ctx.region, ccfg.get("convexity_samples", 2000), 1e-9,
                           derive_seed(ctx.seed, "chart-convexity"))
    ctx.tables["chart_values"] = (["t", "value"], values)
    return {"values": values, "convexity": conv.to_dict(), "quadruples": _run_quadruples(ctx)}


def _run_pipeline(ctx: Context) -> dict:
    out = {"distance": _run_distance(ctx), "quadruples": _run_quadruples(ctx)}
    if ctx.surface.function.convex:
        if "mollify" in ctx.config:
            out["mollify"] = _run_ladder(ctx, "mollified")
        if "infsup" in ctx.config:
            out["infsup"] = _run_ladder(ctx, "inf_sup")
    return out


RUNNERS: dict[str, Callable[[Context], dict]] = {
    "check_quadruples": _run_quadruples,
    "distance": _run_distance,
    "search_violation": _run_search,
    "mollify_convergence": lambda ctx: _run_ladder(ctx, "mollified"),
    "infsup_convergence": lambda ctx: _run_ladder(ctx, "inf_sup"),
    "boundary_chart": _run_chart,
    "full_pipeline": _run_pipeline,
}


# --------------------------------------------------------------------------
# orchestration


@dataclass
class RunReport:
    config: dict
    status: str
    results: dict
    manifest: list[str]
    timings: dict[str, float]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        """Deterministic content; timings are kept out of it on purpose."""
        return {"version": SCHEMA_VERSION, "config": self.config, "status": self.status, "error": self.error,
                "results": self.results, "manifest": self.manifest}


def emit_plot_data(experiment: str, tables: dict[str, tuple[list[str], list[list[Any]]]],
                   out_dir: str | Path) -> list[str]:
    """Write one headered CSV per table; returns the file names written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for key in sorted(tables):
        header, rows = tables[key]
        name = f"{experiment}_{key}.csv"
        (out_dir / name).write_text(_csv_text(header, rows))
        names.append(name)
    return names


def run_scenario(config: dict, out_dir: str | Path | None = None, seed: int | None = None,
                 jobs: int = 1, experiment: str | None = None) -> RunReport:
    """Validate, run, and write ``report.json``, ``timings.json`` and CSV tables.

    Validation problems raise :class:`ConfigValidationError`; failures during
    the run produce a report with ``status == "failed"`` and whatever results
    were finished.
    """
    config = copy.deepcopy(config)
    if seed is not None:
        config["seed"] = int(seed)
    if experiment is not None:
        config["experiment"] = experiment
    config.setdefault("experiment", "full_pipeline")
    validate_config(config)
    target = out_dir or config.get("output")
    if target is None:
        raise ConfigValidationError("no output directory given", "output")
    out_dir = Path(target)
    out_dir.mkdir(parents=True, exist_ok=True)

    experiment = config["experiment"]
    s = int(config["seed"])
    timings: dict[str, float] = {}
    results: dict = {}
    status, error = "ok", None
    ctx = None
    t0 = time.perf_counter()
    try:
        spec = spec_from_dict(config["surface"])
        region = Region.from_dict(config["region"])
        if not region.within(spec.domain):
            raise ConfigValidationError("not inside the function's domain", "region")
        surface = GraphSurface.build(spec, region, config.get("lipschitz"), 2000, derive_seed(s, "lipschitz"))
        opts = DistanceOptions.from_dict(config.get("distance", {})).with_seed(derive_seed(s, "distance-options"))
        ctx = Context(config, surface, region, opts, s, jobs)
        results = {"surface": {"lipschitz": surface.lipschitz, "bilipschitz": surface.bilipschitz},
                   experiment: RUNNERS[experiment](ctx)}
    except ConfigValidationError:
        raise
    except (ConvexCurvError, ArithmeticError, ValueError) as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
    timings[experiment] = time.perf_counter() - t0

    files = emit_plot_data(experiment, ctx.tables if ctx else {}, out_dir)
    manifest = sorted(files + ["report.json", "timings.json"])
    report = RunReport(config, status, results, manifest, timings, error)
    (out_dir / "report.json").write_text(dumps(report.to_dict()))
    (out_dir / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2) + "\n")
    return report
