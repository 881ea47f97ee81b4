"""Command line front end: config ingestion, check orchestration, reports.

Usage::

    levysmooth run CONFIG [--workers N] [--out DIR] [--format json|csv] [--parallel-checks]
    levysmooth validate CONFIG
    levysmooth demo NAME [--workers N] [--out DIR] [--format json|csv]

Config schema (YAML)::

    seed: 7                         # default for checks without their own seed
    model:
      drift: 0.0                    # default 0
      horizon: 1.0
      sigma: 0.0                    # anything but 0 is out of scope
      nu:                           # finite mixture; total mass must be finite
        - {kind: atom, at: 1.0, mass: 2.0}
        - {kind: uniform, low: -2.0, high: -0.5, mass: 1.0}
    boxes:                          # name -> list of [t1, t2, x1, x2]
      A: [[0, 1, 0.5, 1.5]]
    functionals:                    # name -> expression source (docs/grammar.md)
      N: "count(A)"
    grids:                          # optional step coefficient grids
      h:
        cells: [A1, A2]             # names of disjoint boxes
        coefficients:               # unlisted entries are 0
          - {order: 1, cells: [0], value: 1.0}
    checks:
      - name: sandwich-N
        op: sandwich
        functional: N
        box: A
        samples: 100000
        seed: 11
        sigmas: 3                   # tolerance multiplier, default 3
    output:
      dir: out                      # overridden by $LEVYSMOOTH_OUT, then --out
      format: json
      paths: {count: 5, seed: 3}    # optional dump of sample paths

Check ops and their fields (``samples`` and ``seed`` where sampling happens):

    sandwich        functional, box [, expect: [a, b, d]]
    equivalence     functional, box
    mecke           functional, box [, expect]
    isometry        grid [, expect]
    orthogonality   grid, other
    covariance      boxes: [B1, B2]
    weighted_norm   functional, box, theta [, expect]
    fubini          functional, box, theta
    interpolation   functional, box, theta         (two-sided band)
    theta_integral  thetas, cs [, rtol]
    classify        (functional | counterexample: {lam, a}), box, theta, m [, expect]
    l2log           (functional | counterexample: {lam, a}), box, m [, expect]
    phi_star        lam [, expect, tol]
    young           points
    product_rule    functional, other, cases [, rtol]
    chain_rule      functional, map: {kind, lo, hi}, cases [, rtol]

Outputs in the output directory: ``report.json`` (or ``report.csv`` plus
``manifest.json``), ``timing.json`` with wall times, and plot tables
``<check>.surrogate.csv`` (s, surrogate), ``<check>.series.csv``
(m, partial_sum), ``<grid>.grid.csv`` (order, cells, value) and
``paths.csv`` (stream, t, x). Everything except ``timing.json`` is
byte-identical across reruns and worker counts.

Exit status: 0 when every check passes, 1 when some check fails, 2 for
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__, chaos, dsl, malliavin, orlicz, smoothness
from .estimate import Estimate, combined_stderr
from .model import BoxError, BoxSet, JumpModel, NuComponent, OutOfScopeError
from .simulate import ROLE_POINTS, SeedSpec, dump_paths, make_rng, sample_path

OUT_ENV = "LEVYSMOOTH_OUT"
DEFAULT_OUT = "levysmooth-out"
DEMOS = ("theorem31", "theorem41", "chaos", "orlicz", "rules")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


@dataclass
class Diagnostic:
    field: str
    line: int
    message: str

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.field}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(map(str, diagnostics)))


# -- loading ---------------------------------------------------------------


def _plain(node, path: str, lines: dict[str, int]):
    """YAML node -> plain data, recording the 1-based line of every field path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(k.value)
            out[key] = _plain(v, f"{path}.{key}" if path else key, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader(io.StringIO("")).construct_object(node, deep=True)


def load_config_text(text: str) -> tuple[dict, dict[str, int]]:
    lines: dict[str, int] = {}
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError([Diagnostic("<config>", mark.line + 1 if mark else 0, str(exc).splitlines()[0])]) from None
    if node is None:
        raise ConfigError([Diagnostic("<config>", 1, "empty config")])
    data = _plain(node, "", lines)
    if not isinstance(data, dict):
        raise ConfigError([Diagnostic("<config>", 1, "top level must be a mapping")])
    return data, lines


# -- validation ------------------------------------------------------------

REQUIRED = {
    "sandwich": ("functional", "box"),
    "equivalence": ("functional", "box"),
    "mecke": ("functional", "box"),
    "isometry": ("grid",),
    "orthogonality": ("grid", "other"),
    "covariance": ("boxes",),
    "weighted_norm": ("functional", "box", "theta"),
    "fubini": ("functional", "box", "theta"),
    "interpolation": ("functional", "box", "theta"),
    "theta_integral": ("thetas", "cs"),
    "classify": ("box", "theta"),
    "l2log": ("box",),
    "phi_star": ("lam",),
    "young": ("points",),
    "product_rule": ("functional", "other"),
    "chain_rule": ("functional", "map"),
}
SAMPLING = {
    "sandwich", "equivalence", "mecke", "isometry", "orthogonality", "covariance",
    "weighted_norm", "fubini", "interpolation", "product_rule", "chain_rule",
}
NEEDS_CERTIFICATE = {"equivalence", "weighted_norm", "fubini", "interpolation"}
TOP_KEYS = {"seed", "model", "boxes", "functionals", "grids", "checks", "output"}


@dataclass
class Experiment:
    """A validated config, ready to run."""

    model: JumpModel
    boxes: dict[str, BoxSet]
    functionals: dict[str, dsl.Functional]
    grids: dict[str, chaos.CoefficientGrid]
    checks: list[dict]
    seed: int | None
    out_dir: str
    fmt: str
    paths: dict | None
    digest: str
    data: dict = field(repr=False, default_factory=dict)

    @property
    def env(self) -> dsl.Env:
        return dsl.Env(self.model, self.boxes)


class _Collector:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines
        self.items: list[Diagnostic] = []

    def add(self, path: str, message: str, line: int | None = None):
        probe = path
        while line is None and probe:
            line = self.lines.get(probe)
            probe = probe.rsplit(".", 1)[0] if "." in probe else probe.rsplit("[", 1)[0] if "[" in probe else ""
        self.items.append(Diagnostic(path, line or 0, message))


def _number(c: _Collector, d: dict, key: str, path: str, default=None, positive=False, integer=False):
    v = d.get(key, default)
    if v is None:
        c.add(f"{path}.{key}", "required field missing", c.lines.get(path))
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        c.add(f"{path}.{key}", f"expected {'an integer' if integer else 'a number'}, got {v!r}")
        return None
    if positive and not v > 0:
        c.add(f"{path}.{key}", f"must be > 0, got {v!r}")
        return None
    return v


def _model(c: _Collector, raw) -> JumpModel | None:
    if not isinstance(raw, dict):
        c.add("model", "required mapping missing", 1)
        return None
    for k in raw:
        if k not in ("drift", "horizon", "sigma", "nu"):
            c.add(f"model.{k}", "unknown field")
    sigma = _number(c, raw, "sigma", "model", default=0.0)
    if sigma is not None and sigma != 0:
        c.add("model.sigma", f"out of scope: sigma = {sigma}; only the pure-jump case sigma = 0 is supported")
        return None
    drift = _number(c, raw, "drift", "model", default=0.0)
    horizon = _number(c, raw, "horizon", "model", positive=True)
    comps = []
    nu = raw.get("nu")
    if not isinstance(nu, list) or not nu:
        c.add("model.nu", "expected a non-empty list of components", c.lines.get("model"))
        return None
    for i, item in enumerate(nu):
        p = f"model.nu[{i}]"
        if not isinstance(item, dict):
            c.add(p, "expected a mapping")
            continue
        kind = item.get("kind")
        mass = item.get("mass")
        if isinstance(mass, (int, float)) and not math.isfinite(mass):
            c.add(f"{p}.mass", "out of scope: infinite jump intensity; nu must be a finite measure")
            continue
        try:
            if kind == "atom":
                comps.append(NuComponent.atom(item["at"], item["mass"]))
            elif kind == "uniform":
                comps.append(NuComponent.uniform(item["low"], item["high"], item["mass"]))
            else:
                c.add(f"{p}.kind", f"expected 'atom' or 'uniform', got {kind!r}")
        except KeyError as exc:
            c.add(f"{p}.{exc.args[0]}", "required field missing", c.lines.get(p))
        except (TypeError, ValueError) as exc:
            c.add(p, str(exc))
    if drift is None or horizon is None or len(comps) != len(nu):
        return None
    try:
        return JumpModel(float(drift), float(horizon), tuple(comps), float(sigma))
    except (OutOfScopeError, ValueError) as exc:
        c.add("model", str(exc))
        return None


def _boxes(c: _Collector, raw, model: JumpModel | None) -> dict[str, BoxSet]:
    out = {}
    if raw is None:
        return out
    if not isinstance(raw, dict):
        c.add("boxes", "expected a mapping of name -> rectangles")
        return out
    for name, rects in raw.items():
        p = f"boxes.{name}"
        if not isinstance(rects, list) or not rects:
            c.add(p, "expected a non-empty list of [t1, t2, x1, x2]")
            continue
        try:
            sides = []
            for j, r in enumerate(rects):
                if not (isinstance(r, list) and len(r) == 4 and all(isinstance(v, (int, float)) for v in r)):
                    raise BoxError(f"rectangle {j} must be [t1, t2, x1, x2]")
                sides.append(tuple(float(v) for v in r))
            box = BoxSet.of(*sides)
            if model is not None:
                model.check_box(box)
            out[name] = box
        except BoxError as exc:
            c.add(p, str(exc))
    return out


def _functionals(c: _Collector, raw, boxes) -> dict[str, dsl.Functional]:
    out = {}
    if raw is None:
        return out
    if not isinstance(raw, dict):
        c.add("functionals", "expected a mapping of name -> source")
        return out
    for name, src in raw.items():
        p = f"functionals.{name}"
        if not isinstance(src, str):
            c.add(p, "expected an expression string")
            continue
        try:
            out[name] = dsl.parse(src, boxes=set(boxes))
        except dsl.DSLError as exc:
            c.add(p, f"{exc.message} (column {exc.col} of {src!r})")
    return out


def _grids(c: _Collector, raw, boxes, model) -> dict[str, chaos.CoefficientGrid]:
    out = {}
    if raw is None:
        return out
    for name, g in (raw or {}).items():
        p = f"grids.{name}"
        if not isinstance(g, dict) or "cells" not in g:
            c.add(p, "expected a mapping with cells and coefficients")
            continue
        missing = [b for b in g["cells"] if b not in boxes]
        if missing:
            c.add(f"{p}.cells", f"undeclared box {missing[0]!r}")
            continue
        try:
            part = chaos.Partition(tuple(boxes[b] for b in g["cells"]))
            coeffs = g.get("coefficients") or []
            top = max([int(e["order"]) for e in coeffs] + [0])
            grid = chaos.CoefficientGrid.zeros(part, top)
            tensors = [np.array(t, dtype=float) for t in grid.tensors]
            for e in coeffs:
                n = int(e["order"])
                idx = tuple(int(i) for i in e["cells"])
                if len(idx) != n:
                    raise chaos.PartitionError(f"order {n} entry needs {n} cell indices, got {len(idx)}")
                tensors[n][idx] = float(e["value"])
            g0 = grid
            for n, t in enumerate(tensors):
                g0 = g0.with_tensor(n, t)
            out[name] = chaos.symmetrize(g0)
        except (chaos.PartitionError, BoxError, KeyError, IndexError, TypeError, ValueError) as exc:
            c.add(p, str(exc))
    return out


def _check_ref(c, p, spec, key, table, kind, declared=()):
    name = spec.get(key)
    if name in declared and name not in table:
        return False  # already diagnosed where it was declared
    if name not in table:
        c.add(f"{p}.{key}", f"undeclared {kind} {name!r}")
        return False
    return True


def validate_data(data: dict, lines: dict[str, int], digest: str = "") -> tuple[Experiment | None, list[Diagnostic]]:
    """Static validation without sampling; returns the experiment when clean."""
    c = _Collector(lines)
    for k in data:
        if k not in TOP_KEYS:
            c.add(k, "unknown top-level field")
    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64):
        c.add("seed", f"expected an integer in [0, 2^64), got {seed!r}")
        seed = None
    model = _model(c, data.get("model"))
    boxes = _boxes(c, data.get("boxes"), model)
    functionals = _functionals(c, data.get("functionals"), boxes)
    grids = _grids(c, data.get("grids"), boxes, model)
    env = dsl.Env(model, boxes) if model is not None else None
    declared = set(data.get("functionals") or {}) | set(data.get("grids") or {})

    checks = data.get("checks")
    if not isinstance(checks, list) or not checks:
        c.add("checks", "expected a non-empty list of checks", lines.get("checks", 1))
        checks = []
    names = set()
    for i, spec in enumerate(checks):
        p = f"checks[{i}]"
        if not isinstance(spec, dict):
            c.add(p, "expected a mapping")
            continue
        name, op = spec.get("name"), spec.get("op")
        if not isinstance(name, str) or not name:
            c.add(f"{p}.name", "required field missing", lines.get(p))
        elif name in names:
            c.add(f"{p}.name", f"duplicate check name {name!r}")
        names.add(name)
        if op not in REQUIRED:
            c.add(f"{p}.op", f"unknown op {op!r}; expected one of {', '.join(sorted(REQUIRED))}", lines.get(p))
            continue
        for key in REQUIRED[op]:
            if key not in spec:
                c.add(f"{p}.{key}", f"required field for op {op!r} missing", lines.get(p))
        if op in SAMPLING:
            key = "cases" if op in ("product_rule", "chain_rule") else "samples"
            s = spec.get(key)
            if isinstance(s, bool) or not isinstance(s, int) or s <= 0:
                c.add(f"{p}.{key}", f"budget must be a positive integer, got {s!r}", lines.get(p))
            if "seed" not in spec and seed is None:
                c.add(f"{p}.seed", "no seed given and no top-level seed to fall back on", lines.get(p))
        if "seed" in spec and (isinstance(spec["seed"], bool) or not isinstance(spec["seed"], int) or spec["seed"] < 0):
            c.add(f"{p}.seed", f"expected a nonnegative integer, got {spec['seed']!r}")
        sig = spec.get("sigmas", 3)
        if isinstance(sig, bool) or not isinstance(sig, (int, float)) or not sig > 0:
            c.add(f"{p}.sigmas", f"must be a positive number, got {sig!r}")
        if "theta" in spec:
            th = spec["theta"]
            hi_ok = op == "classify" or op == "weighted_norm"
            if isinstance(th, bool) or not isinstance(th, (int, float)) or not (0 < th < 1 or (hi_ok and th == 1)):
                c.add(f"{p}.theta", f"theta out of range: {th!r}")
        ok_f = "functional" not in spec or _check_ref(c, p, spec, "functional", functionals, "functional", declared)
        ok_b = "box" not in spec or _check_ref(c, p, spec, "box", boxes, "box")
        if "other" in spec:
            _check_ref(c, p, spec, "other", grids if op == "orthogonality" else functionals,
                       "grid" if op == "orthogonality" else "functional", declared)
        if "grid" in spec:
            _check_ref(c, p, spec, "grid", grids, "grid")
        if op == "covariance":
            bs = spec.get("boxes")
            if not (isinstance(bs, list) and len(bs) == 2):
                c.add(f"{p}.boxes", "expected two box names")
            else:
                for b in bs:
                    if b not in boxes:
                        c.add(f"{p}.boxes", f"undeclared box {b!r}")
        if op in ("classify", "l2log"):
            has_f, has_c = "functional" in spec, "counterexample" in spec
            if has_f == has_c:
                c.add(p, "give exactly one of functional or counterexample", lines.get(p))
            if has_c:
                ce = spec["counterexample"]
                if not (isinstance(ce, dict) and "lam" in ce and "a" in ce):
                    c.add(f"{p}.counterexample", "expected {lam, a}")
                elif not 1 < ce["a"] <= 2 or not ce["lam"] > 0:
                    c.add(f"{p}.counterexample", "needs lam > 0 and a in (1, 2]")
            m = spec.get("m", 1 << 16)
            if isinstance(m, bool) or not isinstance(m, int) or m < 16:
                c.add(f"{p}.m", f"truncation must be an integer >= 16, got {m!r}")
            if has_f and ok_f and ok_b and env is not None and spec["functional"] in functionals:
                f = functionals[spec["functional"]]
                if not dsl.depends_only_on_count(f, env, boxes[spec["box"]]):
                    if op == "l2log":
                        pass
                    elif "samples" not in spec:
                        c.add(f"{p}.samples", "Monte Carlo mode needs a sample budget", lines.get(p))
                    if "seed" not in spec and seed is None:
                        c.add(f"{p}.seed", "no seed given and no top-level seed", lines.get(p))
                    if op == "classify":
                        _certify(c, p, f, boxes[spec["box"]], env, spec)
        if op == "chain_rule" and "map" in spec:
            try:
                mp = spec["map"]
                malliavin.Lipschitz(mp["kind"], float(mp.get("lo", 0.0)), float(mp.get("hi", 0.0)))
            except (KeyError, TypeError, ValueError) as exc:
                c.add(f"{p}.map", str(exc))
        if op in NEEDS_CERTIFICATE and ok_f and ok_b and env is not None and spec.get("functional") in functionals:
            _certify(c, p, functionals[spec["functional"]], boxes[spec["box"]], env, spec)

    out = data.get("output") or {}
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        c.add("output.format", f"expected json or csv, got {fmt!r}")
    paths = out.get("paths")
    if paths is not None and not (
        isinstance(paths, dict) and isinstance(paths.get("count"), int) and paths["count"] > 0
        and isinstance(paths.get("seed", seed), int)
    ):
        c.add("output.paths", "expected {count: positive int, seed: int}")
    if c.items or model is None:
        return None, c.items
    exp = Experiment(
        model, boxes, functionals, grids, checks, seed, str(out.get("dir", DEFAULT_OUT)), fmt, paths, digest, data
    )
    return exp, []


def _certify(c, p, f, A, env, spec):
    rep = dsl.measurability(f, A, env)
    if not rep.certified:
        c.add(
            f"{p}.functional",
            f"{spec['functional']!r} is not certified measurable with respect to box {spec['box']!r}; "
            f"offending: {', '.join(rep.offending)}",
        )


def validate(path: str | os.PathLike) -> list[Diagnostic]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        return [Diagnostic("<config>", 0, f"cannot read {path}: {exc.strerror}")]
    try:
        data, lines = load_config_text(text)
    except ConfigError as exc:
        return exc.diagnostics
    return validate_data(data, lines)[1]


def load_experiment(path: str | os.PathLike) -> Experiment:
    raw = Path(path).read_bytes()
    data, lines = load_config_text(raw.decode())
    exp, diags = validate_data(data, lines, hashlib.sha256(raw).hexdigest())
    if diags:
        raise ConfigError(diags)
    return exp


# -- checks ----------------------------------------------------------------


@dataclass
class Outcome:
    value: object
    stderr: object
    bound: object
    passed: bool
    details: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # suffix -> (header, rows)


def _est(e: Estimate) -> dict:
    return {"value": e.value, "stderr": e.stderr}


def _close(est: Estimate, target: float, z: float) -> bool:
    return abs(est.value - target) <= z * est.stderr + 1e-12 * max(1.0, abs(target))


def _run_sandwich(exp, spec, f, A, z, workers):
    r = smoothness.sandwich_check(exp.model, f, A, spec["samples"], spec["seed"], exp.env, workers, z)
    ok = r.passed
    details = {"a": _est(r.a), "b": _est(r.b), "d": _est(r.d), "certified": r.certified,
               "lower_ok": r.lower_ok, "upper_ok": r.upper_ok}
    if "expect" in spec:
        hits = [_close(e, float(t), z) for e, t in zip((r.a, r.b, r.d), spec["expect"])]
        details["expect"] = [float(t) for t in spec["expect"]]
        details["expect_ok"] = hits
        ok = ok and all(hits)
    bound = [abs(r.a.value - r.b.value), r.a.value + r.b.value]
    return Outcome(r.d.value, r.d.stderr, bound, ok, details)


def _run_equivalence(exp, spec, f, A, z, workers):
    r = smoothness.equivalence_ratio(exp.model, f, A, spec["samples"], spec["seed"], exp.env, workers, z)
    return Outcome(r.ratio.value, r.ratio.stderr, list(r.band), r.passed, {"c": r.c})


def _run_mecke(exp, spec, f, A, z, workers):
    lhs, rhs = malliavin.mecke_check(exp.model, f, A, spec["samples"], spec["seed"], exp.env, workers)
    se = combined_stderr(lhs, rhs)
    ok = abs(lhs.value - rhs.value) <= z * se
    details = {"lhs": _est(lhs), "rhs": _est(rhs), "abs_diff": abs(lhs.value - rhs.value)}
    if "expect" in spec:
        t = float(spec["expect"])
        details["expect"] = t
        ok = ok and _close(lhs, t, z) and _close(rhs, t, z)
    return Outcome(lhs.value - rhs.value, se, z * se, ok, details)


def _grid_table(grid):
    rows = list(csv.reader(io.StringIO(chaos.dump_grid(grid))))
    return rows[0], rows[1:]


def _run_isometry(exp, spec, z, workers):
    grid = exp.grids[spec["grid"]]
    est, exact = chaos.isometry_check(exp.model, grid, spec["samples"], spec["seed"], workers)
    target = float(spec.get("expect", exact))
    ok = _close(est, target, z) and _close(est, exact, z)
    return Outcome(est.value, est.stderr, exact, ok, {"exact": exact},
                   {f"{spec['grid']}.grid": _grid_table(grid)})


def _run_orthogonality(exp, spec, z, workers):
    f, g = exp.grids[spec["grid"]], exp.grids[spec["other"]]
    est, exact = chaos.cross_check(exp.model, f, g, spec["samples"], spec["seed"], workers)
    return Outcome(est.value, est.stderr, exact, _close(est, exact, z), {"exact": exact})


def _run_covariance(exp, spec, z, workers):
    b1, b2 = (exp.boxes[b] for b in spec["boxes"])
    est, exact = chaos.covariance_check(exp.model, b1, b2, spec["samples"], spec["seed"], workers)
    return Outcome(est.value, est.stderr, exact, _close(est, exact, z), {"exact": exact})


def _run_weighted(exp, spec, f, A, z, workers):
    est = smoothness.weighted_norm(exp.model, f, A, spec["theta"], spec["samples"], spec["seed"], exp.env, workers)
    ok = True
    if "expect" in spec:
        ok = _close(est, float(spec["expect"]), z)
    return Outcome(est.value, est.stderr, spec.get("expect"), ok)


def _surrogate_table(exp, spec, f, A, workers):
    s = np.logspace(-3, 3, 61)
    sq = smoothness.surrogate_curve(exp.model, f, A, s, spec["samples"], spec["seed"], exp.env, workers)
    return ("s", "surrogate"), [(repr(float(a)), repr(float(math.sqrt(b)))) for a, b in zip(s, sq)]


def _run_fubini(exp, spec, f, A, z, workers):
    r = smoothness.fubini_check(exp.model, f, A, spec["theta"], spec["samples"], spec["seed"], exp.env, workers, z)
    details = {"interpolation_sq": _est(r.interpolation_sq), "weighted_sq": _est(r.weighted_sq),
               "quad_error": r.quad_error}
    return Outcome(r.difference.value, r.difference.stderr, r.tolerance, r.passed, details,
                   {f"{spec['name']}.surrogate": _surrogate_table(exp, spec, f, A, workers)})


def _run_interpolation(exp, spec, f, A, z, workers):
    r = smoothness.interpolation_band(exp.model, f, A, spec["theta"], spec["samples"], spec["seed"], exp.env,
                                      workers, z)
    return Outcome(r.ratio.value, r.ratio.stderr, list(r.band), r.passed, {"C": r.C, "quad_error": r.quad_error},
                   {f"{spec['name']}.surrogate": _surrogate_table(exp, spec, f, A, workers)})


def _run_theta_integral(exp, spec, z, workers):
    rtol = float(spec.get("rtol", 1e-6))
    rows, worst = [], 0.0
    for th in spec["thetas"]:
        for c in spec["cs"]:
            exact = smoothness.closed_form_theta_integral(float(c), float(th))
            quad = smoothness.theta_integral_quadrature(float(c), float(th))
            rel = abs(quad - exact) / exact
            worst = max(worst, rel)
            rows.append({"theta": th, "c": c, "exact": exact, "quadrature": quad, "rel_error": rel})
    return Outcome(worst, None, rtol, worst <= rtol, {"cases": rows})


def _phi(exp, spec):
    if "counterexample" in spec:
        ce = spec["counterexample"]
        return orlicz.counterexample_phi(float(ce["lam"]), float(ce["a"]))
    return exp.functionals[spec["functional"]]


def _series_table(scan):
    return ("m", "partial_sum"), [(str(m), repr(v)) for m, v in scan.trace]


def _run_classify(exp, spec, z, workers):
    q = smoothness.SmoothnessQuery(
        _phi(exp, spec), exp.boxes[spec["box"]], float(spec["theta"]), exp.env,
        int(spec.get("samples", 100_000)), int(spec.get("seed", 0)), int(spec.get("m", 1 << 16)),
    )
    v = smoothness.classify(q, workers)
    ok = v.status == spec.get("expect", v.status)
    tables = {}
    if v.mode == "exact-series":
        value, se = v.weighted_norm, None
        scan_tab = ("m", "partial_sum"), [(str(m), repr(float(s))) for m, s in v.diagnostics["trace"]]
        tables[f"{spec['name']}.series"] = scan_tab
        details = {"status": v.status, "mode": v.mode, "growth_exponent": v.diagnostics["growth_exponent"],
                   "growth_stderr": v.diagnostics["growth_stderr"]}
    else:
        value, se = v.weighted_norm.value, v.weighted_norm.stderr
        details = {"status": v.status, "mode": v.mode}
    details["expect"] = spec.get("expect")
    return Outcome(value, se, None, ok, details, tables)


def _run_l2log(exp, spec, z, workers):
    phi = _phi(exp, spec)
    res = orlicz.l2log_norm(exp.model, phi, int(spec.get("samples", 100_000)), int(spec.get("seed", 0)), exp.env,
                            exp.boxes[spec["box"]], int(spec.get("m", 1 << 16)), workers)
    if isinstance(res, Estimate):
        return Outcome(res.value, res.stderr, None, "expect" not in spec, {"mode": "monte-carlo"})
    details = {"status": res.status, "series_status": res.scan.status, "expect": spec.get("expect")}
    if res.certificate is not None:
        cert = res.certificate
        details["certificate"] = {"certified": cert.certified, "n0": cert.n0, "comparison": cert.comparison,
                                  "checked_up_to": cert.checked_up_to}
    ok = res.status == spec.get("expect", res.status)
    return Outcome(res.scan.partial, None, None, ok, details, {f"{spec['name']}.series": _series_table(res.scan)})


def _run_phi_star(exp, spec, z, workers):
    exact, bound = orlicz.phi_star_moment(float(spec["lam"]))
    ok = True
    if "expect" in spec:
        ok = abs(exact - float(spec["expect"])) <= float(spec.get("tol", 1e-4))
    return Outcome(exact, None, bound, ok and exact <= bound, {"stated_bound": bound})


def _run_young(exp, spec, z, workers):
    pts = np.linspace(0.0, float(spec.get("max", 10.0)), int(spec["points"]))
    x, y = np.meshgrid(pts, pts)
    slack = orlicz.young_phi(x) + orlicz.young_phi_star(y) - x * y
    worst = float(slack.min())
    return Outcome(worst, None, 0.0, worst >= -1e-12 * max(1.0, float(np.abs(x * y).max())))


def _random_cases(exp, spec):
    full = BoxSet.full(exp.model.horizon)
    for i in range(int(spec["cases"])):
        path = sample_path(exp.model, SeedSpec(spec["seed"], i))
        t, x, _ = malliavin.sample_points(exp.model, full, make_rng(spec["seed"], i, ROLE_POINTS), 1, power=0)
        yield path, malliavin.DerivativePoint(float(t[0]), float(x[0]))


def _rel(a: float, b: float, scale: float) -> float:
    return 0.0 if scale == 0 else abs(a - b) / scale


def _run_rule(exp, spec, z, workers, kind):
    rtol = float(spec.get("rtol", 1e-12))
    f = exp.functionals[spec["functional"]]
    worst, errors = 0.0, 0
    for path, p in _random_cases(exp, spec):
        try:
            if kind == "product":
                lhs, rhs, scale = malliavin.product_rule_check(f, exp.functionals[spec["other"]], path, p, exp.env)
            else:
                mp = spec["map"]
                g = malliavin.Lipschitz(mp["kind"], float(mp.get("lo", 0.0)), float(mp.get("hi", 0.0)))
                lhs, rhs, scale = malliavin.chain_rule_check(g, f, path, p, exp.env)
        except dsl.EvaluationError:
            errors += 1
            continue
        worst = max(worst, _rel(lhs, rhs, scale))
    return Outcome(worst, None, rtol, worst <= rtol, {"cases": int(spec["cases"]), "domain_errors": errors})


RUNNERS = {
    "sandwich": _run_sandwich,
    "equivalence": _run_equivalence,
    "mecke": _run_mecke,
    "weighted_norm": _run_weighted,
    "fubini": _run_fubini,
    "interpolation": _run_interpolation,
}
RUNNERS_PLAIN = {
    "isometry": _run_isometry,
    "orthogonality": _run_orthogonality,
    "covariance": _run_covariance,
    "theta_integral": _run_theta_integral,
    "classify": _run_classify,
    "l2log": _run_l2log,
    "phi_star": _run_phi_star,
    "young": _run_young,
    "product_rule": lambda e, s, z, w: _run_rule(e, s, z, w, "product"),
    "chain_rule": lambda e, s, z, w: _run_rule(e, s, z, w, "chain"),
}


def _inputs_digest(exp: Experiment, spec: dict) -> str:
    blob = json.dumps({"model": exp.data.get("model"), "boxes": exp.data.get("boxes"),
                       "functionals": exp.data.get("functionals"), "grids": exp.data.get("grids"),
                       "check": spec}, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_check(exp: Experiment, spec: dict, workers: int = 1) -> tuple[dict, dict, float]:
    spec = dict(spec)
    if "seed" not in spec and exp.seed is not None:
        spec["seed"] = exp.seed
    z = float(spec.get("sigmas", 3))
    start = time.perf_counter()
    op = spec["op"]
    try:
        if op in RUNNERS:
            out = RUNNERS[op](exp, spec, exp.functionals[spec["functional"]], exp.boxes[spec["box"]], z, workers)
        else:
            out = RUNNERS_PLAIN[op](exp, spec, z, workers)
    except (ArithmeticError, ValueError) as exc:
        out = Outcome(None, None, None, False, {"error": f"{type(exc).__name__}: {exc}"})
    elapsed = time.perf_counter() - start
    record = {
        "check": spec["name"],
        "op": op,
        "inputs_digest": _inputs_digest(exp, spec),
        "value": _jsonable(out.value),
        "stderr": _jsonable(out.stderr),
        "bound": _jsonable(out.bound),
        "pass": bool(out.passed),
        "sigmas": z,
        "details": _jsonable(out.details),
    }
    return record, out.tables, elapsed


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# -- orchestration ---------------------------------------------------------


@dataclass
class Report:
    manifest: dict
    records: list[dict]
    tables: dict
    timing: dict

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.records)


def run_experiment(exp: Experiment, workers: int = 1, parallel_checks: bool = False) -> Report:
    if parallel_checks and len(exp.checks) > 1:
        with ThreadPoolExecutor(max_workers=min(len(exp.checks), os.cpu_count() or 1)) as pool:
            results = list(pool.map(lambda s: run_check(exp, s, workers), exp.checks))
    else:
        results = [run_check(exp, s, workers) for s in exp.checks]
    records, tables, timing = [], {}, {}
    for (rec, tabs, elapsed), spec in zip(results, exp.checks):
        records.append(rec)
        tables.update(tabs)
        timing[rec["check"]] = elapsed
    if exp.paths:
        seed = int(exp.paths.get("seed", exp.seed or 0))
        streams = list(range(int(exp.paths["count"])))
        paths = [sample_path(exp.model, SeedSpec(seed, s)) for s in streams]
        tables["paths"] = ("stream", "t", "x"), [
            tuple(r) for r in list(csv.reader(io.StringIO(dump_paths(paths, streams))))[1:]
        ]
    manifest = {"config_sha256": exp.digest, "code_version": __version__, "seed": exp.seed,
                "checks": len(records), "passed": sum(r["pass"] for r in records)}
    return Report(manifest, records, tables, timing)


def _write_table(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def write_report(report: Report, out_dir: str | os.PathLike, fmt: str = "json") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(json.dumps({"manifest": report.manifest, "checks": report.records}, indent=2) + "\n")
        written.append(p)
    else:
        p = out / "report.csv"
        cols = ("check", "op", "inputs_digest", "value", "stderr", "bound", "pass")
        rows = [[json.dumps(r[c]) if isinstance(r[c], (list, dict)) else ("" if r[c] is None else r[c])
                 for c in cols] for r in report.records]
        _write_table(p, cols, rows)
        m = out / "manifest.json"
        m.write_text(json.dumps(report.manifest, indent=2) + "\n")
        written += [p, m]
    for name, (header, rows) in sorted(report.tables.items()):
        p = out / f"{name}.csv"
        _write_table(p, header, rows)
        written.append(p)
    t = out / "timing.json"
    t.write_text(json.dumps(report.timing, indent=2) + "\n")
    written.append(t)
    return written


def resolve_out_dir(flag: str | None, configured: str) -> str:
    if flag:
        return flag
    return os.environ.get(OUT_ENV) or configured


def demo_config(name: str) -> Path:
    if name not in DEMOS:
        raise KeyError(name)
    return Path(str(resources.files("levysmooth") / "configs" / f"{name}.cfg"))


def _summary_line(rec: dict) -> str:
    mark = "PASS" if rec["pass"] else "FAIL"
    v = rec["value"]
    shown = f"{v:.6g}" if isinstance(v, float) else str(v)
    return f"{mark}  {rec['check']:<28} {rec['op']:<15} value={shown}"


def _cmd_run(cfg, args) -> int:
    try:
        exp = load_experiment(cfg)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{cfg}: {d}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{cfg}: cannot read config: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    fmt = args.format or exp.fmt
    out = resolve_out_dir(args.out, exp.out_dir)
    report = run_experiment(exp, args.workers, args.parallel_checks)
    write_report(report, out, fmt)
    for rec in report.records:
        print(_summary_line(rec))
    print(f"{report.manifest['passed']}/{report.manifest['checks']} checks passed; report in {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="levysmooth", description="Smoothness checks on compound Poisson space.")
    sub = parser.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="threads per Monte Carlo estimator")
    common.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    common.add_argument("--format", choices=("json", "csv"), help="report format")
    common.add_argument("--parallel-checks", action="store_true", help="run checks concurrently")
    p_run = sub.add_parser("run", parents=[common], help="run every check in a config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="static validation without sampling")
    p_val.add_argument("config")
    p_demo = sub.add_parser("demo", parents=[common], help=f"run a bundled config: {', '.join(DEMOS)}")
    p_demo.add_argument("name")
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")

    if args.verb == "validate":
        diags = validate(args.config)
        for d in diags:
            print(f"{args.config}: {d}", file=sys.stderr)
        if not diags:
            print(f"{args.config}: ok")
        return EXIT_CONFIG if diags else EXIT_OK
    if args.verb == "demo":
        try:
            cfg = demo_config(args.name)
        except KeyError:
            print(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}", file=sys.stderr)
            return EXIT_CONFIG
        return _cmd_run(cfg, args)
    return _cmd_run(args.config, args)


if __name__ == "__main__":
    sys.exit(main())
