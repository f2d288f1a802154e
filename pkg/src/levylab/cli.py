"""Command-line runner: ``levylab run <config>``, ``levylab list``, ``levylab version``.

A run reads one YAML file, generates the driver ensemble, solves the SDE,
runs the selected verifiers and writes ``report.json``, ``verdicts.json``
and one CSV of per-time statistics per verifier. ``LEVYLAB_OUTPUT_DIR``
overrides the configured output directory.

Exit codes: 0 when every verifier agrees with its oracle, 1 when at least one
disagrees (or the run fails numerically), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import levy_core as lc
from . import path_gen as pg
from . import scaling_lab as sl
from . import sde_solver as sd

SCHEMA_VERSION = 1
OUTPUT_ENV = "LEVYLAB_OUTPUT_DIR"

DRIVERS = ("brownian", "compound_poisson", "deterministic", "stable", "stable_series",
           "truncated_exponential")
SIGMAS = ("affine", "bilinear_left", "bilinear_right", "constant", "diag", "identity",
          "poly_trig", "sin_shift")
VERIFIERS = ("cluster_set", "coupling_gap", "distributional_transfer", "equivalence",
             "estimate_limit", "in_probability", "integral_lemma", "limsup", "qv_decay")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field and line."""


# ---------------------------------------------------------------------------
# YAML with line numbers


class _Node(dict):
    """Mapping that remembers the source line of each key and of itself."""

    line = 0
    path = ""


def _build(node, path):
    if isinstance(node, yaml.MappingNode):
        out = _Node()
        out.line, out.path = node.start_mark.line + 1, path
        out.lines = {}
        for k, v in node.value:
            key = k.value
            out[key] = _build(v, f"{path}.{key}" if path else key)
            out.lines[key] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_build(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_config_text(text: str) -> _Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark else ""
        raise ConfigError(f"YAML syntax error{where}: {getattr(exc, 'problem', exc)}") from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError("configuration must be a mapping (line 1)")
    return _build(root, "")


def _where(node, key=None):
    name = f"{node.path}.{key}" if node.path and key else (key or node.path or "<root>")
    line = node.lines.get(key, node.line) if key is not None else node.line
    return name, line


def _err(node, key, msg):
    name, line = _where(node, key)
    return ConfigError(f"{name}: {msg} (line {line})")


def _get(node, key, kind=None, default=..., check=None, what=""):
    if key not in node:
        if default is ...:
            raise _err(node, key, "missing required field")
        return default
    val = node[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise _err(node, key, f"expected a number, got {val!r}")
        val = float(val)
    elif kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise _err(node, key, f"expected an integer, got {val!r}")
    elif kind is not None and not isinstance(val, kind):
        raise _err(node, key, f"expected {kind.__name__}, got {val!r}")
    if check is not None and not check(val):
        raise _err(node, key, f"invalid value {val!r}{': ' + what if what else ''}")
    return val


def _vec(node, key, default=...):
    val = _get(node, key, default=default)
    try:
        arr = np.atleast_1d(np.asarray(val, dtype=float))
    except (TypeError, ValueError):
        raise _err(node, key, f"expected a number or list of numbers, got {val!r}") from None
    return arr


def _mat(node, key, default=...):
    val = _get(node, key, default=default)
    try:
        return np.atleast_2d(np.asarray(val, dtype=float))
    except (TypeError, ValueError):
        raise _err(node, key, f"expected a matrix, got {val!r}") from None


# ---------------------------------------------------------------------------
# building blocks


def _jump_law(node):
    kind = _get(node, "kind", str, check=lambda v: v in ("uniform", "point"), what="uniform or point")
    if kind == "uniform":
        try:
            return lc.UniformJumps(_get(node, "low", float), _get(node, "high", float))
        except lc.ConfigurationError as exc:
            raise _err(node, None, str(exc)) from None
    return lc.PointMass(_vec(node, "atom"))


def build_driver(node, grid):
    """Sampler partial (accepting ``rng``, ``sid``) and the driver's triplet."""
    kind = _get(node, "kind", str, check=lambda v: v in DRIVERS, what=f"one of {', '.join(DRIVERS)}")
    try:
        if kind == "brownian":
            A = _mat(node, "A", 1.0)
            drift = _vec(node, "drift", [0.0] * A.shape[0])
            return (functools.partial(pg.sample_brownian, grid, A, drift),
                    lc.CharacteristicTriplet.brownian(A, drift))
        if kind == "deterministic":
            drift = _vec(node, "drift")
            trip = lc.CharacteristicTriplet(np.zeros((drift.size,) * 2), lc.ZeroMeasure(drift.size), drift)
            return functools.partial(_deterministic, grid, drift), trip
        if kind == "compound_poisson":
            rate = _get(node, "rate", float, check=lambda v: v >= 0, what="must be >= 0")
            law = _jump_law(_get(node, "jumps", dict))
            drift = _vec(node, "drift", [0.0] * law.dim)
            return (functools.partial(pg.sample_compound_poisson, grid, rate, law, drift),
                    lc.CharacteristicTriplet.compound_poisson(rate, law, drift))
        alpha_ok = dict(check=lambda v: 0 < v < 2, what="must lie in (0, 2)")
        if kind in ("stable", "stable_series"):
            alpha = _get(node, "alpha", float, **alpha_ok)
            beta = _get(node, "beta", float, 0.0, check=lambda v: -1 <= v <= 1, what="must lie in [-1, 1]")
            scale = _get(node, "scale", float, 1.0, check=lambda v: v > 0, what="must be positive")
            trip = lc.stable_triplet(alpha, beta, scale)
            if kind == "stable":
                return functools.partial(pg.sample_stable, grid, alpha, beta, scale), trip
            eta = _get(node, "eta", float, 1e-2, check=lambda v: v > 0, what="must be positive")
            return functools.partial(pg.sample_stable_series, grid, alpha, beta, scale, eta=eta), trip
        eps = _get(node, "eps", float, 1e-3, check=lambda v: 0 < v < 1, what="must lie in (0, 1)")
        corr = _get(node, "gaussian_correction", default=None)
        measure = lc.TruncatedExponential()
        trip = lc.CharacteristicTriplet(np.zeros((1, 1)), measure, np.zeros(1))
        return (functools.partial(pg.sample_truncated_infinite_activity, grid, measure, eps, corr),
                trip)
    except lc.ConfigurationError as exc:
        raise _err(node, None, str(exc)) from None


def _deterministic(grid, drift, rng=None, sid=0):
    return pg.sample_deterministic(grid, drift, sid=sid)


def build_sigma(node, n_driver):
    kind = _get(node, "kind", str, check=lambda v: v in SIGMAS, what=f"one of {', '.join(SIGMAS)}")
    try:
        if kind == "identity":
            return sd.identity_sigma(n_driver)
        if kind == "constant":
            return sd.constant_sigma(_mat(node, "c"))
        if kind == "affine":
            c0 = _mat(node, "c0")
            return sd.affine_sigma(c0, _vec(node, "c1"))
        if kind == "sin_shift":
            return sd.sin_shift_sigma(_get(node, "shift", float, 2.0))
        if kind == "diag":
            return sd.diag_sin_sigma(_vec(node, "a"), _vec(node, "b", 0.0))
        if kind == "poly_trig":
            return sd.poly_trig_sigma(_vec(node, "poly", [0.0]), _get(node, "a", float, 0.0),
                                      _get(node, "b", float, 0.0), _get(node, "w", float, 1.0))
        m = int(round(np.sqrt(n_driver)))
        if m * m != n_driver:
            raise _err(node, "kind", f"bilinear sigma needs a square matrix driver, got {n_driver} components")
        return sd.bilinear_sigma(m, kind.split("_")[1])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise _err(node, None, str(exc)) from None


def build_scaling(node):
    kind = _get(node, "kind", str, check=lambda v: v in ("power", "khintchine"), what="power or khintchine")
    scale = _get(node, "scale", float, 1.0, check=lambda v: v > 0, what="must be positive")
    if kind == "power":
        return lc.Power(scale=scale, p=_get(node, "p", float, check=lambda v: v > 0, what="must be positive"))
    return lc.Khintchine(scale=scale)


# ---------------------------------------------------------------------------
# verifiers


class Experiment:
    def __init__(self, cfg: _Node, workers: int):
        self.cfg = cfg
        self.seed = _get(cfg, "seed", int, check=lambda v: v >= 0, what="must be >= 0")
        self.n_paths = _get(cfg, "n_paths", int, check=lambda v: v >= 2, what="ensembles need N >= 2")
        gnode = _get(cfg, "grid", dict)
        try:
            self.grid = pg.make_grid(_get(gnode, "t_max", float), _get(gnode, "theta", float),
                                     _get(gnode, "K", int))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise _err(gnode, None, str(exc)) from None
        self.sampler, self.triplet = build_driver(_get(cfg, "driver", dict), self.grid)
        self.sigma = build_sigma(_get(cfg, "sigma", dict), self.triplet.dim)
        self.x0 = _vec(cfg, "x0", [0.0] * self.sigma.n)
        if self.x0.size != self.sigma.n:
            raise _err(cfg, "x0", f"expected {self.sigma.n} components")
        self.workers = workers
        vnodes = _get(cfg, "verifiers", list, check=lambda v: len(v) > 0, what="select at least one")
        self.verifiers = []
        for v in vnodes:
            if not isinstance(v, _Node):
                raise _err(cfg, "verifiers", "each verifier must be a mapping")
            _get(v, "kind", str, check=lambda k: k in VERIFIERS, what=f"one of {', '.join(VERIFIERS)}")
            self.verifiers.append(v)
        # fail early on malformed verifier parameters
        for v in self.verifiers:
            self._params(v)

    def _params(self, v):
        kind = v["kind"]
        p = {"target": _get(v, "target", str, "solution", check=lambda t: t in ("driver", "solution"),
                            what="driver or solution")}
        if kind in ("estimate_limit", "limsup", "coupling_gap", "cluster_set", "distributional_transfer",
                    "in_probability"):
            p["f"] = build_scaling(_get(v, "scaling", dict))
        if kind in ("qv_decay", "integral_lemma"):
            p["p"] = _get(v, "p", float, check=lambda x: x > 0, what="must be positive")
        if kind == "qv_decay":
            p["mode"] = _get(v, "mode", str, "realized", check=lambda m: m in ("realized", "jumps"))
        if kind == "limsup":
            p["band"] = _get(v, "band", list, [0.7, 1.05], check=lambda b: len(b) == 2 and b[0] < b[1])
        if kind == "cluster_set":
            p["shell"] = _get(v, "shell", list, check=lambda s: len(s) == 2 and 0 < s[0] < s[1])
        if kind == "distributional_transfer":
            p["alpha"] = _get(v, "alpha", float, check=lambda a: 0 < a <= 2, what="must lie in (0, 2]")
            p["t_eval"] = _get(v, "t_eval", float, check=lambda t: t > 0)
            p["scale"] = _get(v, "scale", float, 1.0)
            p["skew"] = _get(v, "skew", float, 0.0)
            p["threshold"] = _get(v, "threshold", float, 0.05)
            if self.n_paths < 100:
                raise _err(self.cfg, "n_paths", "distributional_transfer needs at least 100 paths")
        if kind == "in_probability":
            p["v"] = _get(v, "v", float)
            p["deltas"] = _get(v, "deltas", list, [0.05, 0.1])
        return p

    def run(self):
        self.drivers = pg.generate_ensemble(self.sampler, self.n_paths, self.seed, self.workers)
        self.solutions = sd.solve_ensemble(self.sigma, self.x0, self.drivers, workers=self.workers)
        reports = []
        for i, v in enumerate(self.verifiers):
            rep = getattr(self, "_v_" + v["kind"])(self._params(v))
            rep.name = f"{i:02d}_{v['kind']}"
            reports.append(rep)
        return reports

    def _paths(self, target):
        return self.drivers if target == "driver" else self.solutions

    def _sigma_x(self, target):
        return np.eye(self.sigma.d) if target == "driver" else self.sigma(self.x0)

    def _v_estimate_limit(self, p):
        pred = lc.predict_short_time(self.triplet, p["f"])
        center = np.zeros(self.triplet.dim) if p["target"] == "driver" else self.x0
        re = sl.rescale(self._paths(p["target"]), p["f"], center)
        return sl.estimate_limit(re, pred, self._sigma_x(p["target"]), seed=self.seed)

    def _v_equivalence(self, p):
        rec = [sd.recover_driver(self.sigma, s) for s in self.solutions]
        err = max(float(np.abs(r.values - d.values).max()) for r, d in zip(rec, self.drivers))
        stat = np.array([np.abs(r.grid_values() - d.grid_values()).max(axis=1)
                         for r, d in zip(rec, self.drivers)])
        scale = max(1.0, max(float(np.abs(d.values).max()) for d in self.drivers))
        rep = sl.ScalingReport.from_stat("equivalence", self.grid.times, stat,
                                         verdict="pass" if err <= 1e-10 * scale else "fail")
        rep.extra["max_roundtrip_error"] = err
        return rep

    def _v_limsup(self, p):
        est = sl.limsup_estimate(sl.rescale(self._paths(p["target"]), p["f"]))
        pred = lc.predict_short_time(self.triplet, p["f"])
        const = 1.0
        if pred.verdict == "oscillates_lil" and pred.value is not None:
            sx = self._sigma_x(p["target"])
            const = float(np.linalg.norm(sx @ np.diag(pred.value), 2))
        lo, hi = (b * const for b in p["band"])
        rep = est.report(verdict="pass" if lo <= est.estimate <= hi else "fail")
        rep.prediction = pred
        rep.extra["band"] = [lo, hi]
        return rep

    def _v_coupling_gap(self, p):
        return sl.coupling_gap(self.solutions, self.drivers, self.sigma, self.x0, p["f"])

    def _v_qv_decay(self, p):
        return sl.qv_decay_check(self._paths(p["target"]), p["p"], mode=p["mode"])

    def _v_integral_lemma(self, p):
        # phi_s = s against each scalar path of the target ensemble
        paths = self._paths(p["target"])
        if paths[0].dim != 1:
            raise ConfigError("integral_lemma needs a scalar target path")
        phis = [pg.sample_deterministic(self.grid, np.ones(1), extra_times=x.times) for x in paths]
        return sl.integral_lemma_check(phis, paths, p["p"])

    def _v_cluster_set(self, p):
        f = p["f"]
        sol = sl.cluster_set_estimate(sl.rescale(self.solutions, f), p["shell"])
        drv = sl.cluster_set_estimate(sl.rescale(self.drivers, f), p["shell"])
        mapped = drv.cloud @ self.sigma(self.x0).T
        test = sl.energy_distance_test(sol.cloud, mapped, seed=self.seed)
        norms = np.linalg.norm(sol.cloud, axis=1)[:, None]
        rep = sl.ScalingReport.from_stat("cluster_set", np.array([p["shell"][1]]), norms,
                                         verdict="pass" if test.passes() else "fail")
        rep.extra.update({"energy_statistic": test.statistic, "p_value": test.p_value,
                          "axes": sol.axes, "driver_axes": drv.axes})
        return rep

    def _v_distributional_transfer(self, p):
        sampler = functools.partial(_regrid, self.sampler)
        return sl.verify_distributional_transfer(
            self.sigma, self.x0, sampler, p["alpha"], p["f"], p["t_eval"], self.n_paths, self.seed,
            p["scale"], p["skew"], p["threshold"], workers=self.workers)

    def _v_in_probability(self, p):
        sx = float(self.sigma(self.x0)[0, 0]) if p["target"] == "solution" else 1.0
        center = self.x0 if p["target"] == "solution" else np.zeros(1)
        return sl.verify_in_probability(self._paths(p["target"]), p["f"], p["v"], p["deltas"],
                                        sx, center)


def _regrid(sampler, grid, rng=None, sid=0):
    # same driver parameters on a different grid
    return sampler.func(grid, *sampler.args[1:], rng=rng, sid=sid, **sampler.keywords)


# ---------------------------------------------------------------------------
# entry points


def list_catalog() -> str:
    lines = ["drivers:"] + [f"  {d}" for d in sorted(DRIVERS)]
    lines += ["sigma:"] + [f"  {s}" for s in sorted(SIGMAS)]
    lines += ["verifiers:"] + [f"  {v}" for v in sorted(VERIFIERS)]
    return "\n".join(lines) + "\n"


def _normalize(cfg):
    if isinstance(cfg, dict):
        return {k: _normalize(v) for k, v in cfg.items()}
    if isinstance(cfg, list):
        return [_normalize(v) for v in cfg]
    return cfg


def run(config_path, workers=None, output=None) -> int:
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    cfg = load_config_text(text)
    if workers is None:
        workers = _get(cfg, "workers", int, 1, check=lambda v: v >= 1, what="must be >= 1")
    out_dir = os.environ.get(OUTPUT_ENV) or output or _get(cfg, "output_dir", str, "levylab_out")
    exp = Experiment(cfg, workers)
    reports = exp.run()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed = [r.name for r in reports if not r.passed]
    report = {"schema_version": SCHEMA_VERSION, "version": __version__,
              "config": _normalize({k: v for k, v in cfg.items() if k not in ("workers", "output_dir")}),
              "verifiers": [r.to_dict() for r in reports], "all_passed": not failed}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    verdicts = {"schema_version": SCHEMA_VERSION, "failed": failed,
                "verdicts": {r.name: {"verdict": r.verdict, "passed": r.passed} for r in reports}}
    (out / "verdicts.json").write_text(json.dumps(verdicts, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    for r in reports:
        (out / f"{r.name}.csv").write_text(r.to_csv(), encoding="utf-8")
    if _get(cfg, "dump_paths", default=False):
        with open(out / "drivers.csv", "w", encoding="utf-8", newline="") as fh:
            pg.dump_paths(exp.drivers, fh)
        with open(out / "solutions.csv", "w", encoding="utf-8", newline="") as fh:
            pg.dump_paths(exp.solutions, fh, kind="solution")
    if failed:
        print("verifiers disagreeing with their oracle: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"levylab: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def main(argv=None) -> int:
    parser = _Parser(prog="levylab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment configuration")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--output", default=None, help=f"output directory (overridden by ${OUTPUT_ENV})")
    sub.add_parser("list", help="list built-in drivers, sigma maps and verifiers")
    sub.add_parser("version", help="print the version")
    args = parser.parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "list":
        sys.stdout.write(list_catalog())
        return 0
    try:
        return run(args.config, args.workers, args.output)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failure during the run
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
