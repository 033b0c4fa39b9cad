"""Configuration-driven experiment runner.

    ppde run <config.json> [--out DIR] [--seed S]
    ppde validate <config.json>
    ppde list

A config is one experiment (``{"kind": ...}``) or a suite
(``{"name": ..., "experiments": [...]}``). Each run writes
``report.json`` plus one CSV per table into the output directory and exits
with status 1 if any check failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _accel, functionals as fn
from .errors import ConfigError, PPDEError
from .funcalc import builtin_generators, heat_generator, shifted_generator
from .lattice import ScenarioTree, build_lattice
from .measures import DriftBound, drift_recursion, expectation_mc
from .pathspace import PathPoint, TimeGrid
from .solvers import (
    HeatSolutionProcess,
    builtin_operators,
    check_consistency,
    check_monotonicity,
    convergence_study,
    default_paraboloids,
    markovian_fd,
    monotone_scheme,
    solve_bsde,
    solve_heat,
    stability_experiment,
)
from .stopping import conservation_error, doob_meyer, extremal_measure, linear_snell, optimal_rule, snell
from .viscosity import (
    Localization,
    comparison_check,
    default_candidates,
    equivalence_experiment,
    kink_process,
    regular_submartingale_check,
    sample_points,
    subsolution_check,
    supersolution_check,
)

KINDS = (
    "heat", "ebar", "bsde", "snell", "scheme", "converge", "check-viscosity",
    "check-submartingale", "compare", "stability", "consistency", "monotonicity",
    "equivalence", "fd",
)

FUNCTIONAL_SCHEMAS = {
    "terminal": {},
    "fixed_time": {"time": "float | null", "fraction": "float = 0.5"},
    "running_max": {},
    "running_min": {},
    "average": {},
    "pathwise_integral": {},
    "terminal_fn": {"fn": "identity | square | abs | put | call", "strike": "float", "spot": "float", "sigma": "float"},
    "terminal_square": {},
    "constant": {"c": "float"},
    "affine": {"terms": "[[coef, functional spec], ...]", "const": "float"},
    "random_leaves": {"seed": "int", "scale": "float = 1"},
}
GENERATOR_SCHEMAS = {
    "heat": {},
    "decay": {"semilinear preset": "F = -y + 1"},
    "affine": {"semilinear preset": "F = a*y + b.z + c", "a": "float", "b": "float", "c": "float"},
    "drift_hjb": {"L": "float"},
}
OPERATOR_SCHEMAS = {"heat": {}, "semilinear": {"generator": "generator spec"}, "drift_hjb": {"L": "float"}}


# --------------------------------------------------------------------------
# spec parsing


def _spec(obj, field_name):
    if isinstance(obj, str):
        return obj, {}
    if isinstance(obj, dict) and "name" in obj:
        return obj["name"], dict(obj.get("params", {}))
    raise ConfigError(field_name, "expected a name or {\"name\": ..., \"params\": {...}}")


def make_functional(obj, grid: TimeGrid | None = None, field_name: str = "functional"):
    name, params = _spec(obj, field_name)
    extra = sorted(set(params) - set(FUNCTIONAL_SCHEMAS.get(name, {})))
    if extra:
        raise ConfigError(f"{field_name}.params", f"unknown parameter(s) {extra} for {name!r}")
    if name == "fixed_time" and grid is not None and params.get("time") is not None:
        if not 0.0 <= float(params["time"]) <= grid.T:
            raise ConfigError(f"{field_name}.params.time", f"time {params['time']} outside [0, {grid.T}]")
    try:
        if name == "terminal":
            return fn.terminal()
        if name == "fixed_time":
            return fn.fixed_time(params.get("time"), params.get("fraction", 0.5))
        if name == "running_max":
            return fn.running_max()
        if name == "running_min":
            return fn.running_min()
        if name == "average":
            return fn.time_average()
        if name == "pathwise_integral":
            return fn.pathwise_integral()
        if name == "terminal_fn":
            return fn.terminal_fn(params.pop("fn", "square"), **params)
        if name == "terminal_square":
            return fn.terminal_fn("square")
        if name == "constant":
            return fn.constant(float(params.get("c", 0.0)))
        if name == "affine":
            terms = [(float(c), make_functional(f, grid, field_name)) for c, f in params.get("terms", [])]
            return fn.affine(terms, float(params.get("const", 0.0)))
        if name == "random_leaves":
            if grid is None:
                raise ConfigError(field_name, "random_leaves needs a grid")
            rng = np.random.default_rng(int(params.get("seed", 0)))
            return fn.leaf_table(rng.normal(size=1 << grid.n) * float(params.get("scale", 1.0)))
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(field_name, str(exc)) from exc
    raise ConfigError(field_name, f"unknown functional {name!r}")


def make_generator(obj, field_name: str = "generator"):
    name, params = _spec(obj, field_name)
    shift = params.pop("shift", None)
    factories = builtin_generators()
    if name not in factories:
        raise ConfigError(field_name, f"unknown generator {name!r}")
    try:
        gen = factories[name](**params)
    except TypeError as exc:
        raise ConfigError(field_name, str(exc)) from exc
    return shifted_generator(gen, float(shift)) if shift else gen


def make_operator(obj, field_name: str = "operator"):
    name, params = _spec(obj, field_name)
    ops = builtin_operators()
    if name not in ops:
        raise ConfigError(field_name, f"unknown operator {name!r}")
    if name == "semilinear":
        return ops[name](make_generator(params.get("generator", "decay"), field_name + ".generator"))
    if name == "drift_hjb":
        return ops[name](float(params.get("L", 0.0)))
    return ops[name]()


def make_grid(cfg, key: str = "grid") -> TimeGrid:
    g = cfg.get(key)
    if not isinstance(g, dict) or "n" not in g:
        raise ConfigError(key, "expected {\"T\": ..., \"n\": ...}")
    try:
        return TimeGrid(float(g.get("T", 1.0)), int(g["n"]))
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from exc


def _ns(cfg) -> list[int]:
    g = cfg.get("grid", {})
    ns = g.get("ns")
    if not ns or any(int(b) <= int(a) for a, b in zip(ns, ns[1:])):
        raise ConfigError("grid.ns", "expected an increasing list of step counts")
    return [int(n) for n in ns]


def _check_L(cfg, grid: TimeGrid, L: float):
    try:
        DriftBound(L).check(grid.h)
    except PPDEError as exc:
        raise ConfigError("L", str(exc)) from exc


def _point(cfg, grid: TimeGrid) -> PathPoint | None:
    p = cfg.get("point")
    if p is None:
        return None
    try:
        return PathPoint(grid, int(p["i"]), np.asarray(p["path"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise ConfigError("point", str(exc)) from exc


# --------------------------------------------------------------------------
# results


@dataclass
class Outcome:
    kind: str
    scalars: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)  # {"name", "passed", "detail"}
    tables: dict = field(default_factory=dict)  # file stem -> csv text
    witnesses: list = field(default_factory=list)

    def check(self, name: str, passed: bool, detail: str = ""):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _close(outcome: Outcome, name: str, value: float, expect: dict | None):
    if not expect or name not in expect:
        return
    spec = expect[name]
    target = float(spec["value"] if isinstance(spec, dict) else spec)
    atol = float(spec.get("atol", 0.0)) if isinstance(spec, dict) else 0.0
    outcome.check(f"{name} == {target:g} (atol {atol:g})", abs(value - target) <= atol,
                  f"{name} = {value!r}")


def _range(outcome: Outcome, name: str, values, bounds):
    lo, hi = bounds
    ok = all(lo <= v <= hi for v in values)
    outcome.check(f"{name} in [{lo:g}, {hi:g}]", ok, f"{name} = {[float(v) for v in values]}")


# --------------------------------------------------------------------------
# experiment kinds


def run_heat(cfg) -> Outcome:
    grid = make_grid(cfg)
    xi = make_functional(cfg.get("functional", "terminal"), grid)
    backend = cfg.get("backend", "auto")
    res = solve_heat(xi, grid, _point(cfg, grid), backend=backend,
                     n_paths=int(cfg.get("n_paths", 100_000)), seed=int(cfg.get("seed", 0)))
    out = Outcome("heat", {"value": res.value, "stderr": res.stderr, "backend": res.backend})
    _close(out, "value", res.value, cfg.get("expect"))
    return out


def run_ebar(cfg) -> Outcome:
    grid = make_grid(cfg)
    L = float(cfg.get("L", 0.0))
    _check_L(cfg, grid, L)
    xi = make_functional(cfg.get("functional", "terminal"), grid)
    lat = build_lattice(xi, grid, _point(cfg, grid), prefer=cfg.get("backend", "auto"))
    sense = -1 if cfg.get("lower") else 1
    res = drift_recursion(lat, lat.leaf_values(xi), L, sense)
    out = Outcome("ebar", {"value": res.value, "L": L, "lower": sense < 0})
    if grid.n <= 12:
        out.tables["ebar"] = res.to_csv()
    _close(out, "value", res.value, cfg.get("expect"))
    return out


def run_bsde(cfg) -> Outcome:
    grid = make_grid(cfg)
    gen = make_generator(cfg.get("generator", "decay"))
    xi = make_functional(cfg.get("functional", {"name": "constant", "params": {"c": 0}}), grid)
    sol = solve_bsde(gen, xi, grid, _point(cfg, grid), prefer=cfg.get("backend", "auto"))
    out = Outcome("bsde", {"value": sol.value, "sup_norm": sol.sup_norm(), "bound": sol.a_priori_bound()})
    out.check("a priori bound", sol.check_bounded(), f"sup {sol.sup_norm()!r} vs {sol.a_priori_bound()!r}")
    _close(out, "value", sol.value, cfg.get("expect"))
    return out


def _random_obstacles(spec):
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    n_min, n_max = int(spec.get("n_min", 1)), int(spec.get("n_max", 8))
    for _ in range(int(spec.get("count", 1))):
        n = int(rng.integers(n_min, n_max + 1))
        L = float(rng.uniform(0.0, float(spec.get("L_max", 1.0))))
        X = [rng.normal(size=1 << k) for k in range(n + 1)]
        yield n, L, X


def _snell_instance(out: Outcome, grid, X, L, tol, label=""):
    tree = ScenarioTree(grid)
    env = snell(tree, X, L)
    dm = doob_meyer(env)
    ctl = extremal_measure(env)
    tau = optimal_rule(env)
    lin = linear_snell(tree, env.X, ctl)
    resolve = max(float(np.max(np.abs(a - b))) for a, b in zip(lin, env.Y))
    fwd = abs(tau.evaluate(env.X, ctl) - env.value)
    sk = dm.skorokhod_sum()
    mres = dm.martingale_residual()
    return env, {"skorokhod": sk, "martingale": mres, "resolve": resolve, "forward": fwd,
                 "ok": max(sk, mres, resolve, fwd) <= tol and tau.is_adapted()}


def run_snell(cfg) -> Outcome:
    tol = float(cfg.get("tolerances", {}).get("exact", 1e-12))
    out = Outcome("snell")
    if "random" in cfg:
        worst = {"skorokhod": 0.0, "martingale": 0.0, "resolve": 0.0, "forward": 0.0, "conservation": 0.0}
        roots = []
        rng = np.random.default_rng(int(cfg["random"].get("seed", 0)) + 1)
        for n, L, X in _random_obstacles(cfg["random"]):
            grid = TimeGrid(float(cfg.get("T", 1.0)), n)
            L = min(L, 1.0 / grid.sqrt_h)
            env, rep = _snell_instance(out, grid, X, L, tol)
            i = int(rng.integers(0, n + 1))
            eps = float(rng.choice([0.0, rng.uniform(0.0, 0.5)]))
            rep["conservation"] = conservation_error(env, i, eps)
            roots.append(env.value)
            for k in worst:
                worst[k] = max(worst[k], rep[k])
        out.scalars.update({"instances": len(roots), "root_sum": float(np.sum(roots)), **worst})
        for k, v in worst.items():
            out.check(f"{k} residual <= {tol:g}", v <= tol, f"max {v!r}")
        return out
    grid = make_grid(cfg)
    L = float(cfg.get("L", 0.0))
    _check_L(cfg, grid, L)
    obstacle = make_functional(cfg.get("obstacle", "terminal"), grid, "obstacle")
    scale = float(cfg.get("obstacle_scale", 1.0))
    tree = ScenarioTree(grid)
    X = [scale * x for x in tree.process_values(fn.PathProcess.stopped(obstacle))]
    env, rep = _snell_instance(out, grid, X, L, tol)
    out.scalars.update({"value": env.value, **{k: rep[k] for k in ("skorokhod", "martingale", "resolve", "forward")}})
    out.check("envelope records consistent", rep["ok"], json.dumps({k: rep[k] for k in rep if k != "ok"}))
    out.tables["envelope"] = env.to_csv()
    _close(out, "value", env.value, cfg.get("expect"))
    return out


def run_scheme(cfg) -> Outcome:
    grid = make_grid(cfg)
    op = make_operator(cfg.get("operator", "heat"))
    xi = make_functional(cfg.get("functional", "terminal"), grid)
    sol = monotone_scheme(op, xi, grid, _point(cfg, grid), prefer=cfg.get("backend", "auto"))
    out = Outcome("scheme", {"value": sol.value, "operator": op.name})
    _close(out, "value", sol.value, cfg.get("expect"))
    fd_spec = cfg.get("fd_reference")
    if fd_spec:
        psi = _psi(fd_spec.get("psi", "square"))
        L = float(op.params.get("L", 0.0))
        fd = markovian_fd(psi, grid.T, L=L, n_space=int(fd_spec.get("n_space", 400)))
        diff = abs(fd.at(0.0) - sol.value)
        out.scalars.update({"fd_value": fd.at(0.0), "fd_n_time": fd.n_time})
        tol = float(fd_spec.get("atol", 5e-3))
        out.check(f"|scheme - fd| <= {tol:g}", diff <= tol, f"diff {diff!r}")
    return out


def _psi(name):
    table = {"identity": lambda x: x, "square": lambda x: x * x, "abs": np.abs}
    if name not in table:
        raise ConfigError("fd.psi", f"unknown terminal function {name!r}")
    return table[name]


def _solver_for(problem, T):
    solver = problem.get("solver", "bsde")
    if solver == "bsde":
        gen = make_generator(problem.get("generator", "decay"), "problem.generator")

        def solve(n):
            g = TimeGrid(T, n)
            return solve_bsde(gen, make_functional(problem.get("functional", {"name": "constant", "params": {"c": 0}}), g), g).value
    elif solver == "scheme":
        op = make_operator(problem.get("operator", "heat"), "problem.operator")

        def solve(n):
            g = TimeGrid(T, n)
            return monotone_scheme(op, make_functional(problem.get("functional", "terminal"), g), g).value
    elif solver == "heat":
        def solve(n):
            g = TimeGrid(T, n)
            return solve_heat(make_functional(problem.get("functional", "terminal"), g), g).value
    else:
        raise ConfigError("problem.solver", f"unknown solver {solver!r}")
    return solve


CLOSED_FORMS = {
    "decay_zero": lambda T, L: 1.0 - math.exp(-T),
    "drift_terminal": lambda T, L: L * T,
    "heat_terminal": lambda T, L: 0.0,
    "heat_square": lambda T, L: T,
    "running_max": lambda T, L: math.sqrt(2.0 * T / math.pi),
}


def run_converge(cfg) -> Outcome:
    ns = _ns(cfg)
    T = float(cfg.get("grid", {}).get("T", 1.0))
    problem = cfg.get("problem", {})
    ref = cfg.get("reference", "finest")
    if isinstance(ref, str) and ref in CLOSED_FORMS:
        ref_val = CLOSED_FORMS[ref](T, float(problem.get("L", 0.0)))
    elif isinstance(ref, (int, float)):
        ref_val = float(ref)
    elif ref == "finest":
        ref_val = None
    else:
        raise ConfigError("reference", f"unknown reference {ref!r}")
    table = convergence_study(_solver_for(problem, T), ns, T, ref_val)
    out = Outcome("converge", {"reference": table.reference, "self_referenced": table.self_referenced})
    out.tables["convergence"] = table.to_csv()
    expect = cfg.get("expect", {})
    if "ratio_range" in expect:
        _range(out, "ratio", table.column("ratio")[1:], expect["ratio_range"])
    if "max_error" in expect:
        errs = table.column("error")
        out.check(f"error <= {expect['max_error']:g}", max(errs) <= float(expect["max_error"]), f"errors {errs}")
    if "error_times_n" in expect:
        bound = float(expect["error_times_n"])
        ok = all(e * n <= bound for n, e in zip(ns, table.column("error")))
        out.check(f"error <= {bound:g}/n", ok, f"errors {table.column('error')}")
    if "increasing" in expect:
        vals = table.column("value")
        out.check("values increasing in n", all(b > a for a, b in zip(vals, vals[1:])), f"{vals}")
    if "below_reference" in expect:
        vals = table.column("value")
        out.check("values below reference", all(v < table.reference for v in vals), f"{vals}")
    return out


def _candidate(spec, grid):
    if spec == "kink" or (isinstance(spec, dict) and spec.get("name") == "kink"):
        return kink_process()
    xi = make_functional(spec.get("functional", "terminal") if isinstance(spec, dict) else spec, grid, "candidate")
    u = HeatSolutionProcess(xi, grid)
    shift = float(spec.get("time_shift", 0.0)) if isinstance(spec, dict) else 0.0
    return u.plus_time(shift) if shift else u


def _points(cfg, grid):
    p = cfg.get("points", {})
    return sample_points(grid, int(p.get("count", 20)), int(p.get("seed", cfg.get("seed", 0))),
                         include=p.get("include", ()))


def _localization(cfg, grid):
    loc = cfg.get("localization")
    if not loc:
        return Localization.default(grid)
    return Localization(float(loc["eps"]), int(loc["m"]))


def run_check_viscosity(cfg) -> Outcome:
    grid = make_grid(cfg)
    L = float(cfg.get("L", 0.0))
    _check_L(cfg, grid, L)
    G = make_generator(cfg.get("generator", "heat"))
    u = _candidate(cfg.get("candidate", "terminal"), grid)
    pts = _points(cfg, grid)
    H = _localization(cfg, grid)
    tol = cfg.get("tolerances", {}).get("generator")
    out = Outcome("check-viscosity")
    modes = cfg.get("modes", ["sub", "super"])
    expect = cfg.get("expect", {})
    for mode in modes:
        check = subsolution_check if mode == "sub" else supersolution_check
        rep = check(u, G, pts, H=H, L=L, tol=tol)
        out.scalars[f"{mode}_verdict"] = rep.verdict
        out.scalars[f"{mode}_worst"] = rep.worst
        out.scalars[f"{mode}_tangent_jets"] = rep.n_tangent
        out.witnesses.extend({"mode": mode, **asdict(w)} for w in rep.witnesses)
        want = expect.get(mode, "pass")
        out.check(f"{mode}solution verdict == {want}", rep.verdict == want, f"worst {rep.worst!r}")
    return out


def run_check_submartingale(cfg) -> Outcome:
    grid = make_grid(cfg)
    L = float(cfg.get("L", 0.0))
    u = _candidate(cfg.get("candidate", "terminal"), grid)
    rep = regular_submartingale_check(u, _points(cfg, grid), L,
                                      float(cfg.get("tolerances", {}).get("martingale", 1e-9)))
    out = Outcome("check-submartingale", {"sub": rep.sub, "super": rep.super,
                                          "min_gap_sub": min(rep.gaps_sub), "max_gap_super": max(rep.gaps_super)})
    out.witnesses.extend(rep.witnesses)
    expect = cfg.get("expect", {})
    for key in ("sub", "super"):
        if key in expect:
            out.check(f"{key}martingale == {expect[key]}", getattr(rep, key) == bool(expect[key]))
    return out


def run_compare(cfg) -> Outcome:
    grid = make_grid(cfg)
    solver = cfg.get("solver", "heat")
    pairs = cfg.get("pairs", {"count": 1, "seed": 0})
    rng = np.random.default_rng(int(pairs.get("seed", 0)))
    tol_h = float(cfg.get("tolerances", {}).get("h_multiple", 0.0 if solver == "heat" else 10.0))
    tol = tol_h * grid.h
    gen = make_generator(cfg.get("generator", "decay")) if solver == "bsde" else None
    worst, all_ok, pre_ok = -math.inf, True, True
    for _ in range(int(pairs.get("count", 1))):
        base = rng.normal(size=1 << grid.n)
        bump = rng.exponential(size=1 << grid.n) * (rng.uniform(size=1 << grid.n) < 0.7)
        xi1, xi2 = fn.leaf_table(base), fn.leaf_table(base + bump)
        if solver == "heat":
            u = drift_recursion(ScenarioTree(grid), base, 0.0).values
            v = drift_recursion(ScenarioTree(grid), base + bump, 0.0).values
        elif solver == "bsde":
            u = solve_bsde(gen, xi1, grid, prefer="tree").Y
            v = solve_bsde(gen, xi2, grid, prefer="tree").Y
        else:
            raise ConfigError("solver", f"unknown solver {solver!r}")
        rep = comparison_check(u, v, tol=tol)
        worst = max(worst, rep.worst)
        all_ok &= rep.passed
        pre_ok &= rep.precondition
    out = Outcome("compare", {"worst": worst, "tolerance": tol, "pairs": int(pairs.get("count", 1))})
    out.check("terminal ordering", pre_ok)
    out.check(f"u <= v + {tol:g} at every node", all_ok, f"max(u - v) = {worst!r}")
    return out


def run_stability(cfg) -> Outcome:
    grid = make_grid(cfg)
    gen = make_generator(cfg.get("generator", "decay"))
    xi = make_functional(cfg.get("functional", {"name": "constant", "params": {"c": 0}}), grid)
    eps = cfg.get("eps", [0.1, 0.01, 0.001])
    rep = stability_experiment(gen, xi, eps, grid)
    out = Outcome("stability", {"base": rep.base, "slope": rep.slope})
    rows = ["eps,value,deviation,bound"] + [
        f"{e!r},{v!r},{d!r},{b!r}" for e, v, d, b in zip(rep.eps, rep.values, rep.deviations, rep.bounds)
    ]
    out.tables["stability"] = "\n".join(rows) + "\n"
    out.check("deviation within eps*T*exp(L0*T)", rep.within_bounds)
    expect = cfg.get("expect", {})
    if "exact_shift" in expect:
        atol = float(expect["exact_shift"])
        ok = all(abs(v - rep.base - e * grid.T) <= atol for e, v in zip(rep.eps, rep.values))
        out.check(f"u_eps - u_0 == eps*T (atol {atol:g})", ok)
    if "decay_bound_h" in expect:
        c = float(expect["decay_bound_h"])
        ok = all(d <= e * (1 - math.exp(-grid.T)) + c * grid.h for e, d in zip(rep.eps, rep.deviations))
        out.check(f"deviation <= eps(1-e^-T) + {c:g}h", ok, f"{rep.deviations}")
    return out


def run_consistency(cfg) -> Outcome:
    op = make_operator(cfg.get("operator", "heat"))
    G = make_generator(cfg.get("generator", "heat"))
    hs = [float(h) for h in cfg.get("hs", [1 / 16, 1 / 32, 1 / 64, 1 / 128])]
    rep = check_consistency(op, G, default_paraboloids(), hs=hs, seed=int(cfg.get("seed", 0)))
    out = Outcome("consistency", {"deviations": rep.deviations})
    out.tables["consistency"] = "h,max_deviation\n" + "".join(f"{h!r},{d!r}\n" for h, d in zip(rep.hs, rep.deviations))
    expect = cfg.get("expect", {})
    if "max_deviation" in expect:
        tol = float(expect["max_deviation"])
        out.check(f"deviation <= {tol:g}", rep.max_deviation <= tol, f"{rep.deviations}")
    if "ratio_range" in expect:
        _range(out, "halving ratio", rep.halving_ratios(), expect["ratio_range"])
    if "deviation_over_h" in expect:
        c = float(expect["deviation_over_h"])
        ok = all(d <= c * h for h, d in zip(rep.hs, rep.deviations))
        out.check(f"deviation <= {c:g}h", ok, f"{rep.deviations}")
    return out


def run_monotonicity(cfg) -> Outcome:
    op = make_operator(cfg.get("operator", "heat"))
    rep = check_monotonicity(op, int(cfg.get("trials", 10_000)), int(cfg.get("seed", 0)))
    out = Outcome("monotonicity", {"violations": rep.violations, "trials": rep.trials})
    out.check("no violations", rep.passed, f"worst excess {rep.worst!r}")
    return out


def run_equivalence(cfg) -> Outcome:
    grid = make_grid(cfg)
    delta = float(cfg.get("delta", 0.5))
    cands = default_candidates(grid, delta)
    G = make_generator(cfg.get("generator", "heat"))
    pts = _points(cfg, grid)
    rows = equivalence_experiment(cands, G, pts, H=_localization(cfg, grid),
                                  tol=cfg.get("tolerances", {}).get("generator"))
    out = Outcome("equivalence", {"candidates": len(rows)})
    lines = ["candidate,martingale_sub,martingale_super,viscosity_sub,viscosity_super,agree"]
    lines += [f"{r.name},{int(r.martingale_sub)},{int(r.martingale_super)},{int(r.viscosity_sub)},"
              f"{int(r.viscosity_super)},{int(r.agree)}" for r in rows]
    out.tables["equivalence"] = "\n".join(lines) + "\n"
    out.check("verdicts agree on every candidate", all(r.agree for r in rows))
    expected = {"": "solution", "+dt": "sub-only", "-dt": "super-only"}
    ok = all(r.label == expected[r.name[-3:] if r.name[-3:] in ("+dt", "-dt") else ""] for r in rows)
    out.check("martingales solve, +dt sub only, -dt super only", ok, json.dumps({r.name: r.label for r in rows}))
    return out


def run_fd(cfg) -> Outcome:
    T = float(cfg.get("grid", {}).get("T", 1.0))
    fd = markovian_fd(_psi(cfg.get("psi", "square")), T, L=float(cfg.get("L", 0.0)),
                      n_space=int(cfg.get("n_space", 400)), n_time=cfg.get("n_time"))
    out = Outcome("fd", {"value": fd.at(0.0), "n_time": fd.n_time, "dt": fd.dt})
    _close(out, "value", fd.at(0.0), cfg.get("expect"))
    return out


def run_mc(cfg) -> Outcome:
    grid = make_grid(cfg)
    xi = make_functional(cfg.get("functional", "terminal"), grid)
    est = expectation_mc(xi, grid, float(cfg.get("lambda", 0.0)), int(cfg.get("n_paths", 100_000)),
                         int(cfg.get("seed", 0)), increments=cfg.get("increments", "gaussian"))
    return Outcome("mc", {"value": est.value, "stderr": est.stderr})


RUNNERS = {
    "heat": run_heat, "ebar": run_ebar, "bsde": run_bsde, "snell": run_snell,
    "scheme": run_scheme, "converge": run_converge, "check-viscosity": run_check_viscosity,
    "check-submartingale": run_check_submartingale, "compare": run_compare,
    "stability": run_stability, "consistency": run_consistency, "monotonicity": run_monotonicity,
    "equivalence": run_equivalence, "fd": run_fd, "mc": run_mc,
}


# --------------------------------------------------------------------------
# validation and reports


def _experiments(config) -> list[dict]:
    if not isinstance(config, dict):
        raise ConfigError("config", "expected a JSON object")
    if "experiments" in config:
        exps = config["experiments"]
        if not isinstance(exps, list) or not exps:
            raise ConfigError("experiments", "expected a non-empty list")
        return exps
    return [config]


def validate(config) -> list[dict]:
    """Field-level validation; returns the list of experiments."""
    exps = _experiments(config)
    for j, cfg in enumerate(exps):
        kind = cfg.get("kind")
        if kind not in RUNNERS:
            raise ConfigError(f"experiments[{j}].kind", f"unknown kind {kind!r}; expected one of {sorted(RUNNERS)}")
        try:
            if "grid" in cfg and "n" in cfg["grid"]:
                grid = make_grid(cfg)
                if "L" in cfg:
                    _check_L(cfg, grid, float(cfg["L"]))
                for key in ("functional", "obstacle"):
                    if key in cfg:
                        make_functional(cfg[key], grid, key)
            if "grid" in cfg and "ns" in cfg["grid"]:
                _ns(cfg)
            if "generator" in cfg:
                make_generator(cfg["generator"])
            if "operator" in cfg:
                make_operator(cfg["operator"])
        except ConfigError as exc:
            raise ConfigError(f"experiments[{j}].{exc.field}", str(exc).split(": ", 1)[-1]) from exc
    return exps


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return repr(x) if not math.isfinite(x) else x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def run(config, out_dir=None, seed: int | None = None) -> dict:
    """Run a config; write ``report.json``, ``results.json`` and CSV tables when ``out_dir`` is set."""
    exps = validate(config)
    t0 = time.perf_counter()
    results = []
    files = {}
    for j, cfg in enumerate(exps):
        cfg = dict(cfg)
        if seed is not None:
            cfg["seed"] = seed
        oc = RUNNERS[cfg["kind"]](cfg)
        label = cfg.get("label", f"{j:02d}_{cfg['kind']}")
        for stem, text in oc.tables.items():
            files[f"{label}_{stem}.csv"] = text
        results.append({"label": label, "kind": oc.kind, "scalars": oc.scalars, "checks": oc.checks,
                        "witnesses": oc.witnesses, "passed": oc.passed})
    results = _jsonable(results)
    numeric = json.dumps(results, sort_keys=True, indent=2)
    report = {
        "config": config,
        "seed": seed,
        "passed": all(r["passed"] for r in results),
        "results": results,
        "digest": hashlib.sha256(numeric.encode()).hexdigest(),
        "wall_time_s": time.perf_counter() - t0,
        "versions": {"ppde": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "backend": _accel.get_backend()},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.json").write_text(numeric + "\n")
        (out / "report.json").write_text(json.dumps(report, indent=2, default=str) + "\n")
        for name, text in files.items():
            (out / name).write_text(text)
        if not report["passed"]:
            wit = [w for r in results for w in r["witnesses"]]
            (out / "witnesses.json").write_text(json.dumps(wit, indent=2) + "\n")
    return report


def list_catalogs() -> str:
    lines = ["functionals:"]
    lines += [f"  {k} {json.dumps(v)}" if v else f"  {k}" for k, v in FUNCTIONAL_SCHEMAS.items()]
    lines.append("generators:")
    lines += [f"  {k} {json.dumps(v)}" if v else f"  {k}" for k, v in GENERATOR_SCHEMAS.items()]
    lines.append("operators:")
    lines += [f"  {k} {json.dumps(v)}" if v else f"  {k}" for k, v in OPERATOR_SCHEMAS.items()]
    lines.append("kinds:")
    lines += [f"  {k}" for k in RUNNERS]
    return "\n".join(lines)


def _load(path: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ppde", description="Path-dependent PDE experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default: runs/<config stem>)")
    p_run.add_argument("--seed", type=int, default=None)
    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config")
    sub.add_parser("list", help="list catalogs")
    args = parser.parse_args(argv)

    if args.command == "list":
        print(list_catalogs())
        return 0
    try:
        config = _load(args.config)
        if args.command == "validate":
            exps = validate(config)
            print(f"ok: {len(exps)} experiment(s)")
            return 0
        out_dir = args.out or str(Path("runs") / Path(args.config).stem)
        report = run(config, out_dir, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PPDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for r in report["results"]:
        for c in r["checks"]:
            status = "PASS" if c["passed"] else "FAIL"
            print(f"[{status}] {r['label']}: {c['name']}" + (f" ({c['detail']})" if c["detail"] else ""))
    print(f"{'passed' if report['passed'] else 'FAILED'}; report in {out_dir}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
