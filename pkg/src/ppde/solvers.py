"""Solution engines for path-dependent PDEs on binomial carriers.

* heat equation through its representation ``u_t(omega) = E^{P_0}[xi^{t,omega}]``;
* semilinear equations through an explicit backward Euler BSDE scheme;
* the generic monotone scheme ``u^h(t_i) = T_h[u^h(t_{i+1})]`` with pluggable
  one-step operators, plus monotonicity/consistency certification;
* an explicit finite-difference reference for Markovian terminal data;
* convergence and stability harnesses.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import CFLViolationError, SchemeError
from .funcalc import Generator, Paraboloid, shifted_generator
from .functionals import PathFunctional, PathProcess
from .lattice import DEFAULT_MAX_DEPTH, Lattice, build_lattice
from .measures import MCEstimate, _bound, drift_recursion, expectation_mc
from .pathspace import PathPoint, TimeGrid

# --------------------------------------------------------------------------
# heat equation


@dataclass(frozen=True)
class HeatResult:
    value: float
    stderr: float = 0.0
    backend: str = "tree"


def solve_heat(xi: PathFunctional, grid: TimeGrid, pt: PathPoint | None = None, *,
               backend: str = "auto", n_paths: int = 100_000, seed: int = 0,
               max_depth: int = DEFAULT_MAX_DEPTH) -> HeatResult:
    """``E^{P_0}[xi^{t,omega}]`` at ``pt`` (the origin by default).

    ``backend`` is ``"tree"`` (non-recombining, depth capped), ``"lattice"``
    (needs a Markov lift), ``"auto"`` (lattice when possible) or ``"mc"``.
    """
    if backend == "mc":
        est = expectation_mc(xi, grid, 0.0, n_paths, seed, start=pt)
        return HeatResult(est.value, est.stderr, "mc")
    prefer = {"tree": "tree", "lattice": "lattice", "auto": "auto"}.get(backend)
    if prefer is None:
        raise ValueError(f"unknown backend {backend!r}")
    lat = build_lattice(xi, grid, pt, prefer=prefer, max_depth=max_depth)
    res = drift_recursion(lat, lat.leaf_values(xi), 0.0)
    return HeatResult(res.value, 0.0, lat.kind)


def _node_map(lattice: Lattice, carrier: Lattice):
    """Carrier node of every lattice node, following children; ``None`` if ambiguous."""
    idx = [np.zeros(1, dtype=np.int64)]
    for k in range(lattice.depth):
        up, down = lattice.children(k)
        cu, cd = carrier.children(k)
        nxt = np.full(lattice.n_nodes(k + 1), -1, dtype=np.int64)
        nxt[up] = cu[idx[k]]
        nxt[down] = cd[idx[k]]
        if np.any(nxt[up] != cu[idx[k]]) or np.any(nxt[down] != cd[idx[k]]):
            return None
        idx.append(nxt)
    return idx


class HeatSolutionProcess(PathProcess):
    """The process ``u_t(omega) = E^{P_0}[xi^{t,omega}]`` solved exactly on demand.

    Values on a lattice are produced by one backward recursion from the
    lattice's start point; isolated prefixes (bumped or flat-extended paths)
    are solved individually and memoised.
    """

    def __init__(self, xi: PathFunctional, grid: TimeGrid, max_depth: int = DEFAULT_MAX_DEPTH):
        super().__init__(f"heat[{xi.name}]", self._eval)
        self.xi, self.grid, self.max_depth = xi, grid, max_depth
        self._memo: dict = {}

    def _solve(self, prefix: np.ndarray) -> float:
        key = prefix.tobytes()
        if key not in self._memo:
            pt = PathPoint(self.grid, prefix.shape[0] - 1, prefix)
            self._memo[key] = solve_heat(self.xi, self.grid, pt, max_depth=self.max_depth).value
        return self._memo[key]

    def _eval(self, i, p, g):
        if g != self.grid:
            raise ValueError("heat solution evaluated on a foreign grid")
        return np.array([self._solve(row) for row in p])

    def node_values(self, lattice):
        if lattice.grid != self.grid:
            return None
        carrier = build_lattice(self.xi, self.grid, lattice.start, max_depth=self.max_depth)
        vals = drift_recursion(carrier, carrier.leaf_values(self.xi), 0.0).values
        idx = _node_map(lattice, carrier)
        if idx is None:
            return None
        return [vals[k][idx[k]] for k in range(lattice.depth + 1)]


# --------------------------------------------------------------------------
# semilinear BSDE


@dataclass
class BSDESolution:
    """Node values ``Y`` (all levels) and ``Z`` (non-terminal levels) of the scheme."""

    lattice: Lattice
    Y: list
    Z: list
    generator: Generator

    @property
    def value(self) -> float:
        return float(self.Y[0][0])

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(y))) for y in self.Y)

    def a_priori_bound(self) -> float:
        """``(|xi| + T |F(.,0,0)|) e^{L0 T}`` with sups over the carrier."""
        lat = self.lattice
        xi_sup = float(np.max(np.abs(self.Y[-1])))
        f0 = 0.0
        for k in range(lat.depth):
            x = lat.positions(k)[:, None]
            z = np.zeros((x.shape[0], 1))
            f = self.generator.F(lat.time(k), x, np.zeros(x.shape[0]), z)
            f0 = max(f0, float(np.max(np.abs(f))))
        T = lat.depth * lat.h
        return (xi_sup + T * f0) * math.exp(self.generator.L0 * T)

    def check_bounded(self) -> bool:
        b = self.a_priori_bound()
        return self.sup_norm() <= b * (1 + 1e-12) + 1e-300


def _raise_nonfinite(vals, k):
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise SchemeError(f"non-finite value at level {k}, node {bad[0]}", level=k, node=int(bad[0]))


def bsde_step(F: Callable, t: float, x, v_up, v_down, h: float, sqrt_h: float):
    """One explicit Euler step: ``Z = (v_up - v_down)/(2 sqrt h)``, ``Y = m + h F(t,x,m,Z)``."""
    m = 0.5 * (v_up + v_down)
    z = (v_up - v_down) / (2.0 * sqrt_h)
    y = m + h * np.asarray(F(t, x[:, None], m, z[:, None]), dtype=np.float64)
    return y, z


def solve_bsde(F: Generator, xi: PathFunctional, grid: TimeGrid, pt: PathPoint | None = None,
               *, prefer: str = "auto", max_depth: int = DEFAULT_MAX_DEPTH) -> BSDESolution:
    """Explicit backward Euler scheme for ``Y = xi + int F(s, B, Y, Z) ds - int Z dB``."""
    if not F.semilinear:
        raise ValueError("solve_bsde needs a semilinear generator")
    if F.L0 * grid.h >= 1.0:
        warnings.warn(f"L0*h = {F.L0 * grid.h:g} >= 1: explicit scheme may be unstable",
                      RuntimeWarning, stacklevel=2)
    lat = build_lattice(xi, grid, pt, prefer=prefer, max_depth=max_depth)
    Y = [None] * (lat.depth + 1)
    Z = [None] * lat.depth
    Y[-1] = lat.leaf_values(xi)
    _raise_nonfinite(Y[-1], lat.depth)
    for k in range(lat.depth - 1, -1, -1):
        up, down = lat.children(k)
        y, z = bsde_step(F.F, lat.time(k), lat.positions(k), Y[k + 1][up], Y[k + 1][down],
                         lat.h, lat.sqrt_h)
        _raise_nonfinite(y, k)
        Y[k], Z[k] = y, z
    return BSDESolution(lat, Y, Z, F)


# --------------------------------------------------------------------------
# monotone scheme


class SchemeOperator:
    """One-step operator ``T_h`` acting on the two children of each node.

    ``step(t, x, v_up, v_down, h, sqrt_h) -> values`` is vectorised over nodes.
    """

    def __init__(self, name: str, kind: str, step: Callable, params: dict | None = None):
        self.name, self.kind, self.step = name, kind, step
        self.params = dict(params or {})

    def __repr__(self):
        return f"SchemeOperator({self.name!r})"

    def apply(self, t, x, v_up, v_down, h):
        v_up = np.asarray(v_up, dtype=np.float64)
        v_down = np.asarray(v_down, dtype=np.float64)
        return self.step(t, np.asarray(x, dtype=np.float64), v_up, v_down, h, math.sqrt(h))


def heat_operator() -> SchemeOperator:
    return SchemeOperator("heat", "heat", lambda t, x, vu, vd, h, sh: 0.5 * (vu + vd))


def semilinear_operator(gen: Generator) -> SchemeOperator:
    def step(t, x, vu, vd, h, sh):
        return bsde_step(gen.F, t, np.atleast_1d(x), np.atleast_1d(vu), np.atleast_1d(vd), h, sh)[0]

    return SchemeOperator(f"semilinear[{gen.name}]", "semilinear", step, {"generator": gen.name})


def drift_hjb_operator(L: float) -> SchemeOperator:
    """Upper expectation over one step with drift bound ``L``."""
    bound = _bound(L)

    def step(t, x, vu, vd, h, sh):
        a = bound.step_coefficient(h)
        vu, vd = np.atleast_1d(vu), np.atleast_1d(vd)
        n = vu.shape[0]
        both = np.concatenate([vu, vd])
        return kernels.drift_step(both, np.arange(n), np.arange(n, 2 * n), a)[0]

    return SchemeOperator(f"drift_hjb(L={L:g})", "drift_hjb", step, {"L": L})


def custom_operator(step: Callable, name: str = "custom") -> SchemeOperator:
    return SchemeOperator(name, "custom", step)


def builtin_operators() -> dict[str, Callable[..., SchemeOperator]]:
    return {"heat": heat_operator, "semilinear": semilinear_operator, "drift_hjb": drift_hjb_operator}


@dataclass
class SchemeSolution:
    lattice: Lattice
    values: list
    operator: SchemeOperator
    h: float

    @property
    def value(self) -> float:
        return float(self.values[0][0])


def monotone_scheme(op: SchemeOperator, xi: PathFunctional, grid: TimeGrid,
                    pt: PathPoint | None = None, *, prefer: str = "auto",
                    max_depth: int = DEFAULT_MAX_DEPTH) -> SchemeSolution:
    """Backward iteration ``u(t_k) = T_h[u(t_{k+1})]`` from ``u(t_n) = xi``."""
    lat = build_lattice(xi, grid, pt, prefer=prefer, max_depth=max_depth)
    vals = [None] * (lat.depth + 1)
    vals[-1] = lat.leaf_values(xi)
    for k in range(lat.depth - 1, -1, -1):
        up, down = lat.children(k)
        v = np.asarray(op.apply(lat.time(k), lat.positions(k), vals[k + 1][up],
                                vals[k + 1][down], lat.h), dtype=np.float64)
        _raise_nonfinite(v, k)
        vals[k] = v
    return SchemeSolution(lat, vals, op, lat.h)


@dataclass(frozen=True)
class MonotonicityReport:
    operator: str
    trials: int
    violations: int
    worst: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_monotonicity(op: SchemeOperator, trials: int = 10_000, seed: int = 0,
                       h: float = 1.0 / 64, tol: float = 1e-12) -> MonotonicityReport:
    """Sample ordered child pairs ``phi <= psi`` and count ``T[phi] > T[psi] + tol``."""
    rng = np.random.default_rng(seed)
    t = float(rng.uniform(0.0, 1.0))
    x = rng.normal(size=trials)
    phi_u, phi_d = rng.normal(size=(2, trials)) * 2.0
    # ties in one coordinate are the hardest case for kinked operators
    gap = rng.exponential(size=(2, trials)) * (rng.uniform(size=(2, trials)) < 0.8)
    lo = op.apply(t, x, phi_u, phi_d, h)
    hi = op.apply(t, x, phi_u + gap[0], phi_d + gap[1], h)
    excess = np.asarray(lo - hi)
    bad = excess > tol
    return MonotonicityReport(op.name, trials, int(np.sum(bad)),
                              float(np.max(excess)) if trials else 0.0)


@dataclass
class ConsistencyReport:
    operator: str
    hs: list
    deviations: list  # max |ratio - L phi| per h

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)

    def halving_ratios(self) -> list:
        d = self.deviations
        return [d[j] / d[j + 1] if d[j + 1] > 0 else float("inf") for j in range(len(d) - 1)]


def default_paraboloids() -> list[Paraboloid]:
    """Scalar jet grid: ``q, p`` over ``-2..2`` step 0.25, ``gamma`` over ``-4..4`` step 0.5."""
    qs = np.arange(-8, 9) * 0.25
    gs = np.arange(-8, 9) * 0.5
    return [Paraboloid.scalar(q, p, g) for q in qs for p in qs for g in gs]


def check_consistency(op: SchemeOperator, G: Generator, phis, t: float = 0.5, x: float = 0.0,
                      hs=(1 / 16, 1 / 32, 1 / 64, 1 / 128), n_perturb: int = 8, radius: float = 0.1,
                      seed: int = 0) -> ConsistencyReport:
    """Compare ``([c+phi](t',x') - T_h[[c+phi](t'+h, x' +- sqrt h)])/h`` with ``L phi``.

    ``L phi = -q - G(t', x', c + phi, p + gamma x', gamma)``; the comparison is
    made at ``(t, x, c=0)`` and at ``n_perturb`` random nearby ``(t', x', c)``.
    """
    if isinstance(phis, Paraboloid):
        phis = [phis]
    q = np.array([f.q for f in phis])
    p = np.array([f.p[0] for f in phis])
    g = np.array([f.gamma[0, 0] for f in phis])
    rng = np.random.default_rng(seed)
    pts = [(t, x, 0.0)] + [
        (t + radius * rng.uniform(-1, 1) * 0.5, x + radius * rng.uniform(-1, 1), radius * rng.uniform(-1, 1))
        for _ in range(n_perturb)
    ]
    devs = []
    for h in hs:
        sh = math.sqrt(h)
        worst = 0.0
        for tp, xp, c in pts:

            def val(s, y):
                return c + q * s + p * y + 0.5 * g * y * y

            here = val(tp, xp)
            nxt = op.apply(tp, np.full(q.shape, xp), val(tp + h, xp + sh), val(tp + h, xp - sh), h)
            ratio = (here - nxt) / h
            Lphi = -q - G(tp, np.full((q.shape[0], 1), xp), here, (p + g * xp)[:, None], g[:, None, None])
            worst = max(worst, float(np.max(np.abs(ratio - Lphi))))
        devs.append(worst)
    return ConsistencyReport(op.name, list(hs), devs)


# --------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # (n, h, value, error, ratio, order_est)
    reference: float = float("nan")
    self_referenced: bool = False

    def to_csv(self, target=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "h", "value", "error", "ratio", "order_est"])
        for row in self.rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        if target is None:
            return buf.getvalue()
        with open(target, "w") as fh:
            fh.write(buf.getvalue())
        return None

    def column(self, name: str) -> list:
        j = ["n", "h", "value", "error", "ratio", "order_est"].index(name)
        return [r[j] for r in self.rows]


def convergence_study(solve: Callable[[int], float], ns, T: float = 1.0,
                      reference: float | None = None) -> ConvergenceTable:
    """Error table of ``solve(n)`` against ``reference``.

    Without a reference the finest ``n`` serves as its own reference and the
    table is flagged ``self_referenced``; its last error is then zero by
    construction.
    """
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n-sequence must be increasing")
    values = [float(solve(n)) for n in ns]
    table = ConvergenceTable(self_referenced=reference is None)
    ref = values[-1] if reference is None else float(reference)
    table.reference = ref
    prev = None
    for n, v in zip(ns, values):
        err = abs(v - ref)
        ratio = order = float("nan")
        if prev is not None and err > 0:
            ratio = prev[1] / err
            order = math.log(ratio) / math.log(n / prev[0])
        table.rows.append((n, T / n, v, err, ratio, order))
        prev = (n, err)
    return table


# --------------------------------------------------------------------------
# finite differences


@dataclass
class FDResult:
    x: np.ndarray
    values: np.ndarray  # v(0, x)
    n_time: int
    dt: float

    def at(self, x0: float = 0.0) -> float:
        return float(np.interp(x0, self.x, self.values))


def cfl_limit(dx: float, half_diff: float, L: float) -> float:
    """Largest stable explicit step for ``half_diff*v_xx + L|v_x|``."""
    return 1.0 / (2.0 * half_diff / (dx * dx) + L / dx)


def markovian_fd(psi: Callable, T: float, *, L: float = 0.0, n_space: int = 400,
                 n_time: int | None = None, x_max: float | None = None,
                 half_diff: float = 0.5) -> FDResult:
    """Explicit upwind scheme for ``-v_t - half_diff v_xx - L|v_x| = 0``, ``v(T) = psi``.

    The domain ``|x| <= x_max`` (default ``6 sqrt T``) carries Dirichlet values
    ``psi``. With ``n_time=None`` the smallest CFL-stable step count is used.
    """
    x_max = 6.0 * math.sqrt(T) if x_max is None else x_max
    x = np.linspace(-x_max, x_max, n_space + 1)
    dx = x[1] - x[0]
    limit = cfl_limit(dx, half_diff, L)
    if n_time is None:
        n_time = int(math.ceil(T / limit))
    dt = T / n_time
    if dt > limit * (1 + 1e-12):
        raise CFLViolationError(f"dt = {dt:g} exceeds the CFL limit {limit:g} (need n_time >= {math.ceil(T / limit)})")
    v = np.asarray(psi(x), dtype=np.float64)
    for _ in range(n_time):
        v = kernels.fd_step(v, dt, dx, half_diff, L)
    return FDResult(x, v, n_time, dt)


# --------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    eps: list
    values: list
    deviations: list
    base: float
    slope: float  # least-squares C in |dev| ~ C eps
    bounds: list  # eps T e^{L0 T}

    @property
    def within_bounds(self) -> bool:
        return all(d <= b * (1 + 1e-12) + 1e-15 for d, b in zip(self.deviations, self.bounds))


def stability_experiment(gen: Generator, xi: PathFunctional, eps_seq, grid: TimeGrid,
                         prefer: str = "auto") -> StabilityReport:
    """Solve with ``F + eps`` for each ``eps`` and compare the root with ``eps = 0``."""
    base = solve_bsde(gen, xi, grid, prefer=prefer).value
    eps = [float(e) for e in eps_seq]
    vals = [solve_bsde(shifted_generator(gen, e), xi, grid, prefer=prefer).value for e in eps]
    devs = [abs(v - base) for v in vals]
    e = np.asarray(eps)
    slope = float(np.dot(e, devs) / np.dot(e, e)) if np.any(e) else 0.0
    bounds = [abs(x) * grid.T * math.exp(gen.L0 * grid.T) for x in eps]
    return StabilityReport(eps, vals, devs, base, slope, bounds)


def mc_heat(xi: PathFunctional, grid: TimeGrid, n_paths: int, seed: int) -> MCEstimate:
    return expectation_mc(xi, grid, 0.0, n_paths, seed)
