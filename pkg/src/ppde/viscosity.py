"""Numerical checks of viscosity and regular sub/supermartingale properties.

Tangency in mean is reduced to a stopping problem on a localized suffix
tree. For the sub-test at ``(t, omega)`` and a paraboloid ``phi``::

    X_s = phi_s(omega') - (u_{t+s} - u_t)(omega (x) omega')
    W   = min(X, lower one-step expectation of W), forced stop at H

and ``phi`` is tangent from above in mean iff ``W_0 = X_0 = 0``. The
super-test is the mirror image with ``max`` and the upper expectation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .funcalc import Generator, Paraboloid, discrete_derivatives
from .functionals import PathFunctional, PathProcess, fixed_time, running_max, terminal, terminal_fn
from .lattice import ScenarioTree
from .measures import _bound
from .pathspace import PathPoint, TimeGrid
from .solvers import HeatSolutionProcess
from .stopping import lower_snell_value, optimal_rule, snell

TANGENCY_RTOL = 1e-9


@dataclass(frozen=True)
class Localization:
    """Exit time ``H = min(m, first k >= 1 with |omega_{t+k} - omega_t| >= eps)`` in steps."""

    eps: float
    m: int

    def __post_init__(self):
        if self.eps <= 0 or self.m < 1:
            raise ValueError("localization needs eps > 0 and at least one step")

    @classmethod
    def default(cls, grid: TimeGrid) -> "Localization":
        m = max(1, grid.n // 4)
        return cls(4.0 * math.sqrt(m * grid.h), m)

    def meet(self, other: "Localization") -> "Localization":
        """``H ^ H'`` is again a ball-exit time with the smaller radius and cap."""
        return Localization(min(self.eps, other.eps), min(self.m, other.m))

    def shrink(self, eps: float) -> "Localization":
        """Exit from a smaller ball (the cap is kept)."""
        return Localization(min(self.eps, eps), self.m)

    def stop_masks(self, tree: ScenarioTree) -> list[np.ndarray]:
        """Per-level masks of nodes where the localization has been reached."""
        out = []
        for k in range(tree.depth + 1):
            disp = np.abs(tree.steps(k) * tree.sqrt_h)
            hit = (disp >= self.eps) if k >= 1 else np.zeros(1, dtype=bool)
            if k >= self.m or k == tree.depth:
                hit = np.ones(tree.n_nodes(k), dtype=bool)
            out.append(hit)
        return out

    def exit_indices(self, tree: ScenarioTree) -> np.ndarray:
        """Per-leaf realised ``H``."""
        n = tree.depth
        leaves = np.arange(1 << n, dtype=np.int64)
        out = np.full(leaves.shape, n)
        done = np.zeros(leaves.shape, dtype=bool)
        for k, mask in enumerate(self.stop_masks(tree)):
            hit = mask[leaves >> (n - k)] & ~done
            out[hit] = k
            done |= hit
        return out


def _point_dict(pt: PathPoint) -> dict:
    return {"t": pt.t, "i": pt.i, "path": pt.prefix[:, 0].tolist()}


@dataclass
class TangencyReport:
    point: dict
    jet: tuple
    localization: tuple
    gap: float
    verdict: str
    generator_value: float
    tolerance: float
    depth: int


@dataclass
class Witness:
    point: dict
    jet: tuple
    gap: float
    generator_value: float
    tolerance: float
    depth: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class _LocalProblem:
    """Localized suffix tree at a point with the centered values of ``u``."""

    def __init__(self, u: PathProcess, pt: PathPoint, H: Localization):
        grid = pt.grid
        if pt.i >= grid.n:
            raise ValueError("tangency is tested strictly before the horizon")
        self.pt, self.H = pt, H
        self.tree = ScenarioTree(grid, pt, depth=min(H.m, grid.n - pt.i))
        vals = self.tree.process_values(u)
        self.u0 = float(vals[0][0])
        self.du = [v - vals[0][0] for v in vals]
        self.stop = H.stop_masks(self.tree)
        self.disp = [self.tree.steps(k) * self.tree.sqrt_h for k in range(self.tree.depth + 1)]

    def gaps(self, q, p, g, L: float, mode: str) -> np.ndarray:
        """``W_0 - X_0`` for a batch of scalar jets."""
        tree = self.tree
        h = tree.h
        sense = -1 if mode == "sub" else 1
        a = sense * _bound(L).step_coefficient(h)
        q, p, g = (np.asarray(v, dtype=np.float64)[:, None] for v in (q, p, g))

        def obstacle(k):
            w = self.disp[k][None, :]
            return q * (k * h) + p * w + 0.5 * g * w * w - self.du[k][None, :]

        W = obstacle(tree.depth)
        for k in range(tree.depth - 1, -1, -1):
            up, down = tree.children(k)
            W = kernels.masked_envelope(obstacle(k), W, up, down, a, self.stop[k], sense)
        return W[:, 0] - obstacle(0)[:, 0]


def tangency_tolerance(q, p, g):
    return TANGENCY_RTOL * (1.0 + np.abs(q) + np.abs(p) + np.abs(g))


def tangency_in_mean(u: PathProcess, pt: PathPoint, phi: Paraboloid, H: Localization | None = None,
                     L: float = 0.0, mode: str = "sub", G: Generator | None = None,
                     tol: float | None = None) -> TangencyReport:
    """Test whether ``phi`` touches ``u`` at ``pt`` from above (sub) or below (super) in mean."""
    if mode not in ("sub", "super"):
        raise ValueError("mode is 'sub' or 'super'")
    H = H or Localization.default(pt.grid)
    prob = _LocalProblem(u, pt, H)
    q, p, g = phi.q, float(phi.p[0]), float(phi.gamma[0, 0])
    gap = float(prob.gaps([q], [p], [g], L, mode)[0])
    if mode == "sub" and gap > 0:
        raise AssertionError("sub-mode gap must be <= 0: stopping at once is admissible")
    if mode == "super" and gap < 0:
        raise AssertionError("super-mode gap must be >= 0: stopping at once is admissible")
    tol = float(tangency_tolerance(q, p, g)) if tol is None else tol
    tangent = abs(gap) <= tol
    verdict = "neither"
    if tangent:
        verdict = "tangent-from-above" if mode == "sub" else "tangent-from-below"
    gen_val = float("nan")
    if G is not None:
        gen_val = float(-q - G(pt.t, pt.current[None, :], prob.u0, np.array([[p]]), np.array([[[g]]]))[0])
    return TangencyReport(_point_dict(pt), (q, p, g), (H.eps, H.m), gap, verdict, gen_val, tol,
                          prob.tree.depth)


# --------------------------------------------------------------------------
# jet search


def default_jet_grid():
    """``q, p`` over ``-2..2`` step 0.25 and ``gamma`` over ``-4..4`` step 0.5 (scalar case)."""
    qs = np.arange(-8, 9) * 0.25
    gs = np.arange(-8, 9) * 0.5
    Q, P, Gm = np.meshgrid(qs, qs, gs, indexing="ij")
    return Q.ravel(), P.ravel(), Gm.ravel()


def seeded_jets(u: PathProcess, pt: PathPoint, offsets=(-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0)):
    """Jets around bump estimates ``(d_t u, d_omega u, d2_omega u)`` with shifted ``q``.

    Empty at ``t = 0``, where the path cannot be bumped.
    """
    if pt.i == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    need_time = pt.i < pt.grid.n
    est = discrete_derivatives(u, pt, need_time=need_time)
    q0 = est.dt if need_time else 0.0
    off = np.asarray(offsets, dtype=np.float64)
    return q0 + off, np.full(off.shape, est.grad[0]), np.full(off.shape, est.hess[0, 0])


@dataclass
class ViscosityReport:
    mode: str
    verdict: str  # pass | fail | inconclusive
    worst: float  # largest signed violation of the generator inequality among tangent jets
    n_points: int
    n_tangent: int
    tolerance: float
    witnesses: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def witnesses_json(self) -> str:
        return json.dumps([asdict(w) for w in self.witnesses], indent=2)


def _verdict(worst: float, tol: float) -> str:
    if worst <= tol:
        return "pass"
    if worst <= 1.1 * tol:
        return "inconclusive"
    return "fail"


def _viscosity_check(u, G: Generator, points, mode: str, jets=None, H=None, L: float = 0.0,
                     tol: float | None = None, seed_jets: bool = True,
                     max_witnesses: int = 20) -> ViscosityReport:
    if isinstance(points, PathPoint):
        points = [points]
    grid = points[0].grid
    tol = 5.0 * grid.h if tol is None else tol
    H = H or Localization.default(grid)
    base = default_jet_grid() if jets is None else tuple(np.asarray(j, float) for j in jets)
    worst = -math.inf
    n_tangent = 0
    witnesses = []
    for pt in points:
        q, p, g = base
        if seed_jets:
            sq, sp, sg = seeded_jets(u, pt)
            q, p, g = np.concatenate([q, sq]), np.concatenate([p, sp]), np.concatenate([g, sg])
        prob = _LocalProblem(u, pt, H)
        gaps = prob.gaps(q, p, g, L, mode)
        if mode == "sub":
            assert np.all(gaps <= 0.0), "sub-mode gap must be <= 0"
        else:
            assert np.all(gaps >= 0.0), "super-mode gap must be >= 0"
        tangent = np.abs(gaps) <= tangency_tolerance(q, p, g)
        n_tangent += int(np.sum(tangent))
        if not np.any(tangent):
            continue
        val = -q - G(pt.t, np.full((q.shape[0], 1), pt.current[0]), prob.u0, p[:, None], g[:, None, None])
        # signed violation: sub needs val <= 0, super needs val >= 0
        viol = val if mode == "sub" else -val
        viol = np.where(tangent, viol, -np.inf)
        worst = max(worst, float(np.max(viol)))
        for j in np.argsort(-viol):
            if viol[j] <= tol or len(witnesses) >= max_witnesses:
                break
            witnesses.append(Witness(_point_dict(pt), (float(q[j]), float(p[j]), float(g[j])),
                                     float(gaps[j]), float(val[j]), tol, prob.tree.depth))
    return ViscosityReport(mode, _verdict(worst, tol), worst, len(points), n_tangent, tol, witnesses)


def subsolution_check(u, G: Generator, points, jets=None, H=None, L: float = 0.0,
                      tol: float | None = None, seed_jets: bool = True) -> ViscosityReport:
    """Every jet tangent from above must satisfy ``-q - G(t, omega, u, p, gamma) <= tol``.

    ``tol`` defaults to ``5h``. The jet set is the default grid plus jets
    seeded from bump derivatives of ``u`` unless ``jets=(q, p, gamma)`` is given.
    """
    return _viscosity_check(u, G, points, "sub", jets, H, L, tol, seed_jets)


def supersolution_check(u, G: Generator, points, jets=None, H=None, L: float = 0.0,
                        tol: float | None = None, seed_jets: bool = True) -> ViscosityReport:
    """Every jet tangent from below must satisfy ``-q - G(t, omega, u, p, gamma) >= -tol``."""
    return _viscosity_check(u, G, points, "super", jets, H, L, tol, seed_jets)


# --------------------------------------------------------------------------
# regular sub/supermartingales


@dataclass
class MartingaleReport:
    sub: bool
    super: bool
    gaps_sub: list  # min_tau E[u_tau] - u_t per point (>= -tol for sub)
    gaps_super: list  # max_tau E[u_tau] - u_t per point (<= tol for super)
    tolerance: float
    witnesses: list = field(default_factory=list)


def _tau_summary(levels: np.ndarray) -> str:
    lo, hi = int(levels.min()), int(levels.max())
    if lo == hi:
        return f"constant level {lo}"
    return f"levels {lo}..{hi}"


def regular_submartingale_check(u: PathProcess, points, L: float = 0.0, tol: float = 1e-9,
                                depth: int | None = None) -> MartingaleReport:
    """Compare ``u_t(omega)`` with the best and worst stopped expectations of ``u``.

    Sub: ``u_t <= min_tau E_lower[u_tau^{t,omega}]``; super:
    ``u_t >= max_tau E_upper[u_tau^{t,omega}]``. With ``L = 0`` both reduce to
    the linear expectation under ``P_0``. The tree covers the remaining
    horizon unless ``depth`` caps it.
    """
    if isinstance(points, PathPoint):
        points = [points]
    gs, gp, wit = [], [], []
    for pt in points:
        d = pt.grid.n - pt.i if depth is None else min(depth, pt.grid.n - pt.i)
        tree = ScenarioTree(pt.grid, pt, depth=d)
        vals = tree.process_values(u)
        u0 = float(vals[0][0])
        lo = lower_snell_value(tree, vals, L)
        env = snell(tree, vals, L)
        g_sub = float(lo[0][0]) - u0
        g_sup = env.value - u0
        gs.append(g_sub)
        gp.append(g_sup)
        if g_sub < -tol:
            neg = snell(tree, [-v for v in vals], L)
            tau = optimal_rule(neg).indices()
            wit.append({"point": _point_dict(pt), "kind": "sub", "gap": g_sub,
                        "tau": _tau_summary(tau), "depth": d})
        if g_sup > tol:
            tau = optimal_rule(env).indices()
            wit.append({"point": _point_dict(pt), "kind": "super", "gap": g_sup,
                        "tau": _tau_summary(tau), "depth": d})
    return MartingaleReport(all(g >= -tol for g in gs), all(g <= tol for g in gp), gs, gp, tol, wit)


# --------------------------------------------------------------------------
# experiments


def sample_points(grid: TimeGrid, count: int, seed: int = 0, include=()) -> list[PathPoint]:
    """Random tree points ``(t_i, omega)`` with ``i < n``; ``include`` forces some levels."""
    rng = np.random.default_rng(seed)
    levels = list(include) + list(rng.integers(0, grid.n, size=max(0, count - len(include))))
    pts = []
    for i in levels:
        steps = rng.choice([-1, 1], size=int(i))
        walk = np.concatenate([[0], np.cumsum(steps)]) * grid.sqrt_h
        pts.append(PathPoint(grid, int(i), walk))
    return pts


def default_candidates(grid: TimeGrid, delta: float = 0.5) -> dict:
    """Heat solutions of three functionals and their ``+-delta t`` shifts."""
    bases = {
        "terminal": terminal(),
        "terminal_square": terminal_fn("square"),
        "running_max": running_max(),
    }
    out = {}
    for name, xi in bases.items():
        u = HeatSolutionProcess(xi, grid)
        out[name] = u
        out[f"{name}+dt"] = u.plus_time(delta)
        out[f"{name}-dt"] = u.plus_time(-delta)
    return out


@dataclass
class EquivalenceRow:
    name: str
    martingale_sub: bool
    martingale_super: bool
    viscosity_sub: bool
    viscosity_super: bool

    @property
    def agree(self) -> bool:
        return (self.martingale_sub == self.viscosity_sub
                and self.martingale_super == self.viscosity_super)

    @property
    def label(self) -> str:
        s, p = self.viscosity_sub, self.viscosity_super
        return {(True, True): "solution", (True, False): "sub-only",
                (False, True): "super-only", (False, False): "neither"}[(s, p)]


def equivalence_experiment(candidates: dict, G: Generator, points, L: float = 0.0,
                           H: Localization | None = None, tol: float | None = None,
                           mart_tol: float = 1e-9) -> list[EquivalenceRow]:
    """Cross-tabulate regular-martingale and viscosity verdicts per candidate."""
    rows = []
    for name, u in candidates.items():
        m = regular_submartingale_check(u, points, L, mart_tol)
        sub = subsolution_check(u, G, points, H=H, L=L, tol=tol)
        sup = supersolution_check(u, G, points, H=H, L=L, tol=tol)
        rows.append(EquivalenceRow(name, m.sub, m.super, sub.passed, sup.passed))
    return rows


@dataclass
class ComparisonReport:
    precondition: bool
    passed: bool
    worst: float  # max (u - v) over checked nodes
    tolerance: float


def comparison_check(u, v, lattice=None, tol: float = 0.0) -> ComparisonReport:
    """``u <= v + tol`` at every node, given ``u_T <= v_T`` on all leaves.

    ``u`` and ``v`` are node-value lists on a common lattice, or processes
    evaluated on ``lattice``. A violated terminal ordering is reported as a
    failed precondition rather than a comparison failure.
    """
    if isinstance(u, (PathProcess, PathFunctional)) or isinstance(v, (PathProcess, PathFunctional)):
        if lattice is None:
            raise ValueError("processes need a lattice to be compared on")
        u = lattice.process_values(PathProcess.stopped(u) if isinstance(u, PathFunctional) else u)
        v = lattice.process_values(PathProcess.stopped(v) if isinstance(v, PathFunctional) else v)
    if len(u) != len(v):
        raise ValueError("value lists have different depths")
    pre = bool(np.all(u[-1] <= v[-1] + tol))
    worst = max(float(np.max(a - b)) for a, b in zip(u, v))
    return ComparisonReport(pre, pre and worst <= tol, worst, tol)


def kink_process() -> PathProcess:
    """``u_t = omega_{t ^ T/2}``: a martingale that is not smooth at ``T/2``."""
    return PathProcess.stopped(fixed_time())
