"""Optimal stopping under the drift-controlled upper expectation.

The envelope is computed by dynamic programming on a lattice:
``Y = max(X, S)`` with ``S`` the one-step upper expectation of the children.
The recorded quantities give the discrete Doob-Meyer decomposition
``Y(child) - Y(node) = dM(child) - dK(node)`` with ``dK = Y - S >= 0`` and
``dM`` a one-step martingale increment under the extremal drift.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .functionals import PathFunctional, PathProcess
from .lattice import Lattice, ScenarioTree
from .measures import DriftControl, _bound


def obstacle_values(lattice: Lattice, X) -> list[np.ndarray]:
    """Node values of an obstacle given as arrays, a process, or a functional.

    A :class:`PathFunctional` is read as the process of its values on stopped
    paths.
    """
    if isinstance(X, PathFunctional):
        X = PathProcess.stopped(X)
    if isinstance(X, PathProcess):
        return lattice.process_values(X)
    levels = [np.asarray(x, dtype=np.float64).reshape(-1) for x in X]
    if len(levels) != lattice.depth + 1:
        raise ValueError(f"obstacle has {len(levels)} levels, lattice has {lattice.depth + 1}")
    for k, x in enumerate(levels):
        if x.shape[0] != lattice.n_nodes(k):
            raise ValueError(f"obstacle level {k} has {x.shape[0]} nodes, expected {lattice.n_nodes(k)}")
    return levels


@dataclass
class StoppingTime:
    """Stopping rule as per-level masks: a path stops at the first node with ``stop`` set.

    The final level is always stopping. Masks indexed by nodes are adapted by
    construction.
    """

    lattice: Lattice
    stop: list

    def __post_init__(self):
        self.stop = [np.asarray(m, dtype=bool) for m in self.stop]
        self.stop[-1] = np.ones(self.lattice.n_nodes(self.lattice.depth), dtype=bool)

    @classmethod
    def constant(cls, lattice: Lattice, k: int) -> "StoppingTime":
        return cls(lattice, [np.full(lattice.n_nodes(j), j == k) for j in range(lattice.depth + 1)])

    @classmethod
    def from_indices(cls, tree: ScenarioTree, idx) -> "StoppingTime":
        """Build from per-leaf stopping levels; raises if the rule is not adapted."""
        idx = np.asarray(idx, dtype=np.int64)
        n = tree.depth
        if idx.shape != (1 << n,) or np.any(idx < 0) or np.any(idx > n):
            raise ValueError("per-leaf indices must be levels in [0, depth]")
        stop = []
        for k in range(n + 1):
            block = (idx == k).reshape(1 << k, -1)
            stop.append(block.all(axis=1))
        st = cls(tree, stop)
        if not np.array_equal(st.indices(), idx):
            raise ValueError("per-leaf indices do not define an adapted stopping time")
        return st

    def indices(self) -> np.ndarray:
        """Per-leaf first stopping level (trees only)."""
        if not isinstance(self.lattice, ScenarioTree):
            raise TypeError("per-path indices are only defined on trees")
        n = self.lattice.depth
        leaves = np.arange(1 << n, dtype=np.int64)
        out = np.full(leaves.shape, n, dtype=np.int64)
        done = np.zeros(leaves.shape, dtype=bool)
        for k in range(n + 1):
            hit = self.stop[k][leaves >> (n - k)] & ~done
            out[hit] = k
            done |= hit
        return out

    def is_adapted(self) -> bool:
        """Certificate: paths agreeing up to their stopping level stop identically."""
        if not isinstance(self.lattice, ScenarioTree):
            return True
        idx = self.indices()
        n = self.lattice.depth
        for k in range(n + 1):
            block = idx.reshape(1 << k, -1)
            at_k = block == k
            if np.any(at_k.any(axis=1) & ~at_k.all(axis=1)):
                return False
        return True

    def reach(self, control: DriftControl | None = None) -> list[np.ndarray]:
        """Probability of reaching each node still unstopped on arrival."""
        lat = self.lattice
        r = [np.ones(1)]
        for k in range(lat.depth):
            cont = r[k] * ~self.stop[k]
            p = 0.5 if control is None else control.up_probabilities(k)
            up, down = lat.children(k)
            nxt = np.bincount(up, weights=cont * p, minlength=lat.n_nodes(k + 1))
            nxt += np.bincount(down, weights=cont * (1.0 - p), minlength=lat.n_nodes(k + 1))
            r.append(nxt)
        return r

    def evaluate(self, X: list, control: DriftControl | None = None) -> float:
        """``E^{P_lambda}[X_tau]`` by forward propagation of reach mass."""
        r = self.reach(control)
        total = 0.0
        for k, (rk, m) in enumerate(zip(r, self.stop)):
            sel = m & (rk > 0)
            total += float(np.sum(rk[sel] * X[k][sel]))
        return total


@dataclass
class SnellEnvelope:
    """Envelope records per level: obstacle, value, continuation, compensator, drift."""

    lattice: Lattice
    L: float
    X: list
    Y: list
    S: list  # levels 0..depth-1
    dK: list  # levels 0..depth-1
    lambda_star: list  # levels 0..depth-1

    @property
    def value(self) -> float:
        return float(self.Y[0][0])

    def is_stop(self, k: int) -> np.ndarray:
        return self.Y[k] == self.X[k]

    def to_csv(self, target=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "node_id", "X", "Y", "S", "dK", "lambda_star", "is_stop"])
        depth = self.lattice.depth
        for k in range(depth + 1):
            nodes = self.lattice.n_nodes(k)
            leaf = k == depth
            nan = np.full(nodes, np.nan)
            S = nan if leaf else self.S[k]
            dK = np.zeros(nodes) if leaf else self.dK[k]
            lam = nan if leaf else self.lambda_star[k]
            stop = self.is_stop(k)
            for j in range(nodes):
                w.writerow([k, j, repr(float(self.X[k][j])), repr(float(self.Y[k][j])),
                            repr(float(S[j])), repr(float(dK[j])), repr(float(lam[j])),
                            int(stop[j])])
        if target is None:
            return buf.getvalue()
        with open(target, "w") as fh:
            fh.write(buf.getvalue())
        return None


def snell(lattice: Lattice, X, L) -> SnellEnvelope:
    """Snell envelope of the obstacle ``X`` under the upper expectation with bound ``L``."""
    bound = _bound(L)
    a = bound.step_coefficient(lattice.h)
    Xs = obstacle_values(lattice, X)
    depth = lattice.depth
    Y = [None] * (depth + 1)
    S, dK, lam = [None] * depth, [None] * depth, [None] * depth
    Y[depth] = Xs[depth].copy()
    for k in range(depth - 1, -1, -1):
        up, down = lattice.children(k)
        y, s, sgn = kernels.envelope_step(Xs[k], Y[k + 1], up, down, a)
        Y[k], S[k], dK[k] = y, s, y - s
        lam[k] = bound.L * sgn
    return SnellEnvelope(lattice, bound.L, Xs, Y, S, dK, lam)


def lower_snell_value(lattice: Lattice, X, L) -> list[np.ndarray]:
    """Node values of ``min_tau inf_lambda E^{P_lambda}[X_tau]``."""
    Xs = obstacle_values(lattice, X)
    env = snell(lattice, [-x for x in Xs], L)
    return [-y for y in env.Y]


def optimal_rule(env: SnellEnvelope) -> StoppingTime:
    """First node where the envelope touches the obstacle (exact equality)."""
    return StoppingTime(env.lattice, [env.Y[k] == env.X[k] for k in range(env.lattice.depth + 1)])


def extremal_measure(env: SnellEnvelope) -> DriftControl:
    return DriftControl(env.lattice, env.lambda_star, env.L)


def linear_snell(lattice: Lattice, X, control: DriftControl | None = None) -> list[np.ndarray]:
    """Snell envelope under a single measure ``P_lambda`` (``P_0`` if no control)."""
    Xs = obstacle_values(lattice, X)
    Y = [None] * (lattice.depth + 1)
    Y[-1] = Xs[-1].copy()
    for k in range(lattice.depth - 1, -1, -1):
        up, down = lattice.children(k)
        p = 0.5 if control is None else control.up_probabilities(k)
        Y[k] = np.maximum(Xs[k], p * Y[k + 1][up] + (1.0 - p) * Y[k + 1][down])
    return Y


@dataclass
class DoobMeyer:
    """``dM[k]`` lives on level ``k+1`` nodes; ``dK[k]`` on level ``k`` nodes."""

    env: SnellEnvelope
    dM: list
    dK: list

    def martingale_residual(self) -> float:
        """Largest conditional mean of ``dM`` under the extremal drift."""
        lat = self.env.lattice
        ctl = extremal_measure(self.env)
        worst = 0.0
        for k in range(lat.depth):
            up, down = lat.children(k)
            p = ctl.up_probabilities(k)
            mean = p * self.dM[k][up] + (1.0 - p) * self.dM[k][down]
            worst = max(worst, float(np.max(np.abs(mean))))
        return worst

    def skorokhod_sum(self) -> float:
        """Largest ``sum |(Y - X) dK|`` along any path (zero iff K only grows on contact)."""
        env, lat = self.env, self.env.lattice
        acc = np.zeros(lat.n_nodes(lat.depth))
        for k in range(lat.depth - 1, -1, -1):
            gap = env.Y[k] - env.X[k]
            active = self.dK[k] != 0.0
            term = np.zeros_like(gap)
            term[active] = np.abs(gap[active] * self.dK[k][active])
            up, down = lat.children(k)
            acc = term + np.maximum(acc[up], acc[down])
        return float(acc[0])

    def path_increments(self, k: int) -> np.ndarray:
        """``Y(child) - Y(parent)`` rebuilt as ``dM - dK`` for the children at level ``k+1``."""
        lat = self.env.lattice
        up, down = lat.children(k)
        out = np.empty(lat.n_nodes(k + 1))
        out[up] = self.dM[k][up] - self.dK[k]
        out[down] = self.dM[k][down] - self.dK[k]
        return out


def doob_meyer(env: SnellEnvelope) -> DoobMeyer:
    lat = env.lattice
    dM = []
    for k in range(lat.depth):
        up, down = lat.children(k)
        m = np.empty(lat.n_nodes(k + 1))
        m[up] = env.Y[k + 1][up] - env.S[k]
        m[down] = env.Y[k + 1][down] - env.S[k]
        dM.append(m)
    return DoobMeyer(env, dM, list(env.dK))


def hitting_time_eps(env: SnellEnvelope, i: int, eps: float) -> StoppingTime:
    """First level ``>= i`` where ``Y <= X + eps``; the final level at worst."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lat = env.lattice
    if not 0 <= i <= lat.depth:
        raise ValueError(f"level {i} outside the lattice")
    stop = [
        np.zeros(lat.n_nodes(k), dtype=bool) if k < i else env.Y[k] <= env.X[k] + eps
        for k in range(lat.depth + 1)
    ]
    return StoppingTime(lat, stop)


def stopped_recursion(env: SnellEnvelope, tau: StoppingTime) -> list:
    """Upper-expectation recursion of ``Y`` frozen at ``tau``: ``V = Y`` where stopped."""
    lat = env.lattice
    a = _bound(env.L).step_coefficient(lat.h)
    V = [None] * (lat.depth + 1)
    V[-1] = env.Y[-1].copy()
    for k in range(lat.depth - 1, -1, -1):
        up, down = lat.children(k)
        cont, _ = kernels.drift_step(V[k + 1], up, down, a)
        V[k] = np.where(tau.stop[k], env.Y[k], cont)
    return V


def conservation_error(env: SnellEnvelope, i: int, eps: float) -> float:
    """``max |V_i - Y_i|`` for ``V`` the recursion of ``Y`` stopped at ``D_i^eps``."""
    V = stopped_recursion(env, hitting_time_eps(env, i, eps))
    return float(np.max(np.abs(V[i] - env.Y[i])))
