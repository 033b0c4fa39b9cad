"""Drift-controlled measure families and their nonlinear expectations.

On a binomial carrier with increments ``+-sqrt(h)``, the measure ``P_lambda``
moves up with probability ``(1 + lambda*sqrt(h))/2``. The upper expectation
over ``|lambda| <= L`` is computed exactly by backward induction; since each
one-step objective is affine in ``lambda``, the optimum sits at an endpoint.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .errors import InvalidDriftError
from .functionals import PathFunctional
from .lattice import Lattice, build_lattice
from .pathspace import DiscretePath, PathPoint, TimeGrid, concat_batch

MC_CHUNK = 4096


@dataclass(frozen=True)
class DriftBound:
    """Componentwise bound ``|lambda| <= L`` on the drift control."""

    L: float

    def __post_init__(self):
        if not (self.L >= 0 and math.isfinite(self.L)):
            raise InvalidDriftError(f"drift bound must be finite and >= 0, got {self.L}")

    def check(self, h: float) -> None:
        if self.L * math.sqrt(h) > 1.0 + 1e-12:
            raise InvalidDriftError(
                f"L*sqrt(h) = {self.L * math.sqrt(h):.6g} > 1: P_lambda is not a probability"
            )

    def step_coefficient(self, h: float) -> float:
        """``L*sqrt(h)/2``: weight of ``|v_up - v_down|`` in the one-step sup."""
        self.check(h)
        return 0.5 * self.L * math.sqrt(h)


def _bound(L) -> DriftBound:
    return L if isinstance(L, DriftBound) else DriftBound(float(L))


def step_probabilities(lam: float, h: float) -> tuple[float, float]:
    """``(p_up, p_down)`` of ``P_lambda`` for one step of size ``h``."""
    a = lam * math.sqrt(h)
    if abs(a) > 1.0 + 1e-12:
        raise InvalidDriftError(f"|lambda|*sqrt(h) = {abs(a):.6g} > 1")
    p_up = 0.5 * (1.0 + a)
    return p_up, 1.0 - p_up


@dataclass
class DriftControl:
    """Per-node drift on a lattice; ``levels[k][j]`` is the drift at node ``(k, j)``."""

    lattice: Lattice
    levels: list
    L: float

    def __post_init__(self):
        for lam in self.levels:
            if np.any(np.abs(lam) > self.L * (1 + 1e-12) + 1e-300):
                raise InvalidDriftError("drift control exceeds its bound")

    def up_probabilities(self, k: int) -> np.ndarray:
        return 0.5 * (1.0 + self.levels[k] * self.lattice.sqrt_h)


@dataclass
class NonlinearExpectation:
    """Result of an upper/lower expectation recursion on a lattice."""

    lattice: Lattice
    values: list  # node values per level
    lambda_star: list  # maximising (or minimising) drift per non-terminal level
    L: float
    sense: int

    @property
    def value(self) -> float:
        return float(self.values[0][0])

    def control(self) -> DriftControl:
        return DriftControl(self.lattice, self.lambda_star, self.L)

    def to_csv(self, target=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "node_id", "value", "lambda_star"])
        for k, vals in enumerate(self.values):
            lam = self.lambda_star[k] if k < len(self.lambda_star) else np.full(vals.shape, np.nan)
            for j, (v, l) in enumerate(zip(vals, lam)):
                w.writerow([k, j, repr(float(v)), repr(float(l))])
        if target is None:
            return buf.getvalue()
        with open(target, "w") as fh:
            fh.write(buf.getvalue())
        return None


def drift_recursion(lattice: Lattice, leaf_values, L, sense: int = 1) -> NonlinearExpectation:
    """Backward recursion of the upper (``sense=1``) or lower (``sense=-1``) expectation."""
    bound = _bound(L)
    a = sense * bound.step_coefficient(lattice.h)
    v = np.asarray(leaf_values, dtype=np.float64)
    if v.shape != (lattice.n_nodes(lattice.depth),):
        raise ValueError("leaf values do not match the lattice leaves")
    values = [None] * (lattice.depth + 1)
    lams = [None] * lattice.depth
    values[-1] = v
    for k in range(lattice.depth - 1, -1, -1):
        up, down = lattice.children(k)
        v, sgn = kernels.drift_step(v, up, down, a)
        values[k] = v
        lams[k] = sense * bound.L * sgn
    return NonlinearExpectation(lattice, values, lams, bound.L, sense)


def ebar_tree(lattice: Lattice, leaf_values, L) -> NonlinearExpectation:
    """Upper expectation ``sup_{|lambda|<=L} E^{P_lambda}`` of leaf values."""
    return drift_recursion(lattice, leaf_values, L, sense=1)


def eunder_tree(lattice: Lattice, leaf_values, L) -> NonlinearExpectation:
    """Lower expectation ``inf_{|lambda|<=L} E^{P_lambda}`` of leaf values."""
    return drift_recursion(lattice, leaf_values, L, sense=-1)


def ebar(xi: PathFunctional, grid: TimeGrid, L, start: PathPoint | None = None,
         prefer: str = "auto") -> NonlinearExpectation:
    """Convenience: build the carrier for ``xi`` and run :func:`ebar_tree`."""
    lat = build_lattice(xi, grid, start, prefer=prefer)
    return ebar_tree(lat, lat.leaf_values(xi), L)


def eunder(xi: PathFunctional, grid: TimeGrid, L, start: PathPoint | None = None,
           prefer: str = "auto") -> NonlinearExpectation:
    lat = build_lattice(xi, grid, start, prefer=prefer)
    return eunder_tree(lat, lat.leaf_values(xi), L)


def linear_expectation(control: DriftControl, leaf_values) -> list:
    """Node values of ``E^{P_lambda}`` for a fixed drift control."""
    lat = control.lattice
    v = np.asarray(leaf_values, dtype=np.float64)
    values = [None] * (lat.depth + 1)
    values[-1] = v
    for k in range(lat.depth - 1, -1, -1):
        up, down = lat.children(k)
        p = control.up_probabilities(k)
        v = p * v[up] + (1.0 - p) * v[down]
        values[k] = v
    return values


# --------------------------------------------------------------------------
# Girsanov weights and Monte Carlo


def girsanov_weight(path: DiscretePath, lam) -> float:
    """``exp(sum lambda_i . dB_i - 0.5 sum |lambda_i|^2 h)`` along one path.

    ``lam`` is a scalar, an ``(n,)`` array, or an ``(n, d)`` array of drifts
    applied on each step.
    """
    dB = np.diff(path.values, axis=0)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64).reshape(
        (-1, 1) if np.ndim(lam) == 1 else np.shape(lam)), dB.shape)
    h = path.grid.h
    return float(np.exp(np.sum(lam * dB) - 0.5 * np.sum(lam * lam) * h))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n_paths: int


def simulate_increments(grid: TimeGrid, n_paths: int, seed: int, dim: int = 1,
                        increments: str = "gaussian", steps: int | None = None):
    """Yield ``(chunk_index, dB)`` blocks of P_0 increments, ``dB`` shaped ``(B, steps, d)``.

    Every block of :data:`MC_CHUNK` paths has its own child seed, so results do
    not depend on how blocks are scheduled.
    """
    steps = grid.n if steps is None else steps
    n_chunks = -(-n_paths // MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)
    for c, ss in enumerate(seeds):
        b = min(MC_CHUNK, n_paths - c * MC_CHUNK)
        rng = np.random.Generator(np.random.PCG64(ss))
        if increments == "gaussian":
            dB = rng.standard_normal((b, steps, dim)) * grid.sqrt_h
        elif increments == "binomial":
            dB = (2.0 * rng.integers(0, 2, size=(b, steps, dim)) - 1.0) * grid.sqrt_h
        else:
            raise ValueError(f"unknown increment law {increments!r}")
        yield c, dB


def simulate_paths(grid: TimeGrid, n_paths: int, seed: int, dim: int = 1,
                   drift: float = 0.0, increments: str = "gaussian") -> np.ndarray:
    """Paths of ``B + drift*t`` under P_0 sampling; shape ``(n_paths, n+1, d)``."""
    blocks = []
    for _, dB in simulate_increments(grid, n_paths, seed, dim, increments):
        dB = dB + drift * grid.h
        walk = np.concatenate([np.zeros((dB.shape[0], 1, dim)), np.cumsum(dB, axis=1)], axis=1)
        blocks.append(walk)
    return np.concatenate(blocks, axis=0)


def expectation_mc(
    xi: PathFunctional,
    grid: TimeGrid,
    lam: float | Callable = 0.0,
    n_paths: int = 100_000,
    seed: int = 0,
    *,
    L: float | None = None,
    start: PathPoint | None = None,
    dim: int | None = None,
    increments: str = "gaussian",
) -> MCEstimate:
    """Girsanov-weighted Monte Carlo estimate of ``E^{P_lambda}[xi^{t,omega}]``.

    Paths are simulated under P_0 and reweighted by the density of the drift.
    ``lam`` is a constant or a rule ``lam(t, x) -> drift`` of time and current
    position (clipped to ``[-L, L]`` when ``L`` is given). With binomial
    increments the exact one-step likelihood ratio ``1 + lambda*dB`` is used.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    start = start if start is not None else PathPoint.origin(grid, dim or xi.dim or 1)
    d = start.dim
    steps = grid.n - start.i
    total = 0.0
    total_sq = 0.0
    for _, dB in simulate_increments(grid, n_paths, seed, d, increments, steps):
        b = dB.shape[0]
        walk = np.concatenate([np.zeros((b, 1, d)), np.cumsum(dB, axis=1)], axis=1)
        paths = concat_batch(start.prefix, walk)
        vals = xi.evaluate(paths, grid)
        if callable(lam):
            lam_steps = np.empty_like(dB)
            for s in range(steps):
                t = grid.time(start.i + s)
                raw = np.asarray(lam(t, paths[:, start.i + s, :]), dtype=np.float64)
                raw = np.broadcast_to(raw.reshape(b, -1), (b, d))
                lam_steps[:, s, :] = raw if L is None else np.clip(raw, -L, L)
        else:
            c = float(lam) if L is None else float(np.clip(lam, -L, L))
            lam_steps = np.full_like(dB, c)
        if increments == "binomial":
            weights = np.prod(1.0 + lam_steps * dB, axis=(1, 2))
        else:
            expo = np.sum(lam_steps * dB, axis=(1, 2)) - 0.5 * grid.h * np.sum(lam_steps**2, axis=(1, 2))
            weights = np.exp(expo)
        wv = weights * vals
        total += float(np.sum(wv))
        total_sq += float(np.sum(wv * wv))
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0) * n_paths / (n_paths - 1)
    return MCEstimate(mean, math.sqrt(var / n_paths), n_paths)
