"""Binomial carriers for exact expectations: non-recombining trees and state lattices.

Both expose the same interface to the backward recursions: a number of
levels, per-level child index arrays ``(up, down)`` into the next level, and
node positions. Increments are ``+-sqrt(h)``; node positions are computed as
``x0 + k*sqrt(h)`` from the integer net step count ``k`` so that trees and
lattices agree bit for bit on Markov quantities.
"""

from __future__ import annotations

import numpy as np

from .errors import DepthCapError
from .functionals import PathFunctional, PathProcess
from .pathspace import PathPoint, TimeGrid

DEFAULT_MAX_DEPTH = 22
_CHUNK = 1 << 15


class Lattice:
    grid: TimeGrid
    start: PathPoint
    depth: int

    @property
    def i0(self) -> int:
        return self.start.i

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def sqrt_h(self) -> float:
        return self.grid.sqrt_h

    @property
    def x0(self) -> float:
        return float(self.start.prefix[-1, 0])

    def time(self, k: int) -> float:
        return self.grid.time(self.i0 + k)

    def n_nodes(self, k: int) -> int:
        raise NotImplementedError

    def children(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def steps(self, k: int) -> np.ndarray:
        """Signed net step count ``k`` of each node at level ``k``."""
        raise NotImplementedError

    def positions(self, k: int) -> np.ndarray:
        return self.x0 + self.steps(k) * self.sqrt_h

    def leaf_values(self, xi: PathFunctional) -> np.ndarray:
        raise NotImplementedError

    def process_values(self, process: PathProcess) -> list[np.ndarray]:
        raise NotImplementedError


class ScenarioTree(Lattice):
    """Non-recombining binary tree of path prefixes (d = 1).

    Node ``j`` at level ``k`` has children ``2j`` (down) and ``2j + 1`` (up);
    the bits of ``j`` read from the most significant end are the steps taken.
    """

    kind = "tree"

    def __init__(self, grid: TimeGrid, start: PathPoint | None = None, depth: int | None = None,
                 max_depth: int = DEFAULT_MAX_DEPTH):
        self.grid = grid
        self.start = start if start is not None else PathPoint.origin(grid)
        if self.start.dim != 1:
            raise ValueError("tree-exact algorithms are one-dimensional")
        self.depth = grid.n - self.start.i if depth is None else int(depth)
        if self.depth < 0 or self.start.i + self.depth > grid.n:
            raise ValueError(f"depth {self.depth} overruns the grid from index {self.start.i}")
        if self.depth > max_depth:
            raise DepthCapError(f"tree depth {self.depth} exceeds cap {max_depth}")

    def __repr__(self):
        return f"ScenarioTree(grid={self.grid}, i0={self.i0}, depth={self.depth})"

    def n_nodes(self, k):
        return 1 << k

    def children(self, k):
        j = np.arange(1 << k, dtype=np.int64)
        return 2 * j + 1, 2 * j

    def steps(self, k, nodes=None):
        j = np.arange(1 << k, dtype=np.int64) if nodes is None else np.asarray(nodes, np.int64)
        ups = np.zeros(j.shape, dtype=np.int64)
        for b in range(k):
            ups += (j >> b) & 1
        return 2 * ups - k

    def step_paths(self, k, nodes=None) -> np.ndarray:
        """Net step counts along each node's path: shape ``(B, k + 1)``."""
        j = np.arange(1 << k, dtype=np.int64) if nodes is None else np.asarray(nodes, np.int64)
        out = np.zeros((j.shape[0], k + 1), dtype=np.int64)
        for level in range(1, k + 1):
            bit = (j >> (k - level)) & 1
            out[:, level] = out[:, level - 1] + 2 * bit - 1
        return out

    def prefixes(self, k, nodes=None) -> np.ndarray:
        """Absolute path prefixes up to level ``k``: shape ``(B, i0 + k + 1, 1)``."""
        walk = self.x0 + self.step_paths(k, nodes) * self.sqrt_h
        head = self.start.prefix[:-1, 0]
        b = walk.shape[0]
        full = np.concatenate([np.broadcast_to(head, (b, head.shape[0])), walk], axis=1)
        return full[:, :, None]

    def _full_paths(self, k, nodes):
        pre = self.prefixes(k, nodes)
        tail = self.grid.n - (self.i0 + k)
        if tail:
            pre = np.concatenate([pre, np.repeat(pre[:, -1:, :], tail, axis=1)], axis=1)
        return pre

    def leaf_values(self, xi):
        out = np.empty(1 << self.depth)
        for lo in range(0, out.shape[0], _CHUNK):
            nodes = np.arange(lo, min(lo + _CHUNK, out.shape[0]))
            out[nodes] = xi.evaluate(self._full_paths(self.depth, nodes), self.grid)
        return out

    def process_values(self, process):
        cached = process.node_values(self)
        if cached is not None:
            return cached
        levels = []
        for k in range(self.depth + 1):
            vals = np.empty(1 << k)
            for lo in range(0, vals.shape[0], _CHUNK):
                nodes = np.arange(lo, min(lo + _CHUNK, vals.shape[0]))
                vals[nodes] = process.evaluate(self.i0 + k, self.prefixes(k, nodes), self.grid)
            levels.append(vals)
        return levels

    def subtree_slice(self, k: int, j: int, depth: int) -> slice:
        """Indices at level ``k + depth`` of the descendants of node ``(k, j)``."""
        return slice(j << depth, (j + 1) << depth)

    def point(self, k: int, j: int) -> PathPoint:
        return PathPoint(self.grid, self.i0 + k, self.prefixes(k, [j])[0])


def _unique_rows(rows: np.ndarray):
    """Sorted unique rows and inverse map; packs rows into one int64 key when possible."""
    lo = rows.min(axis=0)
    span = rows.max(axis=0) - lo + 1
    if float(np.prod(span.astype(np.float64))) < 2.0**62:
        key = np.zeros(rows.shape[0], dtype=np.int64)
        for c in range(rows.shape[1]):
            key = key * span[c] + (rows[:, c] - lo[c])
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
        return rows[first], inv.reshape(-1)
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


class StateLattice(Lattice):
    """Recombining lattice whose nodes are distinct lift states.

    Built forward from a :class:`~ppde.functionals.Lift`: each level holds the
    sorted unique ``(k, extra...)`` rows reachable from the start point.
    """

    kind = "lattice"

    def __init__(self, grid: TimeGrid, lift, start: PathPoint | None = None,
                 depth: int | None = None):
        self.grid = grid
        self.start = start if start is not None else PathPoint.origin(grid)
        if self.start.dim != 1:
            raise ValueError("lattices are one-dimensional")
        self.depth = grid.n - self.start.i if depth is None else int(depth)
        self.lift = lift
        self.bound = lift.bind(self.start.prefix[:, 0], grid)
        e = self.bound.n_extra
        rows = np.concatenate([[0], self.bound.init_extra()]).astype(np.int64)[None, :]
        self._states = [rows]
        self._children = []
        for k in range(self.depth):
            cur = self._states[-1]
            kk = cur[:, 0]
            level_new = self.i0 + k + 1
            kids = []
            for step in (1, -1):
                k_new = kk + step
                extra = self.bound.advance(cur[:, 1:], kk, k_new, level_new)
                kids.append(np.concatenate([k_new[:, None], np.asarray(extra, np.int64).reshape(kk.shape[0], e)], axis=1))
            both = np.concatenate(kids, axis=0)
            uniq, inv = _unique_rows(both)
            s = cur.shape[0]
            self._children.append((inv[:s].astype(np.int64), inv[s:].astype(np.int64)))
            self._states.append(uniq)

    def __repr__(self):
        return f"StateLattice(grid={self.grid}, i0={self.i0}, depth={self.depth})"

    def n_nodes(self, k):
        return self._states[k].shape[0]

    def children(self, k):
        return self._children[k]

    def steps(self, k):
        return self._states[k][:, 0]

    def states(self, k):
        return self._states[k]

    def _check(self, obj):
        if obj is not None and getattr(obj, "lift", None) != self.lift:
            raise ValueError(f"lattice was built for a different lift than {obj!r}")

    def leaf_values(self, xi):
        self._check(xi)
        st = self._states[self.depth]
        return np.asarray(self.bound.value(st[:, 0], st[:, 1:], self.i0 + self.depth), np.float64)

    def process_values(self, process=None):
        if process is not None:
            cached = process.node_values(self)
            if cached is not None:
                return cached
        self._check(process)
        out = []
        for k, st in enumerate(self._states):
            vals = self.bound.value(st[:, 0], st[:, 1:], self.i0 + k)
            out.append(np.broadcast_to(np.asarray(vals, np.float64), (st.shape[0],)).copy())
        return out


def build_lattice(obj, grid: TimeGrid, start: PathPoint | None = None, *,
                  prefer: str = "auto", max_depth: int = DEFAULT_MAX_DEPTH) -> Lattice:
    """Carrier for a functional or process: a state lattice when it has a lift.

    ``prefer`` is ``"auto"``, ``"tree"`` or ``"lattice"``.
    """
    lift = getattr(obj, "lift", None)
    if prefer == "lattice" or (prefer == "auto" and lift is not None):
        if lift is None:
            raise ValueError(f"{obj!r} has no Markov lift")
        return StateLattice(grid, lift, start)
    return ScenarioTree(grid, start, max_depth=max_depth)


def terminal_values(lattice: Lattice, xi: PathFunctional) -> np.ndarray:
    return lattice.leaf_values(xi)
