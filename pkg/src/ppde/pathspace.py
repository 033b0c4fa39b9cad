"""Discrete canonical path space: grids, paths, points, concatenation, distance."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatchError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*h`` on ``[0, T]`` with ``h = T/n``."""

    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"step count must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def sqrt_h(self) -> float:
        return math.sqrt(self.h)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    def time(self, i: int) -> float:
        return i * self.h

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises if ``t`` is off grid."""
        x = t / self.h
        i = int(round(x))
        if abs(x - i) > tol or not 0 <= i <= self.n:
            raise ValueError(f"time {t} is not a point of {self}")
        return i

    def suffix(self, i: int) -> "TimeGrid":
        """Grid of the remaining ``n - i`` steps after index ``i`` (same ``h``)."""
        if not 0 <= i < self.n:
            raise ValueError(f"no suffix grid after index {i} of {self}")
        return TimeGrid(self.T - i * self.h, self.n - i)

    def compatible(self, other: "TimeGrid") -> bool:
        return math.isclose(self.h, other.h, rel_tol=1e-12, abs_tol=0.0)


@dataclass(frozen=True)
class DiscretePath:
    """Path sampled on a grid: ``values[i]`` is the position at ``t_i``."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n + 1:
            raise GridMismatchError(
                f"path has {v.shape[0]} points but grid needs {self.grid.n + 1}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if np.any(v[0] != 0.0):
            raise ValueError("paths start at the origin")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def prefix(self, i: int) -> "PathPoint":
        return PathPoint(self.grid, i, self.values[: i + 1])

    def to_csv(self, target=None) -> str | None:
        return write_path_csv(self, target)


@dataclass(frozen=True)
class PathPoint:
    """A point ``(t_i, omega stopped at t_i)`` of the discrete path space."""

    grid: TimeGrid
    i: int
    prefix: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.prefix, dtype=np.float64)
        if p.ndim == 1:
            p = p[:, None]
        if not 0 <= self.i <= self.grid.n:
            raise ValueError(f"index {self.i} outside grid {self.grid}")
        if p.shape[0] != self.i + 1:
            raise GridMismatchError(f"prefix length {p.shape[0]} does not match index {self.i}")
        if np.any(p[0] != 0.0):
            raise ValueError("paths start at the origin")
        p.setflags(write=False)
        object.__setattr__(self, "prefix", p)

    @classmethod
    def origin(cls, grid: TimeGrid, dim: int = 1) -> "PathPoint":
        return cls(grid, 0, np.zeros((1, dim)))

    @property
    def t(self) -> float:
        return self.grid.time(self.i)

    @property
    def dim(self) -> int:
        return self.prefix.shape[1]

    @property
    def current(self) -> np.ndarray:
        return self.prefix[-1]

    def stopped(self) -> np.ndarray:
        """Full-length array of the path stopped at ``t_i`` (flat afterwards)."""
        out = np.empty((self.grid.n + 1, self.dim))
        out[: self.i + 1] = self.prefix
        out[self.i + 1 :] = self.prefix[-1]
        return out


def _suffix_array(suffix, dim: int) -> np.ndarray:
    if isinstance(suffix, DiscretePath):
        return suffix.values
    arr = np.asarray(suffix, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((1, dim))
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def concat(omega, suffix, i: int | None = None) -> DiscretePath:
    """Concatenate a prefix with a suffix started at the origin.

    ``result_s = omega_s`` for ``s < t_i`` and ``omega_{t_i} + suffix_{s - t_i}``
    afterwards. ``omega`` is a :class:`PathPoint` or a :class:`DiscretePath`
    together with ``i``.
    """
    if isinstance(omega, DiscretePath):
        if i is None:
            raise ValueError("index i is required when concatenating a full path")
        omega = omega.prefix(i)
    grid = omega.grid
    tail = _suffix_array(suffix, omega.dim)
    if isinstance(suffix, DiscretePath) and not grid.compatible(suffix.grid):
        raise GridMismatchError("suffix grid step differs from prefix grid step")
    if tail.shape[0] != grid.n - omega.i + 1:
        raise GridMismatchError(
            f"suffix has {tail.shape[0]} points, expected {grid.n - omega.i + 1}"
        )
    if tail.shape[1] != omega.dim:
        raise GridMismatchError("suffix dimension differs from prefix dimension")
    if np.any(tail[0] != 0.0):
        raise ValueError("suffix must start at the origin")
    out = np.empty((grid.n + 1, omega.dim))
    out[: omega.i] = omega.prefix[:-1]
    out[omega.i :] = omega.prefix[-1] + tail
    return DiscretePath(grid, out)


def concat_batch(prefix: np.ndarray, suffixes: np.ndarray) -> np.ndarray:
    """Vectorised concatenation: ``prefix (i+1, d)`` with ``suffixes (B, m+1, d)``."""
    prefix = np.asarray(prefix, dtype=np.float64)
    b = suffixes.shape[0]
    head = np.broadcast_to(prefix[:-1], (b,) + prefix[:-1].shape)
    return np.concatenate([head, prefix[-1] + suffixes], axis=1)


def pseudo_distance(a: PathPoint, b: PathPoint) -> float:
    """``|t - t'|`` plus the sup distance of the two stopped paths.

    Both stopped paths are extended flat to the common grid before the sup is
    taken; the per-time norm on ``R^d`` is Euclidean.
    """
    if not a.grid.compatible(b.grid):
        raise GridMismatchError("points live on grids with different steps")
    if a.dim != b.dim:
        raise GridMismatchError("points have different dimensions")
    m = max(a.i, b.i) + 1
    ea = np.empty((m, a.dim))
    eb = np.empty((m, b.dim))
    ea[: a.i + 1] = a.prefix
    ea[a.i + 1 :] = a.prefix[-1]
    eb[: b.i + 1] = b.prefix
    eb[b.i + 1 :] = b.prefix[-1]
    sup = float(np.max(np.linalg.norm(ea - eb, axis=1)))
    return abs(a.t - b.t) + sup


def write_path_csv(path: DiscretePath, target=None) -> str | None:
    """Write ``t,x1..xd`` rows at full precision; returns the text if no target."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{k + 1}" for k in range(path.dim)])
    for t, row in zip(path.grid.times, path.values):
        writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    text = buf.getvalue()
    if target is None:
        return text
    Path(target).write_text(text)
    return None


def read_path_csv(source) -> DiscretePath:
    """Inverse of :func:`write_path_csv`; accepts a filename or CSV text."""
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    if header[0] != "t" or len(header) < 2:
        raise ValueError("expected header t,x1..xd")
    data = np.array([[float(x) for x in r] for r in body])
    times = data[:, 0]
    n = len(times) - 1
    grid = TimeGrid(float(times[-1]), n)
    if not np.allclose(times, grid.times, rtol=0, atol=1e-12 * max(1.0, grid.T)):
        raise GridMismatchError("CSV times are not a uniform grid starting at 0")
    return DiscretePath(grid, data[:, 1:])
