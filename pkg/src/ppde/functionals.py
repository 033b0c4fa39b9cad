"""Path functionals, adapted processes, and their Markov lifts.

A :class:`PathFunctional` maps full paths to reals. Evaluation is batched: the
evaluator receives an array of shape ``(batch, n + 1, d)`` together with the
:class:`~ppde.pathspace.TimeGrid` it lives on.

Some functionals admit a *lift*: an integer-valued state that is updated one
binomial step at a time and from which the value can be read off. Lifts let
the recombining :class:`~ppde.lattice.StateLattice` replace the exponential
tree, which is what makes ``n = 256`` running-max computations exact and cheap.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .pathspace import DiscretePath, PathPoint, TimeGrid, concat_batch


def _as_batch(paths) -> np.ndarray:
    arr = np.asarray(paths, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[None, :, :]
    return arr


# --------------------------------------------------------------------------
# lifts


class BoundLift:
    """Lift specialised to a starting prefix; see module docstring.

    ``k`` is the signed number of net up-steps since the start point, so the
    current position is ``x0 + k*sqrt(h)``. ``extra`` holds any additional
    integer statistics. ``value`` returns the functional evaluated on the path
    stopped at the given absolute level (flat continuation up to ``T``).
    """

    n_extra = 0

    def __init__(self, prefix: np.ndarray, grid: TimeGrid):
        self.prefix = np.asarray(prefix, dtype=np.float64).reshape(-1)
        self.i0 = len(self.prefix) - 1
        self.grid = grid
        self.x0 = float(self.prefix[-1])
        self.sqrt_h = grid.sqrt_h

    def init_extra(self) -> np.ndarray:
        return np.zeros(self.n_extra, dtype=np.int64)

    def advance(self, extra, k_old, k_new, level):
        return extra

    def position(self, k):
        return self.x0 + k * self.sqrt_h

    def value(self, k, extra, level):
        raise NotImplementedError


def _freeze(obj):
    if isinstance(obj, Lift):
        return obj.key()
    if isinstance(obj, np.ndarray):
        return (obj.shape, obj.tobytes())
    if isinstance(obj, PathPoint):
        return (obj.grid, obj.i, obj.prefix.tobytes())
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(o) for o in obj)
    if callable(obj):
        return id(obj)
    return obj


class Lift:
    """Factory of :class:`BoundLift` objects (d = 1 only).

    Lifts compare equal when they have the same type and parameters, so a
    lattice built for one functional can serve an equal one.
    """

    def bind(self, prefix, grid: TimeGrid) -> BoundLift:
        raise NotImplementedError

    def key(self):
        return (type(self).__name__,) + tuple(
            (k, _freeze(v)) for k, v in sorted(vars(self).items())
        )

    def __eq__(self, other):
        return isinstance(other, Lift) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


class _TerminalBound(BoundLift):
    def __init__(self, prefix, grid, fn):
        super().__init__(prefix, grid)
        self.fn = fn

    def value(self, k, extra, level):
        x = self.position(k)
        return x if self.fn is None else self.fn(x)


class TerminalLift(Lift):
    def __init__(self, fn=None):
        self.fn = fn

    def bind(self, prefix, grid):
        return _TerminalBound(prefix, grid, self.fn)


class _FixedIndexBound(BoundLift):
    n_extra = 1

    def __init__(self, prefix, grid, j):
        super().__init__(prefix, grid)
        self.j = j

    def advance(self, extra, k_old, k_new, level):
        if level <= self.j:
            return k_new[:, None].copy()
        return extra

    def value(self, k, extra, level):
        if self.j <= self.i0:
            return np.full(np.shape(k), self.prefix[self.j])
        if level <= self.j:
            return self.position(k)
        return self.position(extra[:, 0])


class FixedIndexLift(Lift):
    def __init__(self, time: float | None, fraction: float | None):
        self.time, self.fraction = time, fraction

    def bind(self, prefix, grid):
        return _FixedIndexBound(prefix, grid, _fixed_index(grid, self.time, self.fraction, exact=True))


class _ExtremumBound(BoundLift):
    n_extra = 1

    def __init__(self, prefix, grid, sign):
        super().__init__(prefix, grid)
        self.sign = sign
        self.m0 = float(np.max(self.prefix)) if sign > 0 else float(np.min(self.prefix))

    def advance(self, extra, k_old, k_new, level):
        if self.sign > 0:
            return np.maximum(extra, k_new[:, None])
        return np.minimum(extra, k_new[:, None])

    def value(self, k, extra, level):
        x = self.position(extra[:, 0])
        return np.maximum(self.m0, x) if self.sign > 0 else np.minimum(self.m0, x)


class ExtremumLift(Lift):
    def __init__(self, sign: int):
        self.sign = sign

    def bind(self, prefix, grid):
        return _ExtremumBound(prefix, grid, self.sign)


class _AverageBound(BoundLift):
    n_extra = 1

    def __init__(self, prefix, grid):
        super().__init__(prefix, grid)
        self.head = float(np.sum(self.prefix[:-1]))

    def advance(self, extra, k_old, k_new, level):
        return extra + k_old[:, None]

    def value(self, k, extra, level):
        g = self.grid
        walked = (level - self.i0) * self.x0 + self.sqrt_h * extra[:, 0]
        flat = (g.n - level) * self.position(k)
        return (self.head + walked + flat) * g.h / g.T


class AverageLift(Lift):
    def bind(self, prefix, grid):
        return _AverageBound(prefix, grid)


class _AffineBound(BoundLift):
    def __init__(self, prefix, grid, parts, coefs, const, time_coef):
        super().__init__(prefix, grid)
        self.parts = parts
        self.coefs = coefs
        self.const = const
        self.time_coef = time_coef
        self.widths = [p.n_extra for p in parts]
        self.n_extra = sum(self.widths)

    def _split(self, extra):
        out, pos = [], 0
        for w in self.widths:
            out.append(extra[:, pos : pos + w])
            pos += w
        return out

    def init_extra(self):
        if not self.parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([p.init_extra() for p in self.parts])

    def advance(self, extra, k_old, k_new, level):
        if not self.parts:
            return extra
        pieces = [
            p.advance(e, k_old, k_new, level) for p, e in zip(self.parts, self._split(extra))
        ]
        return np.concatenate(pieces, axis=1)

    def value(self, k, extra, level):
        total = np.full(np.shape(k), self.const + self.time_coef * self.grid.time(level))
        for c, p, e in zip(self.coefs, self.parts, self._split(extra)):
            total = total + c * p.value(k, e, level)
        return total


class AffineLift(Lift):
    def __init__(self, terms, const=0.0, time_coef=0.0):
        self.terms = terms  # list of (coef, Lift)
        self.const = const
        self.time_coef = time_coef

    def bind(self, prefix, grid):
        parts = [lift.bind(prefix, grid) for _, lift in self.terms]
        coefs = [c for c, _ in self.terms]
        return _AffineBound(prefix, grid, parts, coefs, self.const, self.time_coef)


class ShiftedLift(Lift):
    """Lift of ``xi^{t, omega}``: bind on the concatenated prefix."""

    def __init__(self, base: Lift, point: PathPoint):
        self.base = base
        self.point = point

    def bind(self, prefix, grid):
        prefix = np.asarray(prefix, dtype=np.float64).reshape(-1)
        full = np.concatenate([self.point.prefix[:, 0], self.point.prefix[-1, 0] + prefix[1:]])
        return self.base.bind(full, self.point.grid)


# --------------------------------------------------------------------------
# functionals


def _fixed_index(grid: TimeGrid, time, fraction, exact=False):
    s = time if time is not None else fraction * grid.T
    x = s / grid.h
    j = int(round(x))
    if abs(x - j) <= 1e-9:
        return min(max(j, 0), grid.n)
    if exact:
        raise ValueError(f"time {s} is not on {grid}")
    return None


class PathFunctional:
    """Evaluator ``omega -> xi(omega)`` on full discrete paths.

    Parameters
    ----------
    name : str
        Catalog name; used in reports.
    func : callable
        ``func(paths, grid) -> values`` with ``paths`` of shape ``(B, n+1, d)``.
    horizon : callable, optional
        ``horizon(grid) -> index``: the value only depends on the path up to
        this grid index. Defaults to the full path.
    lipschitz : float, optional
        Lipschitz constant with respect to the sup norm, when known.
    dim : int, optional
        Required path dimension.
    lift : Lift, optional
        Markov lift used by recombining lattices (d = 1).
    """

    def __init__(
        self,
        name: str,
        func: Callable[[np.ndarray, TimeGrid], np.ndarray],
        *,
        horizon: Callable[[TimeGrid], int] | None = None,
        lipschitz: float | None = None,
        dim: int | None = None,
        lift: Lift | None = None,
        params: dict | None = None,
    ):
        self.name = name
        self._func = func
        self._horizon = horizon
        self.lipschitz = lipschitz
        self.dim = dim
        self.lift = lift
        self.params = dict(params or {})

    def __repr__(self):
        return f"PathFunctional({self.name!r})"

    def horizon_index(self, grid: TimeGrid) -> int:
        return grid.n if self._horizon is None else self._horizon(grid)

    def evaluate(self, paths, grid: TimeGrid) -> np.ndarray:
        arr = _as_batch(paths)
        if arr.shape[1] != grid.n + 1:
            raise ValueError(f"paths have {arr.shape[1]} points, grid needs {grid.n + 1}")
        if self.dim is not None and arr.shape[2] != self.dim:
            raise ValueError(f"{self.name} needs dimension {self.dim}, got {arr.shape[2]}")
        return np.asarray(self._func(arr, grid), dtype=np.float64).reshape(arr.shape[0])

    def __call__(self, path: DiscretePath) -> float:
        return float(self.evaluate(path.values, path.grid)[0])

    # affine arithmetic -----------------------------------------------------

    def _terms(self):
        if self.name == "affine" and "_terms" in self.params:
            return list(self.params["_terms"]), self.params["_const"]
        return [(1.0, self)], 0.0

    def __add__(self, other):
        if isinstance(other, PathFunctional):
            t1, c1 = self._terms()
            t2, c2 = other._terms()
            return affine(t1 + t2, c1 + c2)
        t1, c1 = self._terms()
        return affine(t1, c1 + float(other))

    __radd__ = __add__

    def __mul__(self, a):
        a = float(a)
        t1, c1 = self._terms()
        return affine([(a * c, f) for c, f in t1], a * c1)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, PathFunctional) else -float(other))


def terminal() -> PathFunctional:
    """``omega_T`` (first coordinate for d > 1)."""
    return PathFunctional(
        "terminal", lambda p, g: p[:, -1, 0], lipschitz=1.0, lift=TerminalLift()
    )


_TERMINAL_FNS = {
    "identity": (lambda x: x, 1.0),
    "square": (lambda x: x * x, None),
    "abs": (np.abs, 1.0),
}


def terminal_fn(fn: str | Callable = "square", **kw) -> PathFunctional:
    """Markovian payoff ``psi(omega_T)``.

    ``fn`` is a callable or one of ``identity``, ``square``, ``abs``, ``put``,
    ``call`` (the last two take ``strike``, ``spot``, ``sigma`` and act on
    ``spot * exp(sigma * x)``).
    """
    lip = None
    if callable(fn):
        psi, label = fn, getattr(fn, "__name__", "custom")
    elif fn in ("put", "call"):
        strike, spot, sigma = kw.get("strike", 1.0), kw.get("spot", 1.0), kw.get("sigma", 1.0)
        sign = 1.0 if fn == "call" else -1.0

        def psi(x):
            return np.maximum(sign * (spot * np.exp(sigma * x) - strike), 0.0)

        label = fn
    else:
        psi, lip = _TERMINAL_FNS[fn]
        label = fn
    return PathFunctional(
        f"terminal_{label}",
        lambda p, g: psi(p[:, -1, 0]),
        lipschitz=lip,
        lift=TerminalLift(psi),
        params={"fn": label, **kw},
    )


def fixed_time(time: float | None = None, fraction: float = 0.5) -> PathFunctional:
    """``omega_s`` at an absolute time ``s`` or at ``fraction * T``.

    Off-grid times are linearly interpolated between neighbouring grid values.
    """

    def s_of(g):
        return time if time is not None else fraction * g.T

    def func(p, g):
        x = s_of(g) / g.h
        lo = min(int(math.floor(x + 1e-9)), g.n)
        theta = x - lo
        if theta <= 1e-9 or lo == g.n:
            return p[:, lo, 0]
        return (1 - theta) * p[:, lo, 0] + theta * p[:, lo + 1, 0]

    def horizon(g):
        return min(int(math.ceil(s_of(g) / g.h - 1e-9)), g.n)

    label = f"fixed_time({time})" if time is not None else "fixed_time"
    return PathFunctional(
        label,
        func,
        horizon=horizon,
        lipschitz=1.0,
        lift=FixedIndexLift(time, fraction),
        params={"time": time, "fraction": fraction},
    )


def running_max() -> PathFunctional:
    return PathFunctional(
        "running_max", lambda p, g: p[:, :, 0].max(axis=1), lipschitz=1.0, lift=ExtremumLift(1)
    )


def running_min() -> PathFunctional:
    return PathFunctional(
        "running_min", lambda p, g: p[:, :, 0].min(axis=1), lipschitz=1.0, lift=ExtremumLift(-1)
    )


def time_average() -> PathFunctional:
    """Left-endpoint Riemann average ``(1/T) sum_{i<n} omega_{t_i} h``."""
    return PathFunctional(
        "average",
        lambda p, g: p[:, :-1, 0].sum(axis=1) * g.h / g.T,
        lipschitz=1.0,
        lift=AverageLift(),
    )


def pathwise_integral() -> PathFunctional:
    """Left-endpoint sum of ``omega^1 d omega^2`` (d = 2)."""

    def func(p, g):
        return np.sum(p[:, :-1, 0] * np.diff(p[:, :, 1], axis=1), axis=1)

    return PathFunctional("pathwise_integral", func, dim=2)


def constant(c: float) -> PathFunctional:
    return affine([], float(c))


def affine(terms, const: float = 0.0) -> PathFunctional:
    """``const + sum_k a_k * xi_k`` for ``terms = [(a_k, xi_k), ...]``."""
    terms = [(float(a), f) for a, f in terms]

    def func(p, g):
        out = np.full(p.shape[0], const)
        for a, f in terms:
            out = out + a * f.evaluate(p, g)
        return out

    def horizon(g):
        return max([f.horizon_index(g) for _, f in terms], default=0)

    lip = None
    if all(f.lipschitz is not None for _, f in terms):
        lip = sum(abs(a) * f.lipschitz for a, f in terms)
    dims = {f.dim for _, f in terms if f.dim is not None}
    lift = None
    if all(f.lift is not None for _, f in terms):
        lift = AffineLift([(a, f.lift) for a, f in terms], const)
    return PathFunctional(
        "affine",
        func,
        horizon=horizon,
        lipschitz=lip,
        dim=dims.pop() if len(dims) == 1 else None,
        lift=lift,
        params={"_terms": terms, "_const": const},
    )


def leaf_table(values) -> PathFunctional:
    """Functional given by a table over binomial paths: ``values[j]`` for leaf ``j``.

    The leaf index reads the increments as bits, first step most significant
    (up = 1). Only meaningful on binomial paths with ``len(values) == 2**n``.
    """
    table = np.asarray(values, dtype=np.float64).reshape(-1)

    def func(p, g):
        if table.shape[0] != 1 << g.n:
            raise ValueError(f"table has {table.shape[0]} entries, grid has {1 << g.n} leaves")
        bits = (np.diff(p[:, :, 0], axis=1) > 0).astype(np.int64)
        weights = np.left_shift(1, np.arange(g.n - 1, -1, -1, dtype=np.int64))
        return table[bits @ weights]

    return PathFunctional("leaf_table", func)


def builtin_functionals() -> dict[str, PathFunctional]:
    """Catalog of the built-in functionals keyed by name."""
    return {
        "terminal": terminal(),
        "fixed_time": fixed_time(),
        "running_max": running_max(),
        "running_min": running_min(),
        "average": time_average(),
        "pathwise_integral": pathwise_integral(),
        "terminal_square": terminal_fn("square"),
    }


def shift_functional(xi: PathFunctional, point: PathPoint) -> PathFunctional:
    """``xi^{t, omega}``: ``omega' -> xi(omega (x)_t omega')`` on the suffix grid."""
    grid = point.grid
    if point.i > xi.horizon_index(grid) or point.i == grid.n:
        # measurable w.r.t. the prefix: constant in the suffix
        value = float(xi.evaluate(point.stopped(), grid)[0])
        return PathFunctional(
            f"{xi.name}^shift",
            lambda p, g: np.full(p.shape[0], value),
            horizon=lambda g: 0,
            lipschitz=0.0,
            lift=AffineLift([], value),
        )
    sub = grid.suffix(point.i)

    def func(p, g):
        if g.n != sub.n or not g.compatible(sub):
            raise ValueError("shifted functional evaluated on a foreign grid")
        return xi.evaluate(concat_batch(point.prefix, p), grid)

    lift = ShiftedLift(xi.lift, point) if xi.lift is not None and point.dim == 1 else None
    return PathFunctional(
        f"{xi.name}^shift",
        func,
        horizon=lambda g: max(xi.horizon_index(grid) - point.i, 0),
        lipschitz=xi.lipschitz,
        dim=xi.dim,
        lift=lift,
    )


# --------------------------------------------------------------------------
# processes


class PathProcess:
    """Adapted process ``(t_i, omega) -> u_i(omega)`` evaluated on prefixes.

    ``func(i, prefixes, grid)`` receives ``prefixes`` of shape
    ``(B, i + 1, d)`` and returns ``B`` values.
    """

    def __init__(self, name: str, func, *, lift: Lift | None = None):
        self.name = name
        self._func = func
        self.lift = lift

    def __repr__(self):
        return f"PathProcess({self.name!r})"

    def evaluate(self, i: int, prefixes, grid: TimeGrid) -> np.ndarray:
        arr = _as_batch(prefixes)
        if arr.shape[1] != i + 1:
            raise ValueError(f"prefix length {arr.shape[1]} does not match index {i}")
        return np.asarray(self._func(i, arr, grid), dtype=np.float64).reshape(arr.shape[0])

    def at(self, point: PathPoint) -> float:
        return float(self.evaluate(point.i, point.prefix, point.grid)[0])

    @classmethod
    def stopped(cls, xi: PathFunctional) -> "PathProcess":
        """``X_t = xi(omega stopped at t)``; adapted for any functional."""

        def func(i, p, g):
            flat = np.repeat(p[:, -1:, :], g.n - i, axis=1)
            return xi.evaluate(np.concatenate([p, flat], axis=1), g)

        return cls(f"stopped({xi.name})", func, lift=xi.lift)

    @classmethod
    def from_callable(cls, name: str, fn, lift: Lift | None = None) -> "PathProcess":
        """Wrap ``fn(t, x)`` of time and current position (Markov process)."""

        def func(i, p, g):
            return fn(g.time(i), p[:, -1, 0])

        return cls(name, func, lift=lift)

    def plus_time(self, slope: float) -> "PathProcess":
        """``u_t + slope * t``."""
        base = self

        def func(i, p, g):
            return base.evaluate(i, p, g) + slope * g.time(i)

        lift = None
        if self.lift is not None:
            lift = AffineLift([(1.0, self.lift)], 0.0, float(slope))
        return _DerivedProcess(f"{self.name}{slope:+g}t", func, lift, base, slope)

    def __add__(self, other):
        a, b = self, other
        if isinstance(other, PathProcess):

            def func(i, p, g):
                return a.evaluate(i, p, g) + b.evaluate(i, p, g)

            lift = None
            if a.lift is not None and b.lift is not None:
                lift = AffineLift([(1.0, a.lift), (1.0, b.lift)])
            return PathProcess(f"{a.name}+{b.name}", func, lift=lift)
        c = float(other)
        lift = AffineLift([(1.0, a.lift)], c) if a.lift is not None else None
        return PathProcess(f"{a.name}+{c:g}", lambda i, p, g: a.evaluate(i, p, g) + c, lift=lift)

    def __mul__(self, c):
        a, c = self, float(c)
        lift = AffineLift([(c, a.lift)]) if a.lift is not None else None
        return PathProcess(f"{c:g}*{a.name}", lambda i, p, g: c * a.evaluate(i, p, g), lift=lift)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def node_values(self, lattice) -> list[np.ndarray] | None:
        """Fast path for lattices the process already knows; ``None`` otherwise."""
        return None


class _DerivedProcess(PathProcess):
    """``base + slope*t`` that forwards node-value caches of the base process."""

    def __init__(self, name, func, lift, base, slope):
        super().__init__(name, func, lift=lift)
        self.base = base
        self.slope = slope

    def node_values(self, lattice):
        vals = self.base.node_values(lattice)
        if vals is None:
            return None
        return [v + self.slope * lattice.grid.time(lattice.i0 + k) for k, v in enumerate(vals)]
