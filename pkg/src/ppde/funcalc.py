"""Test objects and smoothness diagnostics on discrete path space.

Paraboloids ``phi_s = q*s + p.omega_s + 0.5*omega_s' gamma omega_s`` are the
test processes of the viscosity machinery. Generators ``G(t, x, y, z, gamma)``
are evaluated at the current position ``x`` of the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .functionals import PathProcess
from .measures import simulate_paths
from .pathspace import DiscretePath, PathPoint, TimeGrid


@dataclass(frozen=True)
class Paraboloid:
    """Test paraboloid with time slope ``q``, linear part ``p`` and Hessian ``gamma``."""

    q: float
    p: np.ndarray = field(default_factory=lambda: np.zeros(1))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        g = np.asarray(self.gamma, dtype=np.float64)
        g = g.reshape(p.shape[0], p.shape[0])
        if not np.allclose(g, g.T, rtol=0.0, atol=1e-14):
            raise ValueError("gamma must be symmetric")
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def scalar(cls, q: float, p: float, gamma: float) -> "Paraboloid":
        return cls(q, np.array([p]), np.array([[gamma]]))

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def size(self) -> float:
        """``|q| + |p| + |gamma|`` (max norms), used to scale tolerances."""
        return abs(self.q) + float(np.max(np.abs(self.p))) + float(np.max(np.abs(self.gamma)))

    def __call__(self, s, x) -> np.ndarray:
        """Value at time offset ``s`` and displacement ``x`` (shape ``(..., d)``)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            x = x[..., None]
        quad = np.einsum("...i,ij,...j->...", x, self.gamma, x)
        return self.q * np.asarray(s) + x @ self.p + 0.5 * quad

    def gradient(self, x) -> np.ndarray:
        return self.p + np.asarray(x, dtype=np.float64) @ self.gamma

    def as_process(self) -> "SmoothProcess":
        """``phi`` as a process of ``(t, omega_t)`` with analytic derivatives."""
        phi = self
        return SmoothProcess(
            f"paraboloid({self.q:g})",
            value=lambda t, pre: float(phi(t, pre[-1])),
            dt=lambda t, pre: phi.q,
            grad=lambda t, pre: phi.gradient(pre[-1]),
            hess=lambda t, pre: phi.gamma,
        )


def paraboloid_eval(phi: Paraboloid, s: float, omega, grid: TimeGrid | None = None) -> float:
    """``phi_s(omega)`` for a suffix path ``omega`` (array or :class:`DiscretePath`)."""
    if isinstance(omega, DiscretePath):
        grid, values = omega.grid, omega.values
    else:
        values = np.asarray(omega, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
    if grid is None:
        raise ValueError("a grid is needed to locate s on a raw array")
    i = grid.index_of(s)
    return float(phi(s, values[i]))


class SmoothProcess:
    """Process ``u(t, omega)`` with evaluators for its path derivatives.

    Each evaluator is called as ``f(t, prefix)`` with ``prefix`` the stopped
    path of shape ``(i + 1, d)``. Missing derivatives fall back to bump
    estimates from :func:`discrete_derivatives`.
    """

    def __init__(self, name: str, value: Callable, dt: Callable | None = None,
                 grad: Callable | None = None, hess: Callable | None = None,
                 lift=None):
        self.name = name
        self._value, self._dt, self._grad, self._hess = value, dt, grad, hess
        self.lift = lift

    def __repr__(self):
        return f"SmoothProcess({self.name!r})"

    def value(self, pt: PathPoint) -> float:
        return float(self._value(pt.t, pt.prefix))

    def derivatives(self, pt: PathPoint):
        """``(dt, grad, hess)`` at ``pt``; analytic where supplied."""
        est = None
        if self._dt is None or self._grad is None or self._hess is None:
            est = discrete_derivatives(self, pt, need_time=self._dt is None)
        dt = self._dt(pt.t, pt.prefix) if self._dt else est.dt
        grad = self._grad(pt.t, pt.prefix) if self._grad else est.grad
        hess = self._hess(pt.t, pt.prefix) if self._hess else est.hess
        d = pt.dim
        return (float(dt), np.asarray(grad, np.float64).reshape(d),
                np.asarray(hess, np.float64).reshape(d, d))

    def as_path_process(self) -> PathProcess:
        me = self

        def func(i, p, g):
            t = g.time(i)
            return np.array([me._value(t, row) for row in p])

        return PathProcess(self.name, func, lift=self.lift)


def _evaluator(u, grid: TimeGrid):
    """Uniform ``f(i, prefix) -> float`` over PathProcess / SmoothProcess."""
    if isinstance(u, PathProcess):
        return lambda i, pre: float(u.evaluate(i, pre, grid)[0])
    if isinstance(u, SmoothProcess):
        return lambda i, pre: float(u._value(grid.time(i), pre))
    raise TypeError(f"cannot evaluate {u!r}")


@dataclass(frozen=True)
class DerivativeEstimate:
    dt: float
    grad: np.ndarray
    hess: np.ndarray
    eps: float


def discrete_derivatives(u, pt: PathPoint, eps: float | None = None,
                         need_time: bool = True) -> DerivativeEstimate:
    """Bump estimates of the time derivative, gradient and Hessian at ``pt``.

    Spatial derivatives bump the last path value vertically by ``+-eps``
    (central differences; the Hessian is symmetric by construction). The time
    derivative extends the path flat by one grid step. The default bump is
    ``1e-4 * max(1, |omega_t|)``. Paths start at the origin, so ``t = 0`` is
    rejected.
    """
    grid = pt.grid
    if pt.i == 0:
        raise ValueError("vertical bumps need t > 0: paths are pinned at the origin")
    f = _evaluator(u, grid)
    x = pt.prefix[-1]
    if eps is None:
        eps = 1e-4 * max(1.0, float(np.max(np.abs(x))))
    if eps <= 0:
        raise ValueError("bump size must be positive")
    d = pt.dim

    def bumped(delta):
        pre = pt.prefix.copy()
        pre[-1] = pre[-1] + delta
        return f(pt.i, pre)

    u0 = f(pt.i, pt.prefix)
    grad = np.empty(d)
    hess = np.empty((d, d))
    e = np.eye(d) * eps
    plus = [bumped(e[k]) for k in range(d)]
    minus = [bumped(-e[k]) for k in range(d)]
    for k in range(d):
        grad[k] = (plus[k] - minus[k]) / (2 * eps)
        hess[k, k] = (plus[k] - 2 * u0 + minus[k]) / (eps * eps)
    for a in range(d):
        for b in range(a + 1, d):
            mixed = (bumped(e[a] + e[b]) - bumped(e[a] - e[b]) - bumped(e[b] - e[a])
                     + bumped(-e[a] - e[b])) / (4 * eps * eps)
            hess[a, b] = hess[b, a] = mixed
    dt = float("nan")
    if need_time:
        if pt.i >= grid.n:
            raise ValueError("no time derivative at the terminal time")
        ext = np.concatenate([pt.prefix, pt.prefix[-1:]], axis=0)
        dt = (f(pt.i + 1, ext) - u0) / grid.h
    return DerivativeEstimate(dt, grad, hess, eps)


# --------------------------------------------------------------------------
# generators


class Generator:
    """Nonlinearity ``G(t, x, y, z, gamma)`` of a path-dependent PDE.

    Arguments broadcast: ``y`` of shape ``(...)``, ``z`` of shape ``(..., d)``
    and ``gamma`` of shape ``(..., d, d)``. For semilinear generators
    ``G = 0.5*Tr(gamma) + F(t, x, y, z)`` and ``F`` is kept separately.
    ``L0`` is a Lipschitz constant in ``(y, z)`` for the norm ``|dy| + |dz|_1``.
    """

    def __init__(self, name: str, kind: str, L0: float, F: Callable | None = None,
                 G: Callable | None = None, params: dict | None = None):
        if F is None and G is None:
            raise ValueError("need F (semilinear) or G")
        self.name, self.kind, self.L0 = name, kind, float(L0)
        self.F = F
        self._G = G
        self.params = dict(params or {})

    def __repr__(self):
        return f"Generator({self.name!r}, L0={self.L0:g})"

    @property
    def semilinear(self) -> bool:
        return self.F is not None

    def __call__(self, t, x, y, z, gamma) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=np.float64)
        if self._G is not None:
            return self._G(t, x, y, z, gamma)
        return 0.5 * np.trace(gamma, axis1=-2, axis2=-1) + self.F(t, x, y, z)

    def check_ellipticity(self, trials: int = 1000, seed: int = 0, dim: int = 1) -> int:
        """Count sampled violations of ``G(gamma + A) >= G(gamma)`` for ``A >= 0``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1, trials)
        x = rng.normal(size=(trials, dim))
        y = rng.normal(size=trials)
        z = rng.normal(size=(trials, dim))
        g = rng.normal(size=(trials, dim, dim))
        g = g + np.swapaxes(g, 1, 2)
        m = rng.normal(size=(trials, dim, dim))
        psd = m @ np.swapaxes(m, 1, 2)
        lo = self(t, x, y, z, g)
        hi = self(t, x, y, z, g + psd)
        return int(np.sum(hi < lo - 1e-12 * (1 + np.abs(lo))))

    def check_lipschitz(self, trials: int = 1000, seed: int = 0, dim: int = 1) -> int:
        """Count sampled violations of the declared ``L0`` in ``(y, z)``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1, trials)
        x = rng.normal(size=(trials, dim))
        g = np.zeros((trials, dim, dim))
        y1, y2 = rng.normal(size=(2, trials)) * 3
        z1, z2 = rng.normal(size=(2, trials, dim)) * 3
        diff = np.abs(self(t, x, y1, z1, g) - self(t, x, y2, z2, g))
        bound = self.L0 * (np.abs(y1 - y2) + np.abs(z1 - z2).sum(axis=-1))
        return int(np.sum(diff > bound + 1e-12 * (1 + bound)))


def heat_generator() -> Generator:
    return Generator("heat", "heat", 0.0, F=lambda t, x, y, z: np.zeros(np.broadcast(
        np.asarray(y), np.asarray(z)[..., 0]).shape))


def semilinear_generator(F: Callable, L0: float, name: str = "semilinear",
                         params: dict | None = None) -> Generator:
    return Generator(name, "semilinear", L0, F=F, params=params)


def affine_generator(a: float = 0.0, b=0.0, c: float = 0.0, name: str | None = None) -> Generator:
    """``F = a*y + b.z + c``."""
    b_arr = np.atleast_1d(np.asarray(b, dtype=np.float64))

    def F(t, x, y, z):
        z = np.asarray(z, dtype=np.float64)
        return a * np.asarray(y, dtype=np.float64) + np.sum(b_arr * z, axis=-1) + c

    L0 = max(abs(a), float(np.max(np.abs(b_arr))))
    label = name or f"affine(a={a:g},b={float(b_arr[0]):g},c={c:g})"
    return semilinear_generator(F, L0, label, {"a": a, "b": b_arr.tolist(), "c": c})


def decay_generator() -> Generator:
    """``F = -y + 1``: the discounting example with unit running reward."""
    return affine_generator(-1.0, 0.0, 1.0, name="decay")


def drift_hjb_generator(L: float) -> Generator:
    """``F = L*|z|_1``: the HJB generator of drift uncertainty ``|lambda| <= L``."""

    def F(t, x, y, z):
        return L * np.sum(np.abs(np.asarray(z, dtype=np.float64)), axis=-1)

    return Generator(f"drift_hjb(L={L:g})", "drift_hjb", L, F=F, params={"L": L})


def shifted_generator(gen: Generator, eps: float) -> Generator:
    """``F + eps`` with the same Lipschitz constant."""
    if not gen.semilinear:
        raise ValueError("only semilinear generators can be shifted")
    base = gen.F
    return Generator(f"{gen.name}+{eps:g}", gen.kind, gen.L0,
                     F=lambda t, x, y, z: base(t, x, y, z) + eps,
                     params={**gen.params, "shift": eps})


def builtin_generators() -> dict[str, Callable[..., Generator]]:
    """Generator factories keyed by catalog name."""
    return {
        "heat": heat_generator,
        "decay": decay_generator,
        "affine": affine_generator,
        "drift_hjb": drift_hjb_generator,
    }


# --------------------------------------------------------------------------
# residuals


def classical_residual(u: SmoothProcess, G: Generator, pt: PathPoint) -> float:
    """``-d_t u - G(t, omega, u, d_omega u, d2_omega u)`` at ``pt``.

    Nonpositive at a classical subsolution, nonnegative at a supersolution.
    """
    dt, grad, hess = u.derivatives(pt)
    y = u.value(pt)
    return float(-dt - G(pt.t, pt.current, y, grad, hess))


def ito_residual(u: SmoothProcess, path: DiscretePath) -> np.ndarray:
    """Per-step remainder of the Ito expansion of ``u`` along ``path``.

    ``r_i = u_{i+1} - u_i - d_t u h - 0.5 Tr(d2 u) h - d_omega u . dB_i``
    with derivatives taken at ``(t_i, omega)``.
    """
    grid = path.grid
    h = grid.h
    out = np.empty(grid.n)
    vals = [float(u._value(grid.time(i), path.values[: i + 1])) for i in range(grid.n + 1)]
    for i in range(grid.n):
        pt = path.prefix(i)
        dt, grad, hess = u.derivatives(pt)
        dB = path.values[i + 1] - path.values[i]
        out[i] = vals[i + 1] - vals[i] - dt * h - 0.5 * np.trace(hess) * h - grad @ dB
    return out


def ito_rms(u: SmoothProcess, T: float, ns, n_paths: int = 64, seed: int = 0,
            drift: float = 0.0, dim: int = 1) -> list[float]:
    """Root-mean-square Ito residual per step over simulated paths, one entry per ``n``."""
    out = []
    for n in ns:
        grid = TimeGrid(T, n)
        paths = simulate_paths(grid, n_paths, seed, dim=dim, drift=drift)
        sq = [np.mean(ito_residual(u, DiscretePath(grid, p)) ** 2) for p in paths]
        out.append(float(np.sqrt(np.mean(sq))))
    return out
