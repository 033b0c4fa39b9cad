"""Hot backward-induction kernels with numba and pure-numpy implementations.

Each public function dispatches on :func:`ppde._accel.get_backend`. Both
implementations evaluate the same floating-point expression in the same order,
so switching backends reproduces results bit for bit.

A one-step drifted average over the children ``(v_up, v_down)`` of a binomial
node is ``0.5 * (v_up + v_down) + a * |v_up - v_down|`` where ``a = L*sqrt(h)/2``
for the upper expectation and ``a = -L*sqrt(h)/2`` for the lower one.
"""

from __future__ import annotations

import numpy as np

from . import _accel

if _accel.NUMBA_AVAILABLE:
    from numba import njit, prange
else:  # pragma: no cover
    njit = prange = None


# --------------------------------------------------------------------------
# numpy reference path


def _np_drift_step(v_next, up, down, a):
    vu = v_next[up]
    vd = v_next[down]
    diff = vu - vd
    out = 0.5 * (vu + vd) + a * np.abs(diff)
    return out, np.sign(diff)


def _np_envelope_step(x, v_next, up, down, a):
    s, sgn = _np_drift_step(v_next, up, down, a)
    y = np.maximum(x, s)
    return y, s, sgn


def _np_masked_envelope(x, v_next, up, down, a, stop, sense):
    vu = v_next[:, up]
    vd = v_next[:, down]
    s = 0.5 * (vu + vd) + a * np.abs(vu - vd)
    if sense > 0:
        y = np.maximum(x, s)
    else:
        y = np.minimum(x, s)
    return np.where(stop[None, :], x, y)


def _np_fd_step(v, h, dx, half_diff, drift_bound):
    lap = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dx * dx)
    fwd = (v[2:] - v[1:-1]) / dx
    bwd = (v[1:-1] - v[:-2]) / dx
    hjb = np.maximum(np.maximum(drift_bound * fwd, -drift_bound * bwd), 0.0)
    out = v.copy()
    out[1:-1] = v[1:-1] + h * (half_diff * lap + hjb)
    return out


# --------------------------------------------------------------------------
# numba path

if njit is not None:

    @njit(cache=True, parallel=True)
    def _nb_drift_step(v_next, up, down, a):
        n = up.shape[0]
        out = np.empty(n)
        sgn = np.empty(n)
        for j in prange(n):
            vu = v_next[up[j]]
            vd = v_next[down[j]]
            diff = vu - vd
            out[j] = 0.5 * (vu + vd) + a * abs(diff)
            if diff > 0.0:
                sgn[j] = 1.0
            elif diff < 0.0:
                sgn[j] = -1.0
            else:
                sgn[j] = 0.0
        return out, sgn

    @njit(cache=True, parallel=True)
    def _nb_envelope_step(x, v_next, up, down, a):
        n = up.shape[0]
        y = np.empty(n)
        s = np.empty(n)
        sgn = np.empty(n)
        for j in prange(n):
            vu = v_next[up[j]]
            vd = v_next[down[j]]
            diff = vu - vd
            cont = 0.5 * (vu + vd) + a * abs(diff)
            s[j] = cont
            y[j] = max(x[j], cont)
            if diff > 0.0:
                sgn[j] = 1.0
            elif diff < 0.0:
                sgn[j] = -1.0
            else:
                sgn[j] = 0.0
        return y, s, sgn

    @njit(cache=True, parallel=True)
    def _nb_masked_envelope(x, v_next, up, down, a, stop, sense):
        n_batch = x.shape[0]
        n = up.shape[0]
        y = np.empty((n_batch, n))
        for b in prange(n_batch):
            for j in range(n):
                if stop[j]:
                    y[b, j] = x[b, j]
                    continue
                vu = v_next[b, up[j]]
                vd = v_next[b, down[j]]
                cont = 0.5 * (vu + vd) + a * abs(vu - vd)
                if sense > 0:
                    y[b, j] = max(x[b, j], cont)
                else:
                    y[b, j] = min(x[b, j], cont)
        return y

    @njit(cache=True, parallel=True)
    def _nb_fd_step(v, h, dx, half_diff, drift_bound):
        n = v.shape[0]
        out = v.copy()
        for i in prange(1, n - 1):
            lap = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx)
            fwd = (v[i + 1] - v[i]) / dx
            bwd = (v[i] - v[i - 1]) / dx
            hjb = max(max(drift_bound * fwd, -drift_bound * bwd), 0.0)
            out[i] = v[i] + h * (half_diff * lap + hjb)
        return out


# --------------------------------------------------------------------------
# dispatch


def _use_numba() -> bool:
    return _accel.get_backend() == "numba"


def _as_index(idx):
    return np.ascontiguousarray(idx, dtype=np.int64)


def drift_step(v_next, up, down, a):
    """One-step drifted average over children; returns ``(values, sign(v_up - v_down))``."""
    v_next = np.ascontiguousarray(v_next, dtype=np.float64)
    up, down = _as_index(up), _as_index(down)
    if _use_numba():
        return _nb_drift_step(v_next, up, down, float(a))
    return _np_drift_step(v_next, up, down, float(a))


def envelope_step(x, v_next, up, down, a):
    """Snell step ``y = max(x, s)`` with ``s`` the drifted continuation value."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    v_next = np.ascontiguousarray(v_next, dtype=np.float64)
    up, down = _as_index(up), _as_index(down)
    if _use_numba():
        return _nb_envelope_step(x, v_next, up, down, float(a))
    return _np_envelope_step(x, v_next, up, down, float(a))


def masked_envelope(x, v_next, up, down, a, stop, sense):
    """Batched envelope step over a leading axis, with forced stops.

    ``x`` has shape ``(batch, nodes)`` and ``v_next`` ``(batch, next_nodes)``.
    ``sense > 0`` takes the max against continuation, ``sense < 0`` the min.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    v_next = np.ascontiguousarray(v_next, dtype=np.float64)
    up, down = _as_index(up), _as_index(down)
    stop = np.ascontiguousarray(stop, dtype=np.bool_)
    if _use_numba():
        return _nb_masked_envelope(x, v_next, up, down, float(a), stop, int(sense))
    return _np_masked_envelope(x, v_next, up, down, float(a), stop, int(sense))


def fd_step(v, h, dx, half_diff, drift_bound):
    """Explicit backward step of ``v_t + half_diff*v_xx + drift_bound*|v_x| = 0``.

    Boundary entries are left untouched (Dirichlet data).
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    if _use_numba():
        return _nb_fd_step(v, float(h), float(dx), float(half_diff), float(drift_bound))
    return _np_fd_step(v, float(h), float(dx), float(half_diff), float(drift_bound))
