import os
import subprocess
import sys

import numpy as np
import pytest

from ppde import _accel, kernels
from ppde.functionals import running_max, terminal_fn
from ppde.lattice import ScenarioTree
from ppde.pathspace import TimeGrid
from ppde.solvers import solve_bsde, solve_heat
from ppde.funcalc import decay_generator
from ppde.stopping import snell

pytestmark = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


@pytest.fixture
def both_backends():
    prev = _accel.get_backend()

    def call(fn):
        out = {}
        for b in ("numpy", "numba"):
            _accel.set_backend(b)
            r = fn()
            out[b] = r if isinstance(r, tuple) else (r,)
        return out["numpy"], out["numba"]

    yield call
    _accel.set_backend(prev)


def _same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        x, y = np.asarray(x), np.asarray(y)
        assert x.dtype == y.dtype and x.shape == y.shape
        assert x.tobytes() == y.tobytes()


@pytest.mark.parametrize("a", [0.0, 0.3, -0.3])
def test_kernels_bit_identical(both_backends, rng, a):
    size = 4096
    v = rng.normal(size=2 * size)
    v[::7] = v[1::7][: len(v[::7])]  # ties between siblings
    x = rng.normal(size=size)
    up, down = np.arange(1, 2 * size, 2), np.arange(0, 2 * size, 2)
    _same(*both_backends(lambda: kernels.drift_step(v, up, down, a)))
    _same(*both_backends(lambda: kernels.envelope_step(x, v, up, down, a)))
    xb, vb = rng.normal(size=(8, 64)), rng.normal(size=(8, 128))
    ub, db = np.arange(1, 128, 2), np.arange(0, 128, 2)
    stop = rng.uniform(size=64) < 0.3
    for sense in (1, -1):
        _same(*both_backends(lambda: kernels.masked_envelope(xb, vb, ub, db, a, stop, sense)))
    fd = rng.normal(size=500)
    _same(*both_backends(lambda: kernels.fd_step(fd, 1e-4, 1e-2, 0.5, abs(a))))


def test_solvers_bit_identical(both_backends):
    g = TimeGrid(1.0, 10)
    tree = ScenarioTree(g)
    X = [np.sin(3 * tree.positions(k)) for k in range(g.n + 1)]
    a, b = both_backends(lambda: snell(tree, X, 1.0).Y)
    _same(a[0], b[0])
    a, b = both_backends(lambda: solve_heat(running_max(), TimeGrid(1.0, 64)).value)
    _same(a, b)
    a, b = both_backends(lambda: solve_bsde(decay_generator(), terminal_fn("square"), TimeGrid(1.0, 64)).value)
    _same(a, b)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


@pytest.mark.parametrize("flag, expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_env_flag(flag, expected):
    env = dict(os.environ, PPDE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from ppde import _accel; print(_accel.get_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
