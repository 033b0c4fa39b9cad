import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppde.funcalc import (
    Paraboloid,
    SmoothProcess,
    builtin_generators,
    classical_residual,
    decay_generator,
    discrete_derivatives,
    drift_hjb_generator,
    heat_generator,
    affine_generator,
    ito_residual,
    ito_rms,
    paraboloid_eval,
    shifted_generator,
)
from ppde.functionals import PathProcess, fixed_time
from ppde.pathspace import DiscretePath, PathPoint, TimeGrid

from conftest import random_walk


def test_paraboloid_eval_examples():
    g = TimeGrid(1.0, 4)
    omega = np.array([0.0, 1.0, 3.0, 2.0, 0.0])
    assert paraboloid_eval(Paraboloid.scalar(0, 0, 0), 0.5, omega, g) == 0.0
    assert paraboloid_eval(Paraboloid.scalar(1, 0, 0), 0.5, omega, g) == 0.5
    assert paraboloid_eval(Paraboloid.scalar(0, 0, 2), 0.5, omega, g) == 9.0
    assert paraboloid_eval(Paraboloid.scalar(0, 0, 2), 0.5, DiscretePath(g, omega)) == 9.0


def test_paraboloid_rejects_asymmetric():
    with pytest.raises(ValueError):
        Paraboloid(0.0, np.zeros(2), np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_paraboloid_process_derivatives(rng):
    g = TimeGrid(1.0, 8)
    phi = Paraboloid(0.3, np.array([1.0, -2.0]), np.array([[2.0, 0.5], [0.5, -1.0]]))
    u = phi.as_process()
    pt = PathPoint(g, 3, random_walk(rng, 3, g.h, dim=2))
    dt, grad, hess = u.derivatives(pt)
    assert dt == 0.3
    assert np.allclose(grad, phi.p + phi.gamma @ pt.current)
    assert np.array_equal(hess, phi.gamma)
    est = discrete_derivatives(u, pt)
    assert np.allclose(est.grad, grad, rtol=0, atol=1e-8)
    assert np.allclose(est.hess, hess, rtol=0, atol=1e-5)
    assert abs(est.dt - 0.3) < 1e-9


def test_classical_residual_examples():
    g = TimeGrid(1.0, 8)
    pt = PathPoint(g, 2, [0.0, 0.5, 0.2])
    heat = heat_generator()
    u = Paraboloid.scalar(-1.0, 0.4, 2.0).as_process()
    assert abs(classical_residual(u, heat, pt)) < 1e-15
    u_t = SmoothProcess("t", lambda t, pre: t, dt=lambda t, pre: 1.0, grad=lambda t, pre: 0.0,
                        hess=lambda t, pre: 0.0)
    assert classical_residual(u_t, heat, pt) == -1.0
    sq = SmoothProcess("w2-t", lambda t, pre: pre[-1, 0] ** 2 - t)
    assert abs(classical_residual(sq, heat, pt)) < 1e-6


def test_discrete_derivative_examples():
    g = TimeGrid(1.0, 8)
    lin = SmoothProcess("lin", lambda t, pre: 1.7 * pre[-1, 0])
    pt = PathPoint(g, 2, [0.0, 0.5, 1.0])
    assert abs(discrete_derivatives(lin, pt).grad[0] - 1.7) < 1e-10
    sq = SmoothProcess("sq", lambda t, pre: pre[-1, 0] ** 2)
    est = discrete_derivatives(sq, pt, eps=1e-4)
    assert abs(est.grad[0] - 2.0) < 1e-7
    assert abs(est.hess[0, 0] - 2.0) < 1e-4


def test_kink_vertical_gradient():
    g = TimeGrid(1.0, 8)
    kink = PathProcess.stopped(fixed_time())
    walk = np.array([0.0, 1, 2, 1, 2, 3, 2]) * g.sqrt_h
    after = discrete_derivatives(kink, PathPoint(g, 6, walk))
    before = discrete_derivatives(kink, PathPoint(g, 3, walk[:4]))
    assert after.grad[0] == 0.0
    assert abs(before.grad[0] - 1.0) < 1e-9


def test_derivative_errors():
    g = TimeGrid(1.0, 4)
    u = SmoothProcess("x", lambda t, pre: pre[-1, 0])
    with pytest.raises(ValueError):
        discrete_derivatives(u, PathPoint(g, 4, np.zeros(5)))
    with pytest.raises(ValueError):
        discrete_derivatives(u, PathPoint.origin(g))
    est = discrete_derivatives(u, PathPoint(g, 4, np.zeros(5)), need_time=False)
    assert math.isnan(est.dt)


def test_ito_residual_paraboloid(rng):
    g = TimeGrid(1.0, 16)
    phi = Paraboloid.scalar(0.2, 0.5, 3.0)
    path = DiscretePath(g, np.concatenate([[0.0], np.cumsum(rng.normal(size=16)) * g.sqrt_h]))
    r = ito_residual(phi.as_process(), path)
    dB = np.diff(path.values[:, 0])
    assert np.allclose(r, 0.5 * 3.0 * (dB**2 - g.h), rtol=0, atol=1e-12)
    # on binomial paths the quadratic remainder vanishes identically
    walk = DiscretePath(g, random_walk(rng, 16, g.h))
    assert np.max(np.abs(ito_residual(phi.as_process(), walk))) < 1e-12


def test_ito_rms_halves():
    phi = Paraboloid.scalar(0.0, 0.0, 2.0).as_process()
    rms = ito_rms(phi, 1.0, [8, 16, 32, 64], n_paths=256, seed=1)
    ratios = [a / b for a, b in zip(rms, rms[1:])]
    assert all(1.7 <= r <= 2.3 for r in ratios)


def test_ito_residual_linear_and_kink(rng):
    g = TimeGrid(1.0, 5)
    lin = SmoothProcess("lin", lambda t, pre: 2.0 * pre[-1, 0], dt=lambda t, pre: 0.0,
                        grad=lambda t, pre: 2.0, hess=lambda t, pre: 0.0)
    path = DiscretePath(g, np.concatenate([[0.0], np.cumsum(rng.normal(size=5))]))
    assert np.max(np.abs(ito_residual(lin, path))) < 1e-14
    xi = fixed_time()
    kink = SmoothProcess(
        "kink",
        lambda t, pre: float(PathProcess.stopped(xi).evaluate(len(pre) - 1, pre, g)[0]),
        dt=lambda t, pre: 0.0,
        grad=lambda t, pre: 1.0 if t < 0.5 else 0.0,
        hess=lambda t, pre: 0.0,
    )
    r = ito_residual(kink, path)
    straddle = 2  # t = 0.4 -> 0.6 crosses T/2
    assert np.all(np.abs(np.delete(r, straddle)) < 1e-14)
    assert abs(r[straddle]) > 1e-3


def test_generators():
    for name, make in builtin_generators().items():
        gen = make(0.5) if name == "drift_hjb" else make()
        assert gen.check_ellipticity() == 0, name
        assert gen.check_lipschitz() == 0, name
    assert decay_generator().F(0.0, 0.0, 2.0, np.zeros(1)) == -1.0
    assert drift_hjb_generator(0.5).F(0.0, 0.0, 0.0, np.array([-2.0])) == 1.0
    g = heat_generator()
    assert g(0.0, 0.0, 1.0, np.zeros(1), np.array([[2.0]])) == 1.0
    assert shifted_generator(decay_generator(), 0.1).F(0.0, 0.0, 0.0, np.zeros(1)) == pytest.approx(1.1)


def test_lipschitz_check_catches_wrong_constant():
    from ppde.funcalc import semilinear_generator
    bad = semilinear_generator(lambda t, x, y, z: 3.0 * y, 1.0)
    assert bad.check_lipschitz() > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-4, 4), st.floats(-1, 1))
def test_bump_recovers_paraboloid_jet(q, p, gamma, x):
    g = TimeGrid(1.0, 8)
    phi = Paraboloid.scalar(q, p, gamma)
    u = SmoothProcess("phi", lambda t, pre: float(phi(t, pre[-1])))
    pt = PathPoint(g, 3, [0.0, 0.1, 0.2, x])
    est = discrete_derivatives(u, pt)
    assert abs(est.grad[0] - (p + gamma * x)) < 1e-7
    assert abs(est.hess[0, 0] - gamma) < 1e-3
    assert abs(est.dt - q) < 1e-7


def test_affine_generator_params():
    gen = affine_generator(-1.0, [0.5], 2.0)
    assert gen.L0 == 1.0
    assert gen.F(0, 0, 1.0, np.array([2.0])) == 2.0
