import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppde.errors import InvalidDriftError
from ppde.functionals import running_max, terminal
from ppde.lattice import ScenarioTree
from ppde.measures import (
    DriftBound,
    DriftControl,
    ebar,
    ebar_tree,
    eunder_tree,
    expectation_mc,
    girsanov_weight,
    linear_expectation,
    simulate_paths,
    step_probabilities,
)
from ppde.pathspace import DiscretePath, TimeGrid
from ppde.solvers import solve_heat

import oracles


def test_step_probabilities():
    assert step_probabilities(0.0, 0.3) == (0.5, 0.5)
    assert step_probabilities(1.0, 0.25) == (0.75, 0.25)
    pu, pd = step_probabilities(0.5, 0.04)
    assert abs((pu - pd) * 0.2 - 0.02) < 1e-15
    with pytest.raises(InvalidDriftError):
        step_probabilities(3.0, 0.25)


def test_drift_bound_validation():
    DriftBound(2.0).check(0.25)
    with pytest.raises(InvalidDriftError):
        DriftBound(2.1).check(0.25)
    with pytest.raises(InvalidDriftError):
        DriftBound(-1.0)
    g = TimeGrid(1.0, 4)
    with pytest.raises(InvalidDriftError):
        ebar_tree(ScenarioTree(g), np.zeros(16), 3.0)


def test_one_step_examples():
    tree = ScenarioTree(TimeGrid(1.0, 1))
    leaves = np.array([0.0, 1.0])  # down, up
    assert ebar_tree(tree, leaves, 0.5).value == 0.75
    assert eunder_tree(tree, leaves, 0.5).value == 0.25
    assert ebar_tree(tree, leaves, 0.0).value == 0.5


def test_zero_bound_is_plain_average(rng):
    g = TimeGrid(1.0, 7)
    leaves = rng.normal(size=128)
    assert abs(ebar_tree(ScenarioTree(g), leaves, 0.0).value - leaves.mean()) < 1e-14
    assert abs(eunder_tree(ScenarioTree(g), leaves, 0.0).value - leaves.mean()) < 1e-14


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 64, 256])
def test_terminal_closed_form(n):
    g = TimeGrid(1.0, n)
    for L in (0.3, 0.7, 1.0):
        if L * g.sqrt_h <= 1:
            assert abs(ebar(terminal(), g, L).value - L) <= 1e-12
            assert abs(ebar(terminal(), g, L, prefer="tree").value - L) <= 1e-12 if n <= 16 else True


def test_duality(rng):
    g = TimeGrid(1.0, 6)
    tree = ScenarioTree(g)
    for _ in range(1000):
        x = rng.normal(size=64)
        L = rng.uniform(0, 1 / g.sqrt_h)
        assert abs(eunder_tree(tree, x, L).value + ebar_tree(tree, -x, L).value) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 3])
def test_brute_force_enumeration(rng, n):
    g = TimeGrid(1.0, n)
    tree = ScenarioTree(g)
    for _ in range(5):
        x = rng.normal(size=1 << n)
        L = rng.uniform(0, 1 / g.sqrt_h)
        assert abs(ebar_tree(tree, x, L).value - oracles.brute_ebar(x, n, g.h, L)) <= 1e-12


@pytest.mark.parametrize("n", [4, 6, 8])
def test_lp_oracle(rng, n):
    g = TimeGrid(1.0, n)
    tree = ScenarioTree(g)
    for _ in range(3):
        x = rng.normal(size=1 << n)
        L = rng.uniform(0, 1 / g.sqrt_h)
        res = ebar_tree(tree, x, L)
        assert abs(res.value - oracles.lp_ebar(x, n, g.h, L)) <= 1e-9
        # the maximiser is a genuine control attaining the value
        attained = oracles.expectation(x, res.lambda_star, n, g.h)
        assert abs(attained - res.value) <= 1e-12


def test_terminal_enumeration_n8():
    n = 8
    g = TimeGrid(1.0, n)
    leaves = oracles.walks(n, g.h)[:, -1]
    ctl = [np.full(1 << k, 0.7) for k in range(n)]
    assert abs(oracles.expectation(leaves, ctl, n, g.h) - 0.7) <= 1e-12
    assert abs(ebar_tree(ScenarioTree(g), leaves, 0.7).value - 0.7) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_sublinear_properties(n, seed, frac):
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, n)
    tree = ScenarioTree(g)
    L = frac / g.sqrt_h
    x, y = rng.normal(size=(2, 1 << n))
    c = float(rng.normal())
    E = lambda v: ebar_tree(tree, v, L).value  # noqa: E731
    assert E(x) <= E(x + np.abs(y)) + 1e-12
    assert E(x + y) <= E(x) + E(y) + 1e-12
    assert abs(E(x + c) - (E(x) + c)) <= 1e-12
    assert eunder_tree(tree, x, L).value <= E(x) + 1e-15


def test_monotone_convex_in_L(rng):
    g = TimeGrid(1.0, 6)
    tree = ScenarioTree(g)
    x = rng.normal(size=64)
    Ls = np.linspace(0, 1 / g.sqrt_h, 21)
    v = np.array([ebar_tree(tree, x, L).value for L in Ls])
    assert np.all(np.diff(v) >= -1e-14)
    assert np.all(v[:-2] + v[2:] - 2 * v[1:-1] >= -1e-12)


def test_linear_expectation_under_extremal_control(rng):
    g = TimeGrid(1.0, 7)
    tree = ScenarioTree(g)
    x = rng.normal(size=128)
    res = ebar_tree(tree, x, 1.5)
    vals = linear_expectation(res.control(), x)
    assert max(float(np.max(np.abs(a - b))) for a, b in zip(vals, res.values)) <= 1e-12
    with pytest.raises(InvalidDriftError):
        DriftControl(tree, [np.full(1 << k, 2.0) for k in range(7)], 1.5)


def test_csv_export():
    tree = ScenarioTree(TimeGrid(1.0, 2))
    text = ebar_tree(tree, np.array([0.0, 1.0, 2.0, 3.0]), 0.5).to_csv()
    lines = text.splitlines()
    assert lines[0] == "level,node_id,value,lambda_star"
    assert len(lines) == 1 + 7


def test_girsanov_weight():
    g = TimeGrid(1.0, 4)
    p = DiscretePath(g, [0.0, 0.5, 0.0, 0.5, 1.0])
    assert girsanov_weight(p, 0.0) == 1.0
    assert abs(girsanov_weight(p, 1.0) - math.exp(0.5)) < 1e-14


def test_girsanov_martingale_mc():
    g = TimeGrid(1.0, 16)
    paths = simulate_paths(g, 100_000, seed=3)
    dB = np.diff(paths[:, :, 0], axis=1)
    lam = 0.8
    w = np.exp(lam * dB.sum(axis=1) - 0.5 * lam**2 * g.T)
    se = w.std(ddof=1) / math.sqrt(w.size)
    assert abs(w.mean() - 1.0) <= 3 * se


def test_expectation_mc_examples():
    g = TimeGrid(1.0, 32)
    est = expectation_mc(terminal(), g, 0.0, 100_000, seed=1)
    assert abs(est.value) <= 3 * est.stderr
    est = expectation_mc(terminal(), g, 0.7, 100_000, seed=2)
    assert abs(est.value - 0.7) <= 3 * est.stderr


def test_mc_running_max_matches_tree():
    g = TimeGrid(1.0, 512)
    tree_value = solve_heat(running_max(), g).value
    est = expectation_mc(running_max(), g, 0.0, 100_000, seed=5, increments="binomial")
    assert abs(est.value - tree_value) <= 3 * est.stderr


def test_mc_binomial_weights_match_tree():
    g = TimeGrid(1.0, 8)
    est = expectation_mc(running_max(), g, 0.6, 200_000, seed=7, increments="binomial")
    n = 8
    walks = oracles.walks(n, g.h)
    exact = oracles.expectation(walks.max(axis=1), [np.full(1 << k, 0.6) for k in range(n)], n, g.h)
    assert abs(est.value - exact) <= 3 * est.stderr


def test_mc_deterministic_and_chunk_independent():
    g = TimeGrid(1.0, 8)
    a = expectation_mc(running_max(), g, 0.3, 10_000, seed=11)
    b = expectation_mc(running_max(), g, 0.3, 10_000, seed=11)
    assert a == b
    p1 = simulate_paths(g, 5000, seed=4)
    p2 = simulate_paths(g, 9000, seed=4)
    assert np.array_equal(p1[:4096], p2[:4096])


def test_mc_rule_based_drift_is_clipped():
    g = TimeGrid(1.0, 8)
    a = expectation_mc(terminal(), g, lambda t, x: 10.0 * np.ones(x.shape[0]), 20_000, seed=1, L=0.5)
    b = expectation_mc(terminal(), g, 0.5, 20_000, seed=1)
    assert a.value == b.value
