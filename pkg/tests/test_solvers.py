import math
import warnings

import numpy as np
import pytest

from ppde.errors import CFLViolationError, DepthCapError, SchemeError
from ppde.funcalc import (
    Paraboloid,
    decay_generator,
    drift_hjb_generator,
    heat_generator,
    semilinear_generator,
    shifted_generator,
)
from ppde.functionals import (
    PathFunctional,
    constant,
    fixed_time,
    leaf_table,
    running_max,
    terminal,
    terminal_fn,
)
from ppde.lattice import ScenarioTree
from ppde.measures import drift_recursion, ebar_tree
from ppde.pathspace import PathPoint, TimeGrid
from ppde.solvers import (
    HeatSolutionProcess,
    check_consistency,
    check_monotonicity,
    convergence_study,
    custom_operator,
    default_paraboloids,
    drift_hjb_operator,
    heat_operator,
    markovian_fd,
    monotone_scheme,
    semilinear_operator,
    solve_bsde,
    solve_heat,
    stability_experiment,
)

import oracles

ZERO = constant(0.0)


# heat ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 10, 64, 512])
def test_heat_terminal_is_zero(n):
    assert solve_heat(terminal(), TimeGrid(1.0, n)).value == 0.0


def test_heat_fixed_time_after_half(rng):
    g = TimeGrid(1.0, 8)
    for i in (4, 5, 6, 7, 8):
        walk = np.concatenate([[0.0], np.cumsum(rng.choice([-1, 1], size=i))]) * g.sqrt_h
        pt = PathPoint(g, i, walk)
        for backend in ("tree", "lattice", "auto"):
            assert solve_heat(fixed_time(), g, pt, backend=backend).value == walk[4]


def test_heat_running_max_against_independent_dp():
    for n in (8, 32, 64):
        assert abs(solve_heat(running_max(), TimeGrid(1.0, n)).value - oracles.running_max_mean(1.0, n)) <= 1e-12


def test_heat_running_max_convergence():
    ref = math.sqrt(2 / math.pi)
    vals = {n: solve_heat(running_max(), TimeGrid(1.0, n)).value for n in (16, 64, 256)}
    assert vals[16] < vals[64] < vals[256] < ref
    ratio = (ref - vals[64]) / (ref - vals[256])
    assert 1.6 <= ratio <= 2.6


def test_heat_backends_agree():
    g = TimeGrid(1.0, 12)
    tree = solve_heat(terminal_fn("square"), g, backend="tree").value
    lat = solve_heat(terminal_fn("square"), g, backend="lattice").value
    assert abs(tree - 1.0) < 1e-12 and abs(lat - 1.0) < 1e-12
    mc = solve_heat(terminal_fn("square"), g, backend="mc", n_paths=50_000, seed=3)
    assert abs(mc.value - 1.0) <= 3 * mc.stderr
    with pytest.raises(ValueError):
        solve_heat(terminal(), g, backend="nope")


def test_heat_depth_cap():
    xi = PathFunctional("no_lift", lambda p, g: p[:, -1, 0] ** 3)
    with pytest.raises(DepthCapError):
        solve_heat(xi, TimeGrid(1.0, 40))


def test_heat_solution_process(rng):
    g = TimeGrid(1.0, 6)
    u = HeatSolutionProcess(running_max(), g)
    tree = ScenarioTree(g)
    direct = drift_recursion(tree, tree.leaf_values(running_max()), 0.0).values
    via = tree.process_values(u)
    assert max(float(np.max(np.abs(a - b))) for a, b in zip(direct, via)) <= 1e-12
    pt = tree.point(3, 5)
    assert abs(u.at(pt) - direct[3][5]) <= 1e-12


# BSDE ----------------------------------------------------------------------

def test_bsde_zero_generator_equals_heat(rng):
    g = TimeGrid(1.0, 8)
    table = rng.normal(size=256)
    xi = leaf_table(table)
    sol = solve_bsde(heat_generator(), xi, g, prefer="tree")
    heat = drift_recursion(ScenarioTree(g), table, 0.0).values
    assert all(np.array_equal(a, b) for a, b in zip(sol.Y, heat))


def test_bsde_decay_convergence():
    target = 1 - math.exp(-1)
    errs = []
    for n in (32, 64, 128, 256):
        v = solve_bsde(decay_generator(), ZERO, TimeGrid(1.0, n)).value
        errs.append(abs(v - target))
        assert errs[-1] <= 2.0 / n
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.7 <= r <= 2.3 for r in ratios)


def test_bsde_frozen_values():
    # explicit scheme with F = -y + 1, xi = 0: y_k = (1-h) y_{k+1} + h exactly
    for n in (32, 256):
        h = 1.0 / n
        y = 0.0
        for _ in range(n):
            y = y + h * (-y + 1.0)
        assert abs(solve_bsde(decay_generator(), ZERO, TimeGrid(1.0, n)).value - y) <= 1e-14


def test_bsde_drift_hjb_face():
    L = 0.5
    for n in (16, 64):
        g = TimeGrid(1.0, n)
        sol = solve_bsde(drift_hjb_generator(L), terminal(), g)
        assert abs(sol.value - ebar_tree(ScenarioTree(g), ScenarioTree(g).leaf_values(terminal()), L).value) <= 1e-12 if n <= 16 else True
        assert abs(sol.value - L) <= 1e-12


def test_bsde_bound_and_warnings():
    g = TimeGrid(1.0, 16)
    sol = solve_bsde(decay_generator(), terminal_fn("abs"), g)
    assert sol.check_bounded()
    steep = semilinear_generator(lambda t, x, y, z: -40.0 * y, 40.0)
    with pytest.warns(RuntimeWarning):
        solve_bsde(steep, ZERO, g)
    blowup = semilinear_generator(lambda t, x, y, z: np.where(t < 0.5, np.nan, y), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SchemeError) as exc:
            solve_bsde(blowup, ZERO, g)
    assert exc.value.level is not None


# scheme --------------------------------------------------------------------

def test_scheme_heat_reproduces_path():
    # sqrt(h) = 1/4 is dyadic: the averages are exact
    g = TimeGrid(1.0, 16)
    sol = monotone_scheme(heat_operator(), terminal(), g, prefer="tree")
    for k in range(17):
        assert np.array_equal(sol.values[k], sol.lattice.positions(k))
    g = TimeGrid(1.0, 8)
    sol = monotone_scheme(heat_operator(), terminal(), g, prefer="tree")
    for k in range(9):
        assert np.allclose(sol.values[k], sol.lattice.positions(k), rtol=0, atol=1e-15)


def test_scheme_drift_hjb_exact():
    for n in (4, 16, 64, 256):
        g = TimeGrid(1.0, n)
        assert abs(monotone_scheme(drift_hjb_operator(0.5), terminal(), g).value - 0.5) <= 1e-12
    g = TimeGrid(1.0, 9)
    tree = ScenarioTree(g)
    table = np.random.default_rng(1).normal(size=512)
    a = monotone_scheme(drift_hjb_operator(1.2), leaf_table(table), g, prefer="tree").values
    b = ebar_tree(tree, table, 1.2).values
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_scheme_semilinear_matches_bsde():
    g = TimeGrid(1.0, 64)
    a = monotone_scheme(semilinear_operator(decay_generator()), terminal_fn("square"), g).values
    b = solve_bsde(decay_generator(), terminal_fn("square"), g).Y
    assert max(float(np.max(np.abs(x - y))) for x, y in zip(a, b)) <= 1e-12


def test_scheme_operator_failure_reports_node():
    op = custom_operator(lambda t, x, vu, vd, h, sh: np.where(x > 0.4, np.nan, vu))
    with pytest.raises(SchemeError) as exc:
        monotone_scheme(op, terminal(), TimeGrid(1.0, 8))
    assert exc.value.node is not None


def test_monotonicity():
    assert check_monotonicity(heat_operator(), 10_000, seed=1).violations == 0
    assert check_monotonicity(drift_hjb_operator(0.5), 10_000, seed=1).violations == 0
    assert check_monotonicity(semilinear_operator(decay_generator()), 10_000, seed=1).violations == 0
    bad = custom_operator(lambda t, x, vu, vd, h, sh: 0.5 * (vu + vd) * (1 - 20.0))
    assert check_monotonicity(bad, 10_000, seed=1).violations > 0


def test_consistency_examples():
    heat = heat_operator()
    assert check_consistency(heat, heat_generator(), Paraboloid.scalar(1, 0, 0)).max_deviation <= 1e-12
    assert check_consistency(heat, heat_generator(), Paraboloid.scalar(0, 0, 2)).max_deviation <= 1e-12
    rep = check_consistency(drift_hjb_operator(0.5), drift_hjb_generator(0.5), Paraboloid.scalar(0, 1, 0))
    assert rep.max_deviation <= 1e-12


def test_consistency_default_grid():
    phis = default_paraboloids()
    assert len(phis) == 17**3
    assert check_consistency(heat_operator(), heat_generator(), phis).max_deviation <= 1e-12
    assert check_consistency(drift_hjb_operator(0.5), drift_hjb_generator(0.5), phis).max_deviation <= 1e-12
    rep = check_consistency(semilinear_operator(decay_generator()), decay_generator(), phis)
    assert all(d <= 5 * h for d, h in zip(rep.deviations, rep.hs))
    assert all(1.7 <= r <= 2.3 for r in rep.halving_ratios())


def test_consistency_detects_wrong_generator():
    rep = check_consistency(heat_operator(), drift_hjb_generator(0.5), Paraboloid.scalar(0, 1, 0))
    assert rep.max_deviation > 0.4


# convergence ---------------------------------------------------------------

def test_convergence_tables():
    heat = convergence_study(lambda n: solve_heat(terminal(), TimeGrid(1.0, n)).value, [8, 16, 32], reference=0.0)
    assert heat.column("error") == [0.0, 0.0, 0.0]
    hjb = convergence_study(lambda n: monotone_scheme(drift_hjb_operator(0.5), terminal(), TimeGrid(1.0, n)).value,
                            [4, 16, 64], reference=0.5)
    assert max(hjb.column("error")) <= 1e-12
    bsde = convergence_study(lambda n: solve_bsde(decay_generator(), ZERO, TimeGrid(1.0, n)).value,
                             [32, 64, 128, 256], reference=1 - math.exp(-1))
    csv = bsde.to_csv().splitlines()
    assert csv[0] == "n,h,value,error,ratio,order_est" and len(csv) == 5
    assert all(abs(o - 1) < 0.05 for o in bsde.column("order_est")[1:])
    selfref = convergence_study(lambda n: 1.0 / n, [2, 4, 8])
    assert selfref.self_referenced and selfref.column("error")[-1] == 0.0
    with pytest.raises(ValueError):
        convergence_study(lambda n: 0.0, [8, 4])


# finite differences --------------------------------------------------------

def test_fd_examples():
    assert abs(markovian_fd(lambda x: x, 1.0).at(0.0)) <= 1e-12
    sq = markovian_fd(lambda x: x * x, 1.0)
    assert abs(sq.at(0.0) - 1.0) <= 1e-3
    hjb = markovian_fd(lambda x: x, 1.0, L=0.5)
    assert abs(hjb.at(0.0) - 0.5) <= 1e-3
    with pytest.raises(CFLViolationError):
        markovian_fd(lambda x: x * x, 1.0, n_space=400, n_time=400)


def test_scheme_vs_fd():
    g = TimeGrid(1.0, 256)
    scheme = monotone_scheme(heat_operator(), terminal_fn("square"), g).value
    assert abs(scheme - markovian_fd(lambda x: x * x, 1.0, n_space=400).at(0.0)) <= 5e-3
    hjb = monotone_scheme(drift_hjb_operator(0.5), terminal(), g).value
    assert abs(hjb - markovian_fd(lambda x: x, 1.0, L=0.5).at(0.0)) <= 1e-3


# stability -----------------------------------------------------------------

def test_stability():
    g = TimeGrid(1.0, 64)
    rep = stability_experiment(heat_generator(), ZERO, [0.1, 0.01, 0.001], g)
    assert all(abs(v - e * g.T) <= 1e-12 for v, e in zip(rep.values, rep.eps))
    same = stability_experiment(heat_generator(), ZERO, [0.0], g)
    assert same.deviations == [0.0]
    rep = stability_experiment(decay_generator(), ZERO, [0.1, 0.01, 0.001], g)
    assert rep.within_bounds
    assert all(d <= e * (1 - math.exp(-1)) + 10 * g.h for d, e in zip(rep.deviations, rep.eps))


def test_stability_closed_form_perturbation():
    # F + eps = -y + (1 + eps): the scheme value scales exactly by (1 + eps)
    g = TimeGrid(1.0, 64)
    base = solve_bsde(decay_generator(), ZERO, g).value
    for eps in (0.1, 0.01):
        v = solve_bsde(shifted_generator(decay_generator(), eps), ZERO, g).value
        assert abs(v - (1 + eps) * base) <= 1e-14


# comparison ----------------------------------------------------------------

def test_solver_level_comparison(rng):
    g = TimeGrid(1.0, 7)
    tree = ScenarioTree(g)
    for _ in range(20):
        a = rng.normal(size=128)
        b = a + rng.exponential(size=128)
        for L in (0.0, 1.0):
            u = ebar_tree(tree, a, L).values
            v = ebar_tree(tree, b, L).values
            assert all(np.all(x <= y) for x, y in zip(u, v))
        u = solve_bsde(decay_generator(), leaf_table(a), g, prefer="tree").Y
        v = solve_bsde(decay_generator(), leaf_table(b), g, prefer="tree").Y
        assert all(np.all(x <= y + 10 * g.h) for x, y in zip(u, v))
