"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size N] [--repeat R]

Also reports end-to-end solver timings with each backend and checks that
both backends agree bit for bit.
"""

import argparse
import time

import numpy as np

from ppde import _accel, kernels
from ppde.functionals import running_max, terminal
from ppde.lattice import ScenarioTree
from ppde.pathspace import TimeGrid
from ppde.solvers import solve_heat
from ppde.stopping import snell


def best_of(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(size, rng):
    v = rng.normal(size=2 * size)
    x = rng.normal(size=size)
    up = np.arange(1, 2 * size, 2)
    down = np.arange(0, 2 * size, 2)
    xb = rng.normal(size=(64, size // 64))
    vb = rng.normal(size=(64, size // 32))
    ub, db = np.arange(1, size // 32, 2), np.arange(0, size // 32, 2)
    stop = rng.uniform(size=size // 64) < 0.2
    fd = rng.normal(size=size)
    return {
        "drift_step": lambda: kernels.drift_step(v, up, down, 0.3),
        "envelope_step": lambda: kernels.envelope_step(x, v, up, down, 0.3),
        "masked_envelope": lambda: kernels.masked_envelope(xb, vb, ub, db, 0.3, stop, 1),
        "fd_step": lambda: kernels.fd_step(fd, 1e-6, 1e-2, 0.5, 0.5),
    }


def solver_cases():
    g = TimeGrid(1.0, 18)
    tree = ScenarioTree(g)
    X = [np.sin(tree.positions(k)) for k in range(g.n + 1)]
    return {
        "snell_tree_n18": lambda: snell(tree, X, 1.0),
        "heat_running_max_n256": lambda: solve_heat(running_max(), TimeGrid(1.0, 256)),
        "heat_terminal_n512": lambda: solve_heat(terminal(), TimeGrid(1.0, 512)),
    }


def _as_tuple(r):
    return r if isinstance(r, tuple) else (r,)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1 << 20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        print("numba not installed; nothing to compare")
        return

    rng = np.random.default_rng(0)
    print(f"{'case':<26}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}  identical")
    for group in (kernel_cases(args.size, rng), solver_cases()):
        for name, fn in group.items():
            out, t = {}, {}
            for backend in ("numpy", "numba"):
                _accel.set_backend(backend)
                t[backend] = best_of(fn, args.repeat)
                out[backend] = fn()
            if isinstance(out["numpy"], tuple) or isinstance(out["numpy"], np.ndarray):
                same = all(np.array_equal(a, b) for a, b in zip(_as_tuple(out["numpy"]), _as_tuple(out["numba"])))
            elif hasattr(out["numpy"], "Y"):
                same = all(np.array_equal(a, b) for a, b in zip(out["numpy"].Y, out["numba"].Y))
            else:
                same = out["numpy"].value == out["numba"].value
            print(f"{name:<26}{1e3 * t['numpy']:>12.2f}{1e3 * t['numba']:>12.2f}"
                  f"{t['numpy'] / t['numba']:>9.2f}  {same}")
    _accel.set_backend("numba")


if __name__ == "__main__":
    main()
