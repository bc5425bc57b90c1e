"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--solves]

``--solves`` also times full AAoptD runs with each backend, launching a fresh
interpreter per backend because the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from aaoptd import kernels
from aaoptd._backend import HAVE_NUMBA

SOLVE_SNIPPET = """
import time
from aaoptd import problems
from aaoptd.accelerator import FlipBelow, Optimized, SolverConfig, solve_aa
p = problems.bratu_problem({n}, 6.0)
cfg = SolverConfig(window_size={m}, damping=Optimized(FlipBelow(0.3)), max_iterations=1000)
solve_aa(p, SolverConfig(window_size=2, max_iterations=3))  # warm-up / JIT
t0 = time.perf_counter()
rep = solve_aa(p, cfg)
print(time.perf_counter() - t0, rep.iterations_used)
"""


def best_of(func, repeat, number):
    return min(timeit.repeat(func, repeat=repeat, number=number)) / number


def bench_stencil(repeat):
    rows = []
    for n_side in (32, 64, 128, 256):
        u = np.random.default_rng(0).standard_normal(n_side * n_side)
        kernels.stencil_apply_numba(u, n_side, 0.01)
        t_np = best_of(lambda: kernels.stencil_apply_numpy(u, n_side, 0.01), repeat, 50)
        t_nb = best_of(lambda: kernels.stencil_apply_numba(u, n_side, 0.01), repeat, 50)
        rows.append((f"stencil n={n_side}^2", t_np, t_nb))
    return rows


def bench_givens(repeat):
    rows = []
    rng = np.random.default_rng(1)
    for n, c in ((1024, 10), (4096, 30), (16384, 40)):
        q, r = np.linalg.qr(rng.standard_normal((n, c)))
        q_rows0, r0 = np.ascontiguousarray(q.T), np.triu(r)

        def runner(fn):
            def call():
                fn(q_rows0.copy(), r0.copy(), c)
            return call

        runner(kernels.givens_drop_first_numba)()
        t_np = best_of(runner(kernels.givens_drop_first_numpy), repeat, 20)
        t_nb = best_of(runner(kernels.givens_drop_first_numba), repeat, 20)
        rows.append((f"givens drop n={n} c={c}", t_np, t_nb))
    return rows


def bench_solves(n_side, m):
    out = {}
    for label, flag in (("numpy", "1"), ("numba", "0")):
        env = dict(os.environ, AAOPTD_NO_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET.format(n=n_side, m=m)],
                             env=env, capture_output=True, text=True, check=True)
        seconds, iters = res.stdout.split()
        out[label] = (float(seconds), int(iters))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--solves", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1

    print(f"{'kernel':<28}{'numpy [us]':>12}{'numba [us]':>12}{'speedup':>9}")
    for name, t_np, t_nb in bench_stencil(args.repeat) + bench_givens(args.repeat):
        print(f"{name:<28}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>8.1f}x")

    if args.solves:
        for n_side, m in ((32, 10), (64, 30)):
            res = bench_solves(n_side, m)
            (t_np, it_np), (t_nb, it_nb) = res["numpy"], res["numba"]
            print(f"bratu-{n_side} AAoptD({m}) flip: numpy {t_np:.3f}s ({it_np} it), "
                  f"numba {t_nb:.3f}s ({it_nb} it), speedup {t_np / t_nb:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
