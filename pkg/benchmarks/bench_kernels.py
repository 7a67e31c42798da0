"""Compare the compiled and numpy Euler-Maruyama kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--paths 400] [--repeat 3]

Both backends integrate the same behavior-data workload (two states, one
input, h = 1e-4 on [0, 1]) from identical Brownian increments; the script
prints the best wall time of each and the largest relative difference of
the resulting window functionals.
"""

import argparse
import time

import numpy as np

from stochirl.lq_core import SystemDynamics
from stochirl.sde_sim import (
    ExplorationNoise,
    LinearPolicy,
    SimConfig,
    brownian_increments,
    collect_window_functionals,
    get_backend,
)

SYSTEM = SystemDynamics(
    [[-1.0, 2.0], [2.2, 1.7]], [[2.0], [1.6]], [[0.1, 0.2], [0.2, 0.1]], [[0.2], [0.1]]
)
K0 = [[-1.2292, -2.1684]]


def best_time(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)

    cfg = SimConfig(x0=(10.0, -10.0), paths_M=args.paths, seed=args.seed)
    policy = LinearPolicy(K0, ExplorationNoise.random(1, seed=args.seed))
    dW = brownian_increments(cfg)
    results = {}
    for name in ("cython", "python"):
        try:
            get_backend(name)
        except ImportError:
            print(f"{name:>7}: unavailable (extension not built)")
            continue
        t, wf = best_time(
            lambda: collect_window_functionals(SYSTEM, policy, cfg, dW=dW, backend=name),
            args.repeat,
        )
        results[name] = (t, wf)
        steps = cfg.paths_M * cfg.n_steps
        print(f"{name:>7}: {t:8.3f} s  ({steps / t / 1e6:6.1f} M path-steps/s)")
    if len(results) == 2:
        (tc, a), (tp, b) = results["cython"], results["python"]
        diff = max(
            float(np.max(np.abs(getattr(a, k) - getattr(b, k)) / (1.0 + np.abs(getattr(b, k)))))
            for k in ("delta_xx", "delta_uu", "i_xx", "i_xu")
        )
        print(f"speedup: {tp / tc:.1f}x   max relative difference: {diff:.2e}")


if __name__ == "__main__":
    main()
