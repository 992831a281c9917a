"""Time the compiled and pure-Python kernel backends on the reference models.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--nodes 2001]

For each registered model the script runs the Riccati sweep (criterion value)
and the sensitivity sweep (criterion gradient) under every available backend,
checks that the backends agree and prints the best-of-``repeat`` timings.
"""

import argparse
import time

import numpy as np

from dkf_ode import TimeGrid, criterion_S, get_model, grad_S, kernels, registered_models
from dkf_ode.dkf import SampledSignal


def _signal(model, grid):
    rng = np.random.default_rng(0)
    w = rng.uniform(1.0, 3.0, model.d_obs) * 2 * np.pi / model.T
    return SampledSignal(lambda t: np.cos(w * np.atleast_1d(t)[:, None]), grid)


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=2001)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    active = kernels.BACKEND
    print(f"backends: {', '.join(backends)} (default {active}), grid nodes {args.nodes}")
    print(f"{'model':12s} {'task':9s} " + " ".join(f"{b + ' [ms]':>14s}" for b in backends) + f" {'speedup':>8s}")
    try:
        for name in registered_models():
            m = get_model(name)
            grid = TimeGrid.uniform(m.T, args.nodes)
            zeta = _signal(m, grid)
            tasks = {
                "S": lambda: criterion_S(m, m.theta_star, 1e4, None, zeta, grid).S,
                "gradient": lambda: grad_S(m, m.theta_star, 1e4, None, zeta, grid).grad,
            }
            for task, fn in tasks.items():
                timing, values = {}, {}
                for b in backends:
                    kernels.set_backend(b)
                    timing[b], values[b] = _best(fn, args.repeat)
                ref = values[backends[0]]
                for b in backends[1:]:
                    np.testing.assert_allclose(values[b], ref, rtol=1e-10, atol=1e-14)
                cells = " ".join(f"{1e3 * timing[b]:14.2f}" for b in backends)
                speed = timing["python"] / timing["cython"] if "cython" in timing else float("nan")
                print(f"{name:12s} {task:9s} {cells} {speed:8.1f}")
    finally:
        kernels.set_backend(active)


if __name__ == "__main__":
    main()
