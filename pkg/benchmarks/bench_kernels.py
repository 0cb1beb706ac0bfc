"""Time the compiled sampling kernels against the pure Python fallback.

Run as: python benchmarks/bench_kernels.py
"""
import time

import numpy as np

from voprlab import _sampling_py
from voprlab.harness import random_mdp
from voprlab.kernels import BACKEND, row_cumsum

try:
    from voprlab import _sampling
except ImportError:
    _sampling = None


def _time(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    mdp = random_mdp(8, 4, seed=3, reward_sparsity=0.5)
    S, A = mdp.n_states, mdp.n_actions
    cum_mu = row_cumsum(np.full(S, 1.0 / S))
    cum_pi = row_cumsum(np.full((S, A), 1.0 / A))
    cum_p = row_cumsum(mdp.transition)
    cum_start = row_cumsum(np.full(S * A, 1.0 / (S * A)))
    rng = np.random.default_rng(0)

    print(f"active backend: {BACKEND}")
    impls = [("python", _sampling_py)] + ([("compiled", _sampling)] if _sampling else [])

    n = 1_000_000
    u3 = rng.random((n, 3))
    print(f"\nsample_tuples, n={n}")
    results = {}
    for name, impl in impls:
        t, out = _time(impl.sample_tuples, cum_mu, cum_pi, cum_p, u3)
        results[name] = out
        print(f"  {name:9s} {t * 1e3:9.1f} ms")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(*results.values()))
        print(f"  outputs identical: {same}")

    t = 1_000_000
    u2 = rng.random((t, 2))
    print(f"\nrestart_walk, steps={t}")
    results = {}
    for name, impl in impls:
        dt, out = _time(impl.restart_walk, cum_start, cum_pi, cum_p,
                        1.0 - mdp.gamma, u2, repeat=1)
        results[name] = out
        print(f"  {name:9s} {dt * 1e3:9.1f} ms")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(*results.values()))
        print(f"  outputs identical: {same}")
    if _sampling is None:
        print("\ncompiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
