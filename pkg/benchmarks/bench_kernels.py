"""Numba vs numpy timings for the vote-counting kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (JIT compile) before timing. Results are also
checked for equality, so a wrong fast path shows up here too.
"""

import argparse
import time

import numpy as np

from ngc import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    for C, N in ((10, 15), (1000, 15), (10, 101)):
        votes = rng.integers(0, C, (100_000, N))
        u = rng.random(100_000)
        yield f"plurality_hits  C={C:<4} N={N:<3} 1e5 trials", K.plurality_hits_numpy, K.plurality_hits_numba, (votes, u, C)
    for C, P in ((2, 3), (12, 5)):
        votes = rng.integers(0, C, (P, 1000 * 32 * 32))
        yield f"vote_consensus  C={C:<4} paths={P}  1M pixels", K.vote_consensus_numpy, K.vote_consensus_numba, (votes, C)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba unavailable or disabled (NGC_DISABLE_NUMBA); nothing to compare")
        return
    print(f"{'kernel':<44} {'numpy s':>9} {'numba s':>9} {'speedup':>8}")
    for name, np_fn, nb_fn, a in cases():
        ref, fast = np_fn(*a), nb_fn(*a)  # warm-up and correctness
        if not isinstance(ref, tuple):
            ref, fast = (ref,), (fast,)
        same = all(np.array_equal(x, y) for x, y in zip(ref, fast))
        t_np = best_of(lambda: np_fn(*a), args.repeat)
        t_nb = best_of(lambda: nb_fn(*a), args.repeat)
        flag = "" if same else "  MISMATCH"
        print(f"{name:<44} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:7.1f}x{flag}")


if __name__ == "__main__":
    main()
