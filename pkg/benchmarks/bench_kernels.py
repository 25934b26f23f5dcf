"""Time the numba and numpy kernel variants side by side.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Numba timings exclude the first (compiling) call.
"""

import argparse
import timeit

import numpy as np

from c3f import kernels


def cases(n, rng):
    w = np.sort(rng.uniform(0.1, 3.0, size=n))
    s = rng.normal(size=n)
    wt = rng.uniform(0.1, 3.0, size=n)
    X = rng.normal(size=(min(n, 5000), 3))
    y = (X[:, 0] + rng.normal(size=X.shape[0]) > 0).astype(float)
    t = rng.uniform(0, 2, size=n)
    return {
        "quantile_index": lambda f: f(w, 0.9),
        "ecdf_at": lambda f: f(s, wt, 0.3),
        "smoothed_mean": lambda f: f(0.3, s, 0.05, wt),
        "hard_mean": lambda f: f(0.3, s, wt),
        "logistic_fit": lambda f: f(X, y, 0.1, 1e-4, 1e-8, 200),
        "residual_covered": lambda f: f(s, wt, t),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, call in cases(args.n, rng).items():
        np_fn = getattr(kernels, f"_np_{name}")
        t_np = min(timeit.repeat(lambda: call(np_fn), number=1, repeat=args.repeat))
        if kernels.HAVE_NUMBA:
            nb_fn = getattr(kernels, f"_nb_{name}")
            call(nb_fn)  # compile
            t_nb = min(timeit.repeat(lambda: call(nb_fn), number=1, repeat=args.repeat))
            print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}")
        else:
            print(f"{name:<18}{t_np * 1e3:>12.3f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
