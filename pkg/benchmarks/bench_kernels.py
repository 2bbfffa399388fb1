"""Compare the compiled and numpy bicycle-model kernels.

    python benchmarks/bench_kernels.py [--repeat 200] [--batch 256]

Reports the best-of-repeat time per call for each kernel and backend, and the
largest absolute difference between backends.
"""

import argparse
import timeit

import numpy as np

from brgame import _frenet_py as py

try:
    from brgame import _frenet_ext as ext
except ImportError:
    ext = None

ARGS = (0.05, 1.0 / 3.5, 0.13, 0.13)


def _inputs(batch, seed=0):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.uniform(0, 2, batch), rng.uniform(-0.5, 0.5, batch),
              rng.uniform(0, 5, batch), rng.uniform(-0.5, 0.5, batch)]
    U = np.c_[rng.uniform(-2, 2, batch), rng.uniform(-0.4, 0.4, batch)]
    return X, U


def cases(mod, batch):
    X, U = _inputs(batch)
    W = np.ones_like(X)
    U10 = U[:10]
    return {
        f"step (K={batch})": lambda: mod.step(X, U, *ARGS),
        f"step_jac (K={batch})": lambda: mod.step_jac(X, U, *ARGS),
        "step (K=1)": lambda: mod.step(X[:1], U[:1], *ARGS),
        "step_jac (K=10)": lambda: mod.step_jac(X[:10], U[:10], *ARGS),
        "rollout (N=10)": lambda: mod.rollout(X[0], U10, *ARGS),
        "step_curvature (K=10)": lambda: mod.step_curvature(X[:10], U10, W[:10], *ARGS),
    }


def best_time(fn, repeat):
    number = max(1, repeat // 10)
    return min(timeit.repeat(fn, number=number, repeat=10)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--batch", type=int, default=256)
    args = ap.parse_args(argv)

    py_cases = cases(py, args.batch)
    ext_cases = cases(ext, args.batch) if ext else {}
    print(f"{'kernel':<26}{'numpy [us]':>14}{'cython [us]':>14}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in py_cases.items():
        t_py = best_time(fn, args.repeat) * 1e6
        if ext:
            t_ext = best_time(ext_cases[name], args.repeat) * 1e6
            a, b = fn(), ext_cases[name]()
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))
            print(f"{name:<26}{t_py:>14.2f}{t_ext:>14.2f}{t_py / t_ext:>10.1f}{diff:>14.1e}")
        else:
            print(f"{name:<26}{t_py:>14.2f}{'n/a':>14}{'':>10}{'':>14}")
    if not ext:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
