"""Compare the compiled kernels with the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times index drawing, single Newton fits and a full bagging run under each
backend, and checks that both produce the same numbers.
"""

import argparse
import json
import sys
import timeit

import numpy as np

import bagm.sampler
import bagm.solver
from bagm import _kernels_py
from bagm.bagging import bagging_estimate
from bagm.core import BaggingConfig
from bagm.models import get_model
from bagm.sampler import TAG_INDEX, philox_key
from bagm.simulate import generate, reference_design

try:
    from bagm import _kernels as compiled
except ImportError:
    compiled = None


def logistic_block(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ np.linspace(-0.2, 0.2, p)))).astype(float)
    return X, y


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def cases():
    key = philox_key(1, 1)
    X5, y5 = logistic_block(1000, 5)
    X22, y22 = logistic_block(30_000, 22, seed=1)
    store = generate(reference_design("logistic", N=50_000, seed=3))
    model = get_model("logistic", 5)
    cfg = BaggingConfig(n=1000, K=100, master_seed=4)

    def bagging(mod):
        bagm.sampler.kernels = mod
        bagm.solver.kernels = mod
        try:
            return bagging_estimate(model, store, cfg).theta_bag
        finally:
            bagm.sampler.kernels = bagm.solver.kernels = compiled or _kernels_py

    return [
        ("draw_indices n=1e5 N=1e6", 10, lambda m: m.draw_indices(key[0], key[1], TAG_INDEX, 100_000, 10**6)),
        ("fit_glm logistic n=1e3 p=5", 50, lambda m: m.fit_glm(1, X5, y5, np.zeros(5), 1e-8, 100, 30)[0]),
        ("fit_glm logistic n=3e4 p=22", 3, lambda m: m.fit_glm(1, X22, y22, np.zeros(22), 1e-8, 100, 30)[0]),
        ("bagging_estimate n=1e3 K=100", 1, bagging),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback can be timed", file=sys.stderr)
    rows = []
    print(f"{'kernel':<32} {'compiled':>12} {'numpy':>12} {'speedup':>8}  agree")
    for name, number, fn in cases():
        t_py = best_of(lambda: fn(_kernels_py), args.repeat, number)
        if compiled is None:
            rows.append({"kernel": name, "numpy_s": t_py})
            print(f"{name:<32} {'-':>12} {t_py * 1e3:>10.3f}ms")
            continue
        t_c = best_of(lambda: fn(compiled), args.repeat, number)
        a, b = np.asarray(fn(compiled)), np.asarray(fn(_kernels_py))
        agree = bool(np.array_equal(a, b) or np.allclose(a, b, rtol=0, atol=1e-12))
        rows.append({"kernel": name, "compiled_s": t_c, "numpy_s": t_py, "speedup": t_py / t_c, "agree": agree})
        print(f"{name:<32} {t_c * 1e3:>10.3f}ms {t_py * 1e3:>10.3f}ms {t_py / t_c:>7.1f}x  {agree}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
