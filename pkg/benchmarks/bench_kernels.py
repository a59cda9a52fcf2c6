"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from selpred.kernels import get_backend
from selpred.selective import make_grid


def cases(rng):
    z = rng.normal(size=(256, 32))
    zp = z + 0.3 * rng.normal(size=z.shape)
    n, k = 20000, 5
    pmax = rng.uniform(1 / k, 1, n)
    labels = rng.integers(0, k, n)
    preds = rng.integers(0, k, n)
    grid = make_grid(0.01)
    return {
        "triplet_loss_grad N=256 D=32": lambda b: b.triplet_loss_grad(z, zp, 1.0, True),
        "sweep_confusion N=20000 G=101": lambda b: b.sweep_confusion(pmax, labels, preds, grid, k),
        "confusion_matrix N=20000": lambda b: b.confusion_matrix(
            labels, preds, np.ones(n, dtype=bool), k),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    try:
        backends = {"python": get_backend("python"), "cython": get_backend("cython")}
    except ImportError:
        backends = {"python": get_backend("python")}
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        outs = {b: fn(m) for b, m in backends.items()}
        if len(outs) == 2:
            a, b = outs["python"], outs["cython"]
            pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
            for x, y in pairs:
                assert np.allclose(x, y, rtol=1e-12, atol=1e-12), name
        t = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat))
             for b, m in backends.items()}
        row = f"{name:32s}" + "".join(f"{t[b] * 1e3:10.3f}ms" for b in backends)
        if len(t) == 2:
            row += f"{t['python'] / t['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
