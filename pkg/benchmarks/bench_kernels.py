"""Compiled vs numpy kernels: wall time and agreement.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from comboitr import _kernels_py
from comboitr.basis import clamped_knots
from comboitr.budget import KnapsackInstance, tie_order

try:
    from comboitr import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    t = clamped_knots(np.linspace(-1, 1, 7), 3)
    x = rng.uniform(-1, 1, 20000)
    yield "bspline 20000 x 9", "bspline_basis", (x, t, 3)

    for n, m, cmax, B in [(200, 6, 10, 4.0), (1000, 8, 10, 3.0)]:
        inst = KnapsackInstance(rng.normal(size=(n, m)), rng.integers(0, cmax + 1, m), B)
        icost, cap, _ = inst.lattice()
        yield f"mckp n={n} m={m} cap={cap}", "mckp_dp", (inst.delta, icost, cap, tie_order(icost))


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=0, atol=1e-12)
    return a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'numpy s':>10s} {'cython s':>10s} {'speedup':>8s}  agree")
    for label, name, argv in cases(rng):
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*argv), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{label:28s} {t_py:10.4f} {'-':>10s} {'-':>8s}  -")
            continue
        cy = getattr(compiled, name)
        t_cy = min(timeit.repeat(lambda: cy(*argv), number=1, repeat=args.repeat))
        print(f"{label:28s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:8.1f}  {same(py(*argv), cy(*argv))}")


if __name__ == "__main__":
    main()
