"""Compiled vs pure-Python kernels: 2-means Lloyd iterations, point transfers and scatter-add.

    python benchmarks/bench_kernels.py [--repeat 5]

The pure-Python module is always importable; the compiled one only after
``pip install -e . --no-build-isolation`` has built the extension.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from augcl import _pykernels as py

try:
    from augcl import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def cases(rng):
    # one mining phase on MUTAG-sized batches: 160 anchors x 31 candidates x 32 dims
    pts = [rng.normal(size=(31, 32)) for _ in range(160)]
    vals = rng.normal(size=(20000, 32))
    idx = rng.integers(0, 600, size=20000)

    def lloyd(mod):
        for p in pts:
            mod.lloyd2(p, 0, 1, 50, 1e-6)

    starts = [py.lloyd2(p, 0, 1, 50, 1e-6)[0] for p in pts]

    def transfer(mod):
        for p, s in zip(pts, starts):
            mod.transfer2(p, s, 50)

    def scatter(mod):
        mod.scatter_add_rows(vals, idx, 600)

    return {"lloyd2 x160 (31x32)": lloyd, "transfer2 x160 (31x32)": transfer, "scatter_add 20000x32 -> 600": scatter}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:32s} {tp:10.2f} {'n/a':>10s} {'':>8s}")
            continue
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {tp:10.2f} {tc:10.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
