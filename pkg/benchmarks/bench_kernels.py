"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time for each backend and
the speedup. Exits non-zero if the extension is not built.
"""
import argparse
import importlib
import sys
import timeit

import numpy as np

from lsrgan import _pykernels as py


def cases(rng):
    sims = rng.normal(size=(200, 150))
    excl = rng.integers(-1, 150, size=200)
    x = rng.normal(size=(256, 1024))
    xs, ts = rng.uniform(-1, 1, size=(2, 200_000))
    feats = rng.normal(size=(20_000, 64))
    labels = rng.integers(0, 50, size=20_000)
    return {
        "topk_rows(200x150, k=5)": lambda k: k.topk_rows(sims, 5, excl),
        "topk_rows(200x150, k=20)": lambda k: k.topk_rows(sims, 20, excl),
        "leaky_relu(256x1024)": lambda k: k.leaky_relu(x, 0.2),
        "leaky_relu_mask(256x1024)": lambda k: k.leaky_relu_mask(x, 0.2),
        "band_penalty(2e5)": lambda k: k.band_penalty(xs, ts, 0.05, 1.0),
        "segment_mean(20000x64, 50)": lambda k: k.segment_mean(feats, labels, 50),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        ck = importlib.import_module("lsrgan._ckernels")
    except ImportError:
        print("compiled extension lsrgan._ckernels is not built; run `pip install -e .`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python [ms]':>13}{'cython [ms]':>13}{'speedup':>10}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(ck), number=1, repeat=args.repeat))
        print(f"{name:<28}{t_py * 1e3:>13.3f}{t_c * 1e3:>13.3f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
