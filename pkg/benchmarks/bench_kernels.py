"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow one spectral-stream step (128 pixels, 162 bands) and one SLIC
sweep over a 64x64 field with S=5.
"""
import argparse
import timeit

import numpy as np

from sscunet.kernels import get_backend


def cases(rng):
    x = rng.normal(size=(128, 1, 162))
    k1 = rng.normal(size=(3, 1, 5))
    x3 = rng.normal(size=(128, 12, 38))
    k3 = rng.normal(size=(24, 12, 5))
    g3 = rng.normal(size=(128, 24, 34))
    pool_in = rng.normal(size=(128, 6, 76))
    pooled = rng.normal(size=(128, 6, 38))
    idx = 2 * np.arange(38) + rng.integers(0, 2, size=(128, 6, 38))
    feat = rng.dirichlet(np.ones(5), size=(64, 64))
    r, c = np.mgrid[2:64:5, 2:64:5]
    pos = np.stack([r.ravel(), c.ravel()], axis=1).astype(float)
    cfeat = feat[r.ravel(), c.ravel()]
    labels = np.zeros((64, 64), dtype=np.int64)
    dist = np.empty((64, 64))
    return {
        "conv1d_forward (stage 1)": lambda K: K.conv1d_forward(x, k1),
        "conv1d_forward (stage 3)": lambda K: K.conv1d_forward(x3, k3),
        "conv1d_backward (stage 3)": lambda K: K.conv1d_backward(g3, x3, k3),
        "maxpool1d_forward": lambda K: K.maxpool1d_forward(pool_in),
        "maxpool1d_backward": lambda K: K.maxpool1d_backward(pooled, idx, 76),
        "slic_assign (64x64, S=5)": lambda K: K.slic_assign(feat, cfeat, pos, 5.0, 10.0,
                                                            labels, dist),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        cy = None
        print("compiled kernels not built; timing the NumPy fallback only")
    print(f"{'kernel':<28} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        n = 3
        t_py = min(timeit.repeat(lambda: fn(py), number=n, repeat=args.repeat)) / n * 1e3
        if cy is None:
            print(f"{name:<28} {t_py:10.3f}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=n, repeat=args.repeat)) / n * 1e3
        print(f"{name:<28} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
