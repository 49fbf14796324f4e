"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Also checks that both backends return identical results on every input.
"""

import argparse
import hashlib
import timeit

import numpy as np

from vscluster import _fallback

try:
    from vscluster import _kernels
except ImportError:
    _kernels = None

VIN = b"1HGCM82633A004352"
CHANNEL = (23.0, 47.0, 1.0, 2.7, -96.0, 1.0)


def cases(n_vehicles):
    rng = np.random.default_rng(0)
    xs = list(rng.uniform(0, 2000, n_vehicles))
    ys = list(rng.uniform(0, 20, n_vehicles))
    return [
        ("sha256_iterate m=100k", lambda k: k.sha256_iterate(VIN, 100_000)),
        ("sha256_chain n=10k", lambda k: k.sha256_chain(VIN, 10_000)),
        (f"snr_matrix {n_vehicles}x{n_vehicles}", lambda k: k.snr_matrix(xs, ys, *CHANNEL)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--vehicles", type=int, default=200)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")

    print(f"{'kernel':<28}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.vehicles):
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<28}{py:>12.2f}{'-':>12}{'-':>10}")
            continue
        a, b = fn(_fallback), fn(_kernels)
        same = np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{py:>12.2f}{cy:>12.2f}{py / cy:>9.1f}x")

    ref = hashlib.sha256(VIN).digest()
    assert _fallback.sha256_iterate(VIN, 1) == ref


if __name__ == "__main__":
    main()
