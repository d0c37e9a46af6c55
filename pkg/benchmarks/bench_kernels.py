"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends are imported directly, so one process times both regardless
of ROBUSTHIDE_PURE_PYTHON. Outputs are checked for bitwise equality first.
"""
import argparse
import timeit

import numpy as np

from robusthide import _pykernels


def cases(rng):
    x = rng.standard_normal((16, 16, 64, 64)).astype(np.float32)
    cols = _pykernels.im2col(x, 3, 1, 1)
    xs = rng.standard_normal((16, 16, 64, 64)).astype(np.float32)
    coeffs = rng.standard_normal((16 * 3 * 64, 8, 8)) * 100
    table = rng.integers(1, 100, (8, 8))
    return [
        ("im2col 16x16x64x64 k3", "im2col", (x, 3, 1, 1)),
        ("im2col stride 2", "im2col", (xs, 3, 2, 1)),
        ("col2im 16x16x64x64 k3", "col2im", (cols, x.shape, 3, 1, 1)),
        ("round_half_away 196k", "round_half_away", (coeffs,)),
        ("quantize_dequantize 3072 blocks", "quantize_dequantize", (coeffs, table)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    try:
        from robusthide import _ckernels
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, fn, argv in cases(rng):
        fc, fp = getattr(_ckernels, fn), getattr(_pykernels, fn)
        if not np.array_equal(fc(*argv), fp(*argv)):
            raise SystemExit(f"{label}: backends disagree")
        tc = min(timeit.repeat(lambda: fc(*argv), number=1, repeat=args.repeat)) * 1e3
        tp = min(timeit.repeat(lambda: fp(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:34s} {tc:10.2f} {tp:10.2f} {tp / tc:7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
