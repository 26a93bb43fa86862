"""Throughput of the compiled and pure-Python range-coder kernels.

    python3 benchmarks/bench_rangecoder.py [--symbols N] [--repeat K]

Both kernels are run on the same skewed bit stream and on a synthetic
quantized core; outputs are checked to be byte-identical.
"""
import argparse
import time

import numpy as np

from tdcodec import _rangecoder_py

try:
    from tdcodec import _rangecoder_ext
except ImportError:
    _rangecoder_ext = None


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _core(n, intervals, rng):
    chunks = np.minimum(rng.geometric(0.5, n), intervals).astype(np.uint8)
    codes = (rng.integers(0, 1 << 16, n) & ((1 << chunks.astype(np.uint32)) - 1)).astype(np.uint32)
    signs = rng.integers(0, 2, n).astype(np.uint8)
    return chunks, signs, codes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    bits = (rng.random(args.symbols) < 0.1).astype(np.uint8)
    ctx = rng.integers(0, 8, args.symbols).astype(np.int32)
    n_core = args.symbols // 4
    core = _core(n_core, 5, rng)

    kernels = [("python", _rangecoder_py)]
    if _rangecoder_ext is not None:
        kernels.append(("compiled", _rangecoder_ext))
    else:
        print("compiled kernel not built; reporting the Python kernel only")

    results = {}
    print(f"{'kernel':<10}{'task':<14}{'encode ns/sym':>15}{'decode ns/sym':>15}")
    for name, k in kernels:
        enc_t, blob = _best(lambda: k.encode_bits(bits, ctx, 8), args.repeat)
        dec_t, back = _best(lambda: k.decode_bits(blob, ctx, 8), args.repeat)
        assert np.array_equal(back, bits)
        print(f"{name:<10}{'bits':<14}{1e9 * enc_t / bits.size:>15.1f}{1e9 * dec_t / bits.size:>15.1f}")
        cenc_t, cblob = _best(lambda: k.encode_core(*core, 5), args.repeat)
        cdec_t, cback = _best(lambda: k.decode_core(cblob, n_core, 5), args.repeat)
        assert all(np.array_equal(a, b) for a, b in zip(cback, core))
        print(f"{name:<10}{'core records':<14}{1e9 * cenc_t / n_core:>15.1f}{1e9 * cdec_t / n_core:>15.1f}")
        results[name] = (blob, cblob, enc_t + dec_t + cenc_t + cdec_t)

    if len(results) == 2:
        py, cx = results["python"], results["compiled"]
        assert py[0] == cx[0] and py[1] == cx[1], "kernels disagree"
        print(f"outputs byte-identical; compiled speed-up {py[2] / cx[2]:.1f}x")


if __name__ == "__main__":
    main()
