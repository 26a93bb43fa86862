import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import binary_entropy
from tdcodec import _rangecoder_py, rangecoder
from tdcodec.rangecoder import (
    TruncatedStreamError,
    core_context_count,
    decode_core_symbols,
    encode_core_symbols,
    range_decode,
    range_encode,
)

try:
    from tdcodec import _rangecoder_ext
except ImportError:
    _rangecoder_ext = None

needs_ext = pytest.mark.skipif(_rangecoder_ext is None, reason="compiled kernel not built")


def _core_records(rng, n, m):
    chunks = rng.integers(1, m + 1, n).astype(np.uint8)
    codes = (rng.integers(0, 1 << 16, n) & ((1 << chunks.astype(np.uint32)) - 1)).astype(np.uint32)
    signs = rng.integers(0, 2, n).astype(np.uint8)
    return chunks, signs, codes


def test_backend_reported():
    assert rangecoder.BACKEND in ("compiled", "python")


def test_empty_stream():
    blob = range_encode(np.zeros(0), np.zeros(0))
    assert len(blob) == 4
    assert range_decode(blob, np.zeros(0)).size == 0


def test_skewed_source_near_entropy(rng):
    n = 100_000
    bits = (rng.random(n) < 0.05).astype(np.uint8)
    blob = range_encode(bits, np.zeros(n, np.int32))
    bound = binary_entropy(0.05)
    assert bound == pytest.approx(0.286, abs=1e-3)
    assert 8 * len(blob) / n <= 1.10 * bound
    np.testing.assert_array_equal(range_decode(blob, np.zeros(n, np.int32)), bits)


def test_alternating_source():
    n = 100_000
    bits = (np.arange(n) % 2).astype(np.uint8)
    blob = range_encode(bits, np.zeros(n, np.int32))
    assert 8 * len(blob) / n <= 1.01


def test_fair_bits_overhead(rng):
    n = 100_000
    bits = rng.integers(0, 2, n).astype(np.uint8)
    blob = range_encode(bits, np.zeros(n, np.int32))
    assert len(blob) <= n / 8 + 16


def test_million_symbol_round_trip():
    rng = np.random.default_rng(99)
    n = 1_000_000
    ctx = rng.integers(0, 16, n).astype(np.int32)
    p = np.linspace(0.02, 0.98, 16)[ctx]
    bits = (rng.random(n) < p).astype(np.uint8)
    np.testing.assert_array_equal(range_decode(range_encode(bits, ctx, 16), ctx, 16), bits)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 3)), max_size=400))
def test_round_trip_property(pairs):
    bits = np.array([b for b, _ in pairs], dtype=np.uint8)
    ctx = np.array([c for _, c in pairs], dtype=np.int32)
    np.testing.assert_array_equal(range_decode(range_encode(bits, ctx, 4), ctx, 4), bits)


def test_truncation_detected(rng):
    n = 5000
    ctx = np.zeros(n, np.int32)
    bits = rng.integers(0, 2, n).astype(np.uint8)
    blob = range_encode(bits, ctx)
    for cut in (len(blob) - 1, len(blob) // 2, 5):
        with pytest.raises(TruncatedStreamError):
            range_decode(blob[:cut], ctx)
    with pytest.raises(TruncatedStreamError):
        range_decode(blob[:3], ctx)


def test_declared_count_must_match():
    blob = range_encode(np.ones(10), np.zeros(10))
    with pytest.raises(ValueError):
        range_decode(blob, np.zeros(9))


@pytest.mark.parametrize(
    "bits, ctx, n",
    [([0, 2], [0, 0], None), ([0, 1], [0, 1], 1), ([0, 1], [0], None), ([1], [-1], 2)],
)
def test_input_validation(bits, ctx, n):
    with pytest.raises(ValueError):
        range_encode(np.array(bits), np.array(ctx), n)


def test_core_symbols_round_trip(rng):
    for m in (1, 2, 5, 8, 16):
        recs = _core_records(rng, 3000, m)
        blob = encode_core_symbols(*recs, m)
        back = decode_core_symbols(blob, 3000, m)
        for a, b in zip(back, recs):
            np.testing.assert_array_equal(a, b)


def test_core_context_count():
    # sign + chunk tree nodes + one context per (chunk, bit position)
    assert core_context_count(1) == 1 + 1 + 1
    assert core_context_count(5) == 1 + 8 + 15
    assert core_context_count(8) == 1 + 8 + 36


def test_core_symbol_validation(rng):
    chunks, signs, codes = _core_records(rng, 10, 3)
    with pytest.raises(ValueError):
        encode_core_symbols(chunks, signs, codes, 2)
    bad = codes.copy()
    bad[0] = 1 << int(chunks[0])
    with pytest.raises(ValueError):
        encode_core_symbols(chunks, signs, bad, 3)
    with pytest.raises(ValueError):
        encode_core_symbols(chunks, signs, codes, 0)


def test_core_truncation_detected(rng):
    recs = _core_records(rng, 2000, 5)
    blob = encode_core_symbols(*recs, 5)
    with pytest.raises(ValueError):
        decode_core_symbols(blob[: len(blob) // 2], 2000, 5)


@needs_ext
def test_kernels_byte_identical(rng):
    n = 20_000
    ctx = rng.integers(0, 8, n).astype(np.int32)
    bits = (rng.random(n) < 0.2).astype(np.uint8)
    a = range_encode(bits, ctx, 8, kernel=_rangecoder_py)
    b = range_encode(bits, ctx, 8, kernel=_rangecoder_ext)
    assert a == b
    np.testing.assert_array_equal(range_decode(a, ctx, 8, kernel=_rangecoder_ext), bits)
    recs = _core_records(rng, 4000, 6)
    ca = encode_core_symbols(*recs, 6, kernel=_rangecoder_py)
    assert ca == encode_core_symbols(*recs, 6, kernel=_rangecoder_ext)
    for k in (_rangecoder_py, _rangecoder_ext):
        for x, y in zip(decode_core_symbols(ca, 4000, 6, kernel=k), recs):
            np.testing.assert_array_equal(x, y)


def test_pure_python_fallback_selected_by_env():
    import os
    import subprocess
    import sys
    env = dict(os.environ, TDCODEC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import tdcodec.rangecoder as r; print(r.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout
    assert out.strip() == "python"
