"""Adaptive binary range coding of context-tagged bit sequences.

The hot loops live in a compiled kernel (``_rangecoder_ext``). When the
extension is not built, or ``TDCODEC_PURE_PYTHON`` is set, the byte-identical
pure-Python kernel is used instead. ``BACKEND`` names the active one.

Standalone streams produced by :func:`range_encode` carry a little-endian
u32 symbol count followed by the coded bytes.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from . import _rangecoder_py
from ._rangecoder_py import TruncatedStreamError

if os.environ.get("TDCODEC_PURE_PYTHON"):
    _kernel = _rangecoder_py
else:
    try:
        from . import _rangecoder_ext as _kernel
    except ImportError:  # extension not built
        _kernel = _rangecoder_py

BACKEND = "python" if _kernel is _rangecoder_py else "compiled"

__all__ = [
    "BACKEND",
    "range_encode",
    "range_decode",
    "encode_core_symbols",
    "decode_core_symbols",
    "core_context_count",
    "TruncatedStreamError",
]

_COUNT = struct.Struct("<I")


def _check_contexts(contexts: np.ndarray, n_contexts: int) -> None:
    if contexts.size and (contexts.min() < 0 or contexts.max() >= n_contexts):
        raise ValueError(f"context ids must lie in [0, {n_contexts})")


def range_encode(bits, contexts, n_contexts: int | None = None, kernel=None) -> bytes:
    """Code ``bits[i]`` under adaptive context ``contexts[i]``."""
    kernel = kernel or _kernel
    bits = np.ascontiguousarray(bits, dtype=np.uint8).ravel()
    contexts = np.ascontiguousarray(contexts, dtype=np.int32).ravel()
    if bits.shape != contexts.shape:
        raise ValueError("bits and contexts differ in length")
    if bits.size and bits.max() > 1:
        raise ValueError("bits must be 0 or 1")
    if n_contexts is None:
        n_contexts = int(contexts.max()) + 1 if contexts.size else 1
    _check_contexts(contexts, n_contexts)
    header = _COUNT.pack(bits.size)
    if bits.size == 0:
        return header
    return header + kernel.encode_bits(bits, contexts, n_contexts)


def range_decode(data: bytes, contexts, n_contexts: int | None = None, kernel=None) -> np.ndarray:
    """Inverse of :func:`range_encode`; the contexts must match the encoding side."""
    kernel = kernel or _kernel
    contexts = np.ascontiguousarray(contexts, dtype=np.int32).ravel()
    if len(data) < _COUNT.size:
        raise TruncatedStreamError("stream shorter than its symbol-count header")
    (count,) = _COUNT.unpack_from(data, 0)
    if count != contexts.size:
        raise ValueError(f"stream declares {count} symbols but {contexts.size} contexts were given")
    if n_contexts is None:
        n_contexts = int(contexts.max()) + 1 if contexts.size else 1
    _check_contexts(contexts, n_contexts)
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    return kernel.decode_bits(bytes(data[_COUNT.size:]), contexts, n_contexts)


def core_context_count(intervals: int) -> int:
    return _rangecoder_py.core_context_layout(int(intervals))[0]


def _check_intervals(intervals: int) -> int:
    intervals = int(intervals)
    if not 1 <= intervals <= 16:
        raise ValueError(f"intervals must be in [1, 16], got {intervals}")
    return intervals


def encode_core_symbols(chunks, signs, codes, intervals: int, kernel=None) -> bytes:
    """Code per-element (chunk, sign, magnitude code) records of a quantized core."""
    kernel = kernel or _kernel
    intervals = _check_intervals(intervals)
    chunks = np.ascontiguousarray(chunks, dtype=np.uint8).ravel()
    signs = np.ascontiguousarray(signs, dtype=np.uint8).ravel()
    codes = np.ascontiguousarray(codes, dtype=np.uint32).ravel()
    if not chunks.size == signs.size == codes.size:
        raise ValueError("chunks, signs and codes differ in length")
    if chunks.size:
        if chunks.min() < 1 or chunks.max() > intervals:
            raise ValueError(f"chunk indices must lie in [1, {intervals}]")
        if np.any(codes >> chunks.astype(np.uint32)):
            raise ValueError("magnitude code wider than its chunk bit depth")
        if signs.max() > 1:
            raise ValueError("sign bits must be 0 or 1")
    return kernel.encode_core(chunks, signs, codes, intervals)


def decode_core_symbols(data: bytes, count: int, intervals: int, kernel=None):
    """Return ``(chunks, signs, codes)`` arrays of length ``count``."""
    kernel = kernel or _kernel
    intervals = _check_intervals(intervals)
    return kernel.decode_core(bytes(data), int(count), intervals)
