"""TDNC compressed container, factor-matrix coding and rate accounting.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic "TDNC"
    4       1     format version (1)
    5       1     flags: bit 0 quantizer model embedded, bit 1 core stored raw
    6       1     strategy: 0 latent, 1 whole-image, 2 patch-stack
    7       1     channels
    8       4     image width
    12      4     image height
    16      2     patch size
    18      2     bottom padding
    20      2     right padding
    22      12    tensor dims I1, I2, I3 (u32)
    34      12    ranks R1, R2, R3 (u32)
    46      2     config id (0xFFFF: none)
    48      1     intervals M
    49      1     factor bit depth
    50      4     quantizer model fingerprint (CRC32)
    54      ...   embedded model, if flagged: M + 1 boundaries, M representatives (f64)
            ...   one factor block per mode with R_n < I_n: scale (f32), then
                  ceil(I_n R_n b / 8) bytes of MSB-first packed b-bit codes,
                  row-major. A mode with R_n = I_n has an identity factor and
                  no block.
            ...   chunk presence bitmap, ceil(M / 8) bytes, bit q-1 for chunk q
            ...   (Cmin, Cmax) f32 pair for every present chunk
            4     core element count (u32)
            4     core byte length (u32)
            ...   core bytes
            4     CRC32 of everything above

The core is range coded (see :mod:`tdcodec.rangecoder`) unless that comes
out larger than the raw record size, in which case it is stored raw: the
chunk indices (``ceil(log2 M)`` bits each), then the sign bits, then the
magnitude codes with ``m`` bits each, all MSB-first.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .quantizer import QuantizedCore, QuantizerModel
from .rangecoder import decode_core_symbols, encode_core_symbols
from .tensorize import STRATEGIES, TensorizationDescriptor

__all__ = [
    "MAGIC",
    "VERSION",
    "FACTOR_BIT_DEPTHS",
    "BitstreamError",
    "RateConfig",
    "FactorBlock",
    "CompressedPayload",
    "BitBudget",
    "encode_factor_matrix",
    "decode_factor_matrix",
    "encode_core",
    "decode_core",
    "serialize",
    "deserialize",
    "compute_bpp",
    "compression_ratio",
    "bit_budget",
    "max_payload_bits",
]

MAGIC = b"TDNC"
VERSION = 1
FACTOR_BIT_DEPTHS = (8, 12, 16)
NO_CONFIG = 0xFFFF

FLAG_EMBEDDED_MODEL = 0x01
FLAG_RAW_CORE = 0x02

_HEADER = struct.Struct("<4sBBBBIIHHH3I3IHBBI")
_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")


class BitstreamError(ValueError):
    """Malformed TDNC stream; names the offending field and byte offset."""

    def __init__(self, field: str, offset: int, message: str):
        self.field = field
        self.offset = offset
        super().__init__(f"field '{field}' at offset {offset}: {message}")


@dataclass(frozen=True)
class RateConfig:
    """One operating point: nominal ranks, decision intervals, factor bit depth."""

    ranks: Tuple[int, int, int]
    intervals: int
    factor_bits: int = 16
    config_id: int = 0

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        object.__setattr__(self, "ranks", ranks)
        if len(ranks) != 3 or min(ranks) < 1:
            raise ValueError(f"ranks must be three positive integers, got {self.ranks}")
        if not 1 <= int(self.intervals) <= 16:
            raise ValueError(f"intervals must be in [1, 16], got {self.intervals}")
        if self.factor_bits not in FACTOR_BIT_DEPTHS:
            raise ValueError(f"factor bit depth must be one of {FACTOR_BIT_DEPTHS}")
        if not 0 <= int(self.config_id) < NO_CONFIG:
            raise ValueError(f"config id must be in [0, {NO_CONFIG})")

    @property
    def sort_key(self):
        return (sum(self.ranks), self.intervals)

    def describe(self) -> str:
        r1, r2, r3 = self.ranks
        return f"{r1} {r2} {r3} {self.intervals} {self.factor_bits}"


def _pack_codes(codes: np.ndarray, width: int) -> bytes:
    """MSB-first concatenation of ``width``-bit codes, zero-padded to a byte."""
    codes = np.asarray(codes).ravel()
    if width in (8, 16):
        return codes.astype(">u%d" % (width // 8)).tobytes()
    if width == 12:
        v = codes.astype(np.uint16)
        n = v.size
        if n % 2:
            v = np.append(v, np.uint16(0))
        a, b = v[0::2], v[1::2]
        out = np.empty((a.size, 3), dtype=np.uint8)
        out[:, 0] = a >> 4
        out[:, 1] = ((a & 0xF) << 4) | (b >> 8)
        out[:, 2] = b & 0xFF
        return out.tobytes()[: (n * 12 + 7) // 8]
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    bits = ((codes.astype(np.uint64)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def _unpack_codes(data: bytes, count: int, width: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    if width in (8, 16):
        return np.frombuffer(data, dtype=">u%d" % (width // 8), count=count).astype(np.uint64)
    if width == 12:
        pairs = (count + 1) // 2
        padded = np.zeros(3 * pairs, dtype=np.uint16)
        padded[: buf.size] = buf[: 3 * pairs]
        t = padded.reshape(pairs, 3)
        out = np.empty(2 * pairs, dtype=np.uint64)
        out[0::2] = (t[:, 0] << 4) | (t[:, 1] >> 4)
        out[1::2] = ((t[:, 1] & 0xF) << 8) | t[:, 2]
        return out[:count]
    bits = np.unpackbits(buf, count=count * width)
    weights = np.left_shift(1, np.arange(width - 1, -1, -1, dtype=np.uint64))
    return bits.reshape(count, width).astype(np.uint64) @ weights


@dataclass(frozen=True)
class FactorBlock:
    rows: int
    cols: int
    bit_depth: int
    scale: float
    data: bytes

    @staticmethod
    def byte_length(rows: int, cols: int, bit_depth: int) -> int:
        return (rows * cols * bit_depth + 7) // 8


def encode_factor_matrix(u: np.ndarray, bit_depth: int = 16, eps: float = 1e-6) -> FactorBlock:
    """Uniform mid-rise quantization of a factor matrix over ``[-s, s]``.

    ``s`` is the largest entry magnitude rounded up to float32 and capped at
    1, so the per-entry reconstruction error is at most ``2 ** -bit_depth``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"factor matrix must be 2-D, got shape {u.shape}")
    if bit_depth not in FACTOR_BIT_DEPTHS:
        raise ValueError(f"factor bit depth must be one of {FACTOR_BIT_DEPTHS}")
    peak = float(np.max(np.abs(u))) if u.size else 0.0
    if not np.isfinite(peak) or peak > 1.0 + eps:
        raise ValueError(f"factor entries must lie in [-1, 1], found magnitude {peak}")
    scale = np.float32(min(peak, 1.0))
    if float(scale) < min(peak, 1.0):
        scale = np.nextafter(scale, np.float32(np.inf))
    scale = float(min(scale, np.float32(1.0)))
    levels = 1 << bit_depth
    if scale == 0.0:
        codes = np.full(u.size, levels // 2, dtype=np.uint64)
    else:
        step = 2.0 * scale / levels
        codes = np.clip(np.floor((np.clip(u, -scale, scale) + scale) / step), 0, levels - 1).astype(np.uint64)
    return FactorBlock(u.shape[0], u.shape[1], bit_depth, scale, _pack_codes(codes, bit_depth))


def decode_factor_matrix(block: Optional[FactorBlock], size: int = 0) -> np.ndarray:
    """Decode a factor block; ``None`` stands for the ``size x size`` identity."""
    if block is None:
        return np.eye(size)
    codes = _unpack_codes(block.data, block.rows * block.cols, block.bit_depth)
    step = 2.0 * block.scale / (1 << block.bit_depth)
    vals = -block.scale + (codes.astype(np.float64) + 0.5) * step
    return vals.reshape(block.rows, block.cols)


def _chunk_index_bits(intervals: int) -> int:
    return (int(intervals) - 1).bit_length()


def _raw_core_bits(chunks: np.ndarray, intervals: int) -> int:
    n = int(chunks.size)
    return n * (_chunk_index_bits(intervals) + 1) + int(np.sum(chunks, dtype=np.int64))


def _pack_raw_core(chunks, signs, codes, intervals) -> bytes:
    k = _chunk_index_bits(intervals)
    parts = []
    if k:
        v = (chunks.astype(np.uint64) - 1)[:, None] >> np.arange(k - 1, -1, -1, dtype=np.uint64)
        parts.append((v & 1).astype(np.uint8).ravel())
    parts.append(signs.astype(np.uint8))
    widths = chunks.astype(np.int64)
    if widths.size:
        max_w = int(widths.max())
        shifts = np.arange(max_w - 1, -1, -1, dtype=np.int64)[None, :] - (max_w - widths)[:, None]
        valid = shifts >= 0
        bits = (codes.astype(np.uint64)[:, None] >> np.where(valid, shifts, 0).astype(np.uint64)) & 1
        parts.append(bits[valid].astype(np.uint8))
    return np.packbits(np.concatenate(parts)).tobytes()


def _unpack_raw_core(data: bytes, count: int, intervals: int):
    k = _chunk_index_bits(intervals)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    pos = 0
    if k:
        v = _unpack_codes(np.packbits(bits[: count * k]).tobytes(), count, k)
        chunks = (v + 1).astype(np.int64)
        pos = count * k
    else:
        chunks = np.ones(count, dtype=np.int64)
    if chunks.size and chunks.max() > intervals:
        raise ValueError("corrupted chunk index in raw core")
    signs = bits[pos: pos + count].astype(np.uint8)
    pos += count
    starts = pos + np.concatenate(([0], np.cumsum(chunks)[:-1])) if count else np.zeros(0, np.int64)
    total = int(np.sum(chunks))
    if bits.size < pos + total or signs.size < count:
        raise ValueError("raw core shorter than its records")
    codes = np.zeros(count, dtype=np.uint64)
    for j in range(int(chunks.max()) if count else 0):
        has = chunks > j
        codes[has] = (codes[has] << np.uint64(1)) | bits[starts[has] + j].astype(np.uint64)
    return chunks.astype(np.uint8), signs, codes.astype(np.uint32)


def encode_core(q: QuantizedCore) -> Tuple[bytes, bool]:
    """Return ``(core_bytes, stored_raw)`` for a quantized core."""
    coded = encode_core_symbols(q.chunks, q.signs, q.codes, q.intervals)
    raw_bytes = (_raw_core_bits(q.chunks, q.intervals) + 7) // 8
    if len(coded) <= raw_bytes:
        return coded, False
    return _pack_raw_core(q.chunks, q.signs, q.codes, q.intervals), True


def decode_core(data: bytes, count: int, intervals: int, raw: bool):
    if raw:
        return _unpack_raw_core(data, count, intervals)
    return decode_core_symbols(data, count, intervals)


@dataclass(frozen=True)
class CompressedPayload:
    descriptor: TensorizationDescriptor
    dims: Tuple[int, int, int]
    ranks: Tuple[int, int, int]
    intervals: int
    factor_bits: int
    config_id: int
    model_fingerprint: int
    #: ``None`` for full-rank modes, whose factor is the identity
    factors: Tuple[Optional[FactorBlock], ...]
    present: np.ndarray
    cmin: np.ndarray
    cmax: np.ndarray
    core_count: int
    core_data: bytes
    raw_core: bool = False
    model: Optional[QuantizerModel] = None
    _encoded: Optional[bytes] = field(default=None, repr=False, compare=False)

    def to_bytes(self) -> bytes:
        if self._encoded is None:
            object.__setattr__(self, "_encoded", serialize(self))
        return self._encoded

    @property
    def total_bits(self) -> int:
        return 8 * len(self.to_bytes())

    def quantized_core(self) -> QuantizedCore:
        chunks, signs, codes = decode_core(self.core_data, self.core_count, self.intervals, self.raw_core)
        return QuantizedCore(self.ranks, signs, chunks, codes, self.cmin, self.cmax, self.present)


def serialize(p: CompressedPayload) -> bytes:
    d = p.descriptor
    flags = (FLAG_EMBEDDED_MODEL if p.model is not None else 0) | (FLAG_RAW_CORE if p.raw_core else 0)
    out = bytearray(
        _HEADER.pack(
            MAGIC, VERSION, flags, STRATEGIES.index(d.strategy), d.channels,
            d.width, d.height, d.patch_size, d.pad_bottom, d.pad_right,
            *p.dims, *p.ranks,
            NO_CONFIG if p.config_id is None else p.config_id,
            p.intervals, p.factor_bits, p.model_fingerprint,
        )
    )
    if p.model is not None:
        out += p.model.boundaries.astype("<f8").tobytes()
        out += p.model.representatives.astype("<f8").tobytes()
    for n, block in enumerate(p.factors):
        if (block is None) != (p.ranks[n] == p.dims[n]):
            raise ValueError(f"mode {n + 1}: factor block must be omitted exactly when R_n = I_n")
        if block is None:
            continue
        if (block.rows, block.cols, block.bit_depth) != (p.dims[n], p.ranks[n], p.factor_bits):
            raise ValueError(f"mode {n + 1}: factor block shape or bit depth disagrees with the header")
        out += _F32.pack(block.scale)
        out += block.data
    present = np.asarray(p.present, dtype=bool)
    out += np.packbits(present, bitorder="little").tobytes()
    for q in np.flatnonzero(present):
        out += _F32.pack(p.cmin[q]) + _F32.pack(p.cmax[q])
    out += _U32.pack(p.core_count) + _U32.pack(len(p.core_data)) + p.core_data
    out += _U32.pack(zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise BitstreamError(
                field, self.pos, f"truncated: need {n} bytes, {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def u32(self, field: str) -> int:
        return _U32.unpack(self.take(4, field))[0]

    def f32(self, field: str) -> float:
        return float(_F32.unpack(self.take(4, field))[0])


def deserialize(data: bytes) -> CompressedPayload:
    data = bytes(data)
    r = _Reader(data)
    if data[:4] != MAGIC:
        raise BitstreamError("magic", 0, f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) > 4 and data[4] != VERSION:
        raise BitstreamError("version", 4, f"unsupported format version {data[4]}")
    (
        _, _, flags, strategy, channels, width, height, patch, pad_b, pad_r,
        i1, i2, i3, r1, r2, r3, config_id, intervals, factor_bits, fingerprint,
    ) = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if flags & ~(FLAG_EMBEDDED_MODEL | FLAG_RAW_CORE):
        raise BitstreamError("flags", 5, f"unknown flag bits 0x{flags:02x}")
    if strategy >= len(STRATEGIES):
        raise BitstreamError("strategy", 6, f"unknown tensorization strategy {strategy}")
    if not 1 <= intervals <= 16:
        raise BitstreamError("intervals", 48, f"invalid number of intervals {intervals}")
    if factor_bits not in FACTOR_BIT_DEPTHS:
        raise BitstreamError("factor_bits", 49, f"invalid factor bit depth {factor_bits}")
    dims, ranks = (i1, i2, i3), (r1, r2, r3)
    if min(dims) < 1 or any(not 1 <= r <= i for r, i in zip(ranks, dims)):
        raise BitstreamError("ranks", 34, f"ranks {ranks} inconsistent with dims {dims}")
    try:
        descriptor = TensorizationDescriptor(STRATEGIES[strategy], patch, height, width, channels, pad_b, pad_r)
    except ValueError as exc:
        raise BitstreamError("descriptor", 6, str(exc)) from None
    if descriptor.strategy != "latent" and descriptor.tensor_dims() != dims:
        raise BitstreamError("dims", 22, f"dims {dims} do not match the tensorization descriptor")

    model = None
    if flags & FLAG_EMBEDDED_MODEL:
        at = r.pos
        b = np.frombuffer(r.take(8 * (intervals + 1), "model.boundaries"), dtype="<f8").astype(np.float64)
        reps = np.frombuffer(r.take(8 * intervals, "model.representatives"), dtype="<f8").astype(np.float64)
        try:
            model = QuantizerModel(b, reps)
        except ValueError as exc:
            raise BitstreamError("model", at, str(exc)) from None
        if model.fingerprint() != fingerprint:
            raise BitstreamError("model", at, "embedded model does not match its fingerprint")

    factors = []
    for n in range(3):
        if ranks[n] == dims[n]:
            factors.append(None)
            continue
        name = f"factor{n + 1}"
        at = r.pos
        scale = r.f32(f"{name}.scale")
        if not 0.0 <= scale <= 1.0:
            raise BitstreamError(f"{name}.scale", at, f"scale {scale} outside [0, 1]")
        size = FactorBlock.byte_length(dims[n], ranks[n], factor_bits)
        factors.append(FactorBlock(dims[n], ranks[n], factor_bits, scale, r.take(size, f"{name}.data")))

    bitmap = np.frombuffer(r.take((intervals + 7) // 8, "chunk_presence"), dtype=np.uint8)
    present = np.unpackbits(bitmap, bitorder="little")[:intervals].astype(bool)
    cmin = np.zeros(intervals)
    cmax = np.zeros(intervals)
    for q in np.flatnonzero(present):
        at = r.pos
        cmin[q] = r.f32(f"chunk{q + 1}.cmin")
        cmax[q] = r.f32(f"chunk{q + 1}.cmax")
        if not (np.isfinite(cmin[q]) and np.isfinite(cmax[q]) and 0 <= cmin[q] <= cmax[q]):
            raise BitstreamError(f"chunk{q + 1}", at, "invalid chunk range")

    at = r.pos
    count = r.u32("core.count")
    if count != r1 * r2 * r3:
        raise BitstreamError("core.count", at, f"element count {count} != R1*R2*R3 = {r1 * r2 * r3}")
    length = r.u32("core.length")
    core = r.take(length, "core.data")
    crc_at = r.pos
    (crc,) = _U32.unpack(r.take(4, "crc"))
    if r.pos != len(data):
        raise BitstreamError("crc", r.pos, f"{len(data) - r.pos} trailing bytes after the stream")
    if zlib.crc32(data[:crc_at]) & 0xFFFFFFFF != crc:
        raise BitstreamError("crc", crc_at, "checksum mismatch: stream is corrupted")

    return CompressedPayload(
        descriptor, dims, ranks, intervals, factor_bits,
        None if config_id == NO_CONFIG else config_id, fingerprint,
        tuple(factors), present, cmin, cmax, count, core,
        bool(flags & FLAG_RAW_CORE), model, data,
    )


def compute_bpp(payload: CompressedPayload, pixel_count: int) -> float:
    """Bits per pixel of the serialized stream, headers and side info included."""
    if pixel_count <= 0:
        raise ValueError("pixel count must be positive")
    return payload.total_bits / pixel_count


def compression_ratio(payload: CompressedPayload, pixel_count: int, source_bits_per_pixel: int = 24) -> float:
    """``source bits / payload bits``; 24 bits per pixel for 8-bit RGB."""
    if pixel_count <= 0:
        raise ValueError("pixel count must be positive")
    return source_bits_per_pixel * pixel_count / payload.total_bits


class BitBudget(NamedTuple):
    """Pre-entropy bit count of a stream, split by component."""

    core_bits: int
    chunk_index_bits: int
    factor_bits: int
    overhead_bits: int

    @property
    def total(self) -> int:
        return self.core_bits + self.chunk_index_bits + self.factor_bits + self.overhead_bits


def _fixed_overhead_bytes(intervals: int, present_chunks: int, embedded: bool, blocks: int = 3) -> int:
    size = _HEADER.size + 4 * blocks + (intervals + 7) // 8 + 8 * present_chunks + 4 + 4 + 4
    if embedded:
        size += 8 * (2 * intervals + 1)
    return size


def bit_budget(payload: CompressedPayload) -> BitBudget:
    """Account a real stream against the element-wise counting formula.

    ``core_bits`` is ``sum(m_i + 1)`` over core elements and ``factor_bits``
    is ``b_u * sum(I_n R_n)`` over the stored (non-identity) factors. Chunk
    indices ride on top at ``ceil(log2 M)`` bits per element. Headers, side
    info, byte padding and the checksum make up ``overhead_bits``.
    """
    q = payload.quantized_core()
    n = payload.core_count
    core_bits = q.payload_bits()
    index_bits = n * _chunk_index_bits(payload.intervals)
    stored = [b for b in payload.factors if b is not None]
    factor_bits = payload.factor_bits * sum(b.rows * b.cols for b in stored)
    fixed = 8 * _fixed_overhead_bytes(payload.intervals, int(np.sum(payload.present)),
                                      payload.model is not None, len(stored))
    factor_pad = 8 * sum(len(b.data) for b in stored) - factor_bits
    raw = core_bits + index_bits
    core_pad = 8 * ((raw + 7) // 8) - raw
    return BitBudget(core_bits, index_bits, factor_bits, fixed + factor_pad + core_pad)


def max_payload_bits(dims: Sequence[int], ranks: Sequence[int], intervals: int,
                     factor_bits: int, embedded: bool = False) -> int:
    """Largest possible stream size, in bits, for the given shape and config."""
    n = int(np.prod(ranks))
    coded = [(d, r) for d, r in zip(dims, ranks) if r < d]
    factor_bytes = sum(FactorBlock.byte_length(d, r, factor_bits) for d, r in coded)
    core_bytes = (n * (_chunk_index_bits(intervals) + 1 + intervals) + 7) // 8
    return 8 * (_fixed_overhead_bytes(intervals, intervals, embedded, len(coded)) + factor_bytes + core_bytes)
