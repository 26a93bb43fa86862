"""Pure-Python adaptive binary range coder (fallback kernel).

Byte-for-byte identical to the compiled ``_rangecoder_ext`` module. The coder
is a carry-propagating 32-bit range coder with 15-bit probabilities; each
context keeps a pair of symbol counts that are halved once their sum
exceeds ``COUNT_LIMIT``.
"""
import numpy as np

PROB_BITS = 15
PROB_ONE = 1 << PROB_BITS
TOP = 1 << 24
COUNT_LIMIT = 1 << 12
MASK32 = 0xFFFFFFFF


class TruncatedStreamError(ValueError):
    """Coded stream ended before all declared symbols were decoded."""


class _Encoder:
    __slots__ = ("low", "rng", "cache", "cache_size", "out", "c0", "c1")

    def __init__(self, n_contexts):
        self.low = 0
        self.rng = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self.c0 = [1] * n_contexts
        self.c1 = [1] * n_contexts

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            out = self.out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, bit, ctx):
        c0 = self.c0[ctx]
        c1 = self.c1[ctx]
        p0 = (c0 << PROB_BITS) // (c0 + c1)
        if p0 < 1:
            p0 = 1
        elif p0 > PROB_ONE - 1:
            p0 = PROB_ONE - 1
        bound = (self.rng >> PROB_BITS) * p0
        if bit:
            self.low += bound
            self.rng -= bound
            c1 += 2
        else:
            self.rng = bound
            c0 += 2
        if c0 + c1 > COUNT_LIMIT:
            c0 = (c0 + 1) >> 1
            c1 = (c1 + 1) >> 1
        self.c0[ctx] = c0
        self.c1[ctx] = c1
        while self.rng < TOP:
            self.rng = (self.rng << 8) & MASK32
            self._shift_low()

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class _Decoder:
    __slots__ = ("data", "pos", "code", "rng", "c0", "c1")

    def __init__(self, data, n_contexts):
        self.data = data
        self.pos = 0
        self.code = 0
        self.rng = MASK32
        self.c0 = [1] * n_contexts
        self.c1 = [1] * n_contexts
        for _ in range(5):
            self.code = ((self.code << 8) | self._next()) & MASK32

    def _next(self):
        pos = self.pos
        self.pos = pos + 1
        if pos < len(self.data):
            return self.data[pos]
        return 0

    def decode(self, ctx):
        c0 = self.c0[ctx]
        c1 = self.c1[ctx]
        p0 = (c0 << PROB_BITS) // (c0 + c1)
        if p0 < 1:
            p0 = 1
        elif p0 > PROB_ONE - 1:
            p0 = PROB_ONE - 1
        bound = (self.rng >> PROB_BITS) * p0
        if self.code < bound:
            self.rng = bound
            bit = 0
            c0 += 2
        else:
            self.code -= bound
            self.rng -= bound
            bit = 1
            c1 += 2
        if c0 + c1 > COUNT_LIMIT:
            c0 = (c0 + 1) >> 1
            c1 = (c1 + 1) >> 1
        self.c0[ctx] = c0
        self.c1[ctx] = c1
        while self.rng < TOP:
            self.rng = (self.rng << 8) & MASK32
            self.code = ((self.code << 8) | self._next()) & MASK32
        return bit

    def check(self):
        if self.pos > len(self.data):
            raise TruncatedStreamError(
                f"range decoder read {self.pos - len(self.data)} byte(s) past the end of a "
                f"{len(self.data)}-byte stream"
            )


def core_context_layout(intervals):
    """Context offsets: (n_contexts, chunk_bits, chunk_base, magnitude_base list)."""
    chunk_bits = (intervals - 1).bit_length()
    chunk_base = 1
    mag_base = [0] * (intervals + 1)
    offset = chunk_base + (1 << chunk_bits)
    for m in range(1, intervals + 1):
        mag_base[m] = offset
        offset += m
    return offset, chunk_bits, chunk_base, mag_base


def encode_bits(bits, contexts, n_contexts):
    enc = _Encoder(int(n_contexts))
    for bit, ctx in zip(np.asarray(bits).tolist(), np.asarray(contexts).tolist()):
        enc.encode(bit, ctx)
    return enc.finish()


def decode_bits(data, contexts, n_contexts):
    dec = _Decoder(bytes(data), int(n_contexts))
    ctxs = np.asarray(contexts).tolist()
    out = np.empty(len(ctxs), dtype=np.uint8)
    for i, ctx in enumerate(ctxs):
        out[i] = dec.decode(ctx)
    dec.check()
    return out


def encode_core(chunks, signs, codes, intervals):
    """Entropy-code core element records in raster order.

    Per element: the chunk index ``m - 1`` as a bit tree (MSB first, one
    context per tree node), the sign bit, then ``m`` magnitude bits MSB first
    with one context per (chunk, bit position).
    """
    n_ctx, chunk_bits, chunk_base, mag_base = core_context_layout(int(intervals))
    enc = _Encoder(n_ctx)
    for m, s, code in zip(
        np.asarray(chunks).tolist(), np.asarray(signs).tolist(), np.asarray(codes).tolist()
    ):
        node = 1
        v = m - 1
        for j in range(chunk_bits - 1, -1, -1):
            b = (v >> j) & 1
            enc.encode(b, chunk_base + node)
            node = (node << 1) | b
        enc.encode(s, 0)
        base = mag_base[m]
        for j in range(m - 1, -1, -1):
            enc.encode((code >> j) & 1, base + (m - 1 - j))
    return enc.finish()


def decode_core(data, count, intervals):
    intervals = int(intervals)
    n_ctx, chunk_bits, chunk_base, mag_base = core_context_layout(intervals)
    dec = _Decoder(bytes(data), n_ctx)
    count = int(count)
    chunks = np.empty(count, dtype=np.uint8)
    signs = np.empty(count, dtype=np.uint8)
    codes = np.empty(count, dtype=np.uint32)
    for i in range(count):
        node = 1
        for _ in range(chunk_bits):
            node = (node << 1) | dec.decode(chunk_base + node)
        m = node - (1 << chunk_bits) + 1
        if m > intervals:
            raise ValueError(f"corrupted chunk index {m} at element {i}")
        s = dec.decode(0)
        base = mag_base[m]
        code = 0
        for j in range(m):
            code = (code << 1) | dec.decode(base + j)
        chunks[i] = m
        signs[i] = s
        codes[i] = code
    dec.check()
    return chunks, signs, codes
