# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled adaptive binary range coder; mirrors ``_rangecoder_py`` exactly."""
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t
from libc.stdlib cimport malloc, realloc, free, calloc

import numpy as np

from tdcodec._rangecoder_py import TruncatedStreamError

DEF PROB_BITS = 15
DEF PROB_ONE = 32768
DEF TOP = 16777216
DEF COUNT_LIMIT = 4096


cdef struct Encoder:
    uint64_t low
    uint32_t rng
    uint8_t cache
    uint64_t cache_size
    uint8_t *out
    size_t size
    size_t cap
    uint32_t *counts
    int failed


cdef struct Decoder:
    const uint8_t *data
    size_t n
    size_t pos
    uint32_t code
    uint32_t rng
    uint32_t *counts


cdef int enc_init(Encoder *e, Py_ssize_t n_ctx) except -1:
    cdef Py_ssize_t i
    e.low = 0
    e.rng = 0xFFFFFFFF
    e.cache = 0
    e.cache_size = 1
    e.size = 0
    e.cap = 1024
    e.failed = 0
    e.out = <uint8_t *> malloc(e.cap)
    e.counts = <uint32_t *> malloc(2 * n_ctx * sizeof(uint32_t) + 8)
    if e.out == NULL or e.counts == NULL:
        free(e.out)
        free(e.counts)
        raise MemoryError()
    for i in range(2 * n_ctx):
        e.counts[i] = 1
    return 0


cdef inline void enc_put(Encoder *e, uint8_t b) noexcept nogil:
    cdef uint8_t *tmp
    if e.size == e.cap:
        tmp = <uint8_t *> realloc(e.out, e.cap * 2)
        if tmp == NULL:
            e.failed = 1
            return
        e.out = tmp
        e.cap *= 2
    e.out[e.size] = b
    e.size += 1


cdef inline void enc_shift_low(Encoder *e) noexcept nogil:
    cdef uint8_t temp
    cdef uint8_t carry
    if e.low < 0xFF000000ULL or e.low > 0xFFFFFFFFULL:
        carry = <uint8_t> (e.low >> 32)
        temp = e.cache
        while True:
            enc_put(e, <uint8_t> (temp + carry))
            temp = 0xFF
            e.cache_size -= 1
            if e.cache_size == 0:
                break
        e.cache = <uint8_t> ((e.low >> 24) & 0xFF)
    e.cache_size += 1
    e.low = (e.low & 0x00FFFFFFULL) << 8


cdef inline uint32_t prob0(uint32_t *c, Py_ssize_t ctx) noexcept nogil:
    cdef uint32_t c0 = c[2 * ctx]
    cdef uint32_t c1 = c[2 * ctx + 1]
    cdef uint32_t p0 = (c0 << PROB_BITS) // (c0 + c1)
    if p0 < 1:
        p0 = 1
    elif p0 > PROB_ONE - 1:
        p0 = PROB_ONE - 1
    return p0


cdef inline void update(uint32_t *c, Py_ssize_t ctx, int bit) noexcept nogil:
    cdef uint32_t c0 = c[2 * ctx]
    cdef uint32_t c1 = c[2 * ctx + 1]
    if bit:
        c1 += 2
    else:
        c0 += 2
    if c0 + c1 > COUNT_LIMIT:
        c0 = (c0 + 1) >> 1
        c1 = (c1 + 1) >> 1
    c[2 * ctx] = c0
    c[2 * ctx + 1] = c1


cdef inline void enc_bit(Encoder *e, int bit, Py_ssize_t ctx) noexcept nogil:
    cdef uint32_t bound = (e.rng >> PROB_BITS) * prob0(e.counts, ctx)
    if bit:
        e.low += bound
        e.rng -= bound
    else:
        e.rng = bound
    update(e.counts, ctx, bit)
    while e.rng < TOP:
        e.rng <<= 8
        enc_shift_low(e)


cdef bytes enc_finish(Encoder *e):
    cdef int i
    for i in range(5):
        enc_shift_low(e)
    try:
        if e.failed:
            raise MemoryError()
        return e.out[:e.size]
    finally:
        free(e.out)
        free(e.counts)


cdef inline uint8_t dec_next(Decoder *d) noexcept nogil:
    cdef size_t pos = d.pos
    d.pos += 1
    if pos < d.n:
        return d.data[pos]
    return 0


cdef int dec_init(Decoder *d, const uint8_t[::1] data, Py_ssize_t n_ctx) except -1:
    cdef Py_ssize_t i
    d.n = data.shape[0]
    d.data = &data[0] if d.n > 0 else NULL
    d.pos = 0
    d.code = 0
    d.rng = 0xFFFFFFFF
    d.counts = <uint32_t *> malloc(2 * n_ctx * sizeof(uint32_t) + 8)
    if d.counts == NULL:
        raise MemoryError()
    for i in range(2 * n_ctx):
        d.counts[i] = 1
    for i in range(5):
        d.code = (d.code << 8) | dec_next(d)
    return 0


cdef inline int dec_bit(Decoder *d, Py_ssize_t ctx) noexcept nogil:
    cdef uint32_t bound = (d.rng >> PROB_BITS) * prob0(d.counts, ctx)
    cdef int bit
    if d.code < bound:
        d.rng = bound
        bit = 0
    else:
        d.code -= bound
        d.rng -= bound
        bit = 1
    update(d.counts, ctx, bit)
    while d.rng < TOP:
        d.rng <<= 8
        d.code = (d.code << 8) | dec_next(d)
    return bit


cdef dec_check(Decoder *d):
    if d.pos > d.n:
        raise TruncatedStreamError(
            f"range decoder read {d.pos - d.n} byte(s) past the end of a {d.n}-byte stream"
        )


def core_context_layout(int intervals):
    cdef int chunk_bits = (intervals - 1).bit_length()
    cdef int offset = 1 + (1 << chunk_bits)
    mag_base = [0] * (intervals + 1)
    for m in range(1, intervals + 1):
        mag_base[m] = offset
        offset += m
    return offset, chunk_bits, 1, mag_base


def encode_bits(bits, contexts, Py_ssize_t n_contexts):
    cdef const uint8_t[::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef const int32_t[::1] c = np.ascontiguousarray(contexts, dtype=np.int32)
    cdef Encoder e
    cdef Py_ssize_t i, n = b.shape[0]
    if c.shape[0] != n:
        raise ValueError("bits and contexts differ in length")
    for i in range(n):
        if c[i] < 0 or c[i] >= n_contexts:
            raise ValueError(f"context {c[i]} out of range")
    enc_init(&e, n_contexts)
    with nogil:
        for i in range(n):
            enc_bit(&e, b[i] != 0, c[i])
    return enc_finish(&e)


def decode_bits(data, contexts, Py_ssize_t n_contexts):
    cdef const uint8_t[::1] buf = np.frombuffer(bytes(data) + b"\0", dtype=np.uint8)[:len(data)]
    cdef const int32_t[::1] c = np.ascontiguousarray(contexts, dtype=np.int32)
    cdef Py_ssize_t i, n = c.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    cdef Decoder d
    for i in range(n):
        if c[i] < 0 or c[i] >= n_contexts:
            raise ValueError(f"context {c[i]} out of range")
    dec_init(&d, buf, n_contexts)
    try:
        with nogil:
            for i in range(n):
                o[i] = dec_bit(&d, c[i])
        dec_check(&d)
    finally:
        free(d.counts)
    return out


def encode_core(chunks, signs, codes, int intervals):
    cdef const uint8_t[::1] ch = np.ascontiguousarray(chunks, dtype=np.uint8)
    cdef const uint8_t[::1] sg = np.ascontiguousarray(signs, dtype=np.uint8)
    cdef const uint32_t[::1] cd = np.ascontiguousarray(codes, dtype=np.uint32)
    cdef Py_ssize_t i, n = ch.shape[0]
    cdef int j, m, v, node, bt
    cdef uint32_t code
    cdef Encoder e
    n_ctx, chunk_bits_o, _, mag_base_l = core_context_layout(intervals)
    cdef int chunk_bits = chunk_bits_o
    cdef int mag_base[33]
    for m in range(1, intervals + 1):
        mag_base[m] = mag_base_l[m]
    if sg.shape[0] != n or cd.shape[0] != n:
        raise ValueError("chunks, signs and codes differ in length")
    for i in range(n):
        if ch[i] < 1 or ch[i] > intervals:
            raise ValueError(f"chunk index {ch[i]} out of range at element {i}")
    enc_init(&e, n_ctx)
    with nogil:
        for i in range(n):
            m = ch[i]
            v = m - 1
            node = 1
            for j in range(chunk_bits - 1, -1, -1):
                bt = (v >> j) & 1
                enc_bit(&e, bt, 1 + node)
                node = (node << 1) | bt
            enc_bit(&e, sg[i] != 0, 0)
            code = cd[i]
            for j in range(m - 1, -1, -1):
                enc_bit(&e, (code >> j) & 1, mag_base[m] + (m - 1 - j))
    return enc_finish(&e)


def decode_core(data, Py_ssize_t count, int intervals):
    cdef const uint8_t[::1] buf = np.frombuffer(bytes(data) + b"\0", dtype=np.uint8)[:len(data)]
    n_ctx, chunk_bits_o, _, mag_base_l = core_context_layout(intervals)
    cdef int chunk_bits = chunk_bits_o
    cdef int mag_base[33]
    cdef int m, j, node, bad = 0
    cdef Py_ssize_t i, bad_at = -1
    cdef uint32_t code
    for m in range(1, intervals + 1):
        mag_base[m] = mag_base_l[m]
    chunks = np.empty(count, dtype=np.uint8)
    signs = np.empty(count, dtype=np.uint8)
    codes = np.empty(count, dtype=np.uint32)
    cdef uint8_t[::1] ch = chunks
    cdef uint8_t[::1] sg = signs
    cdef uint32_t[::1] cd = codes
    cdef Decoder d
    dec_init(&d, buf, n_ctx)
    try:
        with nogil:
            for i in range(count):
                node = 1
                for j in range(chunk_bits):
                    node = (node << 1) | dec_bit(&d, 1 + node)
                m = node - (1 << chunk_bits) + 1
                if m > intervals:
                    bad = m
                    bad_at = i
                    break
                sg[i] = dec_bit(&d, 0)
                code = 0
                for j in range(m):
                    code = (code << 1) | dec_bit(&d, mag_base[m] + j)
                ch[i] = m
                cd[i] = code
        if bad:
            raise ValueError(f"corrupted chunk index {bad} at element {bad_at}")
        dec_check(&d)
    finally:
        free(d.counts)
    return chunks, signs, codes
