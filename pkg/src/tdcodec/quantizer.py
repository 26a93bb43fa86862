"""Lloyd quantizer design and variable-bits chunk quantization of core tensors.

Core magnitudes are split into ``M`` chunks by the decision boundaries of a
corpus-fitted Lloyd quantizer. Chunk ``m`` (1-based) codes each member with
``m`` magnitude bits relative to the chunk's own ``[Cmin, Cmax]`` range plus
one sign bit.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "QuantizerModel",
    "ChunkAssignment",
    "QuantizedCore",
    "fit_lloyd",
    "dyadic_model",
    "assign_chunks",
    "quantize_core",
    "dequantize_core",
    "MAX_INTERVALS",
]

MAX_INTERVALS = 16


@dataclass(frozen=True)
class QuantizerModel:
    """Decision boundaries ``b_0 .. b_M`` and representatives ``r_1 .. r_M``.

    ``b_0 = 0`` and ``b_M`` is the largest training magnitude; magnitudes
    above ``b_M`` still fall in the last chunk.
    """

    boundaries: np.ndarray
    representatives: np.ndarray
    mse: float = float("nan")
    iterations: int = 0
    converged: bool = True
    #: empirical MSE at initialisation and after every iteration
    history: tuple = ()

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        r = np.asarray(self.representatives, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "representatives", r)
        if r.ndim != 1 or not 1 <= r.size <= MAX_INTERVALS:
            raise ValueError(f"intervals must be in [1, {MAX_INTERVALS}], got {r.size}")
        if b.shape != (r.size + 1,):
            raise ValueError("need exactly M + 1 boundaries")
        if b[0] != 0.0 or np.any(np.diff(b) < 0):
            raise ValueError("boundaries must start at 0 and be non-decreasing")

    @property
    def intervals(self) -> int:
        return int(self.representatives.size)

    def fingerprint(self) -> int:
        """CRC32 of the boundary and representative values."""
        blob = self.boundaries.astype("<f8").tobytes() + self.representatives.astype("<f8").tobytes()
        return zlib.crc32(blob) & 0xFFFFFFFF

    def quantize_values(self, magnitudes: np.ndarray) -> np.ndarray:
        """Map magnitudes to their Lloyd representatives."""
        return self.representatives[self.cell_index(magnitudes)]

    def cell_index(self, magnitudes: np.ndarray) -> np.ndarray:
        """0-based cell of each magnitude; the last cell is closed above."""
        return np.searchsorted(self.boundaries[1:-1], magnitudes, side="right")


def _cell_stats(cum1, cum2, edges):
    n = np.diff(edges).astype(np.float64)
    s1 = np.diff(cum1[edges])
    s2 = np.diff(cum2[edges])
    return n, s1, s2


def fit_lloyd(
    samples,
    m_intervals: int,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> QuantizerModel:
    """Fit an ``M``-level scalar quantizer to non-negative samples by Lloyd iteration.

    Representatives start at the empirical ``(q - 0.5) / M`` quantiles. Each
    iteration places boundaries at representative midpoints and moves every
    representative to the mean of its cell. Iteration stops when the cell
    assignment no longer changes, the relative MSE change is at most ``tol``,
    or after ``max_iter`` iterations. The per-iteration MSE is non-increasing.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("cannot fit a quantizer to an empty sample")
    m = int(m_intervals)
    if not 1 <= m <= MAX_INTERVALS:
        raise ValueError(f"intervals must be in [1, {MAX_INTERVALS}], got {m}")
    if not np.all(np.isfinite(x)) or x[0] < 0:
        raise ValueError("samples must be finite and non-negative")
    distinct = np.unique(x)
    if distinct.size < m:
        raise ValueError(f"need at least {m} distinct samples, got {distinct.size}")

    cum1 = np.concatenate(([0.0], np.cumsum(x)))
    cum2 = np.concatenate(([0.0], np.cumsum(x * x)))
    probs = (np.arange(1, m + 1) - 0.5) / m
    reps = np.quantile(x, probs)
    if np.any(np.diff(reps) <= 0):
        reps = np.quantile(distinct, probs)

    def edges_for(reps):
        mids = 0.5 * (reps[:-1] + reps[1:])
        inner = np.searchsorted(x, mids, side="left")
        return np.concatenate(([0], inner, [x.size]))

    def mse_for(edges, reps):
        n, s1, s2 = _cell_stats(cum1, cum2, edges)
        sse = s2 - 2.0 * reps * s1 + n * reps * reps
        return max(float(np.sum(sse)) / x.size, 0.0)

    edges = edges_for(reps)
    mse = mse_for(edges, reps)
    history = [mse]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        n, s1, _ = _cell_stats(cum1, cum2, edges)
        filled = n > 0
        new_reps = reps.copy()
        new_reps[filled] = s1[filled] / n[filled]
        if not filled.all():
            new_reps = np.sort(new_reps)
        new_edges = edges_for(new_reps)
        new_mse = mse_for(new_edges, new_reps)
        stable = np.array_equal(new_edges, edges)
        change = abs(mse - new_mse)
        reps, edges, mse = new_reps, new_edges, new_mse
        history.append(mse)
        # unchanged cells: reps are exactly the means of the current cells
        if stable or mse == 0.0 or change <= tol * mse:
            converged = True
            break

    boundaries = np.concatenate(([0.0], 0.5 * (reps[:-1] + reps[1:]), [x[-1]]))
    boundaries[-1] = max(boundaries[-1], boundaries[-2])
    return QuantizerModel(boundaries, reps, mse, it, converged, tuple(history))


def dyadic_model(samples, m_intervals: int) -> QuantizerModel:
    """Boundaries ``b_q = max * 2 ** (q - M)``, representatives at cell midpoints.

    Chunk ``m`` then spans at most ``max * 2 ** (m - M - 1)`` and codes it
    with ``m`` bits, so every chunk has the same step ``max / 2 ** (M + 1)``
    up to its per-image range. This is the dense-boundary model used for
    near-lossless operation; it is not a Lloyd fixed point.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    m = int(m_intervals)
    if x.size == 0:
        raise ValueError("cannot fit a quantizer to an empty sample")
    if not 1 <= m <= MAX_INTERVALS:
        raise ValueError(f"intervals must be in [1, {MAX_INTERVALS}], got {m}")
    if not np.all(np.isfinite(x)) or x.min() < 0:
        raise ValueError("samples must be finite and non-negative")
    peak = float(x.max())
    if peak == 0.0:
        raise ValueError("dyadic boundaries need a positive maximum magnitude")
    boundaries = np.concatenate(([0.0], peak * np.exp2(np.arange(1, m + 1) - m)))
    reps = 0.5 * (boundaries[:-1] + boundaries[1:])
    return QuantizerModel(boundaries, reps, float("nan"), 0, True, ())


@dataclass(frozen=True)
class ChunkAssignment:
    """Chunk index per element (1-based, raster order) and per-chunk ranges."""

    chunks: np.ndarray
    cmin: np.ndarray
    cmax: np.ndarray
    present: np.ndarray

    @property
    def intervals(self) -> int:
        return int(self.present.size)

    def counts(self) -> np.ndarray:
        return np.bincount(self.chunks, minlength=self.intervals + 1)[1:]

    def to_float32(self) -> "ChunkAssignment":
        """Round chunk ranges outward to float32 so every member stays inside."""
        lo = self.cmin.astype(np.float32)
        hi = self.cmax.astype(np.float32)
        lo = np.where(lo.astype(np.float64) > self.cmin, np.nextafter(lo, np.float32(-np.inf)), lo)
        hi = np.where(hi.astype(np.float64) < self.cmax, np.nextafter(hi, np.float32(np.inf)), hi)
        lo = np.where(self.present, np.maximum(lo, 0), 0).astype(np.float64)
        hi = np.where(self.present, hi, 0).astype(np.float64)
        return ChunkAssignment(self.chunks, lo, hi, self.present)


def assign_chunks(core: np.ndarray, model: QuantizerModel) -> ChunkAssignment:
    mags = np.abs(np.asarray(core, dtype=np.float64)).ravel()
    m = model.intervals
    chunks = (model.cell_index(mags) + 1).astype(np.uint8)
    cmin = np.zeros(m)
    cmax = np.zeros(m)
    present = np.zeros(m, dtype=bool)
    if mags.size:
        idx = chunks.astype(np.intp) - 1
        counts = np.bincount(idx, minlength=m)
        present = counts > 0
        lo = np.full(m, np.inf)
        hi = np.full(m, -np.inf)
        np.minimum.at(lo, idx, mags)
        np.maximum.at(hi, idx, mags)
        cmin = np.where(present, lo, 0.0)
        cmax = np.where(present, hi, 0.0)
    return ChunkAssignment(chunks, cmin, cmax, present)


@dataclass(frozen=True)
class QuantizedCore:
    dims: tuple
    signs: np.ndarray
    chunks: np.ndarray
    codes: np.ndarray
    cmin: np.ndarray
    cmax: np.ndarray
    present: np.ndarray

    @property
    def intervals(self) -> int:
        return int(self.present.size)

    @property
    def side(self) -> ChunkAssignment:
        return ChunkAssignment(self.chunks, self.cmin, self.cmax, self.present)

    def payload_bits(self) -> int:
        """Sign plus magnitude bits: ``sum(m_i + 1)``."""
        return int(np.sum(self.chunks, dtype=np.int64) + self.chunks.size)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize_core(
    core: np.ndarray,
    model: QuantizerModel,
    assignment: Optional[ChunkAssignment] = None,
) -> QuantizedCore:
    """Variable-bits quantization of a core tensor.

    ``code = round(2^m / (Cmax - Cmin) * (|y| - Cmin))`` clamped to
    ``[0, 2^m - 1]``; zero-range chunks code everything as 0. Passing an
    ``assignment`` reuses given chunk indices and ranges instead of deriving
    them from ``core``.
    """
    core = np.asarray(core, dtype=np.float64)
    if assignment is None:
        assignment = assign_chunks(core, model)
    if assignment.intervals != model.intervals:
        raise ValueError("assignment and model disagree on the number of intervals")
    flat = core.ravel()
    mags = np.abs(flat)
    chunks = assignment.chunks
    idx = chunks.astype(np.intp) - 1
    lo = assignment.cmin[idx]
    width = (assignment.cmax - assignment.cmin)[idx]
    levels = np.ldexp(1.0, chunks.astype(np.int32))
    with np.errstate(divide="ignore", invalid="ignore"):
        # dividing first keeps the ratio in [0, 1] even for subnormal widths
        scaled = np.where(width > 0, (mags - lo) / width * levels, 0.0)
    codes = np.clip(_round_half_away(scaled), 0, levels - 1).astype(np.uint32)
    signs = (flat < 0).astype(np.uint8)
    return QuantizedCore(
        tuple(core.shape), signs, chunks, codes,
        assignment.cmin, assignment.cmax, assignment.present,
    )


def dequantize_core(q: QuantizedCore) -> np.ndarray:
    """``|y| = code * (Cmax - Cmin) / 2^m + Cmin`` with the sign reapplied."""
    m = q.intervals
    chunks = np.asarray(q.chunks)
    if chunks.size and (chunks.min() < 1 or chunks.max() > m):
        raise ValueError(f"corrupted chunk index outside [1, {m}]")
    idx = chunks.astype(np.intp) - 1
    if chunks.size and not np.all(q.present[idx]):
        raise ValueError("element refers to a chunk marked empty")
    width = (q.cmax - q.cmin)[idx]
    step = np.ldexp(width, -chunks.astype(np.int32))
    mags = q.codes.astype(np.float64) * step + q.cmin[idx]
    vals = np.where(q.signs.astype(bool), -mags, mags)
    return vals.reshape(q.dims)
