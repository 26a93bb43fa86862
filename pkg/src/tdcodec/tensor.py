"""Dense 3-order tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of shape ``(I1, I2, I3)`` and
dtype float64, matrices are 2-D float64 arrays. Modes are numbered 1, 2, 3.

Unfolding convention
--------------------
``unfold(x, n)`` has ``I_n`` rows. Its columns enumerate the remaining two
modes with the lower-numbered remaining mode varying fastest. For mode 1 the
column of element ``(i1, i2, i3)`` is ``i2 + I2 * i3`` (0-based), for mode 2
it is ``i1 + I1 * i3`` and for mode 3 ``i1 + I1 * i2``. Under this
convention::

    unfold(x x_1 B1 x_2 B2 x_3 B3, n) = Bn @ unfold(x, n) @ kron(Bk, Bj).T

where ``j < k`` are the two modes other than ``n``.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "as_tensor3",
    "unfold",
    "fold",
    "mode_n_product",
    "multi_mode_product_except",
    "leading_left_singular_vectors",
    "frobenius_norm",
    "read_tdt3",
    "write_tdt3",
    "TDT3_MAGIC",
]

TDT3_MAGIC = b"TDT3"
TDT3_VERSION = 1
_TDT3_HEADER = struct.Struct("<4sB3I")


def _check_mode(n: int) -> int:
    if n not in (1, 2, 3):
        raise ValueError(f"mode index must be 1, 2 or 3, got {n!r}")
    return n - 1


def as_tensor3(x) -> np.ndarray:
    """Validate ``x`` as a finite 3-order tensor and return it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-order tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite entries")
    return arr


def unfold(x: np.ndarray, n: int) -> np.ndarray:
    """Mode-n matricization of a 3-order tensor."""
    axis = _check_mode(n)
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected a 3-order tensor, got shape {x.shape}")
    return np.reshape(np.moveaxis(x, axis, 0), (x.shape[axis], -1), order="F")


def fold(m: np.ndarray, n: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    axis = _check_mode(n)
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have three entries, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != axis]
    if m.shape != (dims[axis], rest[0] * rest[1]):
        raise ValueError(
            f"matrix shape {m.shape} inconsistent with dims {dims} for mode {n}"
        )
    t = np.reshape(m, (dims[axis], rest[0], rest[1]), order="F")
    return np.ascontiguousarray(np.moveaxis(t, 0, axis))


def mode_n_product(x: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Tensor-times-matrix along mode ``n``: ``unfold(result, n) = b @ unfold(x, n)``."""
    axis = _check_mode(n)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != x.shape[axis]:
        raise ValueError(
            f"matrix of shape {b.shape} cannot multiply mode {n} of size {x.shape[axis]}"
        )
    dims = list(x.shape)
    dims[axis] = b.shape[0]
    return fold(b @ unfold(x, n), n, dims)


def multi_mode_product_except(
    x: np.ndarray,
    factors: Sequence[Optional[np.ndarray]],
    skip: Optional[int] = None,
    transpose: bool = False,
) -> np.ndarray:
    """Apply a mode product on every mode except ``skip``, in ascending order.

    ``factors[k]`` is the matrix for mode ``k + 1``; ``None`` entries are
    treated as identity. With ``transpose`` each factor is applied as its
    transpose, which is how Tucker projections ``x x_n U_n^T`` are formed.
    The Kronecker matrix is never built.
    """
    if len(factors) != 3:
        raise ValueError(f"expected three factors, got {len(factors)}")
    if skip is not None:
        _check_mode(skip)
    out = x
    for n in (1, 2, 3):
        if n == skip or factors[n - 1] is None:
            continue
        b = np.asarray(factors[n - 1])
        out = mode_n_product(out, b.T if transpose else b, n)
    return out


def _fix_signs(u: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def leading_left_singular_vectors(m: np.ndarray, r: int) -> np.ndarray:
    """Leading ``r`` left singular vectors of ``m`` as orthonormal columns.

    Short-and-wide matrices go through the eigendecomposition of the Gram
    matrix ``m @ m.T``; tall ones use an SVD. Columns are ordered by
    non-increasing singular value and each is flipped so its largest-magnitude
    entry is positive. ``r`` may exceed ``cols`` (up to ``rows``); the extra
    columns then complete an orthonormal basis with zero singular values.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    rows, cols = m.shape
    if not 1 <= r <= rows:
        raise ValueError(f"rank {r} out of range [1, {rows}]")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    if cols >= rows:
        gram = m @ m.T
        vals, vecs = np.linalg.eigh(gram)
        # stable descending sort keeps tied vectors in LAPACK's order
        u = vecs[:, np.argsort(-vals, kind="stable")[:r]]
    else:
        u = np.linalg.svd(m, full_matrices=r > cols)[0][:, :r]
    return np.ascontiguousarray(_fix_signs(u))


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(x, dtype=np.float64))))


def write_tdt3(path, x: np.ndarray) -> None:
    """Write a tensor in the raw TDT3 format (float32 payload, C order)."""
    x = as_tensor3(x)
    header = _TDT3_HEADER.pack(TDT3_MAGIC, TDT3_VERSION, *x.shape)
    body = np.ascontiguousarray(x, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_tdt3(path) -> np.ndarray:
    data = Path(path).read_bytes()
    return decode_tdt3(data)


def decode_tdt3(data: bytes) -> np.ndarray:
    if len(data) < _TDT3_HEADER.size:
        raise ValueError("TDT3 stream shorter than its header")
    magic, version, i1, i2, i3 = _TDT3_HEADER.unpack_from(data, 0)
    if magic != TDT3_MAGIC:
        raise ValueError(f"bad TDT3 magic {magic!r}")
    if version != TDT3_VERSION:
        raise ValueError(f"unsupported TDT3 version {version}")
    count = i1 * i2 * i3
    expected = _TDT3_HEADER.size + 4 * count
    if count == 0 or len(data) != expected:
        raise ValueError(
            f"TDT3 payload size mismatch: dims ({i1}, {i2}, {i3}) need {expected} bytes, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=_TDT3_HEADER.size, count=count)
    return as_tensor3(arr.reshape(i1, i2, i3))
