"""Tucker decomposition of 3-order tensors by HOSVD initialisation and HOOI."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .tensor import (
    as_tensor3,
    frobenius_norm,
    leading_left_singular_vectors,
    mode_n_product,
    multi_mode_product_except,
    unfold,
)

__all__ = [
    "HooiSettings",
    "TuckerFactors",
    "check_ranks",
    "hosvd_init",
    "hooi",
    "core_from_factors",
    "reconstruct",
    "approximation_error",
]

Ranks = Tuple[int, int, int]


@dataclass(frozen=True)
class HooiSettings:
    """Stopping rule for HOOI sweeps.

    A sweep updates the factors for modes 1, 2, 3 in turn. Iteration stops
    once the relative change of the core norm between sweeps drops to
    ``relative_tolerance`` or ``max_iterations`` sweeps have run.
    """

    max_iterations: int = 50
    relative_tolerance: float = 1e-6

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.relative_tolerance > 0:
            raise ValueError("relative_tolerance must be > 0")


@dataclass
class TuckerFactors:
    core: np.ndarray
    factors: Tuple[np.ndarray, np.ndarray, np.ndarray]
    #: core norm after HOSVD (index 0) and after every HOOI sweep
    history: Tuple[float, ...] = field(default_factory=tuple)
    converged: bool = True
    iterations: int = 0

    @property
    def ranks(self) -> Ranks:
        return tuple(int(u.shape[1]) for u in self.factors)

    @property
    def dims(self) -> Ranks:
        return tuple(int(u.shape[0]) for u in self.factors)


def check_ranks(dims: Sequence[int], ranks: Sequence[int]) -> Ranks:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3:
        raise ValueError(f"expected three ranks, got {ranks}")
    for n, (r, d) in enumerate(zip(ranks, dims), start=1):
        if not 1 <= r <= d:
            raise ValueError(f"rank R{n}={r} out of range [1, {d}]")
    return ranks


def hosvd_init(x: np.ndarray, ranks: Sequence[int]) -> list:
    """Per-mode leading left singular vectors; identity when ``R_n = I_n``."""
    x = as_tensor3(x)
    ranks = check_ranks(x.shape, ranks)
    factors = []
    for n, r in enumerate(ranks, start=1):
        if r == x.shape[n - 1]:
            factors.append(np.eye(r))
        else:
            factors.append(leading_left_singular_vectors(unfold(x, n), r))
    return factors


def core_from_factors(x: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Project ``x`` onto the factor subspaces: ``x x_1 U1^T x_2 U2^T x_3 U3^T``."""
    return multi_mode_product_except(x, factors, skip=None, transpose=True)


def hooi(x: np.ndarray, ranks: Sequence[int], settings: HooiSettings = HooiSettings()) -> TuckerFactors:
    x = as_tensor3(x)
    ranks = check_ranks(x.shape, ranks)
    factors = hosvd_init(x, ranks)
    core = core_from_factors(x, factors)
    history = [frobenius_norm(core)]
    active = [n for n in (1, 2, 3) if ranks[n - 1] < x.shape[n - 1]]
    if not active or history[0] == 0.0:
        return TuckerFactors(core, tuple(factors), tuple(history), True, 0)

    converged = False
    sweeps = 0
    for _ in range(settings.max_iterations):
        for n in active:
            partial = multi_mode_product_except(x, factors, skip=n, transpose=True)
            factors[n - 1] = leading_left_singular_vectors(unfold(partial, n), ranks[n - 1])
        sweeps += 1
        core = core_from_factors(x, factors)
        norm = frobenius_norm(core)
        previous = history[-1]
        history.append(norm)
        if abs(norm - previous) <= settings.relative_tolerance * previous:
            converged = True
            break
    return TuckerFactors(core, tuple(factors), tuple(history), converged, sweeps)


def reconstruct(f: TuckerFactors) -> np.ndarray:
    out = f.core
    for n, u in enumerate(f.factors, start=1):
        if u.shape[1] != out.shape[n - 1]:
            raise ValueError(
                f"factor {n} has {u.shape[1]} columns but core mode {n} is {out.shape[n - 1]}"
            )
        out = mode_n_product(out, u, n)
    return out


def approximation_error(x: np.ndarray, f: TuckerFactors) -> float:
    """Relative Frobenius error ``||x - x_hat|| / ||x||``."""
    x = as_tensor3(x)
    norm = frobenius_norm(x)
    if norm == 0.0:
        raise ValueError("relative error undefined for a zero tensor")
    return frobenius_norm(x - reconstruct(f)) / norm
