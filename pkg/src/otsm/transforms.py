"""Walsh-Hadamard transforms and shuffle permutations.

The delay-sequency chain is built from two linear operators: the
sequency-ordered Walsh-Hadamard matrix (symmetric, self-inverse under
1/sqrt(N) normalisation) and the perfect-shuffle permutation that swaps
the row/column roles of a vectorised matrix.  Both are cheap to apply:
the transform has an O(N log N) butterfly and the shuffle is stored as
an index array, never as a dense matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "wht_matrix",
    "sequency_order",
    "fwht",
    "apply_iwht_rows",
    "PerfectShuffle",
    "perfect_shuffle",
]


def _check_power_of_two(order: int) -> None:
    if order < 1 or (order & (order - 1)) != 0:
        raise ValueError(f"transform size must be a positive power of two, got {order}")


def _sign_changes(row: np.ndarray) -> int:
    signs = np.sign(row)
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


@lru_cache(maxsize=None)
def _natural_hadamard(order: int) -> np.ndarray:
    """Unnormalised +-1 Hadamard matrix built by the doubling recursion."""
    h = np.array([[1.0]])
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    h.setflags(write=False)
    return h


@lru_cache(maxsize=None)
def sequency_order(order: int) -> np.ndarray:
    """Map sequency position -> natural Hadamard row index.

    Row i of the sequency-ordered matrix is the natural-order row with
    exactly i sign changes; sign-change counts are distinct so the sort
    is a permutation.
    """
    _check_power_of_two(order)
    natural = _natural_hadamard(order)
    changes = np.array([_sign_changes(r) for r in natural])
    perm = np.argsort(changes)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=None)
def _wht_cached(order: int) -> np.ndarray:
    natural = _natural_hadamard(order)
    w = natural[sequency_order(order), :] / np.sqrt(order)
    w.setflags(write=False)
    return w


def wht_matrix(order: int) -> np.ndarray:
    """Sequency-ordered, 1/sqrt(N)-normalised Walsh-Hadamard matrix.

    The result is symmetric and self-inverse; it is cached and returned
    read-only.
    """
    _check_power_of_two(order)
    return _wht_cached(order)


def fwht(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Fast Walsh-Hadamard transform along ``axis``.

    Equivalent to multiplying by :func:`wht_matrix` on that axis
    (sequency ordering, unit-norm scaling), at O(N log N) cost.
    """
    x = np.asarray(x)
    n = x.shape[axis]
    _check_power_of_two(n)
    y = np.moveaxis(x, axis, -1)
    lead = y.shape[:-1]
    y = y.reshape(-1, n).astype(np.result_type(y.dtype, np.float64), copy=True)
    h = 1
    while h < n:
        y = y.reshape(y.shape[0], -1, 2, h)
        top = y[:, :, 0, :] + y[:, :, 1, :]
        bot = y[:, :, 0, :] - y[:, :, 1, :]
        y = np.stack([top, bot], axis=2).reshape(y.shape[0], -1)
        h *= 2
    y = y[:, sequency_order(n)] / np.sqrt(n)
    return np.moveaxis(y.reshape(*lead, n), -1, axis)


def apply_iwht_rows(x: np.ndarray) -> np.ndarray:
    """Transform every row of an M x N matrix (N a power of two).

    Self-inverse: applying twice returns the input.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {x.shape}")
    return fwht(x, axis=1)


@dataclass(frozen=True)
class PerfectShuffle:
    """Row-column permutation of a vectorised m x n matrix.

    ``apply`` sends vec(X) (column-major, X of shape m x n) to vec(X^T).
    Stored as an index array: ``apply(v)[i] == v[indices[i]]``.
    """

    m: int
    n: int
    indices: np.ndarray
    inverse: np.ndarray = field(repr=False)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.indices]

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.inverse]

    def matrix(self) -> np.ndarray:
        """Dense 0/1 matrix form, for small-size verification only."""
        size = self.m * self.n
        p = np.zeros((size, size))
        p[np.arange(size), self.indices] = 1.0
        return p

    def conjugate(self, a):
        """Return P A P^T for a square matrix ``a`` (dense or scipy sparse)."""
        idx = self.indices
        if hasattr(a, "tocsr"):
            return a.tocsr()[idx, :][:, idx]
        return np.asarray(a)[np.ix_(idx, idx)]

    def conjugate_by_transpose(self, a):
        """Return P^T A P for a square matrix ``a`` (dense or scipy sparse)."""
        inv = self.inverse
        if hasattr(a, "tocsr"):
            return a.tocsr()[inv, :][:, inv]
        return np.asarray(a)[np.ix_(inv, inv)]


def perfect_shuffle(m: int, n: int) -> PerfectShuffle:
    """Build the perfect shuffle for m x n matrices.

    Satisfies A (x) B = P (B (x) A) P^T for square A (n x n), B (m x m),
    and P P^T = I.
    """
    if m < 1 or n < 1:
        raise ValueError(f"shuffle dimensions must be positive, got ({m}, {n})")
    a = np.repeat(np.arange(m), n)
    b = np.tile(np.arange(n), m)
    idx = b * m + a
    idx.setflags(write=False)
    inv = np.argsort(idx)
    inv.setflags(write=False)
    return PerfectShuffle(m=m, n=n, indices=idx, inverse=inv)
