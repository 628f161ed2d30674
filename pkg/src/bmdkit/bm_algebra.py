"""BM-product algebra for third- and fourth-order tensors.

A conformable triple has ``A`` of shape (m, l, n), ``B`` of shape (m, p, l) and
``C`` of shape (l, p, n).  Its BM-product is the (m, p, n) tensor

    X[i, j, k] = sum_t A[i, t, k] * B[i, j, t] * C[t, j, k]

which is the sum of ``l`` rank-one BM terms built from the slices
``A[:, t, :]``, ``B[:, :, t]`` and ``C[t, :, :]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor_core import (
    as_tensor3,
    as_tensor4,
    transpose4,
    transpose_t,
)

__all__ = [
    "BmdFactors",
    "Bmd4Factors",
    "bmp",
    "bmp_outer",
    "bmp4",
    "bmp_terms",
    "transpose_identity_check",
    "transpose4_identity_check",
    "bm_rank_upper_bound",
]


def _conformable3(A, B, C):
    if A.ndim != 3 or B.ndim != 3 or C.ndim != 3:
        raise DimensionError("factors must be third-order tensors")
    m, ell, n = A.shape
    mb, p, ellb = B.shape
    ellc, pc, nc = C.shape
    if mb != m or ellb != ell or ellc != ell or pc != p or nc != n:
        raise DimensionError(
            f"factors not conformable: A{A.shape}, B{B.shape}, C{C.shape}"
        )
    return m, p, n, ell


@dataclass(frozen=True)
class BmdFactors:
    """A conformable factor triple (A, B, C)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_tensor3(self.A, "A")
        B = as_tensor3(self.B, "B")
        C = as_tensor3(self.C, "C")
        _conformable3(A, B, C)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> tuple:
        return (self.A.shape[0], self.B.shape[1], self.A.shape[2])

    def term(self, t: int) -> "BmdFactors":
        """The single BM-rank-one term ``t`` as a rank-1 triple."""
        if not 0 <= t < self.rank:
            raise ParameterError(f"term index {t} out of range for rank {self.rank}")
        return BmdFactors(
            self.A[:, t : t + 1, :], self.B[:, :, t : t + 1], self.C[t : t + 1, :, :]
        )

    def select(self, terms) -> "BmdFactors":
        terms = list(terms)
        return BmdFactors(self.A[:, terms, :], self.B[:, :, terms], self.C[terms, :, :])

    def copy(self) -> "BmdFactors":
        return BmdFactors(self.A.copy(), self.B.copy(), self.C.copy())


@dataclass(frozen=True)
class Bmd4Factors:
    """Color factor triple; the trailing axis is the channel."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_tensor4(self.A, "A")
        B = as_tensor4(self.B, "B")
        C = as_tensor4(self.C, "C")
        q = A.shape[3]
        if B.shape[3] != q or C.shape[3] != q:
            raise DimensionError(
                f"channel counts differ: A{A.shape}, B{B.shape}, C{C.shape}"
            )
        _conformable3(A[..., 0], B[..., 0], C[..., 0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def channels(self) -> int:
        return self.A.shape[3]

    @property
    def dims(self) -> tuple:
        return (self.A.shape[0], self.B.shape[1], self.A.shape[2], self.A.shape[3])

    def channel(self, z: int) -> BmdFactors:
        return BmdFactors(self.A[..., z], self.B[..., z], self.C[..., z])

    def copy(self) -> "Bmd4Factors":
        return Bmd4Factors(self.A.copy(), self.B.copy(), self.C.copy())


def _bmp_arrays(A, B, C):
    m, p, n, ell = _conformable3(A, B, C)
    X = np.zeros((m, p, n))
    # fixed summation order, t ascending
    for t in range(ell):
        X += A[:, None, t, :] * B[:, :, t, None] * C[None, t, :, :]
    return X


def bmp(A, B=None, C=None) -> np.ndarray:
    """BM-product of a conformable triple.

    Accepts either a :class:`BmdFactors` or the three arrays.
    """
    if isinstance(A, BmdFactors):
        return _bmp_arrays(A.A, A.B, A.C)
    return _bmp_arrays(as_tensor3(A, "A"), as_tensor3(B, "B"), as_tensor3(C, "C"))


def bmp_outer(a_slice, b_slice, c_slice) -> np.ndarray:
    """Rank-one BM term from an m x n, an m x p and a p x n matrix.

    ``out[i, j, k] = a[i, k] * b[i, j] * c[j, k]``.
    """
    a = np.asarray(a_slice, dtype=np.float64)
    b = np.asarray(b_slice, dtype=np.float64)
    c = np.asarray(c_slice, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
        raise DimensionError("BM outer product takes three matrices")
    m, n = a.shape
    if b.shape[0] != m or c.shape != (b.shape[1], n):
        raise DimensionError(
            f"slices not conformable: a{a.shape}, b{b.shape}, c{c.shape}"
        )
    return a[:, None, :] * b[:, :, None] * c[None, :, :]


def bmp_terms(factors: BmdFactors, terms) -> np.ndarray:
    """Sum of the selected rank-one terms (an empty selection gives zeros)."""
    terms = list(terms)
    if not terms:
        return np.zeros(factors.dims)
    return bmp(factors.select(terms))


def bmp4(A, B=None, C=None) -> np.ndarray:
    """Channelwise fourth-order BM-product.

    ``X[i, j, k, z] = sum_t A[i, t, k, z] * B[i, j, t, z] * C[t, j, k, z]``.
    """
    if isinstance(A, Bmd4Factors):
        f = A
    else:
        f = Bmd4Factors(A, B, C)
    m, p, n, q = f.dims
    X = np.zeros((m, p, n, q))
    for t in range(f.rank):
        X += f.A[:, None, t, :, :] * f.B[:, :, t, None, :] * f.C[None, t, :, :, :]
    return X


def transpose_identity_check(factors: BmdFactors):
    """Both sides of ``bmp(A, B, C)^T == bmp(B^T, C^T, A^T)``."""
    lhs = transpose_t(bmp(factors))
    rhs = bmp(transpose_t(factors.B), transpose_t(factors.C), transpose_t(factors.A))
    return lhs, rhs


def transpose4_identity_check(factors: Bmd4Factors):
    """Fourth-order analogue of :func:`transpose_identity_check`."""
    lhs = transpose4(bmp4(factors))
    rhs = bmp4(transpose4(factors.B), transpose4(factors.C), transpose4(factors.A))
    return lhs, rhs


def _max_slice_rank(slices, tol):
    # slices: (s, r, c) stack of matrices
    if slices.size == 0:
        return 0
    sv = np.linalg.svd(slices, compute_uv=False)
    top = sv.max()
    if top == 0.0:
        return 0
    return int((sv > tol * top).sum(axis=1).max())


def bm_rank_upper_bound(X, tol: float = 1e-10) -> int:
    """Upper bound on the BM-rank from slicewise matrix ranks.

    Takes, for each of the frontal, horizontal and lateral orientations, the
    largest numerical rank among its slices and returns the smallest of the
    three.  Singular values at or below ``tol`` times the largest singular
    value of that orientation count as zero.
    """
    if tol < 0:
        raise ParameterError("tol must be nonnegative")
    X = as_tensor3(X)
    frontal = np.transpose(X, (2, 0, 1))  # X[:, :, k]
    horizontal = X  # X[i, :, :]
    lateral = np.transpose(X, (1, 0, 2))  # X[:, j, :]
    return min(_max_slice_rank(s, tol) for s in (frontal, horizontal, lateral))
