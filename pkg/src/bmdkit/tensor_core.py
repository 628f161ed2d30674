"""Dense third- and fourth-order tensors: slicing, flattening and transposes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 with axes
``(m, p, n)`` for order 3 (height, time, width) and ``(m, p, n, q)`` for
order 4 (channel last).  Video frames are lateral slices ``X[:, j, :]``.

All indices are 0-based.  When a tensor is serialized the payload is written
first-index-fastest (Fortran order), see :mod:`bmdkit.io_codec`.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import BoundsError, DimensionError, DomainError

__all__ = [
    "as_tensor3",
    "as_tensor4",
    "lateral_slice",
    "frontal_slice",
    "horizontal_slice",
    "tube_fiber",
    "channel_slice",
    "tvec",
    "tfold",
    "transpose_t",
    "transpose_t2",
    "transpose4",
    "transpose4_2",
    "build_h_block",
    "build_h_blocks",
    "unfold_frames",
    "fold_frames",
    "frobenius_norm",
    "relative_error",
]


def as_tensor3(X, name="X") -> np.ndarray:
    """Return ``X`` as a float64 array, checking that it has three axes."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be a third-order tensor, got shape {arr.shape}")
    return arr


def as_tensor4(X, name="X") -> np.ndarray:
    """Return ``X`` as a float64 array, checking that it has four axes."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be a fourth-order tensor, got shape {arr.shape}")
    return arr


def _check_index(idx, size, axis_name):
    if not (0 <= idx < size):
        raise BoundsError(f"{axis_name} index {idx} out of range [0, {size})")


def lateral_slice(X, j: int) -> np.ndarray:
    """``squeeze(X[:, j, :])`` as an m x n matrix (a video frame)."""
    X = as_tensor3(X)
    _check_index(j, X.shape[1], "lateral")
    return X[:, j, :].copy()


def frontal_slice(X, k: int) -> np.ndarray:
    """``X[:, :, k]`` as an m x p matrix (a spatiotemporal slice)."""
    X = as_tensor3(X)
    _check_index(k, X.shape[2], "frontal")
    return X[:, :, k].copy()


def horizontal_slice(X, i: int) -> np.ndarray:
    """``squeeze(X[i, :, :])`` as a p x n matrix."""
    X = as_tensor3(X)
    _check_index(i, X.shape[0], "horizontal")
    return X[i, :, :].copy()


def tube_fiber(X, i: int, j: int) -> np.ndarray:
    """The length-n vector ``X[i, j, :]``."""
    X = as_tensor3(X)
    _check_index(i, X.shape[0], "horizontal")
    _check_index(j, X.shape[1], "lateral")
    return X[i, j, :].copy()


def channel_slice(X, z: int) -> np.ndarray:
    """The third-order tensor ``X[:, :, :, z]`` of a fourth-order tensor."""
    X = as_tensor4(X)
    _check_index(z, X.shape[3], "channel")
    return X[:, :, :, z].copy()


def tvec(X) -> np.ndarray:
    """Stack the tube fibers ``X[i, j, :]`` with ``i`` outer and ``j`` inner."""
    X = as_tensor3(X)
    return X.reshape(-1).copy()


def tfold(v, dims) -> np.ndarray:
    """Inverse of :func:`tvec`."""
    v = np.asarray(v, dtype=np.float64).ravel()
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DimensionError(f"tfold needs three dimensions, got {dims}")
    if v.size != int(np.prod(dims)):
        raise DimensionError(f"vector of length {v.size} cannot fold into {dims}")
    return v.reshape(dims).copy()


def transpose_t(X) -> np.ndarray:
    """Cyclic transpose ``Y[i, j, k] = X[k, i, j]``; shape (p, n, m)."""
    X = as_tensor3(X)
    return np.ascontiguousarray(np.transpose(X, (1, 2, 0)))


def transpose_t2(X) -> np.ndarray:
    """Second cyclic transpose ``Y[i, j, k] = X[j, k, i]``; shape (n, m, p)."""
    X = as_tensor3(X)
    return np.ascontiguousarray(np.transpose(X, (2, 0, 1)))


def transpose4(X) -> np.ndarray:
    """Fourth-order transpose holding the channel axis fixed.

    ``Y[i, j, k, z] = X[k, i, j, z]``, equivalent to MATLAB
    ``permute(X, [2, 3, 1, 4])``.
    """
    X = as_tensor4(X)
    return np.ascontiguousarray(np.transpose(X, (1, 2, 0, 3)))


def transpose4_2(X) -> np.ndarray:
    """Square of :func:`transpose4`: ``permute(X, [3, 1, 2, 4])``."""
    X = as_tensor4(X)
    return np.ascontiguousarray(np.transpose(X, (2, 0, 1, 3)))


def _check_outer_pair(A, C):
    m, ell, n = A.shape
    ell_c, p, n_c = C.shape
    if ell != ell_c or n != n_c:
        raise DimensionError(
            f"factors not conformable: A is {A.shape}, C is {C.shape}"
        )
    return m, p, n, ell


def build_h_block(A, C, i: int, j: int) -> np.ndarray:
    """Coefficient block of the ``(i, j)`` tube-fiber least-squares problem.

    Returns the n x l matrix ``H[k, t] = A[i, t, k] * C[t, j, k]``.
    """
    A = as_tensor3(A, "A")
    C = as_tensor3(C, "C")
    m, p, _, _ = _check_outer_pair(A, C)
    _check_index(i, m, "horizontal")
    _check_index(j, p, "lateral")
    return (A[i, :, :] * C[:, j, :]).T.copy()


def build_h_blocks(A, C, rows=None) -> np.ndarray:
    """All coefficient blocks for a set of horizontal indices at once.

    Parameters
    ----------
    A : (m, l, n) array
    C : (l, p, n) array
    rows : slice or index array, optional
        Restrict to ``A[rows]``; defaults to every row.

    Returns
    -------
    H : (r, p, n, l) array with ``H[i, j] == build_h_block(A, C, i, j)``.
    """
    A = as_tensor3(A, "A")
    C = as_tensor3(C, "C")
    _check_outer_pair(A, C)
    if rows is not None:
        A = A[rows]
    # H[i, j, k, t] = A[i, t, k] * C[t, j, k]
    At = np.transpose(A, (0, 2, 1))[:, None, :, :]  # (r, 1, n, l)
    Ct = np.transpose(C, (1, 2, 0))[None, :, :, :]  # (1, p, n, l)
    return At * Ct


def unfold_frames(X) -> np.ndarray:
    """The mn x p matrix whose column ``j`` is ``vec(X[:, j, :])`` (column-major)."""
    X = as_tensor3(X)
    m, p, n = X.shape
    return np.transpose(X, (1, 2, 0)).reshape(p, n * m).T.copy()


def fold_frames(M, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`unfold_frames`; accepts complex input."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != m * n:
        raise DimensionError(f"matrix of shape {M.shape} does not hold {m}x{n} frames")
    p = M.shape[1]
    return np.transpose(M.T.reshape(p, n, m), (2, 0, 1)).copy()


def frobenius_norm(X) -> float:
    """Frobenius norm; the sum of squares is exactly rounded, so any permutation of the entries gives the same bits."""
    x = np.asarray(X, dtype=np.float64).ravel()
    return math.sqrt(math.fsum(x * x))


def relative_error(X, Xhat) -> float:
    """``||X - Xhat||_F / ||X||_F``."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise DimensionError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    ref = frobenius_norm(X)
    if ref == 0.0:
        raise DomainError("relative error undefined for a zero reference tensor")
    return frobenius_norm(X - Xhat) / ref
