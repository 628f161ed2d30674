"""Starting guesses for BMD-ALS.

Three constructions are provided:

* :func:`matrix_to_bmd` refolds a matrix factorization ``U @ Vt`` of the
  frame matrix into an exact factor triple;
* :func:`slicewise_svd_init` truncates the SVD of every frontal slice;
* :func:`dmd_fit` / :func:`dmd_to_bmd` fit exact dynamic mode decomposition
  to the frame sequence and convert the modes into real factors.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bm_algebra import BmdFactors
from .errors import DimensionError, ParameterError
from .linalg_kernels import eig_small, svd
from .tensor_core import as_tensor3, fold_frames, unfold_frames

__all__ = [
    "matrix_to_bmd",
    "slicewise_svd_init",
    "slicewise_tail_energy",
    "sssvd_background",
    "DmdModel",
    "DmdRankWarning",
    "dmd_fit",
    "dmd_to_bmd",
    "dmd_segmented_init",
]


class DmdRankWarning(UserWarning):
    """The requested DMD rank exceeds the numerical rank of the snapshots."""


def matrix_to_bmd(U, Vt, dims) -> BmdFactors:
    """Exact factor triple for the video whose frame matrix is ``U @ Vt``.

    Column ``j`` of the frame matrix is the column-major vectorization of
    frame ``j``.  ``U`` is (m*n, l) and ``Vt`` is (l, p).
    """
    U = np.asarray(U, dtype=np.float64)
    Vt = np.asarray(Vt, dtype=np.float64)
    m, p, n = (int(d) for d in dims)
    if U.ndim != 2 or Vt.ndim != 2 or U.shape[0] != m * n or Vt.shape != (U.shape[1], p):
        raise DimensionError(
            f"U{U.shape} and Vt{Vt.shape} do not factor a {m*n}x{p} frame matrix"
        )
    ell = U.shape[1]
    A = np.empty((m, ell, n))
    for t in range(ell):
        A[:, t, :] = U[:, t].reshape((m, n), order="F")
    B = np.ones((m, p, ell))
    C = np.repeat(Vt[:, :, None], n, axis=2)
    return BmdFactors(A, B, C)


def _check_slice_rank(X, rank):
    m, p, _ = X.shape
    if not (1 <= rank <= min(m, p)):
        raise ParameterError(f"rank must lie in [1, {min(m, p)}], got {rank}")


def _frontal_svd(X):
    # stack of frontal slices X[:, :, k] with shape (n, m, p)
    return svd(np.transpose(X, (2, 0, 1)))


def slicewise_svd_init(X, rank: int) -> BmdFactors:
    """Rank-``rank`` truncated SVD of each frontal slice, as a factor triple.

    ``A[:, :, k]`` holds the leading columns of ``U S`` and ``C[:, :, k]``
    the leading rows of ``V^T``; ``B`` is all ones.  Columns of ``A`` whose
    singular value is numerically zero are set to exact zeros.
    """
    X = as_tensor3(X)
    _check_slice_rank(X, rank)
    m, p, n = X.shape
    res = _frontal_svd(X)
    S = res.S[:, :rank]  # (n, rank)
    smax = res.S[:, :1] if res.S.shape[1] else np.zeros((n, 1))
    tol = np.finfo(float).eps * max(m, p) * smax
    S = np.where(S > tol, S, 0.0)
    A = np.transpose(res.U[:, :, :rank] * S[:, None, :], (1, 2, 0))
    C = np.transpose(res.V[:, :, :rank], (2, 1, 0))
    B = np.ones((m, p, rank))
    return BmdFactors(np.ascontiguousarray(A), B, np.ascontiguousarray(C))


def slicewise_tail_energy(X, rank: int) -> float:
    """Sum over frontal slices of the squared singular values past ``rank``."""
    X = as_tensor3(X)
    s = np.linalg.svd(np.transpose(X, (2, 0, 1)), compute_uv=False)
    return float((s[:, rank:] ** 2).sum())


def sssvd_background(X) -> np.ndarray:
    """Background model from the rank-one truncation of every frontal slice."""
    X = as_tensor3(X)
    if X.size == 0:
        raise DimensionError("empty tensor")
    res = _frontal_svd(X)
    u = res.U[:, :, 0] * res.S[:, :1]  # (n, m)
    v = res.V[:, :, 0]  # (n, p)
    return np.ascontiguousarray(np.transpose(u[:, :, None] * v[:, None, :], (1, 2, 0)))


@dataclass
class DmdModel:
    """Fitted exact DMD of a frame sequence.

    ``modes`` has one column per mode, each the column-major vectorization of
    an m x n frame.  ``background`` lists the mode indices whose eigenvalue
    has modulus within ``delta`` of one.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray
    frame_shape: tuple
    frames: int
    delta: float = 1e-2
    background: tuple = field(default=())
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def vandermonde(self, p=None) -> np.ndarray:
        """Matrix ``lambda_t ** j`` of shape (rank, p)."""
        p = self.frames if p is None else p
        return self.eigenvalues[:, None] ** np.arange(p)[None, :]

    def reconstruct(self, p=None, modes=None) -> np.ndarray:
        """Complex (m, p, n) video ``sum_t b_t phi_t lambda_t^j``."""
        m, n = self.frame_shape
        sel = slice(None) if modes is None else list(modes)
        weighted = self.modes[:, sel] * self.amplitudes[sel]
        return fold_frames(weighted @ self.vandermonde(p)[sel], m, n)


def _mode_units(lam):
    """Group indices into real singletons and adjacent conjugate pairs."""
    units = []
    t = 0
    while t < lam.size:
        if (
            abs(lam[t].imag) > 1e-12 * max(1.0, abs(lam[t]))
            and t + 1 < lam.size
            and abs(lam[t + 1] - np.conj(lam[t])) <= 1e-8 * max(1.0, abs(lam[t]))
        ):
            units.append([t, t + 1])
            t += 2
        else:
            units.append([t])
            t += 1
    return units


def dmd_fit(X, rank: int, delta: float = 1e-2, cutoff: float = 1e-10) -> DmdModel:
    """Exact DMD of the frame sequence of ``X``.

    Parameters
    ----------
    X : (m, p, n) array
    rank : int
        Truncation rank of the snapshot SVD, ``1 <= rank <= p - 1``.
    delta : float
        Modes with ``abs(abs(lambda) - 1) <= delta`` form the background set.
    cutoff : float
        Singular values below ``cutoff`` times the largest are treated as
        zero; the rank is reduced, with a :class:`DmdRankWarning`.

    Modes are ordered background first, then by decreasing norm of
    ``b_t phi_t``; conjugate pairs stay adjacent.
    """
    X = as_tensor3(X)
    m, p, n = X.shape
    if p < 2:
        raise ParameterError("DMD needs at least two frames")
    if not (1 <= rank <= p - 1):
        raise ParameterError(f"DMD rank must lie in [1, {p - 1}], got {rank}")
    if delta < 0:
        raise ParameterError("delta must be nonnegative")
    F = unfold_frames(X)
    X1, X2 = F[:, :-1], F[:, 1:]
    res = svd(X1)
    s = res.S
    numerical = int((s > cutoff * s[0]).sum()) if s.size and s[0] > 0 else 0
    if numerical == 0:
        raise ParameterError("snapshot matrix is zero; DMD is undefined")
    if rank > numerical:
        warnings.warn(
            f"DMD rank reduced from {rank} to {numerical} (snapshot rank)",
            DmdRankWarning,
            stacklevel=2,
        )
        rank = numerical
    U = res.U[:, :rank]
    V = res.V[:, :rank]
    sig = s[:rank]
    X2V_S = (X2 @ V) / sig
    Atilde = U.T @ X2V_S
    eig = eig_small(Atilde)
    lam, W = eig.eigenvalues, eig.W
    Phi = X2V_S @ W
    b = np.linalg.lstsq(Phi, F[:, 0].astype(np.complex128), rcond=None)[0]

    units = _mode_units(lam)
    weight = np.linalg.norm(Phi * b, axis=0)
    is_bg = np.abs(np.abs(lam) - 1.0) <= delta

    def key(unit):
        return (0 if is_bg[unit[0]] else 1, -float(weight[unit].sum()), unit[0])

    order = [t for unit in sorted(units, key=key) for t in unit]
    lam, Phi, b = lam[order], Phi[:, order], b[order]
    background = tuple(int(t) for t in np.flatnonzero(np.abs(np.abs(lam) - 1.0) <= delta))
    return DmdModel(lam, Phi, b, (m, n), p, float(delta), background, s)


def dmd_to_bmd(model: DmdModel, p=None) -> BmdFactors:
    """Real factor triple whose BM-product is the real part of the DMD video.

    A real eigenvalue gives one term ``(Re a, Re c)`` with ``a = b_t phi_t``
    and ``c = lambda_t ** j``.  A conjugate pair gives the two terms
    ``(Re a, 2 Re c)`` and ``(Im a, -2 Im c)``, which sum to
    ``2 Re(a c)``, the pair's contribution.
    """
    m, n = model.frame_shape
    p = model.frames if p is None else int(p)
    ell = model.rank
    amp = model.modes * model.amplitudes
    vand = model.vandermonde(p)
    A = np.empty((m, ell, n))
    Ct = np.empty((ell, p))
    for unit in _mode_units(model.eigenvalues):
        t = unit[0]
        a = amp[:, t].reshape((m, n), order="F")
        if len(unit) == 2:
            A[:, t, :] = a.real
            A[:, t + 1, :] = a.imag
            Ct[t] = 2.0 * vand[t].real
            Ct[t + 1] = -2.0 * vand[t].imag
        else:
            if abs(model.eigenvalues[t].imag) > 1e-12:
                warnings.warn("unpaired complex DMD mode; keeping its real part only", stacklevel=2)
            A[:, t, :] = a.real
            Ct[t] = vand[t].real
    B = np.ones((m, p, ell))
    C = np.repeat(Ct[:, :, None], n, axis=2)
    return BmdFactors(A, B, C)


def dmd_segmented_init(X, rank: int, segment=None, delta: float = 1e-2):
    """DMD starting guess, optionally fitted on consecutive frame windows.

    Each window of ``s`` frames contributes ``min(rank, s - 1)`` terms whose
    ``C`` rows vanish outside the window (a one-frame window contributes the
    frame itself as a single term).  The total rank is the sum over windows.

    Returns
    -------
    factors : BmdFactors
    background : tuple of int
        Term indices belonging to background modes.
    """
    X = as_tensor3(X)
    m, p, n = X.shape
    if segment is None or segment >= p:
        model = dmd_fit(X, min(rank, p - 1), delta)
        return dmd_to_bmd(model), model.background
    segment = int(segment)
    if segment < 1:
        raise ParameterError("segment length must be positive")
    A_parts, C_parts, background = [], [], []
    offset = 0
    for start in range(0, p, segment):
        stop = min(start + segment, p)
        width = stop - start
        if width == 1:
            A_seg = X[:, start : start + 1, :].copy()
            C_seg = np.zeros((1, p, n))
            C_seg[0, start, :] = 1.0
            bg = ()
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DmdRankWarning)
                model = dmd_fit(X[:, start:stop, :], min(rank, width - 1), delta)
            f = dmd_to_bmd(model)
            A_seg = f.A
            C_seg = np.zeros((f.rank, p, n))
            C_seg[:, start:stop, :] = f.C
            bg = model.background
        background.extend(offset + t for t in bg)
        offset += A_seg.shape[1]
        A_parts.append(A_seg)
        C_parts.append(C_seg)
    A = np.concatenate(A_parts, axis=1)
    C = np.concatenate(C_parts, axis=0)
    B = np.ones((m, p, A.shape[1]))
    return BmdFactors(A, B, C), tuple(background)
