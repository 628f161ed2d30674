"""Dense matrix kernels: economy SVD, small eigenproblems, regularized least squares.

The least-squares kernel minimizes ``||y - H v||^2 + ||L v||^2``.  Callers
that work with an objective carrying a factor one half on the penalty pass
``L / sqrt(2)``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericalError, ParameterError

__all__ = [
    "SvdResult",
    "EigResult",
    "svd",
    "eig_small",
    "solve_reg_ls",
    "solve_reg_ls_batched",
    "resolve_workers",
    "MIN_NORM_RCOND",
]

MIN_NORM_RCOND = 1e-12


@dataclass
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def Vt(self) -> np.ndarray:
        return np.swapaxes(self.V, -1, -2)


@dataclass
class EigResult:
    eigenvalues: np.ndarray
    W: np.ndarray


def _require_finite(*arrays):
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise DomainError("input contains NaN or Inf")


def _fix_signs(U, V):
    # largest-magnitude entry of each left singular vector is made positive
    if U.shape[-1] == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=-2)
    picked = np.take_along_axis(U, idx[..., None, :], axis=-2)
    sign = np.where(picked < 0, -1.0, 1.0)
    return U * sign, V * sign


def svd(M) -> SvdResult:
    """Economy SVD with descending singular values and a fixed sign convention.

    Accepts a matrix or a stack of matrices (leading batch axes).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2:
        raise DimensionError("svd needs a matrix")
    _require_finite(M)
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for shape {M.shape}: {exc}") from exc
    V = np.swapaxes(Vt, -1, -2)
    U, V = _fix_signs(U, V)
    return SvdResult(U, S, V)


def _pair_conjugates(lam, tol):
    """Order eigenvalues so that each conjugate pair is adjacent, positive imaginary part first."""
    n = lam.size
    used = np.zeros(n, dtype=bool)
    order = []
    for a in range(n):
        if used[a]:
            continue
        used[a] = True
        if abs(lam[a].imag) <= tol * max(1.0, abs(lam[a])):
            order.append(a)
            continue
        target = np.conj(lam[a])
        cand = [b for b in range(n) if not used[b]]
        if not cand:
            order.append(a)
            continue
        b = min(cand, key=lambda c: abs(lam[c] - target))
        used[b] = True
        first, second = (a, b) if lam[a].imag > 0 else (b, a)
        order.extend([first, second])
    return np.array(order, dtype=int)


def eig_small(M) -> EigResult:
    """Eigen-decomposition of a small real nonsymmetric matrix.

    Conjugate pairs are returned adjacently, the member with positive
    imaginary part first.  Eigenvectors are normalized to unit 2-norm.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"eig_small needs a square matrix, got {M.shape}")
    if M.shape[0] > 64:
        raise ParameterError("eig_small is meant for matrices of order at most 64")
    _require_finite(M)
    try:
        lam, W = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    lam = lam.astype(np.complex128)
    W = W.astype(np.complex128)
    order = _pair_conjugates(lam, 1e-12)
    return EigResult(lam[order], W[:, order])


def _stacked_min_norm(S, R):
    """Minimum-norm solutions of ``S[b] v = R[b]`` via a batched SVD."""
    U, s, Vt = np.linalg.svd(S, full_matrices=False)
    smax = s[:, :1] if s.shape[1] else np.zeros((s.shape[0], 1))
    keep = s > MIN_NORM_RCOND * smax
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
    coef = np.matmul(np.swapaxes(U, 1, 2), R[:, :, None])[:, :, 0] * inv
    return np.matmul(np.swapaxes(Vt, 1, 2), coef[:, :, None])[:, :, 0]


def _solve_chunk(H, Y, L):
    if L is None:
        return _stacked_min_norm(H, Y)
    N = H.shape[0]
    d = L.shape[0]
    S = np.concatenate([H, np.broadcast_to(L, (N,) + L.shape)], axis=1)
    R = np.concatenate([Y, np.zeros((N, d))], axis=1)
    return _stacked_min_norm(S, R)


def resolve_workers(workers=None) -> int:
    """Worker count from the argument, else ``BMDKIT_THREADS``, else 1."""
    if workers is None:
        env = os.environ.get("BMDKIT_THREADS")
        if env:
            try:
                workers = int(env)
            except ValueError as exc:
                raise ParameterError(f"BMDKIT_THREADS must be an integer, got {env!r}") from exc
        else:
            workers = 1
    workers = int(workers)
    if workers < 1:
        raise ParameterError("worker count must be at least 1")
    return workers


def solve_reg_ls_batched(H, Y, L=None, *, chunk_size=None, workers=None) -> np.ndarray:
    """Solve many independent regularized least-squares problems.

    Parameters
    ----------
    H : (N, n, l) array
        Coefficient blocks.
    Y : (N, n) array
        Right-hand sides.
    L : (d, l) array, optional
        Shared penalty matrix.  Without it the minimum-norm solution is returned.
    chunk_size : int, optional
        Problems per task.  The result does not depend on it.
    workers : int, optional
        Thread count; falls back to ``BMDKIT_THREADS``.

    Returns
    -------
    V : (N, l) array
    """
    H = np.asarray(H, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if H.ndim != 3 or Y.shape != H.shape[:2]:
        raise DimensionError(f"batched blocks {H.shape} and right-hand sides {Y.shape} disagree")
    if L is not None:
        L = np.asarray(L, dtype=np.float64)
        if L.ndim != 2 or L.shape[1] != H.shape[2]:
            raise DimensionError(f"penalty of shape {L.shape} does not act on {H.shape[2]} unknowns")
    _require_finite(H, Y, L)
    N = H.shape[0]
    if N == 0:
        return np.zeros((0, H.shape[2]))
    workers = resolve_workers(workers)
    if chunk_size is None:
        chunk_size = max(1, -(-N // workers)) if workers > 1 else N
    starts = range(0, N, chunk_size)
    if workers == 1 or len(starts) == 1:
        parts = [_solve_chunk(H[s : s + chunk_size], Y[s : s + chunk_size], L) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(lambda s: _solve_chunk(H[s : s + chunk_size], Y[s : s + chunk_size], L), starts)
            )
    return np.concatenate(parts, axis=0)


def solve_reg_ls(H, y, L=None) -> np.ndarray:
    """Minimizer of ``||y - H v||^2 + ||L v||^2``.

    Without ``L`` this is the minimum-norm least-squares solution, with
    singular values below ``1e-12`` times the largest treated as zero.
    """
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if H.ndim != 2 or y.size != H.shape[0]:
        raise DimensionError(f"H of shape {H.shape} and y of length {y.size} disagree")
    return solve_reg_ls_batched(H[None], y[None], L, workers=1)[0]
