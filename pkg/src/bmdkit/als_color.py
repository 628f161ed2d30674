"""Alternating least squares for color video.

The color model keeps one third-order factor triple per channel and ties the
channels together through a first-difference penalty on ``B`` and ``C``:

    psi = ||X - bmp4(A, B, C)||^2 + w^2 (||R b||^2 + ||R c||^2)

summed over the channel-stacked tube fibers ``b = vec(B[i, j, :, :])`` and
``c = vec(C[:, j, k, :])``.  ``A`` is unpenalized unless ``lambdas`` is
given, in which case ``0.5 * sum_t lambda_t^2 ||A[:, t, :, :]||^2`` is added.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .als_engine import SolveOptions, SolveReport, SweepRecord
from .bm_algebra import Bmd4Factors, bmp4
from .errors import DimensionError, DivergenceError, DomainError, ParameterError
from .init_factorizations import slicewise_svd_init
from .linalg_kernels import resolve_workers, solve_reg_ls_batched
from .tensor_core import as_tensor4, transpose4, transpose4_2

__all__ = [
    "ChannelCoupling",
    "build_r",
    "als4_init",
    "update_b4",
    "update_c4",
    "update_a4",
    "objective_psi4",
    "bmd_als4",
    "separate4",
]

_BATCH_ENTRIES = 1 << 21


@dataclass
class ChannelCoupling:
    enabled: bool = True
    weight: float = 1.0

    def __post_init__(self):
        self.weight = float(self.weight)
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ParameterError("coupling weight must be finite and nonnegative")

    @property
    def active(self) -> bool:
        return self.enabled and self.weight > 0


def build_r(rank: int, q: int = 3) -> np.ndarray:
    """First-difference operator between consecutive channels.

    Row ``v * rank + t`` has ``+1`` in column ``v * rank + t`` and ``-1`` in
    column ``(v + 1) * rank + t`` (0-based), so it acts on vectors stacked
    channel by channel with ``rank`` entries each.
    """
    if rank < 1 or q < 2:
        raise ParameterError("build_r needs rank >= 1 and at least two channels")
    R = np.zeros(((q - 1) * rank, q * rank))
    for v in range(q - 1):
        for t in range(rank):
            R[v * rank + t, v * rank + t] = 1.0
            R[v * rank + t, (v + 1) * rank + t] = -1.0
    return R


def als4_init(X, rank: int) -> Bmd4Factors:
    """Channelwise slicewise-SVD starting guess with ``B`` all ones."""
    X = as_tensor4(X)
    m, p, n, q = X.shape
    A = np.empty((m, rank, n, q))
    C = np.empty((rank, p, n, q))
    for z in range(q):
        f = slicewise_svd_init(X[..., z], rank)
        A[..., z] = f.A
        C[..., z] = f.C
    return Bmd4Factors(A, np.ones((m, p, rank, q)), C)


def _block_diag_h(F1, F3):
    """Channel block-diagonal coefficient matrices for every fiber of ``F1``'s rows."""
    r, ell, n, q = F1.shape
    p = F3.shape[1]
    # G[i, j, k, t, z] = F1[i, t, k, z] * F3[t, j, k, z]
    G = np.transpose(F1, (0, 2, 1, 3))[:, None] * np.transpose(F3, (1, 2, 0, 3))[None]
    H = np.zeros((r, p, q, n, q, ell))
    for z in range(q):
        H[:, :, z, :, z, :] = G[..., z]
    return H.reshape(r * p, q * n, q * ell)


def _middle_solve4(T, F1, F3, L, workers=None):
    m, p, n, q = T.shape
    ell = F1.shape[1]
    if F1.shape != (m, ell, n, q) or F3.shape != (ell, p, n, q):
        raise DimensionError(f"factors {F1.shape}, {F3.shape} not conformable with data {T.shape}")
    M = np.empty((m, p, ell, q))
    rows = max(1, _BATCH_ENTRIES // max(1, p * n * q * q * ell))
    for r0 in range(0, m, rows):
        r1 = min(m, r0 + rows)
        H = _block_diag_h(F1[r0:r1], F3)
        # right-hand side stacked channel by channel: index k + n * z
        Y = np.transpose(T[r0:r1], (0, 1, 3, 2)).reshape(-1, q * n)
        V = solve_reg_ls_batched(H, Y, L, workers=workers)
        # unknowns stacked the same way: index t + ell * z
        M[r0:r1] = np.transpose(V.reshape(r1 - r0, p, q, ell), (0, 1, 3, 2))
    return M


def _coupling_penalty(coupling, rank, q):
    if coupling is None or not coupling.active or q < 2:
        return None
    return coupling.weight * build_r(rank, q)


def _a_penalty(lambdas, rank, q):
    if lambdas is None:
        return None
    lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), (rank,))
    if np.any(lam < 0):
        raise ParameterError("lambdas must be nonnegative")
    return np.diag(np.tile(lam, q) / math.sqrt(2.0))


def update_b4(T, A, C, coupling=None, workers=None) -> np.ndarray:
    T = as_tensor4(T, "T")
    L = _coupling_penalty(coupling, A.shape[1], T.shape[3])
    return _middle_solve4(T, A, C, L, workers)


def update_c4(T, A, B, coupling=None, workers=None) -> np.ndarray:
    T = as_tensor4(T, "T")
    L = _coupling_penalty(coupling, A.shape[1], T.shape[3])
    Ct = _middle_solve4(transpose4(T), transpose4(B), transpose4(A), L, workers)
    return transpose4_2(Ct)


def update_a4(T, B, C, lambdas=None, workers=None) -> np.ndarray:
    T = as_tensor4(T, "T")
    L = _a_penalty(lambdas, B.shape[2], T.shape[3])
    At2 = _middle_solve4(transpose4_2(T), transpose4_2(C), transpose4_2(B), L, workers)
    return transpose4(At2)


def _fiber_diffs(F):
    # consecutive-channel differences, summed over every entry
    return float(np.sum((F[..., :-1] - F[..., 1:]) ** 2))


def _penalty4(factors, coupling, lambdas):
    total = 0.0
    if coupling is not None and coupling.active:
        total += coupling.weight**2 * (_fiber_diffs(factors.B) + _fiber_diffs(factors.C))
    if lambdas is not None:
        lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), (factors.rank,))
        total += 0.5 * float(np.sum(lam**2 * np.sum(factors.A**2, axis=(0, 2, 3))))
    return total


def objective_psi4(T, factors: Bmd4Factors, coupling=None, lambdas=None) -> float:
    T = as_tensor4(T, "T")
    misfit = float(np.linalg.norm((T - bmp4(factors)).ravel()))
    return misfit**2 + _penalty4(factors, coupling, lambdas)


def bmd_als4(T, init: Bmd4Factors, opts: SolveOptions = None, coupling: ChannelCoupling = None, lambdas=None):
    """ALS for the color model; sweeps B, C, A like :func:`bmdkit.als_engine.bmd_als`.

    ``opts.regularization`` is ignored; the penalties here come from
    ``coupling`` and the optional ``lambdas``.
    """
    opts = SolveOptions() if opts is None else opts
    T = as_tensor4(T, "T")
    if not np.all(np.isfinite(T)):
        raise DomainError("data tensor contains NaN or Inf")
    if init.dims != T.shape:
        raise DimensionError(f"starting guess has dims {init.dims}, data has {T.shape}")
    workers = resolve_workers(opts.workers)
    norm_t = float(np.linalg.norm(T.ravel()))
    A, B, C = init.A.copy(), init.B.copy(), init.C.copy()
    Xhat = bmp4(A, B, C)
    trace = []
    start = time.perf_counter()

    def record(sweep, Xh, change):
        misfit = float(np.linalg.norm((T - Xh).ravel()))
        psi = misfit**2 + _penalty4(Bmd4Factors(A, B, C), coupling, lambdas)
        re = misfit / norm_t if norm_t > 0 else (0.0 if misfit == 0 else math.inf)
        trace.append(SweepRecord(sweep, misfit, psi, change, re, time.perf_counter() - start))
        if not math.isfinite(psi):
            raise DivergenceError(f"objective became non-finite at sweep {sweep}", trace)

    record(0, Xhat, math.nan)
    reason = "max_sweeps"
    sweep = 0
    for sweep in range(1, opts.max_sweeps + 1):
        B = update_b4(T, A, C, coupling, workers)
        C = update_c4(T, A, B, coupling, workers)
        A = update_a4(T, B, C, lambdas, workers)
        new = bmp4(A, B, C)
        den = float(np.linalg.norm(Xhat.ravel()))
        num = float(np.linalg.norm((new - Xhat).ravel()))
        change = num / den if den > 0 else (0.0 if num == 0 else math.inf)
        Xhat = new
        record(sweep, Xhat, change)
        if change < opts.rel_tol:
            reason = "tolerance"
            break
    if not opts.record_trace and len(trace) > 1:
        trace = [trace[0], trace[-1]]
    return Bmd4Factors(A, B, C), SolveReport(sweep, reason, trace, time.perf_counter() - start)


def separate4(factors: Bmd4Factors, background_terms=(0,)):
    """Background and foreground color videos from selected terms."""
    bg_terms = sorted({int(t) for t in background_terms})
    for t in bg_terms:
        if not 0 <= t < factors.rank:
            raise ParameterError(f"background term {t} out of range for rank {factors.rank}")
    fg_terms = [t for t in range(factors.rank) if t not in bg_terms]

    def part(terms):
        if not terms:
            return np.zeros(factors.dims)
        return bmp4(factors.A[:, terms], factors.B[:, :, terms], factors.C[terms])

    return part(bg_terms), part(fg_terms)
