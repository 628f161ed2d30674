"""Alternating least squares for third-order BM decompositions.

Each sweep updates ``B``, then ``C``, then ``A``.  Every update splits into
independent least-squares problems, one per tube fiber of the factor being
solved for, so it can be spread over worker threads.  The ``C`` and ``A``
updates are the ``B`` update applied to a cyclically transposed problem.

The regularized objective is

    psi = ||T - bmp(A, B, C)||^2
          + 0.5 * (sum_t lambda_t^2 ||A[:, t, :]||^2 + beta^2 ||B||^2 + gamma^2 ||C||^2)

and each update minimizes it exactly over its block, so ``psi`` does not
increase from sweep to sweep.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bm_algebra import BmdFactors, bmp, bmp_terms
from .errors import DimensionError, DivergenceError, DomainError, ParameterError
from .linalg_kernels import resolve_workers, solve_reg_ls_batched
from .tensor_core import as_tensor3, build_h_blocks, transpose_t, transpose_t2

__all__ = [
    "Regularization",
    "SolveOptions",
    "SweepRecord",
    "SolveReport",
    "update_b",
    "update_c",
    "update_a",
    "objective_psi",
    "data_misfit",
    "bmd_als",
    "separate",
    "residual",
    "residual_jacobian",
]

# fibers per solver batch are limited so the stacked H blocks stay small
_BATCH_ENTRIES = 1 << 21


@dataclass
class Regularization:
    """Penalty weights: one ``lambdas`` entry per term for ``A``, scalars for ``B`` and ``C``."""

    lambdas: np.ndarray
    beta: float = 1.0
    gamma: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=np.float64))
        self.beta = float(self.beta)
        self.gamma = float(self.gamma)
        if np.any(self.lambdas < 0) or self.beta < 0 or self.gamma < 0:
            raise ParameterError("regularization weights must be nonnegative")
        if not (np.all(np.isfinite(self.lambdas)) and math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ParameterError("regularization weights must be finite")

    @classmethod
    def default(cls, rank, lambda1=0.01, lam=1.0, beta=1.0, gamma=1.0, background_terms=(0,)):
        """Light penalty on the background terms of ``A``, unit penalty elsewhere."""
        lambdas = np.full(rank, float(lam))
        for t in background_terms:
            lambdas[t] = lambda1
        return cls(lambdas, beta, gamma, True)

    @classmethod
    def off(cls, rank=1):
        return cls(np.zeros(rank), 0.0, 0.0, False)

    @property
    def rank(self) -> int:
        return self.lambdas.size

    def as_dict(self) -> dict:
        return {
            "enabled": bool(self.enabled),
            "lambdas": [float(x) for x in self.lambdas],
            "beta": self.beta,
            "gamma": self.gamma,
        }


@dataclass
class SolveOptions:
    max_sweeps: int = 100
    rel_tol: float = 1e-5
    regularization: Regularization = None
    record_trace: bool = True
    workers: int = None

    def __post_init__(self):
        if int(self.max_sweeps) < 1:
            raise ParameterError("max_sweeps must be at least 1")
        if not self.rel_tol > 0:
            raise ParameterError("rel_tol must be positive")
        self.max_sweeps = int(self.max_sweeps)


@dataclass
class SweepRecord:
    sweep: int
    misfit: float
    psi: float
    rel_change: float
    re: float
    seconds: float


@dataclass
class SolveReport:
    sweeps_run: int
    reason: str
    trace: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def psi_trace(self) -> np.ndarray:
        return np.array([r.psi for r in self.trace])

    def is_monotone(self, slack: float = 1e-10) -> bool:
        psi = self.psi_trace
        if psi.size < 2:
            return True
        return bool(np.all(np.diff(psi) <= slack * psi[0]))

    @property
    def final_re(self) -> float:
        return self.trace[-1].re if self.trace else float("nan")


def _penalty_matrix(weights, rank):
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (rank,))
    return np.diag(w / math.sqrt(2.0))


def _middle_solve(T, F1, F3, L, workers=None):
    """Solve ``T ~ bmp(F1, M, F3)`` for the middle factor ``M``."""
    m, p, n = T.shape
    ell = F1.shape[1]
    if F1.shape != (m, ell, n) or F3.shape != (ell, p, n):
        raise DimensionError(
            f"factors {F1.shape}, {F3.shape} not conformable with data {T.shape}"
        )
    M = np.empty((m, p, ell))
    rows = max(1, _BATCH_ENTRIES // max(1, p * n * ell))
    for r0 in range(0, m, rows):
        r1 = min(m, r0 + rows)
        H = build_h_blocks(F1, F3, slice(r0, r1)).reshape(-1, n, ell)
        Y = T[r0:r1].reshape(-1, n)
        M[r0:r1] = solve_reg_ls_batched(H, Y, L, workers=workers).reshape(r1 - r0, p, ell)
    return M


def _penalties(reg, rank):
    if reg is None or not reg.enabled:
        return None, None, None
    if reg.rank != rank:
        raise ParameterError(f"regularization has {reg.rank} weights, factors have rank {rank}")
    return (
        _penalty_matrix(reg.lambdas, rank),
        _penalty_matrix(reg.beta, rank),
        _penalty_matrix(reg.gamma, rank),
    )


def update_b(T, A, C, reg=None, workers=None) -> np.ndarray:
    """Optimal ``B`` for fixed ``A`` and ``C``; one problem per fiber ``B[i, j, :]``."""
    T = as_tensor3(T, "T")
    _, Lb, _ = _penalties(reg, A.shape[1])
    return _middle_solve(T, as_tensor3(A, "A"), as_tensor3(C, "C"), Lb, workers)


def update_c(T, A, B, reg=None, workers=None) -> np.ndarray:
    """Optimal ``C`` for fixed ``A`` and ``B``, via ``T^T ~ bmp(B^T, C^T, A^T)``."""
    T = as_tensor3(T, "T")
    _, _, Lc = _penalties(reg, A.shape[1])
    Ct = _middle_solve(transpose_t(T), transpose_t(B), transpose_t(A), Lc, workers)
    return transpose_t2(Ct)


def update_a(T, B, C, reg=None, workers=None) -> np.ndarray:
    """Optimal ``A`` for fixed ``B`` and ``C``, via ``T^T2 ~ bmp(C^T2, A^T2, B^T2)``."""
    T = as_tensor3(T, "T")
    La, _, _ = _penalties(reg, B.shape[2])
    At2 = _middle_solve(transpose_t2(T), transpose_t2(C), transpose_t2(B), La, workers)
    return transpose_t(At2)


def data_misfit(T, factors: BmdFactors) -> float:
    """``||T - bmp(factors)||_F``."""
    return float(np.linalg.norm((T - bmp(factors)).ravel()))


def _penalty_value(factors, reg):
    if reg is None or not reg.enabled:
        return 0.0
    a = float(np.sum(reg.lambdas**2 * np.sum(factors.A**2, axis=(0, 2))))
    b = reg.beta**2 * float(np.sum(factors.B**2))
    c = reg.gamma**2 * float(np.sum(factors.C**2))
    return 0.5 * (a + b + c)


def objective_psi(T, factors: BmdFactors, reg=None) -> float:
    """Squared misfit plus half the squared penalties."""
    T = as_tensor3(T, "T")
    return data_misfit(T, factors) ** 2 + _penalty_value(factors, reg)


def _rel_change(new, old):
    num = float(np.linalg.norm((new - old).ravel()))
    den = float(np.linalg.norm(old.ravel()))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def bmd_als(T, init: BmdFactors, opts: SolveOptions = None):
    """Run BMD-ALS from ``init``.

    Stops when the relative change of the reconstruction between sweeps
    falls below ``opts.rel_tol`` or after ``opts.max_sweeps`` sweeps.

    Returns
    -------
    factors : BmdFactors
    report : SolveReport
        The trace starts with a sweep-0 record for the starting guess.

    Raises
    ------
    DivergenceError
        If the objective becomes NaN or infinite; the trace so far is attached.
    """
    opts = SolveOptions() if opts is None else opts
    T = as_tensor3(T, "T")
    if not np.all(np.isfinite(T)):
        raise DomainError("data tensor contains NaN or Inf")
    if init.dims != T.shape:
        raise DimensionError(f"starting guess has dims {init.dims}, data has {T.shape}")
    reg = opts.regularization
    workers = resolve_workers(opts.workers)
    _penalties(reg, init.rank)
    norm_t = float(np.linalg.norm(T.ravel()))

    A, B, C = init.A.copy(), init.B.copy(), init.C.copy()
    Xhat = bmp(A, B, C)
    trace = []
    start = time.perf_counter()

    def record(sweep, Xh, factors, change):
        misfit = float(np.linalg.norm((T - Xh).ravel()))
        psi = misfit**2 + _penalty_value(factors, reg)
        re = misfit / norm_t if norm_t > 0 else (0.0 if misfit == 0 else math.inf)
        rec = SweepRecord(sweep, misfit, psi, change, re, time.perf_counter() - start)
        trace.append(rec)
        if not math.isfinite(psi):
            raise DivergenceError(f"objective became non-finite at sweep {sweep}", trace)

    record(0, Xhat, BmdFactors(A, B, C), math.nan)
    reason = "max_sweeps"
    sweep = 0
    for sweep in range(1, opts.max_sweeps + 1):
        B = update_b(T, A, C, reg, workers)
        C = update_c(T, A, B, reg, workers)
        A = update_a(T, B, C, reg, workers)
        new = bmp(A, B, C)
        change = _rel_change(new, Xhat)
        Xhat = new
        record(sweep, Xhat, BmdFactors(A, B, C), change)
        if change < opts.rel_tol:
            reason = "tolerance"
            break
    if not opts.record_trace:
        trace = [trace[0], trace[-1]] if len(trace) > 1 else trace
    report = SolveReport(sweep, reason, trace, time.perf_counter() - start)
    return BmdFactors(A, B, C), report


def separate(factors: BmdFactors, background_terms=(0,)):
    """Split the reconstruction into background and foreground videos.

    The background is the sum of the listed terms (the first term by
    default) and the foreground the sum of the rest.
    """
    bg_terms = sorted({int(t) for t in background_terms})
    for t in bg_terms:
        if not 0 <= t < factors.rank:
            raise ParameterError(f"background term {t} out of range for rank {factors.rank}")
    fg_terms = [t for t in range(factors.rank) if t not in bg_terms]
    return bmp_terms(factors, bg_terms), bmp_terms(factors, fg_terms)


def residual(T, factors: BmdFactors) -> np.ndarray:
    """Residual ``T - bmp(factors)`` flattened first-index-fastest."""
    T = as_tensor3(T, "T")
    return (T - bmp(factors)).ravel(order="F")


def residual_jacobian(factors: BmdFactors) -> np.ndarray:
    """Dense Jacobian of :func:`residual` with respect to ``(vec A, vec B, vec C)``.

    Each factor is vectorized first-index-fastest and the blocks are
    concatenated in the order A, B, C.  Entry
    ``d r[i, j, k] / d A[i, t, k] = -B[i, j, t] C[t, j, k]`` and
    analogously for B and C; every other entry is zero.  Meant for small
    instances only.
    """
    A, B, C = factors.A, factors.B, factors.C
    m, p, n = factors.dims
    ell = factors.rank
    na, nb = A.size, B.size
    J = np.zeros((m * p * n, na + nb + C.size))

    def r_index(i, j, k):
        return i + m * j + m * p * k

    for i in range(m):
        for j in range(p):
            for k in range(n):
                row = r_index(i, j, k)
                for t in range(ell):
                    J[row, i + m * t + m * ell * k] = -B[i, j, t] * C[t, j, k]
                    J[row, na + i + m * j + m * p * t] = -A[i, t, k] * C[t, j, k]
                    J[row, na + nb + t + ell * j + ell * p * k] = -A[i, t, k] * B[i, j, t]
    return J
