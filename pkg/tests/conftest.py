"""Shared oracles and fixtures.

The oracles here are deliberately naive loop implementations, kept separate
from the package code they check.
"""
import numpy as np
import pytest


def brute_bmp(A, B, C):
    m, ell, n = A.shape
    p = B.shape[1]
    X = np.zeros((m, p, n))
    for i in range(m):
        for j in range(p):
            for k in range(n):
                s = 0.0
                for t in range(ell):
                    s += A[i, t, k] * B[i, j, t] * C[t, j, k]
                X[i, j, k] = s
    return X


def brute_bmp4(A, B, C):
    q = A.shape[3]
    return np.stack([brute_bmp(A[..., z], B[..., z], C[..., z]) for z in range(q)], axis=3)


def random_factors(rng, m, p, n, ell):
    return (
        rng.standard_normal((m, ell, n)),
        rng.standard_normal((m, p, ell)),
        rng.standard_normal((ell, p, n)),
    )


def index_tensor(m, p, n):
    """X[i, j, k] = i + 10 j + 100 k with 1-based i, j, k."""
    X = np.empty((m, p, n))
    for i in range(m):
        for j in range(p):
            for k in range(n):
                X[i, j, k] = (i + 1) + 10 * (j + 1) + 100 * (k + 1)
    return X


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# lines collected by test_acceptance.py and repeated at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
