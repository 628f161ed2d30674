import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmdkit.als_engine import (
    Regularization,
    SolveOptions,
    bmd_als,
    data_misfit,
    objective_psi,
    residual,
    residual_jacobian,
    separate,
    update_a,
    update_b,
    update_c,
)
from bmdkit.bm_algebra import BmdFactors, bmp
from bmdkit.errors import DimensionError, DivergenceError, DomainError, ParameterError
from bmdkit.init_factorizations import slicewise_svd_init
from bmdkit.tensor_core import relative_error, transpose_t, transpose_t2

from conftest import random_factors


def ridge(H, y, w):
    """Oracle: normal equations with penalty 0.5 * w^2 * ||v||^2."""
    G = H.T @ H + 0.5 * np.diag(np.broadcast_to(w, (H.shape[1],))) ** 2
    return np.linalg.solve(G, H.T @ y)


def loop_update_b(T, A, C, beta):
    m, p, n = T.shape
    ell = A.shape[1]
    B = np.empty((m, p, ell))
    for i in range(m):
        for j in range(p):
            H = np.array([[A[i, t, k] * C[t, j, k] for t in range(ell)] for k in range(n)])
            B[i, j] = ridge(H, T[i, j, :], beta)
    return B


def loop_update_c(T, A, B, gamma):
    m, p, n = T.shape
    ell = A.shape[1]
    C = np.empty((ell, p, n))
    for j in range(p):
        for k in range(n):
            H = np.array([[A[i, t, k] * B[i, j, t] for t in range(ell)] for i in range(m)])
            C[:, j, k] = ridge(H, T[:, j, k], gamma)
    return C


def loop_update_a(T, B, C, lambdas):
    m, p, n = T.shape
    ell = B.shape[2]
    A = np.empty((m, ell, n))
    for i in range(m):
        for k in range(n):
            H = np.array([[B[i, j, t] * C[t, j, k] for t in range(ell)] for j in range(p)])
            A[i, :, k] = ridge(H, T[i, :, k], lambdas)
    return A


def reg_all(rank, lam=0.7, beta=0.4, gamma=1.3):
    return Regularization(np.linspace(0.2, lam, rank), beta, gamma)


class TestUpdates:
    @pytest.mark.parametrize("ell", [1, 2, 3])
    def test_planted_recovery(self, rng, ell):
        A, B, C = random_factors(rng, 5, 6, 7, ell)
        T = bmp(A, B, C)
        assert np.max(np.abs(update_b(T, A, C) - B)) <= 1e-10 * np.max(np.abs(B))
        assert np.max(np.abs(update_c(T, A, B) - C)) <= 1e-10 * np.max(np.abs(C))
        assert np.max(np.abs(update_a(T, B, C) - A)) <= 1e-10 * np.max(np.abs(A))

    def test_fiber_mean(self, rng):
        T = rng.standard_normal((3, 4, 5))
        B = update_b(T, np.ones((3, 1, 5)), np.ones((1, 4, 5)))
        assert np.allclose(B[:, :, 0], T.mean(axis=2), atol=1e-14)

    def test_ridge_dominance(self, rng):
        A, B, C = random_factors(rng, 4, 5, 6, 2)
        T = bmp(A, B, C)
        big = Regularization([1e8, 1e8], 1e8, 1e8)
        for out in (update_b(T, A, C, big), update_c(T, A, B, big), update_a(T, B, C, big)):
            assert np.max(np.abs(out)) <= 1e-10

    def test_regularized_against_loop(self, rng):
        A, B, C = random_factors(rng, 4, 5, 6, 3)
        T = rng.standard_normal((4, 5, 6))
        reg = reg_all(3)
        assert np.allclose(update_b(T, A, C, reg), loop_update_b(T, A, C, reg.beta), atol=1e-11)
        assert np.allclose(update_c(T, A, B, reg), loop_update_c(T, A, B, reg.gamma), atol=1e-11)
        assert np.allclose(update_a(T, B, C, reg), loop_update_a(T, B, C, reg.lambdas), atol=1e-11)

    def test_c_is_rotated_b_update(self, rng):
        A, B, _ = random_factors(rng, 4, 5, 6, 2)
        T = rng.standard_normal((4, 5, 6))
        reg = Regularization([0.3, 0.3], 0.9, 0.9)
        rotated = transpose_t2(update_b(transpose_t(T), transpose_t(B), transpose_t(A), reg))
        assert np.array_equal(update_c(T, A, B, reg), rotated)

    def test_zero_fiber_gives_zero(self, rng):
        A, _, C = random_factors(rng, 3, 4, 5, 2)
        T = rng.standard_normal((3, 4, 5))
        T[1, 2, :] = 0
        assert np.all(update_b(T, A, C)[1, 2] == 0)

    def test_nonconformable(self, rng):
        A, B, C = random_factors(rng, 3, 4, 5, 2)
        with pytest.raises(DimensionError):
            update_b(np.zeros((3, 4, 6)), A, C)

    def test_partition_independence(self, rng):
        A, B, C = random_factors(rng, 6, 5, 7, 2)
        T = rng.standard_normal((6, 5, 7))
        reg = Regularization.default(2)
        ref = [update_b(T, A, C, reg, 1), update_c(T, A, B, reg, 1), update_a(T, B, C, reg, 1)]
        for w in (2, 3, 8):
            got = [update_b(T, A, C, reg, w), update_c(T, A, B, reg, w), update_a(T, B, C, reg, w)]
            for r, g in zip(ref, got):
                assert np.array_equal(r, g)


class TestObjective:
    def test_zero_factors(self, rng):
        T = rng.standard_normal((3, 4, 5))
        f = BmdFactors(np.zeros((3, 2, 5)), np.zeros((3, 4, 2)), np.zeros((2, 4, 5)))
        assert objective_psi(T, f, Regularization.default(2)) == pytest.approx(np.sum(T**2), rel=1e-14)

    def test_exact(self, rng):
        f = BmdFactors(*random_factors(rng, 3, 4, 5, 2))
        assert objective_psi(bmp(f), f) == 0.0

    def test_loop_oracle(self, rng):
        A, B, C = random_factors(rng, 3, 4, 5, 2)
        T = rng.standard_normal((3, 4, 5))
        reg = Regularization([0.01, 1.0], 0.5, 2.0)
        total = 0.0
        for i in range(3):
            for j in range(4):
                for k in range(5):
                    x = sum(A[i, t, k] * B[i, j, t] * C[t, j, k] for t in range(2))
                    total += (T[i, j, k] - x) ** 2
        pen = sum(reg.lambdas[t] ** 2 * A[i, t, k] ** 2 for i in range(3) for t in range(2) for k in range(5))
        pen += reg.beta**2 * sum(v**2 for v in B.ravel()) + reg.gamma**2 * sum(v**2 for v in C.ravel())
        assert objective_psi(T, BmdFactors(A, B, C), reg) == pytest.approx(total + 0.5 * pen, rel=1e-12)
        assert data_misfit(T, BmdFactors(A, B, C)) ** 2 == pytest.approx(total, rel=1e-12)


class TestSolver:
    def test_fixed_point(self, rng):
        f = BmdFactors(*random_factors(rng, 5, 6, 7, 2))
        out, rep = bmd_als(bmp(f), f, SolveOptions(regularization=Regularization.off(2)))
        assert rep.sweeps_run == 1 and rep.reason == "tolerance"
        assert rep.final_re <= 1e-12
        assert relative_error(bmp(f), bmp(out)) <= 1e-12

    @pytest.mark.parametrize("ell", [1, 2, 3])
    def test_monotone_random(self, ell):
        rng = np.random.default_rng(100 + ell)
        for _ in range(20):
            T = rng.standard_normal((10, 12, 14))
            init = BmdFactors(*random_factors(rng, 10, 12, 14, ell))
            _, rep = bmd_als(T, init, SolveOptions(max_sweeps=15, regularization=Regularization.default(ell)))
            assert rep.is_monotone(1e-10)

    def test_monotone_6x7x8(self, rng):
        T = rng.standard_normal((6, 7, 8))
        _, rep = bmd_als(T, slicewise_svd_init(T, 2), SolveOptions(regularization=Regularization.default(2)))
        assert rep.is_monotone(1e-10)
        assert rep.trace[0].sweep == 0 and len(rep.trace) == rep.sweeps_run + 1

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    @settings(max_examples=15, deadline=None)
    def test_monotone_property(self, seed, ell):
        rng = np.random.default_rng(seed)
        m, p, n = (int(d) for d in rng.integers(3, 7, size=3))
        T = rng.standard_normal((m, p, n))
        init = BmdFactors(*random_factors(rng, m, p, n, ell))
        reg = Regularization(rng.uniform(0.01, 2, ell), rng.uniform(0.01, 2), rng.uniform(0.01, 2))
        _, rep = bmd_als(T, init, SolveOptions(max_sweeps=10, regularization=reg))
        assert rep.is_monotone(1e-10)

    def test_stopping_rule(self, rng):
        T = rng.standard_normal((5, 6, 7))
        _, rep = bmd_als(T, slicewise_svd_init(T, 2), SolveOptions(max_sweeps=3, rel_tol=1e-300))
        assert rep.reason == "max_sweeps" and rep.sweeps_run == 3

    def test_trace_not_recorded(self, rng):
        T = rng.standard_normal((5, 6, 7))
        _, rep = bmd_als(T, slicewise_svd_init(T, 2), SolveOptions(max_sweeps=5, rel_tol=1e-300, record_trace=False))
        assert [r.sweep for r in rep.trace] == [0, 5]

    def test_divergence(self, rng):
        T = rng.standard_normal((3, 4, 5))
        A, B, C = random_factors(rng, 3, 4, 5, 1)
        A[0, 0, 0] = np.inf
        with pytest.raises(DivergenceError) as exc:
            bmd_als(T, BmdFactors(A, B, C))
        assert len(exc.value.trace) == 1

    def test_bad_data(self, rng):
        T = rng.standard_normal((3, 4, 5))
        T[0, 0, 0] = np.nan
        with pytest.raises(DomainError):
            bmd_als(T, BmdFactors(*random_factors(rng, 3, 4, 5, 1)))

    def test_options(self):
        with pytest.raises(ParameterError):
            SolveOptions(max_sweeps=0)
        with pytest.raises(ParameterError):
            SolveOptions(rel_tol=0)
        with pytest.raises(ParameterError):
            Regularization([-1.0])

    def test_rank_mismatch(self, rng):
        T = rng.standard_normal((3, 4, 5))
        with pytest.raises(ParameterError):
            bmd_als(T, slicewise_svd_init(T, 2), SolveOptions(regularization=Regularization.default(3)))

    def test_workers_bitwise(self, rng):
        T = rng.standard_normal((6, 7, 8))
        init = slicewise_svd_init(T, 2)
        reg = Regularization.default(2)
        f1, _ = bmd_als(T, init, SolveOptions(max_sweeps=5, regularization=reg, workers=1))
        f4, _ = bmd_als(T, init, SolveOptions(max_sweeps=5, regularization=reg, workers=4))
        for a, b in zip((f1.A, f1.B, f1.C), (f4.A, f4.B, f4.C)):
            assert np.array_equal(a, b)

    def test_background_concentrates_in_light_slice(self):
        from bmdkit.generative_model import two_object_scenario

        v = two_object_scenario(m=30, n=30, p=15, seed=2)
        reg = Regularization([0.01, 1.0], 1.0, 1.0)
        f, _ = bmd_als(v.X, slicewise_svd_init(v.X, 2), SolveOptions(regularization=reg))
        assert np.linalg.norm(f.A[:, 0, :]) > 10 * np.linalg.norm(f.A[:, 1, :])


class TestSeparate:
    def test_additivity(self, rng):
        f = BmdFactors(*random_factors(rng, 4, 5, 6, 3))
        bg, fg = separate(f)
        assert np.max(np.abs(bg + fg - bmp(f))) <= 1e-13 * np.max(np.abs(bmp(f)))

    def test_rank_one(self, rng):
        f = BmdFactors(*random_factors(rng, 4, 5, 6, 1))
        bg, fg = separate(f)
        assert np.all(fg == 0)
        assert np.array_equal(bg, bmp(f))

    def test_custom_terms(self, rng):
        f = BmdFactors(*random_factors(rng, 4, 5, 6, 3))
        bg, fg = separate(f, (0, 2))
        assert np.allclose(fg, bmp(f.A[:, 1:2], f.B[:, :, 1:2], f.C[1:2]), atol=1e-13)
        with pytest.raises(ParameterError):
            separate(f, (3,))


class TestJacobian:
    def test_central_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(20):
            m, p, n, ell = (int(v) for v in rng.integers(2, 4, size=4))
            A, B, C = random_factors(rng, m, p, n, ell)
            T = rng.standard_normal((m, p, n))
            J = residual_jacobian(BmdFactors(A, B, C))
            theta = np.concatenate([A.ravel("F"), B.ravel("F"), C.ravel("F")])
            sizes = (A.size, B.size, C.size)

            def r_of(th):
                a, b, c = np.split(th, np.cumsum(sizes)[:2])
                return residual(T, BmdFactors(a.reshape(A.shape, order="F"),
                                              b.reshape(B.shape, order="F"),
                                              c.reshape(C.shape, order="F")))

            fd = np.empty_like(J)
            for q in range(theta.size):
                e = np.zeros_like(theta)
                e[q] = h
                fd[:, q] = (r_of(theta + e) - r_of(theta - e)) / (2 * h)
            assert np.linalg.norm(J - fd) <= 1e-5 * np.linalg.norm(J)

    def test_entry_rule(self, rng):
        A, B, C = random_factors(rng, 2, 3, 2, 2)
        J = residual_jacobian(BmdFactors(A, B, C))
        # row (i,j,k) = (1,2,0); column of A[1,1,0] in first-index-fastest order
        row = 1 + 2 * 2
        assert J[row, 1 + 2 * 1] == pytest.approx(-B[1, 2, 1] * C[1, 2, 0])
