import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satelm.numerics import (
    SingularSystemError,
    WidelyLinearWeights,
    augmented_pinv_solve,
    compute_stats,
    predict,
    pseudo_inverse,
    wlls_solve,
)

from conftest import improper_matrix, real_stacked_lstsq

H_EX = np.array([[1.0], [1j]])
X_EX = np.array([1.0, -1.0], dtype=complex)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestComputeStats:
    def test_worked_example(self):
        st_ = compute_stats(H_EX, X_EX)
        np.testing.assert_allclose(st_.C, [[2]])
        np.testing.assert_allclose(st_.P, [[0]], atol=1e-15)
        np.testing.assert_allclose(st_.r, [1 + 1j])
        np.testing.assert_allclose(st_.s, [1 - 1j])
        assert st_.n_samples == 2

    def test_real_inputs(self, rng):
        H = rng.standard_normal((20, 4))
        x = rng.standard_normal(20)
        st_ = compute_stats(H, x)
        np.testing.assert_allclose(st_.P, st_.C)
        np.testing.assert_allclose(st_.s, st_.r)

    def test_zero_target(self, rng):
        H = improper_matrix(rng, 10, 3)
        a = compute_stats(H, np.zeros(10))
        b = compute_stats(H, rng.standard_normal(10))
        assert not a.r.any() and not a.s.any()
        np.testing.assert_array_equal(a.C, b.C)
        np.testing.assert_array_equal(a.P, b.P)

    def test_structure(self, rng):
        st_ = compute_stats(improper_matrix(rng, 50, 5), rng.standard_normal(50) + 0j)
        np.testing.assert_array_equal(st_.C, st_.C.conj().T)
        np.testing.assert_array_equal(st_.P, st_.P.T)
        assert np.min(np.linalg.eigvalsh(st_.C)) > -1e-10

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_stats(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ValueError):
            compute_stats(np.array([[np.nan]]), np.ones(1))


class TestWllsSolve:
    def test_worked_example(self):
        w = wlls_solve(compute_stats(H_EX, X_EX))
        np.testing.assert_allclose(w.beta, [(1 + 1j) / 2], atol=1e-14)
        np.testing.assert_allclose(w.alpha, [(1 - 1j) / 2], atol=1e-14)
        np.testing.assert_allclose(predict(H_EX, w), X_EX, atol=1e-14)

    def test_worked_example_matches_oracle(self):
        b, a = real_stacked_lstsq(H_EX, X_EX)
        np.testing.assert_allclose(b, [(1 + 1j) / 2], atol=1e-12)
        np.testing.assert_allclose(a, [(1 - 1j) / 2], atol=1e-12)

    def test_proper_data_decouples(self, rng):
        H = improper_matrix(rng, 40, 3)
        st_ = compute_stats(H, rng.standard_normal(40) + 1j * rng.standard_normal(40))
        proper = type(st_)(C=st_.C, P=np.zeros_like(st_.P), r=st_.r, s=np.zeros_like(st_.s), n_samples=40)
        w = wlls_solve(proper)
        assert not w.alpha.any()
        np.testing.assert_allclose(w.beta, np.linalg.solve(st_.C, st_.r), rtol=1e-10)

    def test_large_ridge_shrinks(self, rng):
        H = improper_matrix(rng, 40, 4)
        st_ = compute_stats(H, rng.standard_normal(40) + 0j)
        big = 1e12 * np.real(np.trace(st_.C)) / 4
        w = wlls_solve(st_, ridge=big)
        w0 = wlls_solve(st_)
        assert np.linalg.norm(w.beta) < 1e-9 * np.linalg.norm(w0.beta)
        assert np.linalg.norm(w.alpha) < 1e-9 * max(np.linalg.norm(w0.alpha), 1.0)

    def test_ridge_normal_equations(self, rng):
        H = improper_matrix(rng, 30, 5)
        x = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        st_ = compute_stats(H, x)
        lam = 0.3
        w = wlls_solve(st_, ridge=lam)
        I = np.eye(5)
        r1 = (st_.C + lam * I) @ w.beta + st_.P.conj() @ w.alpha - st_.r
        r2 = st_.P @ w.beta + (st_.C.conj() + lam * I) @ w.alpha - st_.s
        assert np.linalg.norm(r1) <= 1e-8 * np.linalg.norm(st_.r)
        assert np.linalg.norm(r2) <= 1e-8 * np.linalg.norm(st_.s)

    def test_negative_ridge(self):
        with pytest.raises(ValueError):
            wlls_solve(compute_stats(H_EX, X_EX), ridge=-1.0)

    def test_singular_names_block(self):
        # real H: [H, H*] has duplicate columns, so the Schur complement vanishes
        H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularSystemError) as ei:
            wlls_solve(compute_stats(H, np.ones(3)))
        assert ei.value.block == "schur"

    def test_singular_C(self):
        H = np.zeros((4, 2), dtype=complex)
        with pytest.raises(SingularSystemError) as ei:
            wlls_solve(compute_stats(H, np.ones(4)))
        assert ei.value.block == "C"

    def test_conjugation_symmetry(self, rng):
        H = improper_matrix(rng, 50, 4)
        x = rng.standard_normal(50) + 1j * rng.standard_normal(50)
        w = wlls_solve(compute_stats(H, x))
        wc = wlls_solve(compute_stats(H, x.conj()))
        np.testing.assert_allclose(wc.beta, w.alpha.conj(), rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(wc.alpha, w.beta.conj(), rtol=1e-8, atol=1e-12)


class TestAugmentedPinv:
    def test_worked_example(self):
        w = augmented_pinv_solve(H_EX, X_EX)
        np.testing.assert_allclose(w.beta, [(1 + 1j) / 2], atol=1e-14)
        np.testing.assert_allclose(w.alpha, [(1 - 1j) / 2], atol=1e-14)

    def test_zero_target(self, rng):
        w = augmented_pinv_solve(improper_matrix(rng, 10, 3), np.zeros(10))
        assert not w.beta.any() and not w.alpha.any()

    def test_duplicate_columns_minimum_norm(self, rng):
        h = improper_matrix(rng, 30, 1)[:, 0]
        H = np.column_stack([h, h])
        x = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        w = augmented_pinv_solve(H, x)
        np.testing.assert_allclose(w.beta[0], w.beta[1], rtol=1e-10)
        np.testing.assert_allclose(w.alpha[0], w.alpha[1], rtol=1e-10)
        # any null-space perturbation keeps the residual but grows the norm
        res = np.linalg.norm(x - predict(H, w))
        for _ in range(20):
            d = complex(*rng.standard_normal(2))
            e = complex(*rng.standard_normal(2))
            w2 = WidelyLinearWeights(w.beta + np.array([d, -d]), w.alpha + np.array([e, -e]))
            assert np.isclose(np.linalg.norm(x - predict(H, w2)), res, rtol=1e-10)
            assert np.linalg.norm(w2.augmented) > np.linalg.norm(w.augmented)

    def test_matches_real_oracle(self, rng):
        H = improper_matrix(rng, 64, 6)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        w = augmented_pinv_solve(H, x)
        b, a = real_stacked_lstsq(H, x)
        assert rel(w.beta, b) < 1e-9 and rel(w.alpha, a) < 1e-9

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            augmented_pinv_solve(np.array([[np.inf]]), np.ones(1))


class TestPseudoInverse:
    def test_identity(self):
        np.testing.assert_allclose(pseudo_inverse(np.eye(4)), np.eye(4))

    def test_singular_diag(self):
        np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))

    def test_full_rank_left_inverse(self, rng):
        M = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
        np.testing.assert_allclose(pseudo_inverse(M) @ M, np.eye(3), atol=1e-8)


@st.composite
def ranked_matrix(draw):
    m = draw(st.integers(1, 9))
    n = draw(st.integers(1, 9))
    k = draw(st.sampled_from(["zero", "one", "full"]))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    g = np.random.default_rng(seed)
    rank = {"zero": 0, "one": 1, "full": min(m, n)}[k]
    A = g.standard_normal((m, rank)) + 1j * g.standard_normal((m, rank))
    B = g.standard_normal((rank, n)) + 1j * g.standard_normal((rank, n))
    return A @ B if rank else np.zeros((m, n), dtype=complex)


def penrose_residuals(M, X):
    scale = max(np.linalg.norm(M), 1.0) * max(np.linalg.norm(X), 1.0)
    return [
        np.linalg.norm(M @ X @ M - M) / scale,
        np.linalg.norm(X @ M @ X - X) / scale,
        np.linalg.norm((M @ X).conj().T - M @ X) / scale,
        np.linalg.norm((X @ M).conj().T - X @ M) / scale,
    ]


@settings(max_examples=150, deadline=None)
@given(ranked_matrix())
def test_penrose_conditions(M):
    assert max(penrose_residuals(M, pseudo_inverse(M))) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_residual_orthogonality(seed, L):
    g = np.random.default_rng(seed)
    N = 2 * L + g.integers(2, 40)
    H = improper_matrix(g, N, L, rho=g.uniform(-0.9, 0.9))
    x = g.standard_normal(N) + 1j * g.standard_normal(N)
    w = wlls_solve(compute_stats(H, x))
    e = x - predict(H, w)
    assert np.linalg.norm(H.conj().T @ e) <= 1e-8 * np.linalg.norm(H.conj().T @ x)
    assert np.linalg.norm(H.T @ e) <= 1e-8 * np.linalg.norm(H.T @ x)


class TestPredict:
    def test_selection(self, rng):
        H = improper_matrix(rng, 7, 3)
        e = np.zeros(3, dtype=complex)
        e[1] = 1
        np.testing.assert_array_equal(predict(H, WidelyLinearWeights(e, np.zeros(3, complex))), H[:, 1])

    def test_real_h(self, rng):
        H = rng.standard_normal((7, 3))
        b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        np.testing.assert_allclose(predict(H, WidelyLinearWeights(b, b)), H @ (2 * b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            predict(np.ones((3, 2)), WidelyLinearWeights(np.ones(3, complex), np.ones(3, complex)))
