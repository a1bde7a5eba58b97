import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hyperkl.exceptions import DimensionError, SingularCovarianceError
from hyperkl.kernels import Grid1D, HyperParams, SquaredExponential, assemble_cov_matrix
from hyperkl.kl import decompose, orient, reconstruct
from hyperkl.transform import (
    CoordinateTransform,
    TransformBuilder,
    conditional_logdensity,
    projection_coeffs,
    sigma2,
    stretching,
    xi_transform,
)

SE = SquaredExponential()


def se_ref(n, l, K, s2=0.5):
    g = Grid1D(n)
    return decompose(assemble_cov_matrix(SE, g, HyperParams(l, s2)), K)


def test_same_basis_gives_diagonal_B_and_identity_Bhat():
    ref = se_ref(64, 0.5, 8)
    t = projection_coeffs(ref, ref)
    np.testing.assert_allclose(t.B, np.diag(np.sqrt(ref.eigvals)), atol=1e-12)
    np.testing.assert_allclose(t.Bhat, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(sigma2(t), np.diag(ref.eigvals), atol=1e-12)
    assert stretching(t).beta_max == pytest.approx(1.0, abs=1e-10)
    eta = np.arange(8.0)
    np.testing.assert_allclose(xi_transform(eta, t), eta, atol=1e-10)


def test_orthogonal_reference_gives_zero_B():
    g = Grid1D(4)
    ref = decompose(assemble_cov_matrix(SE, g, HyperParams(0.3, 1.0)), 2)
    # a basis living in the orthogonal complement of the reference modes
    full = decompose(assemble_cov_matrix(SE, g, HyperParams(0.3, 1.0)), 4)
    other = type(ref)(g, full.eigvals[2:], full.modes[2:], full.full_trace)
    np.testing.assert_allclose(projection_coeffs(other, ref).B, 0.0, atol=1e-12)


def test_B_against_bruteforce_loop(cbar128):
    ref = cbar128
    q = HyperParams(0.3, 0.5)
    b = orient(decompose(assemble_cov_matrix(SE, ref.grid, q), ref.K), ref)
    B = projection_coeffs(b, ref).B
    w = ref.grid.weights
    brute = np.zeros_like(B)
    for j in range(ref.K):
        for i in range(ref.K):
            acc = 0.0
            for c in range(ref.grid.n):
                acc += ref.modes[j, c] * np.sqrt(b.eigvals[i]) * b.modes[i, c] * w[c]
            brute[j, i] = acc
    assert np.max(np.abs(B - brute)) < 1e-12


def test_builder_matches_direct_projection(cbar56):
    tb = TransformBuilder(SE, cbar56)
    for q in [HyperParams(0.15, 0.3), HyperParams(0.7, 2.0)]:
        direct = projection_coeffs(orient(decompose(assemble_cov_matrix(SE, cbar56.grid, q), 6), cbar56), cbar56)
        np.testing.assert_allclose(tb(q).B, direct.B, atol=1e-12)


def test_column_norms_bounded(cbar56):
    tb = TransformBuilder(SE, cbar56)
    for l in np.linspace(0.1, 1.0, 10):
        q = HyperParams(l, 0.8)
        b = tb.basis(q)
        norms = np.linalg.norm(tb(q).B, axis=0)
        assert np.all(norms <= np.sqrt(b.eigvals) + 1e-10)


def test_grid_and_size_mismatch():
    a = se_ref(16, 0.3, 4)
    with pytest.raises(DimensionError):
        projection_coeffs(se_ref(20, 0.3, 4), a)
    with pytest.raises(DimensionError):
        projection_coeffs(se_ref(16, 0.3, 3), a)


def test_sigma2_is_gram(rng):
    B = rng.standard_normal((7, 7))
    t = CoordinateTransform(B, np.linspace(1, 0.1, 7))
    s = sigma2(t)
    np.testing.assert_array_equal(s, s.T)
    assert np.linalg.eigvalsh(s).min() >= -1e-12


def test_sigma2_mc_covariance(cbar56, rng):
    t = TransformBuilder(SE, cbar56)(HyperParams(0.25, 0.6))
    n = 100_000
    eta_hat = rng.standard_normal((n, 6)) @ t.B.T
    emp = np.cov(eta_hat.T)
    S = sigma2(t)
    se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / (n - 1))
    assert np.all(np.abs(emp - S) < 3 * se + 1e-15)


def test_conditional_logdensity_trivial_cases():
    K = 5
    assert conditional_logdensity(np.zeros(K), np.eye(K)) == pytest.approx(-0.5 * K * np.log(2 * np.pi))
    lam = np.array([1.0, 0.5, 0.2, 0.1, 0.05])
    expected = -0.5 * K * np.log(2 * np.pi) - 0.5 * np.log(lam).sum()
    assert conditional_logdensity(np.zeros(K), np.diag(lam)) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_conditional_logdensity_dense_oracle(K, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((K, K))
    S = A @ A.T + 0.1 * np.eye(K)
    x = r.standard_normal(K)
    direct = -0.5 * x @ np.linalg.inv(S) @ x - 0.5 * np.log(np.linalg.det(S)) - 0.5 * K * np.log(2 * np.pi)
    assert conditional_logdensity(x, S) == pytest.approx(direct, abs=1e-10)
    assert conditional_logdensity(x, S) == pytest.approx(stats.multivariate_normal(np.zeros(K), S).logpdf(x), abs=1e-10)


def test_conditional_logdensity_singular():
    with pytest.raises(SingularCovarianceError):
        conditional_logdensity(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularCovarianceError):
        conditional_logdensity(np.zeros(2), np.diag([1.0, 1e-16]))


def test_kappa_boundary():
    lam = np.array([1.0, 0.5, 1e-13])
    t = CoordinateTransform(np.eye(3), lam, kappa=1e-12)
    assert t.K_pc == 2
    np.testing.assert_array_equal(t.Bhat[2], 0.0)
    # lambda_1 / lambda_1 = 1 is not > 1: every row is zeroed
    t1 = t.with_kappa(1.0)
    assert t1.K_pc == 0
    np.testing.assert_array_equal(xi_transform(np.ones(3), t1), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_kappa_monotone(ks):
    lam = np.sort(np.random.default_rng(0).uniform(1e-14, 1.0, 10))[::-1]
    a, b = sorted(ks)
    t = CoordinateTransform(np.eye(10), lam)
    assert t.with_kappa(b).K_pc <= t.with_kappa(a).K_pc


def test_kappa_leaves_sigma2_alone(cbar56):
    t = TransformBuilder(SE, cbar56)(HyperParams(0.2, 0.5))
    np.testing.assert_array_equal(sigma2(t), sigma2(t.with_kappa(0.5)))
    assert not np.array_equal(t.Bhat, t.with_kappa(0.5).Bhat)


def test_stretching_simple():
    lam = np.ones(4)
    assert stretching(CoordinateTransform(np.eye(4), lam)).beta_max == pytest.approx(1.0)
    assert stretching(CoordinateTransform(2 * np.eye(4), lam)).beta_max == pytest.approx(4.0)
    r = stretching(CoordinateTransform(np.diag([3.0, 1.0]), np.ones(2)))
    assert r.stretch == pytest.approx(3.0)


def test_projection_optimality_gram_schmidt(cbar56, rng):
    """M_K - M_hat_K is the residual of projecting M_K on span{phi^r}."""
    ref = cbar56
    q = HyperParams(0.2, 0.7)
    b = orient(decompose(assemble_cov_matrix(SE, ref.grid, q), 6), ref)
    t = projection_coeffs(b, ref)
    w = ref.grid.weights
    # independent orthonormalization of the reference span by modified Gram-Schmidt
    Q = []
    for v in ref.modes[::-1]:
        v = v.copy()
        for u in Q:
            v -= np.sum(v * u * w) * u
        Q.append(v / np.sqrt(np.sum(v * v * w)))
    for _ in range(5):
        eta = rng.standard_normal(6)
        m = reconstruct(b, eta)
        resid = m.copy()
        for u in Q:
            resid -= np.sum(m * u * w) * u
        m_hat = (t.B @ eta) @ ref.modes
        d1 = np.sqrt(np.sum((m - m_hat) ** 2 * w))
        d2 = np.sqrt(np.sum(resid**2 * w))
        assert d1 == pytest.approx(d2, abs=1e-10)


def test_averaged_reference_marginal_is_white(cbar56):
    """Averaging over q in the prior leaves xi standard normal and uncorrelated."""
    rng = np.random.default_rng(7)
    tb = TransformBuilder(SE, cbar56, memo_size=0)
    n_q, per_q = 4000, 25
    ls = rng.uniform(0.1, 1.0, n_q)
    s2 = stats.invgamma(3.0, scale=1.0).rvs(n_q, random_state=rng)
    xi = np.empty((n_q, per_q, 6))
    for a in range(n_q):
        xi[a] = xi_transform(rng.standard_normal((per_q, 6)), tb(HyperParams(ls[a], s2[a])))
    prods = np.einsum("abi,abj->aij", xi, xi) / per_q
    mean = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n_q)
    # truncating C(q) to six modes biases the trailing diagonal by about 4e-3
    # (checked by Gauss-Legendre quadrature in l), hence the small allowance
    assert np.all(np.abs(mean - np.eye(6)) < 3 * se + 5e-3)


def test_stretching_fixed_reference_small_l():
    ref = se_ref(128, 0.1, 15)
    tb = TransformBuilder(SE, ref, kappa=1e-12)
    worst = max(stretching(tb(HyperParams(l, 0.5))).stretch for l in np.linspace(0.1, 1.0, 19))
    assert worst < 3.0
