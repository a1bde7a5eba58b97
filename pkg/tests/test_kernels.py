import numpy as np
from scipy.integrate import trapezoid
import pytest
from hypothesis import given, settings, strategies as st

from hyperkl.exceptions import ConfigurationError, InvalidHyperParameterError
from hyperkl.kernels import (
    CompositeKernel,
    Grid1D,
    HyperParams,
    MixturePrior,
    PointMassPrior,
    SquaredExponential,
    UniformLengthPrior,
    assemble_cov_matrix,
    average_kernel,
    eval_kernel,
)

SE = SquaredExponential()

positive = st.floats(0.05, 2.0)
unit = st.floats(0.0, 1.0)


def test_zero_lag_is_variance():
    q = HyperParams(0.37, 0.8)
    assert eval_kernel(SE, 0.3, 0.3, q) == pytest.approx(0.8, abs=0)


def test_hand_value():
    assert eval_kernel(SE, 0.75, 0.25, HyperParams(0.5, 0.5)) == pytest.approx(0.5 * np.exp(-0.5), rel=1e-14)
    assert 0.5 * np.exp(-0.5) == pytest.approx(0.303265, abs=1e-6)


def test_gaussian_tail():
    q = HyperParams(0.05, 2.0)
    assert eval_kernel(SE, 0.0, 0.5, q) < 1e-20 * q.sigma_f2


def test_bias_only_composite_is_constant(rng):
    k = CompositeKernel(sigma_b2=0.2, use_se=False)
    x, xp = rng.uniform(size=(2, 50))
    np.testing.assert_allclose(eval_kernel(k, x, xp, HyperParams(0.3, 1.0)), 0.2)


@pytest.mark.parametrize("l, s2", [(0.0, 1.0), (-0.1, 1.0), (0.3, 0.0), (0.3, -2.0), (np.nan, 1.0)])
def test_invalid_hyperparameters(l, s2):
    with pytest.raises(InvalidHyperParameterError):
        HyperParams(l, s2)


def test_kernel_requires_hyperparameters():
    with pytest.raises(InvalidHyperParameterError):
        eval_kernel(SE, 0.1, 0.2, None)


def test_grid_partition():
    g = Grid1D(37)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert g.edges[0] == 0.0 and g.edges[-1] == 1.0
    np.testing.assert_allclose(np.diff(g.edges), g.weights)


def test_constant_kernel_matrix_rank_one():
    g = Grid1D(16)
    C = assemble_cov_matrix(CompositeKernel(sigma_b2=0.7, use_se=False), g, HyperParams(1, 1)).matrix
    np.testing.assert_allclose(C, 0.7)
    assert np.linalg.matrix_rank(C) == 1


def test_two_cell_assembly():
    C = assemble_cov_matrix(SE, Grid1D(2), HyperParams(0.5, 0.5)).matrix
    expected = np.array([[0.5, 0.5 * np.exp(-0.5)], [0.5 * np.exp(-0.5), 0.5]])
    np.testing.assert_allclose(C, expected, rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(unit, unit, positive, positive)
def test_symmetry(x, xp, l, s2):
    q = HyperParams(l, s2)
    assert eval_kernel(SE, x, xp, q) == eval_kernel(SE, xp, x, q)


@pytest.mark.parametrize("n", [8, 32, 128])
@pytest.mark.parametrize("l", [0.1, 0.5, 1.0])
def test_assembled_matrix_psd(n, l):
    C = assemble_cov_matrix(SE, Grid1D(n), HyperParams(l, 0.5)).matrix
    np.testing.assert_array_equal(C, C.T)
    lam = np.linalg.eigvalsh(C)
    assert lam.min() >= -1e-10 * lam.max()


def test_point_mass_average_is_member():
    g = Grid1D(32)
    q = HyperParams(0.3, 0.7)
    avg = average_kernel(SE, PointMassPrior(q), g)
    np.testing.assert_allclose(avg.matrix, assemble_cov_matrix(SE, g, q).matrix, rtol=1e-15)


def test_average_diagonal_is_mean_variance():
    g = Grid1D(64)
    avg = average_kernel(SE, UniformLengthPrior(0.1, 1.0, 0.5), g)
    np.testing.assert_allclose(np.diag(avg.matrix), 0.5, rtol=1e-13)


def test_average_against_trapezoid_oracle():
    # C-bar(0, 1) by a 10^4-node trapezoid rule over l
    ls = np.linspace(0.1, 1.0, 10_000)
    oracle = trapezoid(0.5 * np.exp(-0.5 / ls**2), ls) / 0.9
    avg = average_kernel(SE, UniformLengthPrior(), Grid1D(8))
    assert avg(0.0, 1.0) == pytest.approx(oracle, abs=1e-6)


def test_mixture_average_is_weighted_sum():
    g = Grid1D(24)
    a, b = HyperParams(0.2, 0.4), HyperParams(0.8, 1.1)
    mix = MixturePrior([(0.25, PointMassPrior(a)), (0.75, PointMassPrior(b))])
    avg = average_kernel(SE, mix, g)
    expected = 0.25 * assemble_cov_matrix(SE, g, a).matrix + 0.75 * assemble_cov_matrix(SE, g, b).matrix
    np.testing.assert_allclose(avg.matrix, expected, rtol=1e-14)


def test_average_is_psd_and_not_gaussian():
    g = Grid1D(128)
    avg = average_kernel(SE, UniformLengthPrior(), g)
    lam = np.linalg.eigvalsh(avg.matrix)
    assert lam.min() >= -1e-10 * lam.max()
    d = np.linspace(0, 1, 201)
    rho = avg(np.zeros_like(d), d) / avg(0.0, 0.0)
    for l in np.linspace(0.1, 1.0, 91):
        assert np.max(np.abs(rho - np.exp(-0.5 * (d / l) ** 2))) > 1e-3


def test_empty_quadrature_rejected():
    with pytest.raises(ConfigurationError):
        average_kernel(SE, UniformLengthPrior(), Grid1D(4), n_nodes=0)
    with pytest.raises(ConfigurationError):
        average_kernel(SE, MixturePrior([]), Grid1D(4))
