import numpy as np
import pytest

from metamorph.kernels import (
    ConditioningError,
    GramSystem,
    KernelSpec,
    PeriodicOperator,
    apply_K,
    apply_L,
    gram_solve,
    kernel_eval,
    kernel_grad1_matrix,
    kernel_matrix,
    periodic_apply,
)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(family="cauchy")
    with pytest.raises(ValueError):
        KernelSpec(width=-1.0)
    with pytest.raises(ValueError):
        KernelSpec(dim=3)


def test_gaussian_values_and_symmetry():
    spec = KernelSpec(family="gaussian", width=0.7, scale=2.0, dim=2)
    x = np.array([0.3, -0.2])
    y = np.array([-0.1, 0.5])
    assert kernel_eval(spec, x, x) == pytest.approx(2.0)
    assert kernel_eval(spec, x, y) == pytest.approx(kernel_eval(spec, y, x))


def test_gaussian_derivatives_match_finite_differences():
    spec = KernelSpec(family="gaussian", width=0.7, scale=1.3, dim=2)
    x = np.array([0.3, -0.2])
    y = np.array([-0.1, 0.5])
    h = 1e-6
    g = kernel_eval(spec, x, y, deriv=1)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (kernel_eval(spec, x, y + e) - kernel_eval(spec, x, y - e)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-6)
    hess = kernel_eval(spec, x, y, deriv=2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (kernel_eval(spec, x + e, y, deriv=1)
              - kernel_eval(spec, x - e, y, deriv=1)) / (2 * h)
        np.testing.assert_allclose(hess[i], fd, rtol=1e-5)


def test_helmholtz_green_derivative_rejected():
    spec = KernelSpec(family="helmholtz-green", width=1.0)
    assert kernel_eval(spec, [0.0], [0.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.0], [1.0], deriv=1)


@pytest.mark.parametrize("family", ["gaussian", "helmholtz-green"])
def test_kernel_matrix_positive_semidefinite(family):
    rng = np.random.default_rng(3)
    pts = rng.standard_normal((12, 1))
    spec = KernelSpec(family=family, width=0.8, dim=1)
    k = kernel_matrix(spec, pts)
    np.testing.assert_allclose(k, k.T)
    assert np.linalg.eigvalsh(k).min() > -1e-10


def test_kernel_grad1_matrix_consistent_with_eval():
    spec = KernelSpec(family="gaussian", width=0.9, dim=2)
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((4, 2))
    g = kernel_grad1_matrix(spec, xs)
    # stationary kernel: grad_1 k = -grad_2 k
    expected = -kernel_eval(spec, xs[1], xs[2], deriv=1)
    np.testing.assert_allclose(g[1, 2], expected)


def test_gram_solve_interpolates():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((6, 2))
    sys_ = GramSystem(KernelSpec(family="gaussian", width=1.0, dim=2), pts,
                      vector=True)
    rhs = rng.standard_normal(12)
    c = gram_solve(sys_, rhs)
    np.testing.assert_allclose(sys_.gram @ c, rhs, atol=1e-6)


def test_gram_solve_raises_on_duplicate_points():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    sys_ = GramSystem(KernelSpec(family="gaussian", width=1.0, dim=2), pts,
                      ridge=0.0)
    with pytest.raises(ConditioningError):
        gram_solve(sys_, np.ones(6))


def test_periodic_operator_roundtrip_and_dc_gain():
    op = PeriodicOperator(grid_shape=(32,), spacing=1.0 / 32, order=2,
                          alpha=0.5)
    rng = np.random.default_rng(5)
    f = rng.standard_normal(32)
    np.testing.assert_allclose(apply_K(op, apply_L(op, f)), f, atol=1e-12)
    # constants are fixed points (symbol is 1 at zero frequency)
    ones = np.ones(32)
    np.testing.assert_allclose(apply_L(op, ones), ones, atol=1e-14)


def test_periodic_operator_mode_and_shape_check():
    op = PeriodicOperator(grid_shape=(16,), spacing=1.0 / 16, mode="apply_L")
    f = np.ones(16)
    np.testing.assert_allclose(periodic_apply(op, f), apply_L(op, f))
    with pytest.raises(ValueError):
        apply_L(op, np.ones(17))
    with pytest.raises(ValueError):
        PeriodicOperator(grid_shape=(16,), spacing=1.0 / 16, mode="inverse")
