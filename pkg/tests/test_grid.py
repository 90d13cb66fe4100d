import numpy as np
import pytest

from metamorph import grid
from metamorph.grid import (
    GridPath,
    GridState,
    MatchOpts,
    check_horizontality,
    check_integrated_momentum,
    default_operator,
    div,
    grad,
    grid_energy,
    match_bvp,
    path_energy,
    path_gradient,
    step_ivp,
)


def smooth_field(npix, seed):
    """Low-frequency positive test image on [0,1)^2."""
    rng = np.random.default_rng(seed)
    xs = np.arange(npix) / npix
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    f = np.full((npix, npix), 1.0)
    for kx in range(-2, 3):
        for ky in range(-2, 3):
            if kx == 0 and ky == 0:
                continue
            c = 0.05 * rng.standard_normal()
            s = 0.05 * rng.standard_normal()
            f += c * np.cos(2 * np.pi * (kx * xx + ky * yy))
            f += s * np.sin(2 * np.pi * (kx * xx + ky * yy))
    return f


def random_path(npix=8, nt=4, mode="image", sigma2=0.1, seed=0):
    rng = np.random.default_rng(seed)
    op = default_operator((npix, npix))
    ns = np.stack([smooth_field(npix, seed + t) for t in range(nt + 1)])
    us = 0.1 * rng.standard_normal((nt, 2, npix, npix))
    return GridPath(ns, us, mode, sigma2, op)


def test_grad_div_adjoint():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((16, 16))
    v = rng.standard_normal((2, 16, 16))
    # <grad f, v> = -<f, div v> for periodic spectral derivatives
    lhs = np.sum(grad(f) * v)
    rhs = -np.sum(f * div(v))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_ivp_constant_image_pure_fade():
    """With n constant in space, grad n = 0: u = 0 and n fades at rate
    sigma2 * z while z is constant."""
    npix = 8
    op = default_operator((npix, npix))
    st = GridState(n=np.full((npix, npix), 0.3),
                   z=np.full((npix, npix), 1.0), mode="image",
                   sigma2=0.5, op=op)
    out = st
    dt = 1e-3
    for _ in range(100):
        out = step_ivp(out, dt)
    np.testing.assert_allclose(out.z, 1.0, atol=1e-12)
    np.testing.assert_allclose(out.n, 0.3 + 0.5 * 1.0 * 0.1, atol=1e-10)


def test_grid_energy_nonnegative():
    rng = np.random.default_rng(1)
    npix = 8
    op = default_operator((npix, npix))
    st = GridState(n=rng.standard_normal((npix, npix)),
                   z=rng.standard_normal((npix, npix)), mode="image",
                   sigma2=0.3, op=op)
    assert grid_energy(st) >= 0.0


@pytest.mark.parametrize("mode", ["image", "density"])
def test_path_gradient_matches_finite_differences(mode):
    path = random_path(mode=mode, seed=3)
    gu, gn = path_gradient(path)
    e0, _ = path_energy(path)
    rng = np.random.default_rng(8)
    h = 1e-6
    for _ in range(10):
        s = rng.integers(1, path.ns.shape[0] - 1)
        i, j = rng.integers(0, path.ns.shape[1], size=2)
        orig = path.ns[s, i, j]
        path.ns[s, i, j] = orig + h
        ep, _ = path_energy(path)
        path.ns[s, i, j] = orig - h
        em, _ = path_energy(path)
        path.ns[s, i, j] = orig
        fd = (ep - em) / (2 * h)
        assert abs(fd - gn[s - 1, i, j]) <= 1e-5 * max(abs(fd), 1e-3)
    for _ in range(10):
        t = rng.integers(0, path.us.shape[0])
        a = rng.integers(0, 2)
        i, j = rng.integers(0, path.ns.shape[1], size=2)
        orig = path.us[t, a, i, j]
        path.us[t, a, i, j] = orig + h
        ep, _ = path_energy(path)
        path.us[t, a, i, j] = orig - h
        em, _ = path_energy(path)
        path.us[t, a, i, j] = orig
        fd = (ep - em) / (2 * h)
        assert abs(fd - gu[t, a, i, j]) <= 1e-5 * max(abs(fd), 1e-3)


@pytest.mark.parametrize("mode", ["image", "density"])
def test_match_constant_fade_energy(mode):
    """Constant endpoints: the optimal path is a pure fade with energy
    (b-a)^2 |Omega| / sigma2."""
    npix = 8
    a, b, sigma2 = 0.2, 0.7, 0.4
    n0 = np.full((npix, npix), a)
    n1 = np.full((npix, npix), b)
    path = match_bvp(n0, n1, mode, sigma2, timesteps=4)
    e, (e_def, e_tem) = path_energy(path)
    assert e == pytest.approx((b - a) ** 2 / sigma2, rel=1e-6)
    assert e_def <= 1e-12


def test_match_monotone_energy_and_convergence():
    n0 = smooth_field(8, 0)
    n1 = smooth_field(8, 1)
    path = match_bvp(n0, n1, "image", 0.2, timesteps=4)
    trace = path.energy_trace
    assert np.all(np.diff(trace) <= 1e-12)
    np.testing.assert_allclose(path.ns[0], n0)
    np.testing.assert_allclose(path.ns[-1], n1)


def test_match_shape_validation():
    with pytest.raises(ValueError):
        match_bvp(np.ones((8, 8)), np.ones((4, 4)), "image", 0.1)
    with pytest.raises(ValueError):
        match_bvp(np.ones((8, 8)), np.ones((8, 8)), "image", 0.1, timesteps=1)


def test_horizontality_small_after_matching():
    # mild contrast so the O(dt^2) knot residual is small at timesteps=8
    n0 = 1.0 + 0.25 * (smooth_field(8, 4) - 1.0)
    n1 = 1.0 + 0.25 * (smooth_field(8, 5) - 1.0)
    path = match_bvp(n0, n1, "image", 0.2, timesteps=8)
    assert check_horizontality(path) <= 0.05


def test_integrated_momentum_finite():
    n0 = smooth_field(8, 4)
    n1 = smooth_field(8, 5)
    path = match_bvp(n0, n1, "image", 0.2, timesteps=4)
    assert np.isfinite(check_integrated_momentum(path))
