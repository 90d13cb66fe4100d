"""Hilbert-space machinery shared by all solvers.

Three pieces live here:

* stationary kernels (gaussian, exponential Green's function) and their
  derivatives up to second order,
* Gram matrices over finite point sets with regularized solves,
* Fourier-multiplier application of the Helmholtz-type operators
  ``L = (1 - a*laplacian)**s`` and their inverses ``K = L**-1`` on
  periodic grids.

All functions are pure; nothing here caches mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class ConditioningError(RuntimeError):
    """Raised when a Gram system is numerically singular."""

    def __init__(self, smallest_pivot: float):
        self.smallest_pivot = smallest_pivot
        super().__init__(
            f"gram system numerically singular (smallest pivot {smallest_pivot:.3e}); "
            "increase the ridge or separate coincident points"
        )


@dataclass(frozen=True)
class KernelSpec:
    """Stationary positive-definite scalar kernel.

    ``gaussian``: k(x, y) = scale * exp(-|x-y|^2 / (2 width^2)), smooth.
    ``helmholtz-green``: k(x, y) = scale * exp(-|x-y| / width), the 1D
    Green's-function (peakon) kernel; only continuous, so derivatives are
    unsupported.
    """

    family: str = "gaussian"
    width: float = 1.0
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.family not in ("gaussian", "helmholtz-green"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.width <= 0 or self.scale <= 0:
            raise ValueError("kernel width and scale must be positive")
        if self.dim not in (1, 2):
            raise ValueError("kernel dim must be 1 or 2")


def kernel_eval(spec: KernelSpec, x, y, deriv: int = 0):
    """Evaluate k(x, y) or its derivatives at a single point pair.

    deriv=0 returns the scalar k; deriv=1 the gradient in the second
    argument, grad_2 k (a d-vector); deriv=2 the mixed second derivative
    grad_1 grad_2 k (a d x d matrix).  For stationary kernels
    grad_2 k = -grad_1 k.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if deriv not in (0, 1, 2):
        raise ValueError(f"unsupported derivative order {deriv}")
    r = x - y
    if spec.family == "gaussian":
        w2 = spec.width**2
        k = spec.scale * np.exp(-0.5 * np.dot(r, r) / w2)
        if deriv == 0:
            return float(k)
        if deriv == 1:
            return k * r / w2
        return k * (np.eye(len(r)) / w2 - np.outer(r, r) / w2**2)
    # helmholtz-green: |.| kernel, C^0 only
    if deriv != 0:
        raise ValueError("helmholtz-green kernel is not differentiable at the diagonal")
    return float(spec.scale * np.exp(-np.linalg.norm(r) / spec.width))


def kernel_matrix(spec: KernelSpec, xs, ys=None) -> np.ndarray:
    """Pairwise kernel values k(xs[i], ys[j]) as an (n, m) array."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.atleast_2d(np.asarray(ys, dtype=float))
    d2 = ((xs[:, None, :] - ys[None, :, :]) ** 2).sum(-1)
    if spec.family == "gaussian":
        return spec.scale * np.exp(-0.5 * d2 / spec.width**2)
    return spec.scale * np.exp(-np.sqrt(d2) / spec.width)


def kernel_grad1_matrix(spec: KernelSpec, xs, ys=None) -> np.ndarray:
    """grad_1 k(xs[i], ys[j]) as an (n, m, d) array (gaussian only)."""
    if spec.family != "gaussian":
        raise ValueError("gradient matrices require a differentiable kernel")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.atleast_2d(np.asarray(ys, dtype=float))
    r = xs[:, None, :] - ys[None, :, :]
    k = spec.scale * np.exp(-0.5 * (r**2).sum(-1) / spec.width**2)
    return -k[..., None] * r / spec.width**2


DEFAULT_RIDGE_FACTOR = 1e-10


@dataclass
class GramSystem:
    """Regularized kernel Gram system over a finite point set.

    With ``vector=True`` points carry d-vector weights and the Gram
    matrix is block diagonal-in-components, kron(K_scalar, I_d).
    """

    spec: KernelSpec
    points: np.ndarray
    ridge: float | None = None
    vector: bool = True
    gram: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.ridge is None:
            self.ridge = DEFAULT_RIDGE_FACTOR * self.spec.scale
        k = kernel_matrix(self.spec, self.points)
        if self.vector:
            d = self.points.shape[1]
            self.gram = np.kron(k, np.eye(d))
        else:
            self.gram = k


def gram_solve(system: GramSystem, rhs) -> np.ndarray:
    """Solve (gram + ridge*I) c = rhs, raising on numerical singularity."""
    rhs = np.asarray(rhs, dtype=float)
    shape = rhs.shape
    a = system.gram + system.ridge * np.eye(system.gram.shape[0])
    try:
        factor = cho_factor(a)
    except np.linalg.LinAlgError:
        raise ConditioningError(float(np.linalg.eigvalsh(a).min())) from None
    # Cholesky can succeed on barely-indefinite rounding noise; reject
    # systems whose smallest pivot is at the noise floor.
    pivots = np.diag(factor[0]) ** 2
    floor = 1e-12 * float(np.diag(a).max())
    if pivots.min() <= floor:
        raise ConditioningError(float(pivots.min()))
    return cho_solve(factor, rhs.ravel()).reshape(shape)


@dataclass(frozen=True)
class PeriodicOperator:
    """Fourier multiplier (1 + a |xi|^2)^s on a periodic grid.

    The grid covers [0, L)^dim with L = shape * spacing per axis;
    wavenumbers are xi = 2*pi*k / L.  ``mode`` selects the default
    direction used by :func:`periodic_apply`: ``apply_L`` multiplies by
    the symbol, ``apply_K`` divides by it.
    """

    grid_shape: tuple
    spacing: float
    order: int = 1
    alpha: float = 1.0
    mode: str = "apply_K"

    def __post_init__(self):
        if self.mode not in ("apply_L", "apply_K"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.order < 1 or self.alpha <= 0 or self.spacing <= 0:
            raise ValueError("order >= 1, alpha > 0, spacing > 0 required")

    def symbol(self) -> np.ndarray:
        shape = tuple(self.grid_shape)
        xi2 = np.zeros(shape)
        for axis, m in enumerate(shape):
            freq = 2.0 * np.pi * np.fft.fftfreq(m, d=self.spacing)
            sl = [None] * len(shape)
            sl[axis] = slice(None)
            xi2 = xi2 + (freq**2)[tuple(sl)]
        return (1.0 + self.alpha * xi2) ** self.order


def _check_shape(op: PeriodicOperator, f: np.ndarray):
    if f.shape != tuple(op.grid_shape):
        raise ValueError(
            f"field shape {f.shape} does not match grid shape {tuple(op.grid_shape)}"
        )


def apply_L(op: PeriodicOperator, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    _check_shape(op, f)
    return np.real(np.fft.ifftn(np.fft.fftn(f) * op.symbol()))


def apply_K(op: PeriodicOperator, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    _check_shape(op, f)
    return np.real(np.fft.ifftn(np.fft.fftn(f) / op.symbol()))


def periodic_apply(op: PeriodicOperator, f: np.ndarray) -> np.ndarray:
    """Apply the operator in its configured direction (L or K)."""
    return apply_L(op, f) if op.mode == "apply_L" else apply_K(op, f)
