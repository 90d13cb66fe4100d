"""Pseudo-spectral solver on the circle for the 1D two-component systems.

Three right-hand sides share the momentum/continuity structure

    m_t + u m_x + 2 m u_x = -rho * d_x(B rho)
    rho_t + (rho u)_x = 0,       u = K_g m,  K_g = (1 - a d_x^2)^(-1)

with B = identity (``l2``), B = L_H (``generalized``) or B = K_H
(``smooth``), where L_H = (1 - b d_x^2) and K_H its inverse.  Products are
computed in physical space with 2/3-rule dealiasing.  The companion-form
quadratic eigenproblem

    psi_xx + (-1/4 + m*lambda + rho^2*lambda^2) psi = 0

supplies the isospectrality diagnostic for the ``l2`` variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .kernels import PeriodicOperator, apply_K, apply_L
from .landmark import BlowUpError

VARIANTS = ("l2", "generalized", "smooth")


def grid_points(m: int) -> np.ndarray:
    return np.arange(m) / m


def gaussian_bump(grid: np.ndarray, center: float, width: float, mass: float = 1.0) -> np.ndarray:
    """Periodically wrapped gaussian bump with the given total integral."""
    x = grid[None, :] - center + np.arange(-3, 4)[:, None]
    return mass * np.exp(-0.5 * (x / width) ** 2).sum(0) / (width * np.sqrt(2 * np.pi))


@dataclass
class OneDState:
    m: np.ndarray
    rho: np.ndarray
    variant: str = "l2"
    alpha: float = 1.0  # K_g = (1 - alpha d_x^2)^(-1)
    beta: float = 1.0   # L_H = (1 - beta d_x^2) for the variant systems

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        if self.m.shape != self.rho.shape or self.m.ndim != 1:
            raise ValueError("m and rho must be 1D arrays of equal length")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def size(self) -> int:
        return self.m.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return grid_points(self.size)

    def helmholtz(self) -> PeriodicOperator:
        return PeriodicOperator((self.size,), 1.0 / self.size, order=1,
                                alpha=self.alpha, mode="apply_L")

    def kernel_h(self) -> PeriodicOperator:
        return PeriodicOperator((self.size,), 1.0 / self.size, order=1,
                                alpha=self.beta, mode="apply_L")

    def velocity(self) -> np.ndarray:
        return apply_K(self.helmholtz(), self.m)


def _wavenumbers(m: int) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(m, d=1.0 / m)


def spectral_dx(f: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft(1j * _wavenumbers(f.shape[0]) * np.fft.fft(f)))


def dealias(f: np.ndarray) -> np.ndarray:
    """Zero the top third of Fourier modes (2/3 rule)."""
    m = f.shape[0]
    fh = np.fft.fft(f)
    k = np.abs(np.fft.fftfreq(m, d=1.0 / m))
    fh[k > m // 3] = 0.0
    return np.real(np.fft.ifft(fh))


def rhs_1d(state: OneDState):
    """Right-hand sides (mdot, rhodot) with spectral derivatives."""
    u = state.velocity()
    ux = spectral_dx(u)
    mx = spectral_dx(state.m)
    if state.variant == "l2":
        b_rho = state.rho
    elif state.variant == "generalized":
        b_rho = apply_L(state.kernel_h(), state.rho)
    else:
        b_rho = apply_K(state.kernel_h(), state.rho)
    mdot = -u * mx - 2.0 * state.m * ux - state.rho * spectral_dx(b_rho)
    rhodot = -spectral_dx(state.rho * u)
    return dealias(mdot), dealias(rhodot)


def energy_1d(state: OneDState) -> float:
    """Conserved h = <u, m> + <rho, B rho> for the variant's B."""
    u = state.velocity()
    if state.variant == "l2":
        b_rho = state.rho
    elif state.variant == "generalized":
        b_rho = apply_L(state.kernel_h(), state.rho)
    else:
        b_rho = apply_K(state.kernel_h(), state.rho)
    return float(np.mean(u * state.m) + np.mean(state.rho * b_rho))


@dataclass
class OneDTrajectory:
    times: np.ndarray
    states: list
    mass_rho: np.ndarray
    mass_m: np.ndarray
    energy: np.ndarray

    def energy_drift(self) -> float:
        h0 = self.energy[0]
        scale = abs(h0) if h0 != 0.0 else 1.0
        return float(np.abs(self.energy - h0).max() / scale)

    def mass_drift(self) -> float:
        return float(np.abs(self.mass_rho - self.mass_rho[0]).max())


def integrate_1d(state0: OneDState, horizon: float, dt: float,
                 snapshot_stride: int = 1) -> OneDTrajectory:
    """RK4 time stepping with per-step conserved-quantity records."""
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    n_steps = int(round(horizon / dt))
    state = replace(state0, m=dealias(state0.m), rho=dealias(state0.rho))
    times = [0.0]
    states = [state]
    mass_rho = [float(np.mean(state.rho))]
    mass_m = [float(np.mean(state.m))]
    energies = [energy_1d(state)]
    for i in range(n_steps):
        m, r = state.m, state.rho

        def f(mm, rr):
            return rhs_1d(replace(state, m=mm, rho=rr))

        k1m, k1r = f(m, r)
        k2m, k2r = f(m + 0.5 * dt * k1m, r + 0.5 * dt * k1r)
        k3m, k3r = f(m + 0.5 * dt * k2m, r + 0.5 * dt * k2r)
        k4m, k4r = f(m + dt * k3m, r + dt * k3r)
        state = replace(state,
                        m=m + dt / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m),
                        rho=r + dt / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r))
        t = (i + 1) * dt
        if not (np.all(np.isfinite(state.m)) and np.all(np.isfinite(state.rho))):
            raise BlowUpError(t)
        if (i + 1) % snapshot_stride == 0 or i == n_steps - 1:
            times.append(t)
            states.append(state)
            mass_rho.append(float(np.mean(state.rho)))
            mass_m.append(float(np.mean(state.m)))
            energies.append(energy_1d(state))
    return OneDTrajectory(np.array(times), states, np.array(mass_rho),
                          np.array(mass_m), np.array(energies))


# ---------------------------------------------------------------------------
# Lax-pair spectrum
# ---------------------------------------------------------------------------


def fourier_d2_matrix(m: int) -> np.ndarray:
    """Dense second-derivative matrix of the length-1 Fourier interpolant."""
    k2 = _wavenumbers(m) ** 2
    return np.real(np.fft.ifft(-k2[:, None] * np.fft.fft(np.eye(m), axis=0), axis=0))


def lax_spectrum(state: OneDState, count: int = 6) -> np.ndarray:
    """Smallest-|lambda| eigenvalues of the quadratic spectral pencil.

    Solves (A + lambda*B + lambda^2*C) psi = 0 with A = D2 - 1/4,
    B = diag(m), C = diag(rho^2) via the doubled linearization
    [[0, I], [-A, -B]] z = lambda [[I, 0], [0, C]] z.  Falls back to the
    linear pencil when rho vanishes identically.
    """
    if state.variant != "l2":
        raise ValueError("the Lax pair is stated for the l2 variant only")
    n = state.size
    a = fourier_d2_matrix(n) - 0.25 * np.eye(n)
    b = np.diag(state.m)
    if np.max(np.abs(state.rho)) == 0.0:
        lam = scipy.linalg.eig(a, -b, right=False)
    else:
        c = np.diag(state.rho**2)
        lhs = np.block([[np.zeros((n, n)), np.eye(n)], [-a, -b]])
        rhs = np.block([[np.eye(n), np.zeros((n, n))], [np.zeros((n, n)), c]])
        lam = scipy.linalg.eig(lhs, rhs, right=False)
    lam = lam[np.isfinite(lam)]
    lam = lam[np.argsort(np.abs(lam))]
    if len(lam) < count:
        raise RuntimeError("eigen-solver returned fewer finite eigenvalues than requested")
    return lam[:count]


def track_spectrum(reference: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Match each reference eigenvalue to its nearest candidate."""
    out = np.empty(reference.shape, dtype=complex)
    pool = list(candidates)
    for i, lam in enumerate(reference):
        j = int(np.argmin(np.abs(np.array(pool) - lam)))
        out[i] = pool.pop(j)
    return out
