"""Landmark metamorphosis.

State is Q landmarks with positions q and momenta p evolving under

    qdot_k = sum_l K(q_k, q_l) p_l + sigma2 * p_k
    pdot_k = -sum_l grad_1 K(q_k, q_l) (p_k . p_l)

which reduces to the EPDiff peakon ODEs at sigma2 = 0.  The boundary
value problem is solved by shooting over p(0); a direct
path-discretization minimizer is kept as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares, minimize

from .kernels import KernelSpec, kernel_grad1_matrix, kernel_matrix


class BlowUpError(RuntimeError):
    def __init__(self, time: float):
        self.time = time
        super().__init__(f"non-finite state at t={time:.6g}")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


@dataclass
class LandmarkPhase:
    """Positions q (Q, d), momenta p (Q, d), template weight sigma2."""

    q: np.ndarray
    p: np.ndarray
    sigma2: float
    kernel: KernelSpec

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same shape")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")


def energy(phase: LandmarkPhase) -> float:
    """h = sum_kl p_k.K(q_k,q_l) p_l + sigma2 * sum_k |p_k|^2, conserved."""
    k = kernel_matrix(phase.kernel, phase.q)
    return float(np.sum(phase.p * (k @ phase.p)) + phase.sigma2 * np.sum(phase.p**2))


def velocity_field(phase: LandmarkPhase, x) -> np.ndarray:
    """u(x) = sum_l K(x, q_l) p_l evaluated at points x of shape (n, d)."""
    k = kernel_matrix(phase.kernel, np.atleast_2d(x), phase.q)
    return k @ phase.p


def rhs(phase: LandmarkPhase):
    """Phase-space velocity (qdot, pdot)."""
    k = kernel_matrix(phase.kernel, phase.q)
    g1 = kernel_grad1_matrix(phase.kernel, phase.q)
    qdot = k @ phase.p + phase.sigma2 * phase.p
    pp = phase.p @ phase.p.T
    pdot = -(g1 * pp[..., None]).sum(axis=1)
    return qdot, pdot


@dataclass
class LandmarkTrajectory:
    times: np.ndarray
    states: list
    energy_series: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        """(n_times, Q, d) array of landmark positions."""
        return np.array([s.q for s in self.states])

    @property
    def momenta(self) -> np.ndarray:
        return np.array([s.p for s in self.states])

    def energy_drift(self) -> float:
        h0 = self.energy_series[0]
        if h0 == 0.0:
            return float(np.abs(self.energy_series).max())
        return float(np.abs(self.energy_series - h0).max() / abs(h0))


def _rk4_step(phase: LandmarkPhase, dt: float) -> LandmarkPhase:
    def f(q, p):
        return rhs(replace(phase, q=q, p=p))

    q, p = phase.q, phase.p
    k1q, k1p = f(q, p)
    k2q, k2p = f(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p)
    k3q, k3p = f(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p)
    k4q, k4p = f(q + dt * k3q, p + dt * k3p)
    return replace(
        phase,
        q=q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q),
        p=p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p),
    )


def integrate_ivp(phase0: LandmarkPhase, horizon: float, dt: float) -> LandmarkTrajectory:
    """Classical 4th-order fixed-step integration over [0, horizon]."""
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    n_steps = int(round(horizon / dt))
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    states = [phase0]
    energies = [energy(phase0)]
    state = phase0
    for i in range(n_steps):
        state = _rk4_step(state, dt)
        if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.p))):
            raise BlowUpError(times[i + 1])
        states.append(state)
        energies.append(energy(state))
    return LandmarkTrajectory(times, states, np.array(energies))


@dataclass
class ShootOpts:
    tol: float = 1e-8
    max_iter: int = 200
    dt: float = 1e-2


def shoot_bvp(q0, q1, sigma2: float, kernel: KernelSpec, opts: ShootOpts | None = None) -> LandmarkPhase:
    """Find p(0) whose geodesic reaches q1 at t=1 (endpoint shooting)."""
    opts = opts or ShootOpts()
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    q1 = np.atleast_2d(np.asarray(q1, dtype=float))
    if q0.shape != q1.shape:
        raise ValueError("q0 and q1 must have the same shape")
    qq, d = q0.shape

    def endpoint(p0_flat):
        phase = LandmarkPhase(q0, p0_flat.reshape(qq, d), sigma2, kernel)
        traj = integrate_ivp(phase, 1.0, opts.dt)
        return (traj.states[-1].q - q1).ravel()

    # init: invert the t=0 metric against the straight-line displacement
    k0 = kernel_matrix(kernel, q0) + sigma2 * np.eye(qq)
    p_init = np.linalg.solve(k0, q1 - q0)
    sol = least_squares(
        endpoint,
        p_init.ravel(),
        method="lm",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=opts.max_iter * (qq * d + 1),
    )
    res = float(np.linalg.norm(sol.fun))
    if res > opts.tol * (1.0 + float(np.linalg.norm(q1 - q0))):
        raise ConvergenceError("shooting did not reach the target", res)
    return LandmarkPhase(q0, sol.x.reshape(qq, d), sigma2, kernel)


# ---------------------------------------------------------------------------
# direct path-optimization oracle
#
# Eliminating (u, nu) at fixed (q, qdot) gives the reduced kinetic energy
# qdot^T (G(q) + sigma2 I)^{-1} qdot with G the vector Gram matrix, so the
# BVP is a plain Riemannian path optimization over the interior knots.
# ---------------------------------------------------------------------------


def path_energy(qs: np.ndarray, sigma2: float, kernel: KernelSpec):
    """Discrete path energy and its gradient w.r.t. all knots.

    qs has shape (T+1, Q, d); segments use the midpoint Gram matrix.
    """
    qs = np.asarray(qs, dtype=float)
    nt = qs.shape[0] - 1
    qq, d = qs.shape[1], qs.shape[2]
    dt = 1.0 / nt
    total = 0.0
    grad = np.zeros_like(qs)
    for t in range(nt):
        mid = 0.5 * (qs[t] + qs[t + 1])
        v = (qs[t + 1] - qs[t]) / dt
        m = np.kron(kernel_matrix(kernel, mid), np.eye(d)) + sigma2 * np.eye(qq * d)
        w = np.linalg.solve(m, v.ravel()).reshape(qq, d)
        total += dt * float(np.sum(v * w))
        grad[t + 1] += 2.0 * w
        grad[t] -= 2.0 * w
        # dE/dM = -dt w w^T, chained through the midpoint kernel entries
        g1 = kernel_grad1_matrix(kernel, mid)  # (Q, Q, d)
        ww = w @ w.T
        dmid = -dt * 2.0 * (g1 * ww[..., None]).sum(axis=1)
        grad[t] += 0.5 * dmid
        grad[t + 1] += 0.5 * dmid
    return total, grad


def optimize_path(q0, q1, sigma2: float, kernel: KernelSpec, n_steps: int = 32,
                  tol: float = 1e-10, max_iter: int = 2000):
    """Minimize the discrete path energy over interior knots (the oracle).

    Returns (optimal knots, energy).
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    q1 = np.atleast_2d(np.asarray(q1, dtype=float))
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    qs0 = (1 - ts)[:, None, None] * q0 + ts[:, None, None] * q1
    shape = qs0.shape

    def pack(interior):
        qs = qs0.copy()
        qs[1:-1] = interior.reshape(shape[0] - 2, shape[1], shape[2])
        return qs

    def fun(x):
        e, g = path_energy(pack(x), sigma2, kernel)
        return e, g[1:-1].ravel()

    res = minimize(fun, qs0[1:-1].ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
    qs = pack(res.x)
    e, _ = path_energy(qs, sigma2, kernel)
    return qs, e


# ---------------------------------------------------------------------------
# peakon collision experiments
# ---------------------------------------------------------------------------


@dataclass
class CollisionResult:
    times: np.ndarray
    separation: np.ndarray
    crossing: bool
    crossing_time: float | None
    trajectory: LandmarkTrajectory
    kind: str = ""
    sigma2: float = 0.0
    momenta0: tuple = ()


def collision_experiment(kind: str, p_gap: float, sigma2: float, horizon: float,
                         dt: float = 1e-3, kernel: KernelSpec | None = None,
                         base_momentum: float = 0.5) -> CollisionResult:
    """Two-landmark 1D collision runs.

    ``head_on``: q = (-1, +1) with antisymmetric momenta +-p_gap/2.
    ``overtaking``: q = (-1, 0) with co-directed momenta
    (base_momentum + p_gap, base_momentum).
    """
    kernel = kernel or KernelSpec("gaussian", width=1.0, scale=1.0, dim=1)
    if kind == "head_on":
        q0 = np.array([[-1.0], [1.0]])
        p0 = np.array([[0.5 * p_gap], [-0.5 * p_gap]])
    elif kind == "overtaking":
        q0 = np.array([[-1.0], [0.0]])
        p0 = np.array([[base_momentum + p_gap], [base_momentum]])
    else:
        raise ValueError(f"unknown collision kind {kind!r}")
    traj = integrate_ivp(LandmarkPhase(q0, p0, sigma2, kernel), horizon, dt)
    pos = traj.positions
    r = pos[:, 1, 0] - pos[:, 0, 0]
    crossing = False
    t_cross = None
    sign0 = np.sign(r[0])
    for i in range(1, len(r)):
        if np.sign(r[i]) != sign0 and r[i] != 0.0 or r[i] == 0.0:
            crossing = True
            # linear interpolation between steps for the crossing time
            r0, r1 = r[i - 1], r[i]
            frac = r0 / (r0 - r1) if r0 != r1 else 0.0
            t_cross = float(traj.times[i - 1] + frac * (traj.times[i] - traj.times[i - 1]))
            break
    return CollisionResult(traj.times, r, crossing, t_cross, traj,
                           kind=kind, sigma2=sigma2,
                           momenta0=(float(p0[0, 0]), float(p0[1, 0])))
