"""Image and density metamorphosis on periodic grids.

Evolution systems (z = template momentum / sigma2):

    image:    L u = -z grad(n),  z_t = -div(z u),      n_t = -grad(n).u + sigma2 z
    density:  L u =  n grad(z),  z_t = -grad(z).u,     n_t = -div(n u) + sigma2 z

The boundary value problem discretizes the path energy

    E = sum_t dt [ <u_t, L u_t> + (1/sigma2) ||nu_t||_L2^2 ],
    nu_t = (n_{t+1} - n_t)/dt + transport((n_t + n_{t+1})/2, u_t)

The transport term uses the segment midpoint image, which makes the
discrete energy exactly invariant under time reversal (t -> T-t,
u -> -u), so BVP energies are symmetric in the endpoints.

and minimizes it by block alternating minimization: each u_t solves a
regularized linear system by conjugate gradients, the interior images
solve the time-coupled quadratic by CG.  All spatial derivatives are
spectral on [0, 1)^d.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .kernels import PeriodicOperator, apply_K, apply_L
from .landmark import BlowUpError, ConvergenceError

MODES = ("image", "density")


class StabilityWarning(UserWarning):
    pass


def _freqs(shape):
    return [2.0 * np.pi * np.fft.fftfreq(m, d=1.0 / m) for m in shape]


def grad(f: np.ndarray) -> np.ndarray:
    """Spectral gradient; returns shape (ndim, *f.shape)."""
    fh = np.fft.fftn(f)
    out = np.empty((f.ndim,) + f.shape)
    for axis, k in enumerate(_freqs(f.shape)):
        sl = [None] * f.ndim
        sl[axis] = slice(None)
        out[axis] = np.real(np.fft.ifftn(1j * k[tuple(sl)] * fh))
    return out


def div(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[1:])
    for axis, k in enumerate(_freqs(v.shape[1:])):
        sl = [None] * (v.ndim - 1)
        sl[axis] = slice(None)
        out += np.real(np.fft.ifftn(1j * k[tuple(sl)] * np.fft.fftn(v[axis])))
    return out


def default_operator(shape, order: int = 2, alpha: float = 0.01) -> PeriodicOperator:
    return PeriodicOperator(tuple(shape), 1.0 / shape[0], order=order,
                            alpha=alpha, mode="apply_L")


def apply_vec(op_fun, op: PeriodicOperator, v: np.ndarray) -> np.ndarray:
    return np.stack([op_fun(op, comp) for comp in v])


@dataclass
class GridState:
    n: np.ndarray
    z: np.ndarray
    mode: str
    sigma2: float
    op: PeriodicOperator

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.n.shape != self.z.shape:
            raise ValueError("n and z must share one grid shape")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    def velocity(self) -> np.ndarray:
        if self.mode == "image":
            return -apply_vec(apply_K, self.op, self.z * grad(self.n))
        return apply_vec(apply_K, self.op, self.n * grad(self.z))


def _grid_rhs(state: GridState):
    u = state.velocity()
    if state.mode == "image":
        zdot = -div(state.z * u)
        ndot = -(grad(state.n) * u).sum(0) + state.sigma2 * state.z
    else:
        zdot = -(grad(state.z) * u).sum(0)
        ndot = -div(state.n * u) + state.sigma2 * state.z
    return ndot, zdot, u


def grid_energy(state: GridState) -> float:
    """h = <u, L u> + sigma2 ||z||^2, conserved along the IVP."""
    u = state.velocity()
    lu = apply_vec(apply_L, state.op, u)
    return float(np.mean((u * lu).sum(0)) + state.sigma2 * np.mean(state.z**2))


def step_ivp(state: GridState, dt: float, cfl_limit: float = 0.5) -> GridState:
    """One classical 4th-order step of the coupled (n, z) system."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(n, z):
        nd, zd, _ = _grid_rhs(replace(state, n=n, z=z))
        return nd, zd

    n, z = state.n, state.z
    umax = float(np.abs(state.velocity()).max())
    dx = 1.0 / max(state.n.shape)
    if umax * dt / dx > cfl_limit:
        warnings.warn(
            f"advection CFL number {umax * dt / dx:.2f} exceeds {cfl_limit}",
            StabilityWarning, stacklevel=2)
    k1n, k1z = f(n, z)
    k2n, k2z = f(n + 0.5 * dt * k1n, z + 0.5 * dt * k1z)
    k3n, k3z = f(n + 0.5 * dt * k2n, z + 0.5 * dt * k2z)
    k4n, k4z = f(n + dt * k3n, z + dt * k3z)
    out = replace(state,
                  n=n + dt / 6.0 * (k1n + 2 * k2n + 2 * k3n + k4n),
                  z=z + dt / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z))
    if not (np.all(np.isfinite(out.n)) and np.all(np.isfinite(out.z))):
        raise BlowUpError(dt)
    return out


# ---------------------------------------------------------------------------
# boundary value problem
# ---------------------------------------------------------------------------


def _transport(n: np.ndarray, u: np.ndarray, mode: str) -> np.ndarray:
    if mode == "image":
        return (grad(n) * u).sum(0)
    return div(n * u)


def _transport_adjoint(f: np.ndarray, n: np.ndarray, u: np.ndarray, mode: str) -> np.ndarray:
    """Adjoint of u -> transport(n, u) in L2, applied to the scalar f."""
    if mode == "image":
        return f * grad(n)
    return -n * grad(f)


def _transport_adjoint_n(f: np.ndarray, u: np.ndarray, mode: str) -> np.ndarray:
    """Adjoint of n -> transport(n, u) in L2, applied to the scalar f."""
    if mode == "image":
        return -div(f * u)
    return -(u * grad(f)).sum(0)


@dataclass
class GridPath:
    ns: np.ndarray          # (T+1, *shape)
    us: np.ndarray          # (T, d, *shape)
    mode: str
    sigma2: float
    op: PeriodicOperator
    energy_trace: np.ndarray | None = None

    @property
    def timesteps(self) -> int:
        return self.ns.shape[0] - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.timesteps

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.ns[:-1] + self.ns[1:])

    def template_velocities(self) -> np.ndarray:
        nt = self.timesteps
        mids = self.midpoints()
        return np.stack([
            (self.ns[t + 1] - self.ns[t]) / self.dt
            + _transport(mids[t], self.us[t], self.mode)
            for t in range(nt)
        ])


def path_energy(path: GridPath):
    """Total energy with its (deformation, template) split."""
    nus = path.template_velocities()
    e_def = 0.0
    e_tem = 0.0
    for t in range(path.timesteps):
        lu = apply_vec(apply_L, path.op, path.us[t])
        e_def += path.dt * float(np.mean((path.us[t] * lu).sum(0)))
        e_tem += path.dt / path.sigma2 * float(np.mean(nus[t] ** 2))
    return e_def + e_tem, (e_def, e_tem)


def path_gradient(path: GridPath):
    """Coordinate gradient of the energy w.r.t. (us, interior ns)."""
    nus = path.template_velocities()
    mids = path.midpoints()
    npix = path.ns[0].size
    dt, s2 = path.dt, path.sigma2
    gu = np.empty_like(path.us)
    for t in range(path.timesteps):
        lu = apply_vec(apply_L, path.op, path.us[t])
        gu[t] = dt * (2.0 * lu + (2.0 / s2) * _transport_adjoint(
            nus[t], mids[t], path.us[t], path.mode)) / npix
    gn = np.zeros_like(path.ns)
    for s in range(1, path.timesteps):
        gn[s] = (2.0 * dt / s2) * (
            nus[s - 1] / dt - nus[s] / dt
            + 0.5 * _transport_adjoint_n(nus[s - 1], path.us[s - 1], path.mode)
            + 0.5 * _transport_adjoint_n(nus[s], path.us[s], path.mode)) / npix
    return gu, gn[1:-1]


def _cg(matvec, b, x0, tol, max_iter):
    """Plain conjugate gradients on flattened arrays."""
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r.ravel() @ r.ravel())
    bnorm = float(np.linalg.norm(b)) or 1.0
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * bnorm:
            break
        ap = matvec(p)
        alpha = rs / float(p.ravel() @ ap.ravel())
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r.ravel() @ r.ravel())
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _update_velocities(path: GridPath, cg_tol: float, cg_iter: int) -> None:
    """Per-timestep minimization over u_t (independent linear solves)."""
    s2 = path.sigma2
    mids = path.midpoints()
    for t in range(path.timesteps):
        n = mids[t]
        ndot = (path.ns[t + 1] - path.ns[t]) / path.dt

        def matvec(u):
            return apply_vec(apply_L, path.op, u) + (1.0 / s2) * _transport_adjoint(
                _transport(n, u, path.mode), n, u, path.mode)

        b = -(1.0 / s2) * _transport_adjoint(ndot, n, path.us[t], path.mode)
        path.us[t] = _cg(matvec, b, path.us[t], cg_tol, cg_iter)


def _update_images(path: GridPath, cg_tol: float, cg_iter: int) -> None:
    """Joint minimization over the interior images (quadratic, CG)."""
    if path.timesteps < 2:
        return
    interior0 = path.ns[1:-1].copy()

    def grad_of(interior):
        trial = replace(path, ns=np.concatenate(
            [path.ns[:1], interior, path.ns[-1:]]))
        _, gn = path_gradient(trial)
        return gn

    g_zero = grad_of(np.zeros_like(interior0))

    def matvec(interior):
        return grad_of(interior) - g_zero

    path.ns[1:-1] = _cg(matvec, -g_zero, interior0, cg_tol, cg_iter)


@dataclass
class MatchOpts:
    tol: float = 1e-5
    max_iter: int = 3000
    cg_tol: float = 1e-10
    cg_iter: int = 400


def match_bvp(n0, n1, mode: str, sigma2: float, timesteps: int = 10,
              opts: MatchOpts | None = None,
              op: PeriodicOperator | None = None) -> GridPath:
    """Alternating minimization of the discrete path energy."""
    opts = opts or MatchOpts()
    n0 = np.asarray(n0, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    if n0.shape != n1.shape:
        raise ValueError("n0 and n1 must have the same shape")
    if timesteps < 2:
        raise ValueError("timesteps must be >= 2")
    op = op or default_operator(n0.shape)
    ts = np.linspace(0.0, 1.0, timesteps + 1)
    ns = (1 - ts).reshape((-1,) + (1,) * n0.ndim) * n0 + \
        ts.reshape((-1,) + (1,) * n0.ndim) * n1
    us = np.zeros((timesteps, n0.ndim) + n0.shape)
    path = GridPath(ns, us, mode, sigma2, op)
    trace = []
    for _ in range(opts.max_iter):
        _update_velocities(path, opts.cg_tol, opts.cg_iter)
        _update_images(path, opts.cg_tol, opts.cg_iter)
        e, _split = path_energy(path)
        trace.append(e)
        gu, gn = path_gradient(path)
        gnorm = float(np.sqrt(np.sum(gu**2) + np.sum(gn**2)))
        if gnorm <= opts.tol * (1.0 + abs(e)):
            path.energy_trace = np.array(trace)
            return path
    raise ConvergenceError("alternating minimization did not converge", gnorm)


# ---------------------------------------------------------------------------
# conservation-law diagnostics
# ---------------------------------------------------------------------------


def check_horizontality(path: GridPath) -> float:
    """max_t ||L u_t + z_t grad n_t|| / max_t ||L u_t|| (density analogue).

    Evaluated at interior knots with time-centered u and z, so the
    residual measures the defect of the continuous-time horizontality
    relation on the discrete path (it is not identically satisfied by
    the optimizer and shrinks as O(dt^2) under refinement).
    """
    nus = path.template_velocities()
    res = 0.0
    ref = 0.0
    for t in range(1, path.timesteps):
        u = 0.5 * (path.us[t - 1] + path.us[t])
        z = 0.5 * (nus[t - 1] + nus[t]) / path.sigma2
        lu = apply_vec(apply_L, path.op, u)
        if path.mode == "image":
            defect = lu + z * grad(path.ns[t])
        else:
            defect = lu - path.ns[t] * grad(z)
        res = max(res, float(np.sqrt(np.mean((defect**2).sum(0)))))
        ref = max(ref, float(np.sqrt(np.mean((lu**2).sum(0)))))
    if ref == 0.0:
        return 0.0
    return res / ref


def _interp(field: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Periodic cubic interpolation; pos shape (d, ...) in [0,1) units."""
    coords = [pos[a] * field.shape[a] for a in range(field.ndim)]
    return map_coordinates(field, coords, order=3, mode="grid-wrap")


def flow_from_velocities(path: GridPath) -> np.ndarray:
    """Forward flow maps g_t on grid points, shape (T+1, d, *shape).

    Particles seeded at grid nodes are advected with the piecewise
    constant-in-time velocity sequence using a midpoint step per dt.
    """
    shape = path.ns[0].shape
    mesh = np.stack(np.meshgrid(
        *[np.arange(m) / m for m in shape], indexing="ij"))
    flows = [mesh]
    pos = mesh.copy()
    for t in range(path.timesteps):
        u = path.us[t]
        v1 = np.stack([_interp(u[a], pos) for a in range(len(shape))])
        mid = pos + 0.5 * path.dt * v1
        v2 = np.stack([_interp(u[a], mid) for a in range(len(shape))])
        pos = pos + path.dt * v2
        flows.append(pos.copy())
    return np.stack(flows)


def check_integrated_momentum(path: GridPath) -> float:
    """Residual of z_t = det(Dg_t^{-1}) z_0 o g_t^{-1} along the path.

    Checked in pulled-back form z_t(g_t(x)) det(Dg_t)(x) = z_0(x), which
    avoids inverting the flow.
    """
    if path.mode != "image":
        raise ValueError("integrated-momentum check applies to image mode")
    nus = path.template_velocities()
    zs = nus / path.sigma2
    knots = flow_from_velocities(path)
    shape = path.ns[0].shape
    d = len(shape)
    mesh = knots[0]
    # z_t lives on segment t; compare against the flow advanced to the
    # segment midpoint time.
    flows = []
    for t in range(path.timesteps):
        pos = knots[t]
        v = np.stack([_interp(path.us[t][a], pos) for a in range(d)])
        flows.append(pos + 0.5 * path.dt * v)
    scale = float(np.abs(zs[0]).max()) or 1.0

    def pulled_back(t):
        disp = flows[t] - mesh
        jac = np.empty((d, d) + shape)
        for a in range(d):
            ga = grad(disp[a])
            for b in range(d):
                jac[a, b] = ga[b] + (1.0 if a == b else 0.0)
        if d == 1:
            det = jac[0, 0]
        elif d == 2:
            det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        else:
            det = np.linalg.det(np.moveaxis(jac, (0, 1), (-2, -1)))
        return _interp(zs[t], flows[t] % 1.0) * det

    ref = pulled_back(0)
    worst = 0.0
    for t in range(1, path.timesteps):
        worst = max(worst, float(np.abs(pulled_back(t) - ref).max()) / scale)
    return worst
