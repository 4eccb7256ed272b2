"""Schwarz waveform relaxation on space-time subdomains.

Advection-diffusion uses backward Euler in time with Dirichlet or
optimized Robin transmission conditions at the interfaces; the wave
equation uses leapfrog at unit CFL (so the discrete domain of dependence
matches the physical cone and convergence is finite), including the
red-black tent-pitching schedule.

All subdomain solves within one sweep exchange previous-iterate traces
(Jacobi ordering), making them a pure parallel map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .kernels import ConvergenceError
from .trace import IterationTrace

Y_CRITICAL = 1.618386576


@dataclass(frozen=True)
class Subdomain:
    lo: int  # global index of the left boundary node
    hi: int  # global index of the right boundary node (inclusive)


@dataclass
class Decomposition1D:
    """Uniform multi-subdomain overlapping decomposition of a 1D grid.

    ``overlap_cells`` is the number of grid cells two neighbours share;
    transmission condition is 'dirichlet' or 'robin' (with parameter p).
    """

    subdomains: list
    tc: str = "dirichlet"
    p: float = np.inf

    @classmethod
    def uniform(cls, n_nodes: int, n_sub: int, overlap_cells: int,
                tc: str = "dirichlet", p: float = np.inf) -> "Decomposition1D":
        if overlap_cells < 1:
            raise ValueError("overlap must be positive")
        if tc == "robin" and not p > 0:
            raise ValueError("Robin parameter must be positive")
        cuts = np.linspace(0, n_nodes - 1, n_sub + 1).round().astype(int)
        half = overlap_cells / 2.0
        subs = []
        for i in range(n_sub):
            lo = max(0, int(cuts[i] - np.floor(half)))
            hi = min(n_nodes - 1, int(cuts[i + 1] + np.ceil(half)))
            subs.append(Subdomain(lo, hi))
        for a, b in zip(subs[:-1], subs[1:]):
            if a.hi - b.lo < overlap_cells:
                raise ValueError("subdomains do not overlap sufficiently")
        return cls(subdomains=subs, tc=tc, p=p)


def robin_p_star(l: float, nu: float, T: float, dt: float):
    """Optimized Robin parameter for two-subdomain advection-diffusion SWR.

    Returns ``(p_star, rho_bound)``: the optimized parameter and the
    convergence-factor bound at the estimated worst frequency.  The scalar
    nonlinear equations are solved by safeguarded bisection to 1e-12.
    """
    if min(l, nu, T, dt) <= 0:
        raise ValueError("l, nu, T, dt must be positive")
    y0 = l / nu

    def R0(y, p):
        return ((y - p) ** 2 + y * y - y0 * y0) / ((y + p) ** 2 + y * y - y0 * y0) * np.exp(-y)

    def ybar(p):
        inner = p * (-(p**3) - 4 * p * p + (4 + 2 * y0 * y0) * p + 8 * y0 * y0)
        return np.sqrt((y0 * y0 + 2 * p + np.sqrt(max(inner, 0.0))) / 2.0)

    if y0 < Y_CRITICAL:
        fn = lambda p: R0(y0, p) - R0(ybar(p), p)
    else:
        fn = lambda p: y0 - p * np.sqrt(p / (4.0 + p))
    p_star_t = _bisect(fn, 1e-8, 1e8)
    rho_bound = R0(ybar(p_star_t), p_star_t)
    return p_star_t * nu / l, rho_bound


def _bisect(fn, lo, hi, tol=1e-12, max_iter=200):
    flo, fhi = fn(lo), fn(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError("bisection bracket failure")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0 or (hi - lo) <= tol * max(1.0, abs(mid)):
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def robin_trace(values, j, p, dx, side):
    """(1/p) du/dx +/- u at node j with the second-order one-sided
    difference; ``side='right'`` uses backward points, 'left' forward."""
    if side == "right":
        d = (1.5 * values[:, j] - 2.0 * values[:, j - 1] + 0.5 * values[:, j - 2]) / dx
        return d / p + values[:, j]
    d = (-1.5 * values[:, j] + 2.0 * values[:, j + 1] - 0.5 * values[:, j + 2]) / dx
    return d / p - values[:, j]


class _AdSubdomainSolver:
    """Backward-Euler space-time solve on one subdomain with TC rows.

    The interior stencil discretizes u_t + u_x - nu u_xx = 0; interface
    rows carry either a Dirichlet trace or the Robin operator
    (1/p) du/dn + u with a second-order one-sided difference, matched
    against the neighbour's previous trace.  The subdomain matrix is
    LU-factored once and reused for every time step.
    """

    def __init__(self, sub, nu, dx, dt, tc, p, left_physical, right_physical):
        self.sub = sub
        self.n = sub.hi - sub.lo + 1
        self.dx, self.dt, self.nu = dx, dt, nu
        self.tc, self.p = tc, p
        n = self.n
        A = np.zeros((n, n))
        adv = 1.0 / (2 * dx)
        dif = nu / dx**2
        idx = np.arange(1, n - 1)
        A[idx, idx - 1] = -adv - dif
        A[idx, idx] = 1.0 / dt + 2 * dif
        A[idx, idx + 1] = adv - dif
        if left_physical or tc == "dirichlet":
            A[0, 0] = 1.0
        else:
            A[0, 0] = -1.5 / (p * dx) - 1.0
            A[0, 1] = 2.0 / (p * dx)
            A[0, 2] = -0.5 / (p * dx)
        if right_physical or tc == "dirichlet":
            A[-1, -1] = 1.0
        else:
            A[-1, -1] = 1.5 / (p * dx) + 1.0
            A[-1, -2] = -2.0 / (p * dx)
            A[-1, -3] = 0.5 / (p * dx)
        self.lu = scipy.linalg.lu_factor(A)

    def solve(self, u0, left_data, right_data, n_steps):
        """March n_steps of BE; boundary data arrays indexed by step."""
        n = self.n
        out = np.empty((n_steps + 1, n))
        out[0] = u0
        u = u0.copy()
        for m in range(1, n_steps + 1):
            rhs = u / self.dt
            rhs[0] = left_data[m]
            rhs[-1] = right_data[m]
            u = scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)
            out[m] = u
        return out


def monodomain_solve_ad(nu, L, T, dx, dt, u0_fn):
    """Single-domain discrete solution (the converged-solution oracle)."""
    n = int(round(L / dx)) + 1
    x = np.linspace(0.0, L, n)
    n_steps = int(round(T / dt))
    sub = Subdomain(0, n - 1)
    solver = _AdSubdomainSolver(sub, nu, dx, dt, "dirichlet", np.inf, True, True)
    zeros = np.zeros(n_steps + 1)
    return x, solver.solve(u0_fn(x), zeros, zeros, n_steps)


def oswr_solve_ad(nu, L, T, dx, dt, dec: Decomposition1D, tol: float = 1e-8,
                  u0_fn=None, max_iter: int = 2000, seed: int = 0, pmap=None):
    """Jacobi Schwarz waveform relaxation for advection-diffusion.

    Starts from random interface traces and stops when the maximum
    interface error against the monodomain solution drops below ``tol``.
    Returns (global trajectory, trace).
    """
    if u0_fn is None:
        u0_fn = lambda x: np.exp(-10.0 * (x - L / 2.0) ** 2)
    x, mono = monodomain_solve_ad(nu, L, T, dx, dt, u0_fn)
    n_nodes = x.shape[0]
    n_steps = int(round(T / dt))
    subs = dec.subdomains
    n_sub = len(subs)
    if n_sub == 1:
        trace = IterationTrace(method="oswr_ad")
        trace.record(error=0.0)
        return mono, trace

    solvers = []
    for i, sub in enumerate(subs):
        solvers.append(
            _AdSubdomainSolver(sub, nu, dx, dt, dec.tc, dec.p,
                               left_physical=(i == 0),
                               right_physical=(i == n_sub - 1))
        )

    rng = np.random.default_rng(seed)
    # per-subdomain boundary data over all time steps
    left_data = [np.zeros(n_steps + 1) for _ in subs]
    right_data = [np.zeros(n_steps + 1) for _ in subs]
    for i in range(1, n_sub):
        left_data[i] = rng.standard_normal(n_steps + 1)
        left_data[i][0] = 0.0
    for i in range(n_sub - 1):
        right_data[i] = rng.standard_normal(n_steps + 1)
        right_data[i][0] = 0.0

    locals_ = [None] * n_sub
    trace = IterationTrace(method="oswr_ad")
    # interface error is measured where the neighbour reads its trace
    interfaces = [(i, subs[i + 1].lo) for i in range(n_sub - 1)] + [
        (i + 1, subs[i].hi) for i in range(n_sub - 1)
    ]
    for k in range(max_iter):
        def run(i):
            sub = subs[i]
            return solvers[i].solve(u0_fn(x[sub.lo : sub.hi + 1]),
                                    left_data[i], right_data[i], n_steps)

        mapper = pmap if pmap is not None else map
        locals_ = list(mapper(run, range(n_sub)))

        err = 0.0
        for i, node in interfaces:
            sol = locals_[i][:, node - subs[i].lo]
            err = max(err, np.abs(sol - mono[:, node]).max())
        trace.record(error=err)
        if err < tol:
            break

        # Jacobi exchange of interface traces
        new_left = [d.copy() for d in left_data]
        new_right = [d.copy() for d in right_data]
        for i in range(n_sub - 1):
            right_sub, left_sub = subs[i + 1], subs[i]
            # data for subdomain i's right interface from neighbour i+1
            node = left_sub.hi
            j = node - right_sub.lo
            vals = locals_[i + 1]
            if dec.tc == "dirichlet":
                new_right[i] = vals[:, j]
            else:
                new_right[i] = robin_trace(vals, j, dec.p, dx, "right")
            # data for subdomain i+1's left interface from neighbour i
            node = right_sub.lo
            j = node - left_sub.lo
            vals = locals_[i]
            if dec.tc == "dirichlet":
                new_left[i + 1] = vals[:, j]
            else:
                new_left[i + 1] = robin_trace(vals, j, dec.p, dx, "left")
        left_data, right_data = new_left, new_right
    else:
        raise ConvergenceError(f"OSWR did not reach tol={tol} in {max_iter} sweeps")

    glob = mono.copy()
    for i, sub in enumerate(subs):
        glob[:, sub.lo : sub.hi + 1] = locals_[i]
    return glob, trace


# ---------------------------------------------------------------------------
# wave equation: leapfrog subdomain solves, finite convergence
# ---------------------------------------------------------------------------


def _leapfrog_solve(A_scaled, u0, v0, g_fn, x_local, dt, n_steps, left_trace, right_trace):
    """Leapfrog on one subdomain; boundary columns overwritten by traces.

    A_scaled applies c^2 * d_xx in scaled form on the local grid (interior
    second difference); the Taylor bootstrap keeps second order.
    """
    n = u0.shape[0]
    out = np.empty((n_steps + 1, n))
    out[0] = u0

    def lap(u):
        out_ = np.zeros_like(u)
        out_[1:-1] = A_scaled * (u[:-2] - 2 * u[1:-1] + u[2:])
        return out_

    g0 = g_fn(x_local, 0.0) if g_fn is not None else 0.0
    u1 = u0 + dt * v0 + 0.5 * dt * dt * (lap(u0) + g0)
    u1[0] = left_trace[1]
    u1[-1] = right_trace[1]
    out[1] = u1
    um, uc = u0, u1
    for m in range(2, n_steps + 1):
        gm = g_fn(x_local, (m - 1) * dt) if g_fn is not None else 0.0
        un = 2 * uc - um + dt * dt * (lap(uc) + gm)
        un[0] = left_trace[m]
        un[-1] = right_trace[m]
        um, uc = uc, un
        out[m] = un
    return out


def monodomain_solve_wave(c, L, T, dx, u0_fn, v0_fn=None, g_fn=None):
    """Single-domain leapfrog at unit CFL (dt = dx/c)."""
    dt = dx / c
    n = int(round(L / dx)) + 1
    x = np.linspace(0.0, L, n)
    n_steps = int(round(T / dt))
    u0 = u0_fn(x)
    v0 = v0_fn(x) if v0_fn is not None else np.zeros_like(x)
    zeros = np.zeros(n_steps + 1)
    sol = _leapfrog_solve(c * c / dx**2, u0, v0, g_fn, x, dt, n_steps, zeros, zeros)
    return x, dt, sol


def swr_solve_wave(c, L, T, dx, dec: Decomposition1D, tol: float = 1e-10,
                   u0_fn=None, v0_fn=None, g_fn=None, max_iter: int = 200,
                   seed: int = 0, pmap=None):
    """Dirichlet-trace SWR for the wave equation at unit CFL.

    Interface errors vanish exactly once the iteration count exceeds
    T*c/overlap-width (finite speed of propagation).
    """
    if u0_fn is None:
        u0_fn = lambda x: np.sin(2 * np.pi * x / L) ** 2
    x, dt, mono = monodomain_solve_wave(c, L, T, dx, u0_fn, v0_fn, g_fn)
    n_steps = mono.shape[0] - 1
    subs = dec.subdomains
    n_sub = len(subs)
    rng = np.random.default_rng(seed)
    left_data = [np.zeros(n_steps + 1) for _ in subs]
    right_data = [np.zeros(n_steps + 1) for _ in subs]
    for i in range(1, n_sub):
        left_data[i] = rng.standard_normal(n_steps + 1)
        left_data[i][0] = u0_fn(x[subs[i].lo : subs[i].lo + 1])[0]
    for i in range(n_sub - 1):
        right_data[i] = rng.standard_normal(n_steps + 1)
        right_data[i][0] = u0_fn(x[subs[i].hi : subs[i].hi + 1])[0]

    v0_all = v0_fn(x) if v0_fn is not None else np.zeros_like(x)
    trace = IterationTrace(method="swr_wave")
    locals_ = None
    for k in range(max_iter):
        def run(i):
            sub = subs[i]
            xl = x[sub.lo : sub.hi + 1]
            return _leapfrog_solve(c * c / dx**2, u0_fn(xl), v0_all[sub.lo : sub.hi + 1],
                                   g_fn, xl, dt, n_steps, left_data[i], right_data[i])

        mapper = pmap if pmap is not None else map
        locals_ = list(mapper(run, range(n_sub)))
        err = 0.0
        for i in range(n_sub - 1):
            node = subs[i + 1].lo  # read by the right neighbour
            err = max(err, np.abs(locals_[i][:, node - subs[i].lo] - mono[:, node]).max())
            node = subs[i].hi  # read by the left neighbour
            err = max(err, np.abs(locals_[i + 1][:, node - subs[i + 1].lo] - mono[:, node]).max())
        trace.record(error=err)
        if err < tol:
            break
        new_left = [d.copy() for d in left_data]
        new_right = [d.copy() for d in right_data]
        for i in range(n_sub - 1):
            node = subs[i].hi
            new_right[i] = locals_[i + 1][:, node - subs[i + 1].lo]
            node = subs[i + 1].lo
            new_left[i + 1] = locals_[i][:, node - subs[i].lo]
        left_data, right_data = new_left, new_right

    glob = mono.copy()
    for i, sub in enumerate(subs):
        glob[:, sub.lo : sub.hi + 1] = locals_[i]
    return glob, trace


# ---------------------------------------------------------------------------
# red-black SWR (unmapped tent pitching)
# ---------------------------------------------------------------------------


@dataclass
class TentSchedule:
    """Red-black coloring with generous overlap: red subdomains partition
    the domain, black ones span adjacent red halves.  Each sweep advances
    the active color's time slab by ``slab_height`` (default
    overlap/(2c))."""

    n_red: int
    slab_height: Optional[float] = None
    residual_detection: bool = False


def utp_advance(c, L, T, dx, schedule: TentSchedule, sweeps: int,
                u0_fn=None, seed=0):
    """Red-black SWR on the wave equation with growing time slabs.

    Returns (global space-time iterate, trace, residual rows) where the
    residual rows are (x, t, |residual|) samples of the leapfrog stencil
    on the current iterate after every sweep.
    """
    if u0_fn is None:
        u0_fn = lambda x: np.sin(2 * np.pi * x / L) ** 2
    dt = dx / c
    n = int(round(L / dx)) + 1
    x = np.linspace(0.0, L, n)
    n_steps = int(round(T / dt))

    n_red = schedule.n_red
    bounds = np.linspace(0, n - 1, 2 * n_red + 1).round().astype(int)
    red = [Subdomain(bounds[2 * i], bounds[2 * i + 2]) for i in range(n_red)]
    black = [Subdomain(bounds[2 * i + 1], bounds[2 * i + 3]) for i in range(n_red - 1)]
    overlap_width = x[bounds[2]] - x[bounds[1]]
    slab = schedule.slab_height or overlap_width / (2.0 * c)

    if seed is None:
        U = np.zeros((n_steps + 1, n))
    else:
        U = np.random.default_rng(seed).standard_normal((n_steps + 1, n))
    U[0] = u0_fn(x)
    U[:, 0] = 0.0
    U[:, -1] = 0.0
    v0 = np.zeros(n)

    trace = IterationTrace(method="utp")
    residual_rows = []

    def residual_field(U):
        R = np.zeros_like(U)
        lam = (c * dt / dx) ** 2
        R[2:, 1:-1] = U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1] - lam * (
            U[1:-1, :-2] - 2 * U[1:-1, 1:-1] + U[1:-1, 2:]
        )
        return np.abs(R)

    certified = 0.0
    for k in range(1, sweeps + 1):
        color = red if k % 2 == 1 else black
        if schedule.residual_detection and k > 1:
            # advance one slab past the residual-certified front
            t_hi = min(T, certified + 2.0 * slab)
        else:
            t_hi = min(T, k * slab)
        m_hi = int(round(t_hi / dt))
        for sub in color:
            xl = x[sub.lo : sub.hi + 1]
            left = U[:, sub.lo].copy()
            right = U[:, sub.hi].copy()
            sol = _leapfrog_solve(c * c / dx**2, u0_fn(xl), v0[sub.lo : sub.hi + 1],
                                  None, xl, dt, m_hi, left, right)
            U[: m_hi + 1, sub.lo + 1 : sub.hi] = sol[:, 1:-1]
        R = residual_field(U)
        # largest time below which the residual is everywhere small
        below = np.where((R < 1e-8).all(axis=1), 1, 0)
        tent_time = 0.0
        for m in range(2, n_steps + 1):
            if not below[m]:
                break
            tent_time = m * dt
        certified = tent_time
        trace.record(residual=R.max())
        trace.meta.setdefault("tent_height", []).append(tent_time)
        for m in range(0, n_steps + 1, max(1, n_steps // 32)):
            for j in range(0, n, max(1, n // 32)):
                residual_rows.append((x[j], m * dt, R[m, j]))
    return U, trace, residual_rows
