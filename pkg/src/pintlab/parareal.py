"""Parareal, MGRiT with FCF relaxation, their linear convergence-factor
predictors, and the two diagonalization-based variants (all-at-once coarse
grid correction, and the head-tail coarse solver that shares the fine
discretization).

All solvers measure convergence against the sequential fine trajectory and
return ``(window_values, IterationTrace)`` where ``window_values[n]`` is the
final iterate at window boundary T_n.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .integrators import Propagator, TimeGrid, propagate, propagate_block, stability
from .kernels import ConvergenceError, solve_shifted_banded
from .models import CompanionSystem
from .paradiag import alpha_circulant_factor
from .trace import IterationTrace


@dataclass
class PararealConfig:
    grid: TimeGrid
    fine: Propagator
    coarse: Propagator
    max_iter: int = 50
    tol: float = 1e-12
    variant: str = "classic"  # classic | mgrit_fcf | diag_cgc | diag_coarse
    alpha: float = 0.1
    initial_guess: str = "coarse"  # coarse | random
    seed: int = 0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        dT = self.grid.window_length(0)
        for prop, name in ((self.fine, "fine"), (self.coarse, "coarse")):
            if abs(prop.span() - dT) > 1e-12 * max(1.0, dT):
                raise ValueError(f"{name} propagator does not span one window")
        if self.variant.startswith("diag") and not 0.0 < self.alpha < 1.0:
            raise ValueError("diag variants need alpha in (0, 1)")


def _wrap(sys):
    return CompanionSystem(sys) if getattr(sys, "order", "first") == "second" else sys


def fine_sequential(cfg: PararealConfig, sys) -> np.ndarray:
    """Sequential sweep of the fine propagator: the oracle trajectory at
    window boundaries, shape (n_windows + 1, n)."""
    target = _wrap(sys)
    u = target.u0.copy()
    out = [u.copy()]
    for n in range(cfg.grid.n_windows):
        t0, t1 = cfg.grid.window(n)
        u = propagate(cfg.fine, target, t0, t1, u, newton_tol=cfg.newton_tol)
        out.append(u.copy())
    return np.stack(out)


def _initial_iterate(cfg, target):
    n_w = cfg.grid.n_windows
    U = np.empty((n_w + 1, target.u0.shape[0]))
    U[0] = target.u0
    if cfg.initial_guess == "random":
        rng = np.random.default_rng(cfg.seed)
        U[1:] = rng.standard_normal((n_w, target.u0.shape[0]))
        return U
    u = target.u0.copy()
    for n in range(n_w):
        t0, t1 = cfg.grid.window(n)
        u = propagate(cfg.coarse, target, t0, t1, u, newton_tol=cfg.newton_tol)
        U[n + 1] = u
    return U


def _parallel_fine(cfg, target, U, pmap):
    """All fine window solves of one iteration (pure map over windows)."""
    t0s = cfg.grid.boundaries[:-1]
    return propagate_block(cfg.fine, target, t0s, U[:-1].T.copy(),
                           newton_tol=cfg.newton_tol, pmap=pmap).T


def parareal_solve(cfg: PararealConfig, sys, oracle: Optional[np.ndarray] = None,
                   pmap=None):
    """Classic Parareal: coarse correction sweep plus parallel fine solves."""
    target = _wrap(sys)
    if oracle is None:
        oracle = fine_sequential(cfg, sys)
    U = _initial_iterate(cfg, target)
    trace = IterationTrace(method="parareal")
    trace.record(error=np.abs(U - oracle).max())
    n_w = cfg.grid.n_windows
    for k in range(cfg.max_iter):
        F = _parallel_fine(cfg, target, U, pmap)
        U_new = np.empty_like(U)
        U_new[0] = U[0]
        for n in range(n_w):
            t0, t1 = cfg.grid.window(n)
            g_new = propagate(cfg.coarse, target, t0, t1, U_new[n],
                              newton_tol=cfg.newton_tol)
            g_old = propagate(cfg.coarse, target, t0, t1, U[n],
                              newton_tol=cfg.newton_tol)
            U_new[n + 1] = F[n] + g_new - g_old
        U = U_new
        if not np.all(np.isfinite(U)):
            raise ConvergenceError("parareal iterate became non-finite")
        trace.record(error=np.abs(U - oracle).max(), fine_solves=n_w)
        if trace.errors[-1] <= cfg.tol:
            break
    return U, trace


def mgrit_fcf_solve(cfg: PararealConfig, sys, oracle: Optional[np.ndarray] = None,
                    pmap=None):
    """Two-level MGRiT with FCF relaxation (overlapping Parareal, two fine
    solves per window per iteration)."""
    target = _wrap(sys)
    if oracle is None:
        oracle = fine_sequential(cfg, sys)
    U = _initial_iterate(cfg, target)
    trace = IterationTrace(method="mgrit_fcf")
    trace.record(error=np.abs(U - oracle).max())
    n_w = cfg.grid.n_windows
    for k in range(cfg.max_iter):
        # F relaxation: s_n = F(T_{n-1}, T_n, u_{n-1}^k) for n = 1..n_w
        S = _parallel_fine(cfg, target, U, pmap)
        U_new = np.empty_like(U)
        U_new[0] = U[0]
        U_new[1] = S[0]
        # second fine pass from the relaxed states
        t0s = cfg.grid.boundaries[1:-1]
        if n_w >= 2:
            FF = propagate_block(cfg.fine, target, t0s, S[:-1].T.copy(),
                                 newton_tol=cfg.newton_tol, pmap=pmap).T
        for n in range(1, n_w):
            t0, t1 = cfg.grid.window(n)
            g_new = propagate(cfg.coarse, target, t0, t1, U_new[n],
                              newton_tol=cfg.newton_tol)
            g_old = propagate(cfg.coarse, target, t0, t1, S[n - 1],
                              newton_tol=cfg.newton_tol)
            U_new[n + 1] = FF[n - 1] + g_new - g_old
        U = U_new
        if not np.all(np.isfinite(U)):
            raise ConvergenceError("mgrit iterate became non-finite")
        trace.record(error=np.abs(U - oracle).max(), fine_solves=2 * n_w)
        if trace.errors[-1] <= cfg.tol:
            break
    return U, trace


# ---------------------------------------------------------------------------
# linear convergence-factor predictors
# ---------------------------------------------------------------------------


def rho_superlinear(Rg: Callable, Rf: Callable, J: int, z: complex, n_t: int, k: int) -> float:
    """Superlinear (bounded-interval) convergence factor after k iterations."""
    diff = abs(Rg(z) - Rf(z / J) ** J) ** k
    prod = 1.0
    for j in range(1, k + 1):
        prod *= n_t - j
        diff /= j
    return diff * prod if k <= n_t else 0.0


def rho_linear(Rg: Callable, Rf: Callable, J: int, z) -> float:
    """Long-time linear convergence factor |Rg - Rf^J| / (1 - |Rg|)."""
    z = np.asarray(z, dtype=complex)
    rg = Rg(z)
    denom = 1.0 - np.abs(rg)
    if np.any(denom <= 0):
        raise ZeroDivisionError("rho_linear needs |Rg(z)| < 1")
    return np.abs(rg - Rf(z / J) ** J) / denom


def mgrit_rho_linear(Rg: Callable, Rf: Callable, J: int, z) -> float:
    """FCF analogue: the extra fine pass multiplies by |Rf^J|."""
    z = np.asarray(z, dtype=complex)
    return np.abs(Rf(z / J) ** J) * rho_linear(Rg, Rf, J, z)


def max_rho_negative_axis(rho: Callable, z_lo: float = -1e6, n_coarse: int = 4000,
                          n_refine: int = 4000) -> float:
    """Maximize a convergence-factor function over z in [z_lo, 0).

    Dense log-spaced sampling followed by a linear refinement around the
    coarse argmax.
    """
    z = -np.geomspace(1e-8, -z_lo, n_coarse)
    vals = rho(z)
    i = int(np.argmax(vals))
    lo = z[min(i + 1, len(z) - 1)]
    hi = z[max(i - 1, 0)]
    zr = np.linspace(lo, hi, n_refine)
    return float(max(vals[i], np.max(rho(zr))))


def stability_function(method) -> Callable:
    return lambda z: stability(method, z)


# ---------------------------------------------------------------------------
# diagonalization-based coarse grid correction (head-tail all-at-once CGC)
# ---------------------------------------------------------------------------


def parareal_diag_cgc_solve(cfg: PararealConfig, sys, oracle: Optional[np.ndarray] = None,
                            pmap=None):
    """Parareal whose CGC couples head to tail, u_0^{k+1} = alpha*u_{N}^{k+1} + u_0,
    and is solved across all windows at once by circulant diagonalization.

    Coarse solver is one backward-Euler step per window; linear systems are
    handled directly, nonlinear ones by the averaged-Jacobian quasi-Newton.
    """
    target = _wrap(sys)
    if oracle is None:
        oracle = fine_sequential(cfg, sys)
    if cfg.coarse.steps != 1:
        raise ValueError("diag CGC uses one backward-Euler step per window")
    dT = cfg.grid.window_length(0)
    alpha = cfg.alpha
    n_w = cfg.grid.n_windows
    U = _initial_iterate(cfg, target)
    trace = IterationTrace(method="parareal_diag_cgc")
    trace.record(error=np.abs(U - oracle).max())

    c1 = np.zeros(n_w)
    c1[0] = 1.0
    if n_w > 1:
        c1[1] = -1.0
    fac = alpha_circulant_factor(c1, alpha)
    linear = getattr(target, "linear", True)

    def coarse_be(t0, u):
        # one BE step over a window, source sampled at the right endpoint
        rhs = u.copy()
        g = target.g(t0 + dT) if target.source is not None else None
        if g is not None:
            rhs = rhs + dT * g
        if linear:
            if isinstance(target, CompanionSystem):
                return target.solve_shift(1.0, dT, rhs)
            return solve_shifted_banded(target.A, (1.0, dT), rhs)
        from .integrators import _newton

        return _newton(target, dT, u, t0 + dT, u, tol=cfg.newton_tol)

    def apply_r2_inv_free(u):  # (I - dT A) u for the linear CGC right-hand side
        if isinstance(target, CompanionSystem):
            return u - dT * target.matvec(u)
        return u - dT * target.A.matvec(u)

    for k in range(cfg.max_iter):
        # b_{n+1} = F(T_n, T_{n+1}, u~_n) - G(T_n, T_{n+1}, u_n), with the
        # head value pinned to the true initial condition in the F term
        U_tilde = U.copy()
        U_tilde[0] = target.u0
        F = _parallel_fine(cfg, target, U_tilde, pmap)
        B = np.empty((n_w, U.shape[1]))
        for n in range(n_w):
            t0, _ = cfg.grid.window(n)
            B[n] = F[n] - coarse_be(t0, U[n])

        if linear:
            G = np.empty_like(B)
            for n in range(n_w):
                G[n] = apply_r2_inv_free(B[n])
            G[0] += target.u0
            Ga = fac.to_eigenbasis(G.astype(complex))
            Gb = np.empty_like(Ga)
            for n in range(n_w):
                lam = fac.eigenvalues[n]
                if isinstance(target, CompanionSystem):
                    Gb[n] = target.solve_shift(lam, dT, Ga[n])
                else:
                    Gb[n] = solve_shifted_banded(target.A, (lam, dT), Ga[n])
            U_inner = fac.from_eigenbasis(Gb).real
        else:
            U_inner = _diag_cgc_quasi_newton(cfg, target, fac, B, dT, U[1:])
        U_new = np.empty_like(U)
        U_new[0] = alpha * U_inner[-1] + target.u0
        U_new[1:] = U_inner
        U = U_new
        trace.record(error=np.abs(U[1:] - oracle[1:]).max(), fine_solves=n_w)
        if trace.errors[-1] <= cfg.tol:
            break
    return U, trace


def _diag_cgc_quasi_newton(cfg, target, fac, B, dT, U_guess, max_newton=50):
    """Solve (C_alpha (x) I) U - dT F(U) = g by the averaged-Jacobian
    quasi-Newton iteration; F rows are f(u_n - b_n)."""
    n_w, n = B.shape
    g = B.copy()
    g[0] += target.u0
    U = U_guess.copy()
    for l in range(max_newton):
        shifted = U - B
        F = np.stack([target.f(shifted[j], 0.0) for j in range(n_w)])
        resid = g - (_c_alpha_apply(U, cfg.alpha) - dT * F)
        jacs = [target.jacobian(shifted[j]) for j in range(n_w)]
        A_bar = jacs[0]
        for J in jacs[1:]:
            A_bar = A_bar.add(J)
        A_bar = A_bar.scaled(1.0 / n_w)
        Ra = fac.to_eigenbasis(resid.astype(complex))
        Rb = np.empty_like(Ra)
        for j in range(n_w):
            Rb[j] = solve_shifted_banded(A_bar, (fac.eigenvalues[j], dT), Ra[j])
        delta = fac.from_eigenbasis(Rb).real
        U = U + delta
        if np.abs(delta).max() <= cfg.newton_tol * max(1.0, np.abs(U).max()):
            return U
    raise ConvergenceError("diag-CGC quasi-Newton did not converge")


def _c_alpha_apply(U, alpha):
    out = U.copy()
    out[1:] -= U[:-1]
    out[0] -= alpha * U[-1]
    return out


# ---------------------------------------------------------------------------
# diagonalization-based coarse solver (same discretization as the fine one)
# ---------------------------------------------------------------------------


def parareal_diag_coarse_solve(cfg: PararealConfig, sys,
                               oracle: Optional[np.ndarray] = None, pmap=None):
    """Parareal whose coarse solver is the fine theta-method made head-tail
    periodic inside each window and solved at once by diagonalization.

    Fine and coarse share the method and step size; alpha -> 0 recovers the
    fine solver itself.
    """
    target = _wrap(sys)
    if oracle is None:
        oracle = fine_sequential(cfg, sys)
    if cfg.fine.method.theta is None:
        raise ValueError("diag coarse solver is defined for theta methods")
    theta = cfg.fine.method.theta
    J = cfg.fine.steps
    dt = cfg.fine.dt
    alpha = cfg.alpha
    n_w = cfg.grid.n_windows

    c1 = np.zeros(J)
    c1[0] = 1.0
    if J > 1:
        c1[1] = -1.0
    fac_c = alpha_circulant_factor(c1, alpha)
    ctheta = np.zeros(J)
    ctheta[0] = theta
    if J > 1:
        ctheta[1] = 1.0 - theta
    fac_t = alpha_circulant_factor(ctheta, alpha)
    linear = getattr(target, "linear", True)

    def coarse_star(u_n, t0):
        """F*_alpha over one window: all-at-once head-tail theta sweep."""
        if linear:
            rhs = np.zeros((J, u_n.shape[0]), dtype=float)
            v0 = (1.0 - alpha) * u_n
            rhs[0] = v0 + dt * (1.0 - theta) * _A_apply(target, v0)
            if target.source is not None:
                for j in range(J):
                    ta, tb = t0 + j * dt, t0 + (j + 1) * dt
                    rhs[j] = rhs[j] + dt * (
                        (1 - theta) * target.g(ta) + theta * target.g(tb)
                    )
            Ra = fac_c.to_eigenbasis(rhs.astype(complex))
            Rb = np.empty_like(Ra)
            for j in range(J):
                d1 = fac_c.eigenvalues[j]
                d2 = fac_t.eigenvalues[j]
                Rb[j] = _solve_shift_generic(target, d1, dt * d2, Ra[j])
            V = fac_c.from_eigenbasis(Rb).real
            return V[-1]
        return _diag_coarse_nonlinear(cfg, target, fac_c, fac_t, u_n, t0)[-1]

    U = _initial_iterate_diag_coarse(cfg, target, coarse_star)
    trace = IterationTrace(method="parareal_diag_coarse")
    trace.record(error=np.abs(U - oracle).max())
    for k in range(cfg.max_iter):
        F = _parallel_fine(cfg, target, U, pmap)
        U_new = np.empty_like(U)
        U_new[0] = U[0]
        for n in range(n_w):
            t0, _ = cfg.grid.window(n)
            U_new[n + 1] = coarse_star(U_new[n], t0) + F[n] - coarse_star(U[n], t0)
        U = U_new
        trace.record(error=np.abs(U - oracle).max(), fine_solves=n_w)
        if trace.errors[-1] <= cfg.tol:
            break
    return U, trace


def _initial_iterate_diag_coarse(cfg, target, coarse_star):
    n_w = cfg.grid.n_windows
    U = np.empty((n_w + 1, target.u0.shape[0]))
    U[0] = target.u0
    if cfg.initial_guess == "random":
        rng = np.random.default_rng(cfg.seed)
        U[1:] = rng.standard_normal((n_w, target.u0.shape[0]))
        return U
    for n in range(n_w):
        t0, _ = cfg.grid.window(n)
        U[n + 1] = coarse_star(U[n], t0)
    return U


def _A_apply(target, u):
    if isinstance(target, CompanionSystem):
        return target.matvec(u)
    return target.A.matvec(u)


def _solve_shift_generic(target, a, b, rhs):
    if isinstance(target, CompanionSystem):
        return target.solve_shift(a, b, rhs)
    return solve_shifted_banded(target.A, (a, b), rhs)


def _diag_coarse_nonlinear(cfg, target, fac_c, fac_t, u_n, t0, max_newton=50):
    """Quasi-Newton solve of the head-tail window system for nonlinear f."""
    J = cfg.fine.steps
    dt = cfg.fine.dt
    theta = cfg.fine.method.theta
    alpha = cfg.alpha
    b = np.zeros((J, u_n.shape[0]))
    b[0] = (1.0 - alpha) * u_n
    V = np.tile(u_n, (J, 1))
    for l in range(max_newton):
        v0 = alpha * V[-1] + (1.0 - alpha) * u_n
        states = np.vstack([v0[None, :], V])
        F = np.empty_like(V)
        for j in range(J):
            F[j] = theta * target.f(V[j], t0 + (j + 1) * dt) + (1 - theta) * target.f(
                states[j], t0 + j * dt
            )
        resid = b - (_c_alpha_apply(V, alpha) - dt * F)
        jacs = [target.jacobian(V[j]) for j in range(J - 1)]
        jacs.append(target.jacobian(v0))
        A_bar = jacs[0]
        for Jm in jacs[1:]:
            A_bar = A_bar.add(Jm)
        A_bar = A_bar.scaled(1.0 / J)
        Ra = fac_c.to_eigenbasis(resid.astype(complex))
        Rb = np.empty_like(Ra)
        for j in range(J):
            d1 = fac_c.eigenvalues[j]
            d2 = fac_t.eigenvalues[j]
            Rb[j] = solve_shifted_banded(A_bar, (d1, dt * d2), Ra[j])
        delta = fac_c.from_eigenbasis(Rb).real
        V = V + delta
        if np.abs(delta).max() <= cfg.newton_tol * max(1.0, np.abs(V).max()):
            return V
    raise ConvergenceError("diag-coarse quasi-Newton did not converge")
