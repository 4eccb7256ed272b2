"""Time-parallel solvers built on diagonalizing the time-stepping matrix.

Two families:

* Direct ("all at once, once"): variable geometric step sizes make the
  backward-Euler / trapezoidal time matrix diagonalizable, or a boundary
  value method (BVM) discretization replaces the last step to the same end.
  One transform - block solves - back transform yields the whole trajectory.

* Iterative: the Toeplitz time matrix is approximated by an
  alpha-circulant one, which diagonalizes in a scaled Fourier basis with
  condition number 1/alpha.  The approximation drives a stationary
  iteration or preconditions GMRES.

Nonlinear problems use a quasi-Newton outer loop whose Jacobian blocks are
collapsed to a single averaged matrix (optionally rescaled per time point
by the nearest-Kronecker-product weights) so the same factorizations apply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize

from .kernels import (
    BandedMatrix,
    ConvergenceError,
    SingularSystemError,
    dft,
    gmres,
    idft,
    solve_poly_in_matrix,
    solve_shifted_banded,
    toeplitz_lower_apply,
)
from .integrators import numerov_bootstrap, numerov_matrices
from .models import CompanionSystem, SemiDiscreteSystem
from .trace import IterationTrace

MACHINE_EPS = 2.22e-16


# ---------------------------------------------------------------------------
# geometric time meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometricTimeMesh:
    """Variable steps dt_n = mu^(n-1) * dt_1 with mu = 1 + rho, summing to T."""

    T: float
    n_t: int
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("geometric mesh needs rho > 0 (distinct steps)")

    @property
    def mu(self) -> float:
        return 1.0 + self.rho

    @property
    def dts(self) -> np.ndarray:
        weights = self.mu ** np.arange(self.n_t)
        return weights / weights.sum() * self.T

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dts)])


def be_time_matrix(mesh: GeometricTimeMesh) -> np.ndarray:
    dts = mesh.dts
    B = np.diag(1.0 / dts)
    B[np.arange(1, mesh.n_t), np.arange(mesh.n_t - 1)] = -1.0 / dts[1:]
    return B


def geometric_eigenvectors_be(mesh: GeometricTimeMesh):
    """Closed-form unit-lower-Toeplitz eigenvectors of the variable-step
    backward-Euler time matrix: V = T(p), V^-1 = T(q) with
    p_n = 1/prod_{j<=n}(1 - mu^j), q_n = (-1)^n mu^(n(n-1)/2) p_n."""
    mu = mesh.mu
    n = mesh.n_t
    p = np.empty(n - 1)
    prod = 1.0
    for k in range(1, n):
        prod *= 1.0 - mu**k
        p[k - 1] = 1.0 / prod
    q = np.array([(-1) ** k * mu ** (k * (k - 1) / 2.0) * p[k - 1] for k in range(1, n)])
    return p, q


def geometric_eigenvectors_tr(mesh: GeometricTimeMesh):
    """Closed-form Toeplitz eigenvectors of Btilde^-1 B for the trapezoidal
    rule on geometric steps (eigenvalues 2/dt_n)."""
    mu = mesh.mu
    n = mesh.n_t
    p = np.empty(n - 1)
    q = np.empty(n - 1)
    prod_p = 1.0
    prod_q = 1.0
    for k in range(1, n):
        prod_p *= (1.0 + mu**k) / (1.0 - mu**k)
        p[k - 1] = prod_p
        prod_q *= (1.0 + mu ** (-k + 2)) / (1.0 - mu ** (-k))
        q[k - 1] = mu ** (-k) * prod_q
    return p, q


def _solve_shift_system(sys_like, a, b, rhs):
    if isinstance(sys_like, CompanionSystem):
        return sys_like.solve_shift(a, b, rhs)
    return solve_shifted_banded(sys_like.A, (a, b), rhs)


def _apply_system(sys_like, u):
    if isinstance(sys_like, CompanionSystem):
        return sys_like.matvec(u)
    return sys_like.A.matvec(u)


def paradiag1_direct_solve(sys, mesh: GeometricTimeMesh, integrator: str = "backward_euler",
                           v_mode: str = "numeric") -> np.ndarray:
    """Direct time-parallel solve on a geometric mesh.

    ``integrator='backward_euler'`` treats first-order systems;
    ``'trapezoidal_second_order'`` treats second-order systems through
    their companion embedding.  ``v_mode`` selects the numerically
    balanced eigendecomposition (default) or the closed-form Toeplitz
    eigenvector matrices.  Returns the trajectory including the initial
    row, shape (n_t + 1, n).
    """
    dts = mesh.dts
    times = mesh.times
    if integrator == "backward_euler":
        target = sys
        u0 = sys.u0
        rhs = np.zeros((mesh.n_t, target.n))
        rhs[0] = u0 / dts[0]
        if sys.source is not None:
            for n in range(mesh.n_t):
                rhs[n] += sys.source(times[n + 1])
        lam_exact = 1.0 / dts
        B = be_time_matrix(mesh)
        closed = geometric_eigenvectors_be
        shift = lambda lam: (lam, 1.0)
    elif integrator == "trapezoidal_second_order":
        if sys.order != "second":
            raise ValueError("trapezoidal_second_order expects a second-order system")
        target = CompanionSystem(sys)
        u0 = target.u0
        if sys.source is not None:
            raise ValueError("source terms not supported on the trapezoidal path")
        B = be_time_matrix(mesh)
        Btilde = 0.5 * (np.eye(mesh.n_t) + np.eye(mesh.n_t, k=-1))
        rhs0 = np.zeros((mesh.n_t, target.n))
        rhs0[0] = u0 / dts[0] + 0.5 * target.matvec(u0)
        rhs = np.linalg.solve(Btilde, rhs0)
        B = np.linalg.solve(Btilde, B)
        lam_exact = 2.0 / dts
        closed = geometric_eigenvectors_tr
        shift = lambda lam: (lam, 1.0)
    else:
        raise ValueError(f"unknown integrator {integrator!r}")

    if v_mode == "numeric":
        lam, V = np.linalg.eig(B)
        Ua = np.linalg.solve(V, rhs.astype(complex))
        Ub = np.empty_like(Ua)
        for n in range(mesh.n_t):
            a, b = shift(lam[n])
            Ub[n] = _solve_shift_system(target, a, b, Ua[n])
        U = (V @ Ub).real
    elif v_mode == "closed_form":
        p, q = closed(mesh)
        Ua = toeplitz_lower_apply(q, rhs)
        Ub = np.empty_like(Ua)
        for n in range(mesh.n_t):
            a, b = shift(lam_exact[n])
            Ub[n] = _solve_shift_system(target, a, b, Ua[n])
        U = toeplitz_lower_apply(p, Ub)
    else:
        raise ValueError(f"unknown v_mode {v_mode!r}")

    out = np.empty((mesh.n_t + 1, target.n))
    out[0] = u0
    out[1:] = U
    return out


def sequential_variable_step_solve(sys, mesh: GeometricTimeMesh,
                                   integrator: str = "backward_euler") -> np.ndarray:
    """Sequential oracle for the direct solver (same discretization)."""
    dts = mesh.dts
    times = mesh.times
    if integrator == "backward_euler":
        target, u = sys, sys.u0.copy()
        out = np.empty((mesh.n_t + 1, target.n))
        out[0] = u
        for n, dt in enumerate(dts):
            r = u.copy()
            if sys.source is not None:
                r = r + dt * sys.source(times[n + 1])
            u = solve_shifted_banded(sys.A, (1.0, dt), r)
            out[n + 1] = u
        return out
    if integrator == "trapezoidal_second_order":
        target = CompanionSystem(sys)
        u = target.u0.copy()
        out = np.empty((mesh.n_t + 1, target.n))
        out[0] = u
        for n, dt in enumerate(dts):
            rhs = u + 0.5 * dt * target.matvec(u)
            u = target.solve_shift(1.0, 0.5 * dt, rhs)
            out[n + 1] = u
        return out
    raise ValueError(f"unknown integrator {integrator!r}")


# ---------------------------------------------------------------------------
# step-size parameter balancing truncation against roundoff
# ---------------------------------------------------------------------------


def _phi_log(n_t: int) -> float:
    if n_t % 2 == 0:
        return math.lgamma(n_t / 2 + 1) + math.lgamma(n_t / 2)
    return 2.0 * math.lgamma((n_t - 1) / 2 + 1)


def _log_r(x, n_t):
    return 2.0 * (math.log(x) - math.log1p(x)) - n_t * math.log1p(x)


def optimal_curvature_point(n_t: int) -> float:
    """Maximizer of r(x, n_t) = (x/(1+x))^2 (1+x)^(-n_t) over x >= 0."""
    res = scipy.optimize.minimize_scalar(
        lambda lx: -_log_r(math.exp(lx), n_t), bounds=(-25.0, 10.0), method="bounded",
        options={"xatol": 1e-13},
    )
    return math.exp(res.x)


def rho_opt_first_order(n_t: int, T: float, lam_max: float,
                        eps: float = MACHINE_EPS) -> float:
    """Step-ratio parameter balancing the two first-order error bounds
    (evaluated in the log domain to survive the factorials)."""
    if n_t < 2:
        raise ValueError("need n_t >= 2")
    x_star = optimal_curvature_point(n_t)
    log_C = math.log(n_t * (n_t**2 - 1) / 24.0) + _log_r(x_star, n_t)
    log_num = (
        math.log(eps)
        + 2.0 * math.log(n_t)
        + math.log(2.0 * n_t + 1.0)
        + math.log(n_t + lam_max * T)
        - _phi_log(n_t)
        - log_C
    )
    return math.exp(log_num / (n_t + 1.0))


def measured_optimal_rho(sys, T: float, n_t: int, rhos) -> float:
    """Numerically determined step-ratio parameter.

    Minimizes the two rho-dependent error contributions the balancing
    formula models: the geometric-vs-uniform truncation gap at t = T plus
    the diagonalization roundoff against the sequential solve on the same
    mesh (closed-form eigenvectors, the ones the roundoff bound assumes).
    """
    u_uniform = sys.u0.copy()
    dt = T / n_t
    for _ in range(n_t):
        u_uniform = solve_shifted_banded(sys.A, (1.0, dt), u_uniform)
    best = None
    for rho in rhos:
        mesh = GeometricTimeMesh(T=T, n_t=n_t, rho=float(rho))
        seq = sequential_variable_step_solve(sys, mesh)
        diag = paradiag1_direct_solve(sys, mesh, v_mode="closed_form")
        val = np.abs(seq[-1] - u_uniform).max() + np.abs(diag - seq).max()
        if best is None or val < best[0]:
            best = (val, float(rho))
    return best[1]


def rho_opt_second_order(n_t: int, eps: float = MACHINE_EPS) -> float:
    """Second-order analogue (trapezoidal rule on the companion form)."""
    if n_t < 2:
        raise ValueError("need n_t >= 2")
    log_num = (
        math.log(eps)
        + math.log(15.0)
        + (2.0 * n_t - 0.5) * math.log(2.0)
        - math.log(n_t**2 - 1.0)
        - math.lgamma(n_t)
    )
    return math.exp(log_num / (n_t + 1.0))


# ---------------------------------------------------------------------------
# boundary-value-method discretization
# ---------------------------------------------------------------------------


def bvm_time_matrix(n_t: int, dt: float) -> np.ndarray:
    """Centered differences for the first n_t - 1 rows, backward Euler last."""
    B = np.zeros((n_t, n_t))
    for n in range(n_t - 1):
        if n > 0:
            B[n, n - 1] = -0.5
        B[n, n + 1] = 0.5
    B[0, 1] = 0.5
    B[-1, -2] = -1.0
    B[-1, -1] = 1.0
    return B / dt


def paradiag1_bvm_solve(sys, dt: float, n_t: int, order: str = "first") -> np.ndarray:
    """All-at-once BVM solve by numerically diagonalizing the time matrix.

    order='first' solves u' = A u + g; order='second' solves u'' = A u
    through the squared time matrix, avoiding the companion doubling.
    Returns the trajectory including the initial row.
    """
    B = bvm_time_matrix(n_t, dt)
    lam, V = np.linalg.eig(B)
    times = dt * np.arange(1, n_t + 1)
    if order == "first":
        rhs = np.zeros((n_t, sys.n))
        rhs[0] = sys.u0 / (2.0 * dt)
        if sys.source is not None:
            for n in range(n_t):
                rhs[n] += sys.source(times[n])
        Ua = np.linalg.solve(V, rhs.astype(complex))
        Ub = np.empty_like(Ua)
        for n in range(n_t):
            Ub[n] = solve_shifted_banded(sys.A, (lam[n], 1.0), Ua[n])
        U = (V @ Ub).real
        out = np.empty((n_t + 1, sys.n))
        out[0] = sys.u0
        out[1:] = U
        return out
    if order == "second":
        if sys.order != "second":
            raise ValueError("order='second' expects a second-order system")
        rhs = np.zeros((n_t, sys.n))
        rhs[0] = sys.u0_deriv / (2.0 * dt)
        rhs[1] = -sys.u0 / (4.0 * dt**2)
        if sys.source is not None:
            # b = b2 + (B (x) I) b1 with the source entering the velocity rows
            src = np.stack([sys.source(t) for t in times])
            rhs += src
        Ua = np.linalg.solve(V, rhs.astype(complex))
        Ub = np.empty_like(Ua)
        for n in range(n_t):
            Ub[n] = solve_shifted_banded(sys.A, (lam[n] ** 2, 1.0), Ua[n])
        U = (V @ Ub).real
        out = np.empty((n_t + 1, sys.n))
        out[0] = sys.u0
        out[1:] = U
        return out
    raise ValueError(f"unknown order {order!r}")


# ---------------------------------------------------------------------------
# nonlinear quasi-Newton outer loop (averaged Jacobian / NKA weights)
# ---------------------------------------------------------------------------


def _banded_mean(mats):
    out = mats[0]
    for m in mats[1:]:
        out = out.add(m)
    return out.scaled(1.0 / len(mats))


def banded_frobenius_inner(X: BandedMatrix, Y: BandedMatrix) -> float:
    s = float(np.dot(X.diag, Y.diag) + np.dot(X.lower, Y.lower) + np.dot(X.upper, Y.upper))
    if X.periodic and Y.periodic:
        s += X.corner_top * Y.corner_top + X.corner_bottom * Y.corner_bottom
    return s


def nka_weights(jacobians, A_k: BandedMatrix) -> np.ndarray:
    """Per-time-point scalings minimizing ||blkdiag(J_n) - diag(phi) (x) A_k||_F."""
    denom = banded_frobenius_inner(A_k, A_k)
    if denom <= 0:
        raise ValueError("averaged Jacobian has zero Frobenius norm")
    return np.array([banded_frobenius_inner(J, A_k) / denom for J in jacobians])


def nka_weights_offline(sys_coarse, dt: float, n_t: int) -> np.ndarray:
    """Per-time-point Kronecker weights from a coarse-space reduced model.

    Runs the trapezoidal rule sequentially on the (cheap) coarse system and
    evaluates the weights at its states, so the fine quasi-Newton loop can
    reuse a single offline diagonal.
    """
    from .integrators import Propagator, propagate, trapezoidal

    prop = Propagator(trapezoidal(), dt=dt, steps=1)
    u = sys_coarse.u0.copy()
    jacobians = []
    for n in range(n_t):
        u = propagate(prop, sys_coarse, n * dt, (n + 1) * dt, u)
        jacobians.append(sys_coarse.jacobian(u))
    A_bar = _banded_mean(jacobians)
    return nka_weights(jacobians, A_bar)


class QuasiNewtonStagnation(ConvergenceError):
    pass


def paradiag1_quasi_newton(sys, time_disc, jac_mode: str = "mean_jacobian",
                           nka: bool = False, nka_weights_vec: Optional[np.ndarray] = None,
                           tol: float = 1e-10, max_iter: int = 100,
                           reference: Optional[np.ndarray] = None):
    """Quasi-Newton outer iteration for nonlinear all-at-once systems.

    ``time_disc`` is a :class:`GeometricTimeMesh` (variable-step backward
    Euler) or a tuple ``('bvm', dt, n_t)``.  Each outer iteration performs
    one diagonalized Jacobian solve with the averaged Jacobian A_k; with
    ``nka=True`` the Kronecker factor is diag(phi) (x) A_k instead of
    I (x) A_k.  Returns (trajectory, trace).
    """
    if isinstance(time_disc, GeometricTimeMesh):
        B = be_time_matrix(time_disc)
        times = time_disc.times[1:]
        b = np.zeros((time_disc.n_t, sys.n))
        b[0] = sys.u0 / time_disc.dts[0]
    else:
        tag, dt, n_t = time_disc
        if tag != "bvm":
            raise ValueError("time_disc must be a GeometricTimeMesh or ('bvm', dt, n_t)")
        B = bvm_time_matrix(n_t, dt)
        times = dt * np.arange(1, n_t + 1)
        b = np.zeros((n_t, sys.n))
        b[0] = sys.u0 / (2.0 * dt)
    n_t = B.shape[0]

    trace = IterationTrace(method="paradiag1_quasi_newton")
    U = np.tile(sys.u0, (n_t, 1))
    bad_steps = 0
    for it in range(max_iter):
        F = np.stack([sys.f(U[n], times[n]) for n in range(n_t)])
        jacobians = [sys.jacobian(U[n]) for n in range(n_t)]
        if jac_mode == "mean_jacobian":
            A_k = _banded_mean(jacobians)
        elif jac_mode == "jacobian_of_mean":
            A_k = sys.jacobian(U.mean(axis=0))
        else:
            raise ValueError(f"unknown jac_mode {jac_mode!r}")

        if nka:
            phi = nka_weights(jacobians, A_k) if nka_weights_vec is None else nka_weights_vec
            M = np.linalg.solve(B, np.diag(phi))
            lam, V = np.linalg.eig(M)
            # (I - B^-1 Phi (x) A_k) U+ = B^-1 (b + F(U)) - (B^-1 Phi (x) A_k) U
            AU = np.stack([A_k.matvec(U[n]) for n in range(n_t)])
            rhs = np.linalg.solve(B, b + F) - M @ AU
            Ua = np.linalg.solve(V, rhs.astype(complex))
            Ub = np.empty_like(Ua)
            for n in range(n_t):
                Ub[n] = solve_shifted_banded(A_k, (1.0, lam[n]), Ua[n])
            U_next = (V @ Ub).real
            trace.meta.setdefault("cond_V", []).append(float(np.linalg.cond(V)))
        else:
            AU = np.stack([A_k.matvec(U[n]) for n in range(n_t)])
            rhs = b - (AU - F)
            lam, V = np.linalg.eig(B)
            Ua = np.linalg.solve(V, rhs.astype(complex))
            Ub = np.empty_like(Ua)
            for n in range(n_t):
                Ub[n] = solve_shifted_banded(A_k, (lam[n], 1.0), Ua[n])
            U_next = (V @ Ub).real

        update = np.abs(U_next - U).max() / max(np.abs(U_next).max(), 1e-300)
        err = None
        if reference is not None:
            err = np.abs(U_next - reference[1:]).max()
        trace.record(error=err if err is not None else update, residual=update)
        if update > 1.0:
            bad_steps += 1
            if bad_steps >= 3:
                raise QuasiNewtonStagnation("relative update exceeded 1 three times")
        else:
            bad_steps = 0
        U = U_next
        if update <= tol:
            break
    out = np.empty((n_t + 1, sys.n))
    out[0] = sys.u0
    out[1:] = U
    return out, trace


# ---------------------------------------------------------------------------
# alpha-circulant factorization
# ---------------------------------------------------------------------------


@dataclass
class AlphaCirculantFactorization:
    """Spectral factorization C = V D V^-1 of an alpha-circulant matrix,
    V = Lambda_alpha F* with Lambda_alpha = diag(alpha^(-j/n))."""

    alpha: float
    n: int
    eigenvalues: np.ndarray
    _lam_scale: np.ndarray = field(repr=False, default=None)

    def to_eigenbasis(self, x: np.ndarray) -> np.ndarray:
        """Apply V^-1 = F Lambda^-1 along axis 0."""
        scale = self._lam_scale
        return dft(x * scale.reshape(-1, *([1] * (x.ndim - 1))))

    def from_eigenbasis(self, y: np.ndarray) -> np.ndarray:
        """Apply V = Lambda F* along axis 0."""
        out = idft(y)
        return out / self._lam_scale.reshape(-1, *([1] * (out.ndim - 1)))

    def reconstruct(self) -> np.ndarray:
        V = np.diag(1.0 / self._lam_scale).astype(complex) @ idft(np.eye(self.n))
        return V @ np.diag(self.eigenvalues) @ np.linalg.inv(V)


def alpha_circulant_factor(first_column: np.ndarray, alpha: float) -> AlphaCirculantFactorization:
    """Factor the alpha-circulant matrix with the given first column.

    Eigenvalues come from a scaled FFT of the first column,
    D = diag(sqrt(n) F Lambda_alpha c1); cost O(n log n).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    c1 = np.asarray(first_column, dtype=complex)
    n = c1.shape[0]
    lam_scale = alpha ** (np.arange(n) / n)  # Lambda_alpha^{-1} entries
    eig = np.fft.ifft(c1 * lam_scale, norm="forward")
    return AlphaCirculantFactorization(alpha=alpha, n=n, eigenvalues=eig, _lam_scale=lam_scale)


def alpha_circulant_dense(first_column: np.ndarray, alpha: float) -> np.ndarray:
    """Dense alpha-circulant matrix (wrap-around entries scaled by alpha)."""
    c1 = np.asarray(first_column, dtype=float)
    n = c1.shape[0]
    C = np.zeros((n, n))
    for j in range(n):
        col = np.roll(c1, j)
        col[:j] *= alpha
        C[:, j] = col
    return C


# ---------------------------------------------------------------------------
# ParaDiag II: alpha-circulant preconditioned iterations
# ---------------------------------------------------------------------------


def _theta_of(integrator: str) -> float:
    return {"backward_euler": 1.0, "trapezoidal": 0.5}[integrator]


@dataclass
class _FirstOrderAllAtOnce:
    """K = I_t (x) r1 - B (x) r2 for a one-step theta method."""

    sys: SemiDiscreteSystem
    theta: float
    dt: float
    n_t: int

    def r1_apply(self, u):
        return u - self.theta * self.dt * self.sys.A.matvec(u)

    def r2_apply(self, u):
        return u + (1.0 - self.theta) * self.dt * self.sys.A.matvec(u)

    def apply(self, U):
        out = np.empty_like(U)
        for n in range(self.n_t):
            out[n] = self.r1_apply(U[n])
            if n > 0:
                out[n] -= self.r2_apply(U[n - 1])
        return out

    def rhs(self):
        th, dt = self.theta, self.dt
        b = np.zeros((self.n_t, self.sys.n))
        b[0] = self.r2_apply(self.sys.u0)
        if self.sys.source is not None:
            for n in range(self.n_t):
                t0, t1 = n * dt, (n + 1) * dt
                b[n] += dt * ((1 - th) * self.sys.source(t0) + th * self.sys.source(t1))
        return b

    def solve_shifted_block(self, d, rhs):
        """Solve (r1 - d*r2) x = rhs, a single shifted banded solve."""
        a = 1.0 - d
        bcoef = self.dt * (self.theta + d * (1.0 - self.theta))
        return solve_shifted_banded(self.sys.A, (a, bcoef), rhs)

    def sequential_solve(self):
        U = np.empty((self.n_t, self.sys.n))
        b = self.rhs()
        prev = None
        for n in range(self.n_t):
            r = b[n] + (self.r2_apply(prev) if prev is not None else 0.0)
            prev = solve_shifted_banded(self.sys.A, (1.0, self.theta * self.dt), r)
            U[n] = prev
        return U

    def first_columns(self):
        c1 = np.zeros(self.n_t)
        c1[0] = 1.0
        c_b = np.zeros(self.n_t)
        if self.n_t > 1:
            c_b[1] = 1.0
        return c1, c_b  # columns of I_t and B (shift)

    def precond_solve(self, fac_I, fac_B, R):
        Ra = fac_I.to_eigenbasis(R.astype(complex))
        d1 = fac_I.eigenvalues
        d2 = fac_B.eigenvalues
        Rb = np.empty_like(Ra)
        for n in range(self.n_t):
            # d1[n]*r1 - d2[n]*r2 = (d1-d2) I - dt (d1*th + d2*(1-th)) A
            a = d1[n] - d2[n]
            bcoef = self.dt * (d1[n] * self.theta + d2[n] * (1.0 - self.theta))
            Rb[n] = solve_shifted_banded(self.sys.A, (a, bcoef), Ra[n])
        return fac_I.from_eigenbasis(Rb)


@dataclass
class _SecondOrderAllAtOnce:
    """K = Btilde (x) r1 - B (x) r2 for the Numerov pair on u'' = A u + g."""

    sys: SemiDiscreteSystem
    gamma: float
    dt: float
    n_t: int
    u1: np.ndarray = None

    def __post_init__(self):
        self.r1, self.r2 = numerov_matrices(self.sys, self.gamma, self.dt)
        if self.u1 is None:
            self.u1 = numerov_bootstrap(self.sys, self.dt)

    def _apply_poly(self, coeffs, u):
        from .integrators import apply_poly

        return apply_poly(self.sys.A, coeffs, u)

    def apply(self, U):
        out = np.empty_like(U)
        for n in range(self.n_t):
            out[n] = self._apply_poly(self.r1, U[n])
            if n >= 1:
                out[n] -= self._apply_poly(self.r2, U[n - 1])
            if n >= 2:
                out[n] += self._apply_poly(self.r1, U[n - 2])
        return out

    def rhs(self):
        from .integrators import numerov_source

        b = np.zeros((self.n_t, self.sys.n))
        b[0] = self._apply_poly(self.r1, self.u1)
        if self.n_t > 1:
            b[1] = -self._apply_poly(self.r1, self.sys.u0)
            g1 = numerov_source(self.sys, self.dt, self.dt)
            if g1 is not None:
                b[1] += g1
        for j in range(2, self.n_t):
            g = numerov_source(self.sys, self.dt, j * self.dt)
            if g is not None:
                b[j] += g
        return b

    def first_columns(self):
        c_tilde = np.zeros(self.n_t)
        c_tilde[0] = 1.0
        if self.n_t > 2:
            c_tilde[2] = 1.0
        c_b = np.zeros(self.n_t)
        if self.n_t > 1:
            c_b[1] = 1.0
        return c_tilde, c_b

    def solve_block(self, d1, d2, rhs):
        """Solve (d1*r1 - d2*r2) x = rhs (quadratic polynomial in A)."""
        coeffs = tuple(d1 * a - d2 * b for a, b in zip(self.r1, self.r2))
        return solve_poly_in_matrix(self.sys.A, coeffs, rhs)

    def precond_solve(self, fac_tilde, fac_B, R):
        Ra = fac_tilde.to_eigenbasis(R.astype(complex))
        Rb = np.empty_like(Ra)
        for n in range(self.n_t):
            Rb[n] = self.solve_block(fac_tilde.eigenvalues[n], fac_B.eigenvalues[n], Ra[n])
        return fac_tilde.from_eigenbasis(Rb)

    def sequential_solve(self):
        from .integrators import numerov_step

        U = np.empty((self.n_t, self.sys.n))
        U[0] = self.u1
        prev, curr = self.sys.u0, self.u1
        for n in range(1, self.n_t):
            nxt = numerov_step(self.sys, self.gamma, self.dt, prev, curr, t_curr=n * self.dt)
            U[n] = nxt
            prev, curr = curr, nxt
        return U


def make_all_at_once(sys, integrator, dt, n_t, gamma: float = 1.0 / 120.0, u1=None):
    """Assemble the all-at-once operator for paradiag2_solve and tests."""
    if getattr(sys, "order", "first") == "second":
        return _SecondOrderAllAtOnce(sys, gamma, dt, n_t, u1=u1)
    return _FirstOrderAllAtOnce(sys, _theta_of(integrator), dt, n_t)


def paradiag2_solve(sys, integrator: str, alpha: float, dt: float, n_t: int,
                    mode: str = "stationary", order: str = "first",
                    gamma: float = 1.0 / 120.0, tol: float = 1e-10,
                    max_iter: Optional[int] = None, implementation: str = "increment",
                    reference: Optional[np.ndarray] = None, u_init=None):
    """All-at-once solve with the alpha-circulant preconditioner.

    mode='stationary' iterates P_alpha dU = b - K U; mode='gmres' runs
    right-preconditioned GMRES with the same preconditioner application.
    ``implementation`` picks the increment form (default, roundoff-friendly)
    or the direct form that rebuilds the head-tail right-hand side each
    sweep.  Returns (trajectory including initial row, trace).
    """
    op = make_all_at_once(sys, integrator, dt, n_t, gamma=gamma)
    b = op.rhs()
    cols = op.first_columns()
    try:
        fac_a = alpha_circulant_factor(cols[0], alpha)
        fac_b = alpha_circulant_factor(cols[1], alpha)
        op.precond_solve(fac_a, fac_b, b)  # fail fast on singular blocks
    except SingularSystemError as exc:
        raise SingularSystemError(
            f"alpha={alpha} preconditioner is singular for this operator"
        ) from exc

    trace = IterationTrace(method=f"paradiag2_{mode}")
    n = b.shape[1]
    if max_iter is None:
        max_iter = 200 if mode == "gmres" else 100
    if mode == "gmres":
        flat_apply = lambda x: op.apply(x.reshape(n_t, n)).ravel()
        flat_prec = lambda x: op.precond_solve(fac_a, fac_b, x.reshape(n_t, n)).ravel()
        x, hist = gmres(flat_apply, b.ravel().astype(complex), apply_right_prec=flat_prec,
                        tol=tol, max_iter=max_iter)
        U = x.reshape(n_t, n).real
        for r in hist:
            trace.record(residual=r)
    elif mode == "stationary":
        U = np.zeros_like(b) if u_init is None else u_init.copy()
        bnorm = max(np.abs(b).max(), 1e-300)
        for _ in range(max_iter):
            if implementation == "increment":
                r = b - op.apply(U)
                U = U + op.precond_solve(fac_a, fac_b, r).real
                resid = np.abs(r).max()
            elif implementation == "direct":
                bk = (_precond_minus_K_apply(op, fac_a, fac_b, U, alpha) + b)
                U = op.precond_solve(fac_a, fac_b, bk).real
                resid = np.abs(b - op.apply(U)).max()
            else:
                raise ValueError(f"unknown implementation {implementation!r}")
            err = None if reference is None else np.abs(U - reference).max()
            trace.record(error=err if err is not None else resid / bnorm,
                         residual=resid / bnorm)
            if resid / bnorm <= tol:
                break
    else:
        raise ValueError(f"unknown mode {mode!r}")

    out = np.empty((n_t + 1, n))
    out[0] = sys.u0
    out[1:] = U
    return out, trace


def _precond_minus_K_apply(op, fac_a, fac_b, U, alpha):
    """(P_alpha - K) U: only the alpha-corner terms survive."""
    out = np.zeros_like(U)
    if isinstance(op, _FirstOrderAllAtOnce):
        out[0] = -alpha * op.r2_apply(U[-1])
        return out
    # second order: Btilde corners at rows 1,2; B corner from r2 at row 1
    out[0] = alpha * (op._apply_poly(op.r1, U[-2]) - op._apply_poly(op.r2, U[-1]))
    out[1] = alpha * op._apply_poly(op.r1, U[-1])
    return out


def dense_paradiag2_operators(sys, integrator: str, alpha: float, dt: float, n_t: int,
                              gamma: float = 1.0 / 120.0):
    """Dense (K, P_alpha) for desk-scale spectral checks."""
    op = make_all_at_once(sys, integrator, dt, n_t, gamma=gamma)
    n = sys.n
    if isinstance(op, _FirstOrderAllAtOnce):
        A = sys.A.to_dense()
        r1 = np.eye(n) - op.theta * dt * A
        r2 = np.eye(n) + (1 - op.theta) * dt * A
        Bshift = np.eye(n_t, k=-1)
        K = np.kron(np.eye(n_t), r1) - np.kron(Bshift, r2)
        C = alpha_circulant_dense(op.first_columns()[1], alpha)
        P = np.kron(np.eye(n_t), r1) - np.kron(C, r2)
        return K, P
    A = sys.A.to_dense()
    Z = dt**2 * A
    r1 = np.eye(n) - Z / 12.0 + 10.0 * gamma / 12.0 * (Z @ Z)
    r2 = 2.0 * np.eye(n) + 10.0 / 12.0 * Z + 20.0 * gamma / 12.0 * (Z @ Z)
    Btilde = np.eye(n_t) + np.eye(n_t, k=-2)
    Bshift = np.eye(n_t, k=-1)
    K = np.kron(Btilde, r1) - np.kron(Bshift, r2)
    ct, cb = op.first_columns()
    P = np.kron(alpha_circulant_dense(ct, alpha), r1) - np.kron(
        alpha_circulant_dense(cb, alpha), r2
    )
    return K, P
