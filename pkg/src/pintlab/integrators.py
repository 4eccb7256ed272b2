"""Time integrators and the coarse/fine propagator abstraction.

One-step methods (backward Euler, trapezoidal, theta, SDIRK22, SDIRK23 and
the exact exponential) step first-order systems; the parametrized
Numerov-type method steps second-order systems directly.  ``Propagator``
bundles a method with a step size and step count and is the building block
every shooting-type method composes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import ConvergenceError, expm_action, solve_poly_in_matrix, solve_shifted_banded
from .models import CompanionSystem, SemiDiscreteSystem

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class OneStepMethod:
    name: str
    theta: Optional[float] = None
    # SDIRK data: diagonal gamma, subdiagonal a21, weights (b1, b2)
    gamma: Optional[float] = None
    a21: Optional[float] = None
    b: Optional[tuple] = None

    def __str__(self):
        return self.name


def backward_euler() -> OneStepMethod:
    return OneStepMethod("backward_euler", theta=1.0)


def trapezoidal() -> OneStepMethod:
    return OneStepMethod("trapezoidal", theta=0.5)


def theta_method(theta: float) -> OneStepMethod:
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    return OneStepMethod("theta", theta=theta)


def sdirk22() -> OneStepMethod:
    g = (2.0 - SQRT2) / 2.0
    return OneStepMethod("sdirk22", gamma=g, a21=1.0 - g, b=(1.0 - g, g))


def sdirk23() -> OneStepMethod:
    g = (3.0 + SQRT3) / 6.0
    return OneStepMethod("sdirk23", gamma=g, a21=-1.0 / SQRT3, b=(0.5, 0.5))


def exact_exponential() -> OneStepMethod:
    """Propagates linear homogeneous systems with the matrix exponential."""
    return OneStepMethod("exact")


@dataclass(frozen=True)
class TwoStepSecondOrderMethod:
    name: str
    gamma: Optional[float] = None


def numerov(gamma: float) -> TwoStepSecondOrderMethod:
    return TwoStepSecondOrderMethod("numerov", gamma=gamma)


def trapezoidal_wave() -> TwoStepSecondOrderMethod:
    return TwoStepSecondOrderMethod("trapezoidal_wave")


def stability(method: OneStepMethod, z):
    """Stability function R(z); accepts scalars or arrays."""
    z = np.asarray(z)
    if method.name == "exact":
        return np.exp(z)
    if method.theta is not None:
        th = method.theta
        den = 1.0 - th * z
        if np.any(den == 0):
            raise ZeroDivisionError("stability function pole")
        return (1.0 + (1.0 - th) * z) / den
    g, a21, (b1, b2) = method.gamma, method.a21, method.b
    den = 1.0 - g * z
    if np.any(den == 0):
        raise ZeroDivisionError("stability function pole")
    k1 = z / den
    k2 = z * (1.0 + a21 * k1) / den
    return 1.0 + b1 * k1 + b2 * k2


def nominal_order(method) -> int:
    return {
        "backward_euler": 1,
        "trapezoidal": 2,
        "theta": 2,
        "sdirk22": 2,
        "sdirk23": 3,
        "numerov": 4,
    }[method.name]


@dataclass(frozen=True)
class TimeGrid:
    """Window boundaries T_0 < ... < T_{N_t}; each window holds J fine steps."""

    boundaries: np.ndarray
    J: int
    mu: Optional[float] = None

    @classmethod
    def uniform(cls, T: float, n_windows: int, J: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n_windows + 1), J)

    @property
    def n_windows(self) -> int:
        return self.boundaries.shape[0] - 1

    @property
    def T(self) -> float:
        return float(self.boundaries[-1])

    def window(self, i: int):
        return float(self.boundaries[i]), float(self.boundaries[i + 1])

    def window_length(self, i: int = 0) -> float:
        return float(self.boundaries[i + 1] - self.boundaries[i])

    def fine_times(self) -> np.ndarray:
        chunks = [np.array([self.boundaries[0]])]
        for i in range(self.n_windows):
            a, b = self.window(i)
            chunks.append(np.linspace(a, b, self.J + 1)[1:])
        return np.concatenate(chunks)


@dataclass(frozen=True)
class Propagator:
    """A named one-step integrator applied for ``steps`` steps of size ``dt``."""

    method: OneStepMethod
    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0 or self.steps < 1:
            raise ValueError("need dt > 0 and steps >= 1")

    def span(self) -> float:
        return self.dt * self.steps


def _newton(sys, c, rhs, t_eval, guess, tol=1e-12, max_iter=50, frozen_jacobian=False):
    """Solve y - c*f(y, t_eval) = rhs by Newton with banded Jacobian solves."""
    y = guess.copy()
    jac = None
    for _ in range(max_iter):
        res = y - c * sys.f(y, t_eval) - rhs
        nrm = np.abs(res).max()
        if nrm <= tol * max(1.0, np.abs(y).max()):
            return y
        if jac is None or not frozen_jacobian:
            jac = sys.jacobian(y)
        delta = solve_shifted_banded(jac, (1.0, c), res)
        y = y - delta
        if not np.all(np.isfinite(y)):
            raise ConvergenceError("Newton iterate became non-finite")
    raise ConvergenceError("Newton did not converge")


def _solve_shift(sys, a, b, rhs):
    if isinstance(sys, CompanionSystem):
        return sys.solve_shift(a, b, rhs)
    return solve_shifted_banded(sys.A, (a, b), rhs)


def _apply_A(sys, u):
    if isinstance(sys, CompanionSystem):
        return sys.matvec(u)
    return sys.A.matvec(u)


def _g_columns(sys, ts, like):
    """Source values at per-column times ``ts`` stacked as columns."""
    cols = np.zeros_like(like)
    for j, t in enumerate(np.atleast_1d(ts)):
        gv = sys.g(float(t))
        if gv is not None:
            cols[:, j] = gv
    return cols


def _step_linear_block(method, sys, dt, t0s, U):
    """One step of ``method`` on the linear system for a block of states.

    ``U`` is (n, k); column j starts at time t0s[j].  The same factored
    matrix serves every column, so the step is a pure map over columns.
    """
    has_g = sys.source is not None
    if method.name == "exact":
        if has_g:
            raise ValueError("exact exponential propagator needs a homogeneous system")
        op = sys if isinstance(sys, CompanionSystem) else sys.A
        return expm_action(op, dt, U)
    if method.theta is not None:
        th = method.theta
        rhs = U + (1.0 - th) * dt * _apply_A(sys, U)
        if has_g:
            rhs = rhs + dt * (
                (1.0 - th) * _g_columns(sys, t0s, U) + th * _g_columns(sys, t0s + dt, U)
            )
        return _solve_shift(sys, 1.0, th * dt, rhs)
    g, a21, (b1, b2) = method.gamma, method.a21, method.b
    rhs1 = _apply_A(sys, U)
    if has_g:
        rhs1 = rhs1 + _g_columns(sys, t0s + g * dt, U)
    k1 = _solve_shift(sys, 1.0, g * dt, rhs1)
    y2 = U + dt * a21 * k1
    rhs2 = _apply_A(sys, y2)
    if has_g:
        rhs2 = rhs2 + _g_columns(sys, t0s + (a21 + g) * dt, U)
    k2 = _solve_shift(sys, 1.0, g * dt, rhs2)
    return U + dt * (b1 * k1 + b2 * k2)


def _step_nonlinear(method, sys, dt, t0, u, newton_tol, frozen_jacobian):
    if method.theta is not None:
        th = method.theta
        rhs = u + (1.0 - th) * dt * sys.f(u, t0)
        return _newton(sys, th * dt, rhs, t0 + dt, u, tol=newton_tol,
                       frozen_jacobian=frozen_jacobian)
    g, a21, (b1, b2) = method.gamma, method.a21, method.b
    c1, c2 = g, a21 + g
    y1 = _newton(sys, g * dt, u, t0 + c1 * dt, u, tol=newton_tol,
                 frozen_jacobian=frozen_jacobian)
    k1 = sys.f(y1, t0 + c1 * dt)
    y2 = _newton(sys, g * dt, u + dt * a21 * k1, t0 + c2 * dt, y1,
                 tol=newton_tol, frozen_jacobian=frozen_jacobian)
    k2 = sys.f(y2, t0 + c2 * dt)
    return u + dt * (b1 * k1 + b2 * k2)


def propagate(prop: Propagator, sys, t0: float, t1: float, u: np.ndarray,
              newton_tol: float = 1e-12, frozen_jacobian: bool = False) -> np.ndarray:
    """Advance ``u`` from t0 to t1 with ``prop.steps`` steps of ``prop.method``."""
    span = t1 - t0
    if abs(span - prop.span()) > 1e-12 * max(1.0, abs(span)):
        raise ValueError("propagator steps*dt does not cover the window")
    out = propagate_block(prop, sys, np.array([t0]), u[:, None],
                          newton_tol=newton_tol, frozen_jacobian=frozen_jacobian)
    return out[:, 0]


def propagate_block(prop: Propagator, sys, t0s: np.ndarray, U: np.ndarray,
                    newton_tol: float = 1e-12, frozen_jacobian: bool = False,
                    pmap=None) -> np.ndarray:
    """Propagate a block of window states over one window each.

    Column j of ``U`` starts at t0s[j]; all windows span prop.steps*prop.dt.
    Linear systems advance all columns through shared factored solves;
    nonlinear ones map Newton stepping over columns (`pmap` hook).
    """
    linear = getattr(sys, "linear", True)
    if linear:
        W = U.copy()
        for s in range(prop.steps):
            W = _step_linear_block(prop.method, sys, prop.dt, t0s + s * prop.dt, W)
            if not np.all(np.isfinite(W)):
                raise ConvergenceError("propagation produced non-finite values")
        return W

    def run_column(j):
        u = U[:, j].copy()
        for s in range(prop.steps):
            u = _step_nonlinear(prop.method, sys, prop.dt, float(t0s[j] + s * prop.dt),
                                u, newton_tol, frozen_jacobian)
        return u

    mapper = pmap if pmap is not None else map
    cols = list(mapper(run_column, range(U.shape[1])))
    return np.stack(cols, axis=1)


def numerov_matrices(sys: SemiDiscreteSystem, gamma: float, dt: float):
    """Polynomial coefficients (in A) of the Numerov pair r1, r2."""
    if sys.order != "second":
        raise ValueError("Numerov applies to second-order systems")
    r1 = (1.0, -dt**2 / 12.0, 10.0 * gamma * dt**4 / 12.0)
    r2 = (2.0, 10.0 * dt**2 / 12.0, 20.0 * gamma * dt**4 / 12.0)
    return r1, r2


def apply_poly(A, coeffs, u):
    out = coeffs[0] * u
    power = u
    for c in coeffs[1:]:
        power = A.matvec(power)
        out = out + c * power
    return out


def numerov_source(sys, dt, t_curr):
    if sys.source is None:
        return None
    gm, g0, gp = sys.source(t_curr - dt), sys.source(t_curr), sys.source(t_curr + dt)
    return (dt**2 / 12.0) * (gp + 10.0 * g0 + gm)


def numerov_step(sys: SemiDiscreteSystem, gamma: float, dt: float,
                 u_prev: np.ndarray, u_curr: np.ndarray, t_curr: float = 0.0) -> np.ndarray:
    """One step of the parametrized Numerov-type method:
    r1 u_{n+1} = r2 u_n - r1 u_{n-1} + g_n."""
    r1, r2 = numerov_matrices(sys, gamma, dt)
    rhs = apply_poly(sys.A, r2, u_curr) - apply_poly(sys.A, r1, u_prev)
    gsrc = numerov_source(sys, dt, t_curr)
    if gsrc is not None:
        rhs = rhs + gsrc
    return solve_poly_in_matrix(sys.A, r1, rhs)


def numerov_bootstrap(sys: SemiDiscreteSystem, dt: float) -> np.ndarray:
    """Second starting value from one trapezoidal step on the companion form."""
    comp = CompanionSystem(sys)
    prop = Propagator(trapezoidal(), dt=dt, steps=1)
    w1 = propagate(prop, comp, 0.0, dt, comp.u0)
    return w1[: sys.n]


def numerov_solve(sys: SemiDiscreteSystem, gamma: float, dt: float, n_steps: int,
                  u1: Optional[np.ndarray] = None) -> np.ndarray:
    """Sequential Numerov trajectory (n_steps+1 rows, starting at u0)."""
    out = np.empty((n_steps + 1, sys.n))
    out[0] = sys.u0
    if n_steps == 0:
        return out
    out[1] = numerov_bootstrap(sys, dt) if u1 is None else u1
    for n in range(1, n_steps):
        out[n + 1] = numerov_step(sys, gamma, dt, out[n - 1], out[n], t_curr=n * dt)
    return out
