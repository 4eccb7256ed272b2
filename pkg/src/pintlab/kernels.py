"""Shared numerical primitives: banded/cyclic solves, DFT, matrix
exponential action, triangular-Toeplitz application, and a small GMRES.

All solvers accept real or complex data.  Vectors live on axis 0, so every
routine also accepts an ``(n, k)`` block of right-hand sides and solves the
k systems in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg


class SingularSystemError(RuntimeError):
    """A (nearly) singular linear system was encountered."""


class ConvergenceError(RuntimeError):
    """An iterative kernel failed to reach its tolerance."""


# Pivots (or capacitance determinants) below PIVOT_RTOL times the matrix
# scale are treated as exact singularities rather than roundoff.
PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class BandedMatrix:
    """Tridiagonal matrix with optional periodic wrap-around corners.

    ``lower``, ``diag``, ``upper`` are the sub-, main and super-diagonal;
    ``corner_top`` is entry ``(0, n-1)`` and ``corner_bottom`` entry
    ``(n-1, 0)``.  Corners must both be set or both absent.
    """

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    corner_top: Optional[float] = None
    corner_bottom: Optional[float] = None

    def __post_init__(self):
        n = self.diag.shape[0]
        if n >= 2 and (self.lower.shape[0] != n - 1 or self.upper.shape[0] != n - 1):
            raise ValueError("band lengths inconsistent with size")
        if (self.corner_top is None) != (self.corner_bottom is None):
            raise ValueError("periodic corners must be given together")

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def periodic(self) -> bool:
        return self.corner_top is not None

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """A @ v for a vector ``(n,)`` or block of columns ``(n, k)``."""
        out = self.diag.reshape(-1, *([1] * (v.ndim - 1))) * v
        if self.n >= 2:
            out[:-1] += self.upper.reshape(-1, *([1] * (v.ndim - 1))) * v[1:]
            out[1:] += self.lower.reshape(-1, *([1] * (v.ndim - 1))) * v[:-1]
        if self.periodic and self.n >= 3:
            out[0] += self.corner_top * v[-1]
            out[-1] += self.corner_bottom * v[0]
        return out

    def __matmul__(self, v):
        return self.matvec(v)

    def to_dense(self) -> np.ndarray:
        dtype = np.result_type(self.diag, self.lower, self.upper)
        a = np.zeros((self.n, self.n), dtype=dtype)
        np.fill_diagonal(a, self.diag)
        if self.n >= 2:
            a[np.arange(self.n - 1) + 1, np.arange(self.n - 1)] = self.lower
            a[np.arange(self.n - 1), np.arange(self.n - 1) + 1] = self.upper
        if self.periodic and self.n >= 3:
            a[0, -1] += self.corner_top
            a[-1, 0] += self.corner_bottom
        return a

    def scaled(self, c) -> "BandedMatrix":
        return BandedMatrix(
            c * self.diag,
            c * self.lower,
            c * self.upper,
            None if self.corner_top is None else c * self.corner_top,
            None if self.corner_bottom is None else c * self.corner_bottom,
        )

    def add(self, other: "BandedMatrix") -> "BandedMatrix":
        if self.periodic != other.periodic:
            # mixed case: keep the corners that exist
            ct = self.corner_top if self.periodic else other.corner_top
            cb = self.corner_bottom if self.periodic else other.corner_bottom
        elif self.periodic:
            ct = self.corner_top + other.corner_top
            cb = self.corner_bottom + other.corner_bottom
        else:
            ct = cb = None
        return BandedMatrix(
            self.diag + other.diag,
            self.lower + other.lower,
            self.upper + other.upper,
            ct,
            cb,
        )

    def scale_columns(self, u: np.ndarray) -> "BandedMatrix":
        """Return A @ diag(u), still banded."""
        return BandedMatrix(
            self.diag * u,
            self.lower * u[:-1],
            self.upper * u[1:],
            None if self.corner_top is None else self.corner_top * u[-1],
            None if self.corner_bottom is None else self.corner_bottom * u[0],
        )

    def norm_inf(self) -> float:
        s = np.abs(self.diag).astype(float)
        if self.n >= 2:
            s[:-1] += np.abs(self.upper)
            s[1:] += np.abs(self.lower)
        if self.periodic:
            s[0] += abs(self.corner_top)
            s[-1] += abs(self.corner_bottom)
        return float(s.max())


def identity_banded(n: int) -> BandedMatrix:
    return BandedMatrix(np.ones(n), np.zeros(max(n - 1, 0)), np.zeros(max(n - 1, 0)))


def _solve_tridiag_core(dl, d, du, rhs):
    """Solve the (non-periodic) tridiagonal system via LAPACK banded LU."""
    n = d.shape[0]
    if n == 1:
        scale = max(abs(d[0]), 1.0)
        if abs(d[0]) <= PIVOT_RTOL * scale:
            raise SingularSystemError("1x1 pivot underflow")
        return rhs / d[0]
    dtype = np.result_type(d, rhs)
    ab = np.zeros((3, n), dtype=dtype)
    ab[0, 1:] = du
    ab[1, :] = d
    ab[2, :-1] = dl
    try:
        x = scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:  # pragma: no cover
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution from banded solve")
    return x


def solve_shifted_banded(A: BandedMatrix, shift, rhs: np.ndarray) -> np.ndarray:
    """Solve (a*I - b*A) x = rhs for scalars ``shift = (a, b)``.

    Periodic corners are removed by a rank-2 Sherman-Morrison-Woodbury
    correction of the plain tridiagonal solve, so the cost stays O(n).
    ``rhs`` may be ``(n,)`` or ``(n, k)``; ``a``, ``b`` may be complex.
    """
    a, b = shift
    n = A.n
    dtype = np.result_type(A.diag, np.asarray(a), np.asarray(b), rhs)
    d = a - b * A.diag.astype(dtype)
    if n == 1:
        return _solve_tridiag_core(None, d, None, rhs)
    dl = -b * A.lower.astype(dtype)
    du = -b * A.upper.astype(dtype)
    scale = max(np.abs(d).max(), np.abs(dl).max(), np.abs(du).max(), 1e-300)
    if not A.periodic or b == 0:  # corners vanish with b = 0
        x = _solve_tridiag_core(dl, d, du, rhs)
        # near-singular systems pass LAPACK but blow the solution up;
        # confirm with a residual check before accepting such a solve
        if np.abs(x).max() * scale * PIVOT_RTOL > 10.0 * np.abs(rhs).max() + 1e-300:
            res = a * x - b * A.matvec(x) - rhs
            if np.abs(res).max() > 1e-6 * (np.abs(rhs).max() + scale * np.abs(x).max()):
                raise SingularSystemError("near-singular shifted banded system")
        return x

    # Woodbury: M = M0 + U @ W^T with U = -b*[ct*e0, cb*e_{n-1}], W = [e_{n-1}, e0]
    ct = -b * A.corner_top
    cb = -b * A.corner_bottom
    rhs_cols = rhs if rhs.ndim == 2 else rhs[:, None]
    u_mat = np.zeros((n, 2), dtype=dtype)
    u_mat[0, 0] = ct
    u_mat[-1, 1] = cb
    block = np.concatenate([rhs_cols.astype(dtype), u_mat], axis=1)
    sol = _solve_tridiag_core(dl, d, du, block)
    x0, z = sol[:, : rhs_cols.shape[1]], sol[:, rhs_cols.shape[1] :]
    cap = np.eye(2, dtype=dtype)
    cap[0, :] += z[-1, :]
    cap[1, :] += z[0, :]
    det = cap[0, 0] * cap[1, 1] - cap[0, 1] * cap[1, 0]
    if abs(det) <= PIVOT_RTOL * max(np.abs(cap).max(), 1.0):
        raise SingularSystemError("singular periodic correction (capacitance)")
    wx = np.stack([x0[-1, :], x0[0, :]])
    x = x0 - z @ np.linalg.solve(cap, wx)
    # Guard against ill-conditioning that slipped past the determinant test.
    res = a * x - b * A.matvec(x) - rhs_cols
    tol = 1e-6 * (np.abs(rhs_cols).max() + scale * np.abs(x).max() + 1e-300)
    if np.abs(res).max() > tol:
        raise SingularSystemError("periodic solve residual too large")
    return x if rhs.ndim == 2 else x[:, 0]


def solve_poly_in_matrix(A: BandedMatrix, coeffs, rhs: np.ndarray) -> np.ndarray:
    """Solve (c0*I + c1*A + c2*A^2 + ...) x = rhs.

    Degree <= 1 dispatches to the shifted tridiagonal solver.  Degree 2
    without periodic corners is solved as one pentadiagonal system; the
    periodic quadratic case falls back to a dense solve (desk scale only).
    """
    coeffs = list(coeffs)
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    if len(coeffs) == 1:
        return solve_shifted_banded(A, (coeffs[0], 0.0), rhs)
    if len(coeffs) == 2:
        return solve_shifted_banded(A, (coeffs[0], -coeffs[1]), rhs)
    if len(coeffs) > 3 or A.periodic:
        dense = sum(
            c * np.linalg.matrix_power(A.to_dense(), k) for k, c in enumerate(coeffs)
        )
        try:
            return np.linalg.solve(dense, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(str(exc)) from exc
    c0, c1, c2 = coeffs
    n = A.n
    dtype = np.result_type(A.diag, np.asarray(c0), np.asarray(c1), np.asarray(c2), rhs)
    dl1 = A.lower.astype(dtype)
    d = A.diag.astype(dtype)
    du1 = A.upper.astype(dtype)
    # bands of A^2 for a plain tridiagonal A
    sq_d = np.zeros(n, dtype=dtype)
    sq_d[:] = d * d
    sq_d[:-1] += du1 * dl1
    sq_d[1:] += dl1 * du1
    sq_l1 = dl1 * (d[:-1] + d[1:])
    sq_u1 = du1 * (d[:-1] + d[1:])
    sq_l2 = dl1[1:] * dl1[:-1]
    sq_u2 = du1[:-1] * du1[1:]
    ab = np.zeros((5, n), dtype=dtype)
    ab[0, 2:] = c2 * sq_u2
    ab[1, 1:] = c1 * du1 + c2 * sq_u1
    ab[2, :] = c0 + c1 * d + c2 * sq_d
    ab[3, :-1] = c1 * dl1 + c2 * sq_l1
    ab[4, :-2] = c2 * sq_l2
    try:
        x = scipy.linalg.solve_banded((2, 2), ab, rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution from pentadiagonal solve")
    return x


def dft(v: np.ndarray) -> np.ndarray:
    """Apply the unitary Fourier matrix F (positive-exponent convention,
    1/sqrt(N) normalization) along axis 0."""
    return np.fft.ifft(v, axis=0, norm="ortho")


def idft(v: np.ndarray) -> np.ndarray:
    """Apply F* (the conjugate transpose of :func:`dft`) along axis 0."""
    return np.fft.fft(v, axis=0, norm="ortho")


def toeplitz_lower_apply(coeffs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the unit-diagonal lower-triangular Toeplitz operator
    T(a_1, ..., a_m) to ``v`` (axis 0); ``coeffs`` holds a_1..a_m."""
    coeffs = np.asarray(coeffs)
    n = v.shape[0]
    if coeffs.shape[0] > n:
        raise ValueError("more Toeplitz coefficients than vector entries")
    first_col = np.zeros(n, dtype=np.result_type(coeffs, v, float))
    first_col[0] = 1.0
    first_col[1 : 1 + coeffs.shape[0]] = coeffs
    if v.ndim == 1:
        return np.convolve(first_col, v)[:n]
    out = np.empty((n, v.shape[1]), dtype=np.result_type(first_col, v))
    for j in range(v.shape[1]):
        out[:, j] = np.convolve(first_col, v[:, j])[:n]
    return out


def _matvec_of(A):
    if hasattr(A, "matvec") and hasattr(A, "norm_inf"):
        return A.matvec, A.n, A.norm_inf()
    A = np.asarray(A)
    if A.ndim == 0 or A.size == 1:
        A = A.reshape(1, 1)
    norm = float(np.abs(A).sum(axis=1).max())
    return (lambda v: A @ v), A.shape[0], norm


def expm_action(A, t: float, v: np.ndarray, tol: float = 1e-13,
                max_terms: int = 80, method: str = "auto",
                krylov_dim: int = 60) -> np.ndarray:
    """Compute exp(t*A) @ v without forming the exponential.

    Default path: split t into substeps with ||(t/s)A||_inf <= 4 and apply a
    truncated Taylor series per substep.  ``method='arnoldi'`` projects onto
    a Krylov subspace instead (used for larger operators).
    """
    matvec, n, anorm = _matvec_of(A)
    v = np.asarray(v, dtype=float if not np.iscomplexobj(v) else complex)
    if t == 0.0 or anorm == 0.0:
        return v.copy()
    if method == "auto":
        method = "arnoldi" if n > 512 else "taylor"
    if method == "taylor":
        s = max(1, int(np.ceil(abs(t) * anorm / 4.0)))
        h = t / s
        w = v.astype(np.result_type(v, float))
        for _ in range(s):
            term = w
            acc = w.copy()
            norm_acc = np.linalg.norm(acc)
            for j in range(1, max_terms + 1):
                term = (h / j) * matvec(term)
                acc = acc + term
                if np.linalg.norm(term) <= tol * max(norm_acc, np.linalg.norm(acc)):
                    break
            else:
                raise ConvergenceError("Taylor series for expm action did not converge")
            w = acc
        return w
    if method == "arnoldi":
        return _expm_arnoldi(matvec, t, v, tol, krylov_dim)
    raise ValueError(f"unknown expm method {method!r}")


def _expm_arnoldi(matvec, t, v, tol, m_max):
    beta = np.linalg.norm(v)
    if beta == 0:
        return v.copy()
    n = v.shape[0]
    m_max = min(m_max, n)
    V = np.zeros((n, m_max + 1), dtype=np.result_type(v, float))
    H = np.zeros((m_max + 1, m_max), dtype=V.dtype)
    V[:, 0] = v / beta
    previous = None
    for j in range(m_max):
        w = matvec(V[:, j])
        for i in range(j + 1):
            H[i, j] = np.vdot(V[:, i], w)
            w = w - H[i, j] * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        happy = H[j + 1, j] < 1e-14 * max(1.0, np.abs(H).max())
        if not happy:
            V[:, j + 1] = w / H[j + 1, j]
        m = j + 1
        if m >= 2 or happy:
            e1 = np.zeros(m)
            e1[0] = 1.0
            small = expm_action(H[:m, :m], t, e1, tol=tol, method="taylor")
            approx = beta * (V[:, :m] @ small)
            if happy:
                return approx
            if previous is not None:
                if np.linalg.norm(approx - previous) <= tol * max(
                    1.0, np.linalg.norm(approx)
                ):
                    return approx
            previous = approx
    raise ConvergenceError("Arnoldi expm action did not converge within krylov_dim")


def gmres(apply_op, b: np.ndarray, apply_right_prec=None, tol: float = 1e-10,
          max_iter: int = 200, x0: Optional[np.ndarray] = None):
    """Restart-free right-preconditioned GMRES.

    Solves op(x) = b by running GMRES on op(prec(y)) and returning
    x = prec(y).  Returns ``(x, residual_history)``; raises
    :class:`ConvergenceError` on breakdown before reaching ``tol``.
    """
    if apply_right_prec is None:
        apply_right_prec = lambda u: u
    b = np.asarray(b)
    n = b.shape[0]
    x0 = np.zeros_like(b) if x0 is None else x0
    r0 = b - apply_op(x0)
    beta = np.linalg.norm(r0)
    bnorm = max(np.linalg.norm(b), 1e-300)
    history = [beta / bnorm]
    if beta / bnorm <= tol:
        return x0, history
    m = min(max_iter, 2 * n)
    dtype = np.result_type(b, complex if np.iscomplexobj(b) else float)
    V = np.zeros((n, m + 1), dtype=dtype)
    H = np.zeros((m + 1, m), dtype=dtype)
    V[:, 0] = r0 / beta
    for j in range(m):
        w = apply_op(apply_right_prec(V[:, j]))
        for i in range(j + 1):
            H[i, j] = np.vdot(V[:, i], w)
            w = w - H[i, j] * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] > 1e-300:
            V[:, j + 1] = w / H[j + 1, j]
        e1 = np.zeros(j + 2, dtype=dtype)
        e1[0] = beta
        y, res, *_ = np.linalg.lstsq(H[: j + 2, : j + 1], e1, rcond=None)
        rnorm = np.linalg.norm(e1 - H[: j + 2, : j + 1] @ y)
        history.append(float(rnorm / bnorm))
        if rnorm / bnorm <= tol:
            return x0 + apply_right_prec(V[:, : j + 1] @ y), history
        if H[j + 1, j] <= 1e-300:
            raise ConvergenceError("GMRES breakdown before tolerance")
    raise ConvergenceError(f"GMRES did not reach tol={tol} in {m} iterations")
