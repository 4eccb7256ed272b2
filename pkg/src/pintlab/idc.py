"""Integral deferred correction and its time-parallel relatives.

IDC sweeps raise the order of a theta-method by integrating the residual
with quadrature built on the window's nodes (the M nodes excluding the
left endpoint, giving exactness degree M-1 and an order ceiling of M).
PIDC pipelines windows so sweep k of window n runs beside sweep k+1 of
window n-1; RIDC slides the quadrature stencil one step at a time; the
two-level PFASST block iteration couples a backward-Euler sweep on fine
collocation nodes with a coarse-node correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .kernels import solve_shifted_banded
from .trace import IterationTrace


def quad_weights(nodes: np.ndarray, a: float, b: float) -> np.ndarray:
    """Weights integrating the Lagrange interpolant on ``nodes`` over [a, b].

    Exact for polynomials of degree < len(nodes); computed from a scaled
    Vandermonde system for conditioning at small node counts.
    """
    nodes = np.asarray(nodes, dtype=float)
    m = nodes.shape[0]
    if np.unique(nodes).shape[0] != m:
        raise ValueError("quadrature nodes must be distinct")
    span = nodes.max() - nodes.min() if m > 1 else 1.0
    shift = nodes.min()
    s = (nodes - shift) / span
    sa, sb = (a - shift) / span, (b - shift) / span
    powers = np.arange(m)
    moments = (sb ** (powers + 1) - sa ** (powers + 1)) / (powers + 1)
    V = np.vander(s, m, increasing=True)
    return np.linalg.solve(V.T, moments) * span


def idc_weights(window_nodes: np.ndarray) -> np.ndarray:
    """Panel-by-panel correction weights for one IDC window.

    ``window_nodes`` holds the M+1 node times t_0..t_M; the quadrature
    interpolates through t_1..t_M, and row m integrates over
    [t_m, t_{m+1}].  Shape (M, M).
    """
    t = np.asarray(window_nodes, dtype=float)
    M = t.shape[0] - 1
    return np.stack([quad_weights(t[1:], t[m], t[m + 1]) for m in range(M)])


def radau_iia_nodes(M: int) -> np.ndarray:
    """Right Radau nodes on (0, 1] for M = 1, 2, 3."""
    if M == 1:
        return np.array([1.0])
    if M == 2:
        return np.array([1.0 / 3.0, 1.0])
    if M == 3:
        s = np.sqrt(6.0)
        return np.array([(4.0 - s) / 10.0, (4.0 + s) / 10.0, 1.0])
    raise ValueError("Radau IIA nodes tabulated for M <= 3")


def collocation_matrix(nodes: np.ndarray) -> np.ndarray:
    """Q with q_{m,j} = integral_0^{tau_m} L_j(s) ds on the given nodes."""
    nodes = np.asarray(nodes, dtype=float)
    return np.stack([quad_weights(nodes, 0.0, t) for t in nodes])


@dataclass
class QuadratureRule:
    nodes: np.ndarray  # quadrature nodes (excluding the left endpoint)
    weights: np.ndarray  # IDC panel weights or collocation matrix

    @classmethod
    def uniform_idc(cls, M: int) -> "QuadratureRule":
        window = np.linspace(0.0, 1.0, M + 1)
        return cls(nodes=window[1:], weights=idc_weights(window))

    @classmethod
    def radau_iia(cls, M: int) -> "QuadratureRule":
        nodes = radau_iia_nodes(M)
        return cls(nodes=nodes, weights=collocation_matrix(nodes))


@dataclass
class SweepState:
    """Node values of one window during correction sweeps."""

    n: int
    t_nodes: np.ndarray  # M+1 node times including the left endpoint
    values: np.ndarray  # (M+1, nx)
    k: int = 0


def _implicit_theta_node(sys, theta, dtm, t_next, rhs, guess):
    if theta == 0.0:
        return rhs
    if sys.linear:
        extra = dtm * theta * (sys.source(t_next) if sys.source is not None else 0.0)
        return solve_shifted_banded(sys.A, (1.0, theta * dtm), rhs + extra)
    from .integrators import _newton

    return _newton(sys, theta * dtm, rhs, t_next, guess)


def idc_sweep(state: SweepState, sys, theta: float, weights: np.ndarray) -> SweepState:
    """One left-to-right correction sweep over the window."""
    t = state.t_nodes
    M = t.shape[0] - 1
    old = state.values
    f_old = np.stack([sys.f(old[m], t[m]) for m in range(M + 1)])
    new = np.empty_like(old)
    new[0] = old[0]
    for m in range(M):
        dtm = t[m + 1] - t[m]
        rhs = (
            new[m]
            + dtm * (1.0 - theta) * (sys.f(new[m], t[m]) - f_old[m])
            - dtm * theta * f_old[m + 1]
            + weights[m] @ f_old[1:]
        )
        new[m + 1] = _implicit_theta_node(sys, theta, dtm, t[m + 1], rhs, old[m + 1])
    return SweepState(n=state.n, t_nodes=t, values=new, k=state.k + 1)


def pidc_schedule(n_windows: int, k_sweeps: int):
    """Pipelined stages: at stage s, window n runs sweep s - n + 1."""
    stages = []
    for s in range(1, n_windows + k_sweeps):
        active = [
            (n, s - n) for n in range(n_windows) if 1 <= s - n <= k_sweeps
        ]
        stages.append(active)
    return stages


def _run_windowed(sys, T, n_windows, M, k_sweeps, theta, pipelined,
                  refresh_initial_value=True):
    """Shared engine for windowed IDC and PIDC.

    Sweep k of window n takes its left-endpoint value from the
    predecessor's sweep-k endpoint when pipelined (or its final endpoint
    when serialized), starting from the constant whole-window guess; the
    first sweep then reduces to the plain theta predictor.  The stored
    node-0 value always carries the current initial value (with theta = 1
    sweeps node 0 never enters the correction terms).
    """
    boundaries = np.linspace(0.0, T, n_windows + 1)
    history = []  # history[k][n] = node values of window n after sweep k+1
    endpoints = np.full((k_sweeps + 1, n_windows + 1, sys.n), np.nan)
    endpoints[:, 0] = sys.u0
    window_nodes = [
        np.linspace(boundaries[n], boundaries[n + 1], M + 1) for n in range(n_windows)
    ]
    weights = [idc_weights(t) for t in window_nodes]
    states = [None] * n_windows

    for n in range(n_windows):
        sweeps_here = []
        for k in range(1, k_sweeps + 1):
            if n == 0:
                ic = sys.u0
            elif pipelined:
                kk = k if refresh_initial_value else 1
                ic = history[-1][n - 1][min(kk, k_sweeps) - 1][-1]
            else:
                ic = history[-1][n - 1][-1][-1]
            if k == 1:
                guess = np.tile(ic, (M + 1, 1))
                state = SweepState(n=n, t_nodes=window_nodes[n], values=guess, k=0)
            else:
                state = sweeps_here[-1]
                state = SweepState(n=n, t_nodes=state.t_nodes,
                                   values=state.values.copy(), k=state.k)
            state.values[0] = ic
            state = idc_sweep(state, sys, theta, weights[n])
            sweeps_here.append(state)
            endpoints[k, n + 1] = state.values[-1]
        if n == 0:
            history.append([])
        history[-1].append([s.values for s in sweeps_here])
    return window_nodes, history[-1], endpoints


def idc_run(sys, T, n_windows, M, k_corrections, theta: float = 1.0):
    """Windowed IDC: predictor plus k_corrections sweeps per window,
    sequential handoff of the final endpoint value.

    Returns (window node times, per-window per-sweep node values,
    endpoint array indexed [sweep, boundary])."""
    return _run_windowed(sys, T, n_windows, M, k_corrections + 1, theta,
                         pipelined=False)


def pidc_run(sys, T, n_windows, M, k_corrections, theta: float = 1.0,
             refresh_initial_value: bool = True, serialize: bool = False):
    """Pipelined IDC: sweep k of a window uses the predecessor's sweep-k
    endpoint; the whole-window guess is fixed to the predecessor's
    first-sweep endpoint.  ``serialize=True`` degenerates to plain
    windowed IDC (identical bits)."""
    return _run_windowed(sys, T, n_windows, M, k_corrections + 1, theta,
                         pipelined=not serialize,
                         refresh_initial_value=refresh_initial_value)


def window_errors(window_nodes, window_values, reference_fn):
    """Max relative error per window per sweep against ``reference_fn(t)``."""
    n_windows = len(window_nodes)
    k_sweeps = len(window_values[0])
    refs = [np.stack([reference_fn(t) for t in tn]) for tn in window_nodes]
    scale = max(np.abs(np.stack(refs)).max(), 1e-300)
    out = np.empty((k_sweeps, n_windows))
    for n in range(n_windows):
        for k in range(k_sweeps):
            out[k, n] = np.abs(window_values[n][k] - refs[n]).max() / scale
    return out


# ---------------------------------------------------------------------------
# revisionist IDC: sliding stencils
# ---------------------------------------------------------------------------


def ridc_run(sys, M: int, levels: int, T: float, dt: float) -> np.ndarray:
    """Revisionist IDC with backward-Euler predictor and corrections.

    Level 0 is the plain BE trajectory; level l corrects level l-1 with a
    sliding M-node quadrature stencil (constant weights on the uniform
    grid).  Returns the level ``levels-1`` trajectory, shape (n_steps+1, n).
    """
    if not 1 <= levels <= M:
        raise ValueError("need 1 <= levels <= M")
    n_steps = int(round(T / dt))
    times = dt * np.arange(n_steps + 1)
    if n_steps + 1 < M:
        raise ValueError("not enough steps for the stencil")

    def be_step(u, t_next):
        if sys.linear:
            rhs = u if sys.source is None else u + dt * sys.source(t_next)
            return solve_shifted_banded(sys.A, (1.0, dt), rhs)
        from .integrators import _newton

        return _newton(sys, dt, u, t_next, u)

    level = np.empty((n_steps + 1, sys.n))
    level[0] = sys.u0
    for j in range(n_steps):
        level[j + 1] = be_step(level[j], times[j + 1])

    # constant sliding weights: M uniform nodes, integrate over the last panel
    stencil = dt * np.arange(M)
    w_slide = quad_weights(stencil, stencil[-2], stencil[-1])

    for l in range(1, levels):
        prev = level
        level = np.empty_like(prev)
        level[0] = sys.u0
        # startup: one IDC correction sweep over the initial window 0..M-1
        window = times[:M]
        wmat = idc_weights(window)
        f_prev = np.stack([sys.f(prev[m], times[m]) for m in range(M)])
        for m in range(M - 1):
            rhs = level[m] - dt * f_prev[m + 1] + wmat[m] @ f_prev[1:]
            level[m + 1] = _implicit_theta_node(sys, 1.0, dt, times[m + 1], rhs, prev[m + 1])
        # slide: step j+1 corrected with the trailing M nodes of level l-1
        for j in range(M - 1, n_steps):
            idx = np.arange(j - M + 2, j + 2)
            f_prev_sten = np.stack([sys.f(prev[i], times[i]) for i in idx])
            rhs = level[j] - dt * sys.f(prev[j + 1], times[j + 1]) + w_slide @ f_prev_sten
            level[j + 1] = _implicit_theta_node(sys, 1.0, dt, times[j + 1], rhs, prev[j + 1])
    return level


# ---------------------------------------------------------------------------
# two-level PFASST block iteration (linear systems)
# ---------------------------------------------------------------------------


def lagrange_transfer(from_nodes: np.ndarray, to_nodes: np.ndarray) -> np.ndarray:
    """Interpolation matrix evaluating the from-node Lagrange basis at
    to_nodes."""
    out = np.empty((to_nodes.shape[0], from_nodes.shape[0]))
    for j in range(from_nodes.shape[0]):
        others = np.delete(from_nodes, j)
        denom = np.prod(from_nodes[j] - others)
        for i, t in enumerate(to_nodes):
            out[i, j] = np.prod(t - others) / denom
    return out


@dataclass
class PfasstOperators:
    """Dense per-window operators of the two-level block iteration."""

    B10: np.ndarray
    B01: np.ndarray
    B00: np.ndarray
    chi: np.ndarray
    phi_f_lu: tuple
    nodes_f: np.ndarray
    Qf: np.ndarray


def build_pfasst_operators(sys, dt: float, Mf: int = 3, Mc: int = 2,
                           identity_transfers: bool = False,
                           sweeper_exact: bool = False) -> PfasstOperators:
    """Assemble the block-iteration matrices for a linear system.

    ``identity_transfers`` with Mf == Mc and ``sweeper_exact`` reproduces
    the degenerate exact-solve case (B10 = 0).
    """
    if not sys.linear:
        raise ValueError("the block iteration is assembled for linear systems")
    A = sys.A.to_dense()
    n = A.shape[0]
    nodes_f = radau_iia_nodes(Mf)
    nodes_c = radau_iia_nodes(Mc)
    Qf = collocation_matrix(nodes_f)
    Qc = collocation_matrix(nodes_c)
    If = np.eye(Mf * n)
    phi_f = If - dt * np.kron(Qf, A)
    phi_c = np.eye(Mc * n) - dt * np.kron(Qc, A)
    if identity_transfers:
        if Mf != Mc:
            raise ValueError("identity transfers need Mf == Mc")
        Tcf = np.eye(Mf * n)
        Tfc = np.eye(Mf * n)
    else:
        Tcf = np.kron(lagrange_transfer(nodes_c, nodes_f), np.eye(n))
        Tfc = np.kron(lagrange_transfer(nodes_f, nodes_c), np.eye(n))
    if sweeper_exact:
        phi_tilde = phi_f.copy()
    else:
        lower = np.eye(Mf) - np.eye(Mf, k=-1)
        deltas = np.diff(np.concatenate([[0.0], nodes_f]))
        phi_tilde = np.kron(lower, np.eye(n)) - dt * np.kron(np.diag(deltas), A)

    phi_c_inv_Tfc = np.linalg.solve(phi_c, Tfc)
    smoother = np.linalg.solve(phi_tilde, phi_f)
    bracket = If - Tcf @ phi_c_inv_Tfc @ phi_f
    B10 = bracket @ (If - smoother)
    B01 = Tcf @ phi_c_inv_Tfc
    B00 = bracket @ np.linalg.solve(phi_tilde, If)
    chi_small = np.zeros((Mf, Mf))
    chi_small[:, -1] = 1.0
    chi = np.kron(chi_small, np.eye(n))
    return PfasstOperators(B10=B10, B01=B01, B00=B00, chi=chi,
                           phi_f_lu=scipy.linalg.lu_factor(phi_f),
                           nodes_f=nodes_f, Qf=Qf)


def pfasst_two_level(sys, n_windows: int, dt: float, k_max: int,
                     Mf: int = 3, Mc: int = 2, identity_transfers: bool = False,
                     sweeper_exact: bool = False,
                     reference: Optional[np.ndarray] = None):
    """Two-level PFASST block iteration over pipelined windows.

    Linear systems only.  Returns (endpoint trajectory, trace); the trace
    records the max window-endpoint error per iteration against
    ``reference`` (falling back to the sequential collocation solution).
    """
    ops = build_pfasst_operators(sys, dt, Mf=Mf, Mc=Mc,
                                 identity_transfers=identity_transfers,
                                 sweeper_exact=sweeper_exact)
    n = sys.n
    Mf_nodes = ops.nodes_f
    bvecs = np.zeros((n_windows, Mf * n))
    if sys.source is not None:
        for w in range(n_windows):
            g = np.concatenate([sys.source((w + Mf_nodes[m]) * dt) for m in range(Mf)])
            bvecs[w] = np.kron(ops.Qf, np.eye(n)) @ g

    # sequential collocation solution (the iteration's fixed point)
    U_star = np.empty((n_windows, Mf * n))
    incoming = np.tile(sys.u0, Mf)
    for w in range(n_windows):
        U_star[w] = scipy.linalg.lu_solve(ops.phi_f_lu,
                                          ops.chi @ incoming + dt * bvecs[w])
        incoming = U_star[w]
    if reference is None:
        reference = np.vstack([sys.u0, U_star[:, -n:]])

    U = np.tile(np.tile(sys.u0, Mf), (n_windows, 1))
    trace = IterationTrace(method="pfasst_two_level")
    u0_state = np.tile(sys.u0, Mf)

    def endpoint_error(U):
        ends = np.vstack([sys.u0, U[:, -n:]])
        return np.abs(ends - reference).max()

    trace.record(error=endpoint_error(U))
    for k in range(k_max):
        U_new = np.empty_like(U)
        prev_new = u0_state
        for w in range(n_windows):
            prev_old = u0_state if w == 0 else U[w - 1]
            U_new[w] = (
                ops.B10 @ U[w]
                + ops.B01 @ (ops.chi @ prev_new + dt * bvecs[w])
                + ops.B00 @ (ops.chi @ prev_old + dt * bvecs[w])
            )
            prev_new = U_new[w]
        U = U_new
        trace.record(error=endpoint_error(U))
    ends = np.vstack([sys.u0, U[:, -n:]])
    return ends, trace
