import numpy as np
import pytest

from pintlab.swr import (
    Decomposition1D,
    TentSchedule,
    monodomain_solve_wave,
    oswr_solve_ad,
    robin_p_star,
    swr_solve_wave,
    utp_advance,
)

Y_C = 1.618386576


def R0(y, p, y0):
    return ((y - p) ** 2 + y * y - y0 * y0) / ((y + p) ** 2 + y * y - y0 * y0) * np.exp(-y)


class TestRobinPStar:
    def test_large_y0_branch_residual(self):
        # y0 = 10 >= y_c: p~* solves y0 = p~ sqrt(p~/(4+p~))
        l, nu = 1.0, 0.1  # y0 = 10
        p_star, _ = robin_p_star(l, nu, 5.0, 0.01)
        p_t = p_star * l / nu
        assert abs(10.0 - p_t * np.sqrt(p_t / (4.0 + p_t))) < 1e-12 * max(1.0, p_t)

    def test_small_y0_branch_residual(self):
        l, nu, T, dt = 0.04, 0.1, 5.0, 0.01  # y0 = 0.4 < y_c
        y0 = l / nu
        p_star, _ = robin_p_star(l, nu, T, dt)
        p_t = p_star * l / nu

        def ybar(p):
            inner = p * (-(p**3) - 4 * p * p + (4 + 2 * y0 * y0) * p + 8 * y0 * y0)
            return np.sqrt((y0 * y0 + 2 * p + np.sqrt(max(inner, 0.0))) / 2.0)

        assert abs(R0(y0, p_t, y0) - R0(ybar(p_t), p_t, y0)) < 1e-10

    def test_dirichlet_limit(self):
        # p -> infinity: R0 -> e^{-y}, so rho <= e^{-y_min}
        y0 = 0.4
        for y in (0.5, 1.0, 3.0):
            assert R0(y, 1e9, y0) == pytest.approx(np.exp(-y), rel=1e-6)

    def test_branch_continuity(self):
        nu, T, dt = 0.1, 5.0, 0.01
        eps = 1e-8
        lo = robin_p_star(nu * (Y_C - eps), nu, T, dt)[0] * (Y_C - eps) / 1.0
        hi = robin_p_star(nu * (Y_C + eps), nu, T, dt)[0] * (Y_C + eps) / 1.0
        # compare p~* = p* l / nu across the branch switch
        p_lo = robin_p_star(nu * (Y_C - eps), nu, T, dt)[0] * (Y_C - eps)
        p_hi = robin_p_star(nu * (Y_C + eps), nu, T, dt)[0] * (Y_C + eps)
        assert abs(p_lo - p_hi) / p_lo < 1e-5

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            robin_p_star(-1.0, 0.1, 1.0, 0.01)


class TestOswrAd:
    def test_single_subdomain_converges_immediately(self):
        dec = Decomposition1D(subdomains=[type("S", (), {"lo": 0, "hi": 50})()])
        _, trace = oswr_solve_ad(0.1, 1.0, 0.5, 0.02, 0.01, dec, tol=1e-8)
        assert trace.iterations == 1 and trace.errors[0] == 0.0

    @pytest.mark.slow
    def test_reference_iteration_counts(self):
        # 4 subdomains, nu=0.1, L=8.2, T=5, dt=0.01, dx=0.02, l=2dx, tol 1e-8:
        # about 92 sweeps with Dirichlet TCs and 28 with optimized Robin TCs
        L, T, dt, dx, nu = 8.2, 5.0, 0.01, 0.02, 0.1
        n_nodes = int(round(L / dx)) + 1
        dec_d = Decomposition1D.uniform(n_nodes, 4, 2, tc="dirichlet")
        _, tr_d = oswr_solve_ad(nu, L, T, dx, dt, dec_d, tol=1e-8)
        assert 92 * 0.8 <= tr_d.iterations <= 92 * 1.2

        p_star, _ = robin_p_star(2 * dx, nu, T, dt)
        dec_r = Decomposition1D.uniform(n_nodes, 4, 2, tc="robin", p=p_star)
        _, tr_r = oswr_solve_ad(nu, L, T, dx, dt, dec_r, tol=1e-8)
        assert 28 * 0.8 <= tr_r.iterations <= 28 * 1.2

    def test_iterations_nonincreasing_in_nu(self):
        # advection dominance accelerates SWR (Dirichlet TCs isolate the
        # continuous trend; the discrete Robin operator blurs it at this dx)
        L, T, dt, dx = 4.0, 2.0, 0.02, 0.04
        n_nodes = int(round(L / dx)) + 1
        counts = []
        for nu in (1.0, 0.1, 0.01):
            dec = Decomposition1D.uniform(n_nodes, 2, 2, tc="dirichlet")
            _, tr = oswr_solve_ad(nu, L, T, dx, dt, dec, tol=1e-8, max_iter=2000)
            counts.append(tr.iterations)
        assert counts[0] >= counts[1] >= counts[2]

    def test_monotone_interface_decay_dirichlet(self):
        L, T, dt, dx = 4.0, 2.0, 0.02, 0.04
        n_nodes = int(round(L / dx)) + 1
        dec = Decomposition1D.uniform(n_nodes, 2, 4, tc="dirichlet")
        _, tr = oswr_solve_ad(0.1, L, T, dx, dt, dec, tol=1e-8, max_iter=500)
        e = tr.errors
        assert all(b <= a * (1 + 1e-12) for a, b in zip(e[1:-1], e[2:]))

    def test_sweep_order_invariance(self):
        # Jacobi exchange: subdomain processing order cannot change bits
        L, T, dt, dx = 4.0, 1.0, 0.02, 0.04
        n_nodes = int(round(L / dx)) + 1
        dec = Decomposition1D.uniform(n_nodes, 3, 2, tc="dirichlet")

        def reversed_map(fn, items):
            items = list(items)
            out = list(map(fn, reversed(items)))
            return [out[len(items) - 1 - i] for i in range(len(items))]

        g1, tr1 = oswr_solve_ad(0.1, L, T, dx, dt, dec, tol=1e-6)
        g2, tr2 = oswr_solve_ad(0.1, L, T, dx, dt, dec, tol=1e-6, pmap=reversed_map)
        np.testing.assert_array_equal(g1, g2)
        assert tr1.errors == tr2.errors


def two_domain_overlap(n_nodes, overlap_frac):
    overlap_cells = int(round(overlap_frac * (n_nodes - 1)))
    return Decomposition1D.uniform(n_nodes, 2, overlap_cells, tc="dirichlet")


class TestWaveSwr:
    C2 = 0.2

    def test_tiny_T_converges_in_one_sweep(self):
        c = np.sqrt(self.C2)
        dx = 1.0 / 80
        n_nodes = 81
        dec = two_domain_overlap(n_nodes, 0.25)
        T = 0.5 * 0.25 / c  # T c / overlap = 0.5 < 1
        _, tr = swr_solve_wave(c, 1.0, T, dx, dec, tol=1e-10)
        assert tr.errors[0] < 1e-10

    def test_finite_convergence_threshold(self):
        # interface error < 1e-10 at the first k > T c / (beta - alpha)
        c = np.sqrt(self.C2)
        dx = 1.0 / 80
        n_nodes = 81
        for T, frac in ((2.0, 0.25), (1.0, 0.25)):
            dec = two_domain_overlap(n_nodes, frac)
            k_star = int(np.ceil(T * c / frac)) + 1
            _, tr = swr_solve_wave(c, 1.0, T, dx, dec, tol=0.0, max_iter=k_star)
            assert tr.errors[k_star - 1] < 1e-10

    def test_doubling_overlap_halves_sweeps(self):
        c = np.sqrt(self.C2)
        dx = 1.0 / 80
        n_nodes = 81
        T = 2.0
        counts = []
        for frac in (0.25, 0.5):
            dec = two_domain_overlap(n_nodes, frac)
            _, tr = swr_solve_wave(c, 1.0, T, dx, dec, tol=1e-10, max_iter=40)
            counts.append(tr.converged_at(1e-10) + 1)
        assert abs(counts[0] - 2 * counts[1]) <= 1


class TestUtp:
    C = np.sqrt(0.2)

    def test_zero_data_zero_guess_zero_residual(self):
        sched = TentSchedule(n_red=3)
        U, tr, rows = utp_advance(self.C, 1.0, 0.5, 1.0 / 60, sched, sweeps=1,
                                  u0_fn=lambda x: np.zeros_like(x), seed=None)
        assert tr.residuals[0] == 0.0

    def test_first_sweep_exact_inside_tents(self):
        L, dx = 1.0, 1.0 / 120
        sched = TentSchedule(n_red=3)
        U, tr, rows = utp_advance(self.C, L, 1.0, dx, sched, sweeps=1)
        x, dt, mono = monodomain_solve_wave(self.C, L, 1.0, dx,
                                            lambda xx: np.sin(2 * np.pi * xx / L) ** 2)
        n = x.shape[0]
        bounds = np.linspace(0, n - 1, 7).round().astype(int)
        overlap = x[bounds[2]] - x[bounds[1]]
        slab = overlap / (2 * self.C)
        m_hi = int(np.floor(slab / dt))
        err = 0.0
        for i in range(3):
            a, b = x[bounds[2 * i]], x[bounds[2 * i + 2]]
            for m in range(m_hi + 1):
                t = m * dt
                mask = (x >= a + self.C * t + dx / 2) & (x <= b - self.C * t - dx / 2)
                if mask.any():
                    err = max(err, np.abs(U[m, mask] - mono[m, mask]).max())
        assert err < 1e-10

    def test_certified_region_grows_each_sweep(self):
        L, dx = 1.0, 1.0 / 120
        sched = TentSchedule(n_red=3)
        x, dt, mono = monodomain_solve_wave(self.C, L, 1.0, dx,
                                            lambda xx: np.sin(2 * np.pi * xx / L) ** 2)
        n = x.shape[0]
        bounds = np.linspace(0, n - 1, 7).round().astype(int)
        overlap = x[bounds[2]] - x[bounds[1]]
        slab = overlap / (2 * self.C)
        for sweeps in (2, 4, 6):
            U, tr, rows = utp_advance(self.C, L, 1.0, dx, sched, sweeps=sweeps)
            t_cert = (sweeps - 1) * slab
            m_cert = int(np.floor(t_cert / dt))
            err = np.abs(U[: m_cert + 1] - mono[: m_cert + 1]).max()
            assert err < 1e-9

    def test_full_convergence_after_tent_stacking(self):
        L, dx, T = 1.0, 1.0 / 120, 1.0
        sched = TentSchedule(n_red=3)
        x, dt, mono = monodomain_solve_wave(self.C, L, T, dx,
                                            lambda xx: np.sin(2 * np.pi * xx / L) ** 2)
        n = x.shape[0]
        bounds = np.linspace(0, n - 1, 7).round().astype(int)
        overlap = x[bounds[2]] - x[bounds[1]]
        sweeps = int(np.ceil(2 * T * self.C / overlap)) + 2
        U, tr, rows = utp_advance(self.C, L, T, dx, sched, sweeps=sweeps)
        assert np.abs(U - mono).max() < 1e-8

    def test_tent_height_detection_nondecreasing(self):
        sched = TentSchedule(n_red=3, residual_detection=True)
        U, tr, rows = utp_advance(self.C, 1.0, 1.0, 1.0 / 120, sched, sweeps=5)
        h = tr.meta["tent_height"]
        assert all(b >= a for a, b in zip(h[:-1], h[1:]))

    def test_residual_detection_converges_like_default(self):
        L, dx, T = 1.0, 1.0 / 120, 1.0
        x, dt, mono = monodomain_solve_wave(self.C, L, T, dx,
                                            lambda xx: np.sin(2 * np.pi * xx / L) ** 2)
        n = x.shape[0]
        bounds = np.linspace(0, n - 1, 7).round().astype(int)
        overlap = x[bounds[2]] - x[bounds[1]]
        sweeps = int(np.ceil(2 * T * self.C / overlap)) + 2
        sched = TentSchedule(n_red=3, residual_detection=True)
        U, tr, rows = utp_advance(self.C, L, T, dx, sched, sweeps=sweeps)
        assert np.abs(U - mono).max() < 1e-8

    def test_heatmap_rows_format(self):
        sched = TentSchedule(n_red=3)
        U, tr, rows = utp_advance(self.C, 1.0, 0.5, 1.0 / 60, sched, sweeps=2)
        assert len(rows) > 0 and all(len(r) == 3 for r in rows)
