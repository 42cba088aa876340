import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullctrl.errors import CGStalled
from nullctrl.geometry import build_grid
from nullctrl.hum import (
    conjugate_gradient,
    control_norms,
    eps_sweep,
    floor_index,
    gramian_apply,
    loglog_slope,
    solve_penalized,
    weighted_energy,
)
from nullctrl.pde import ControlField, observe
from nullctrl.scenario import load_scenario


@pytest.fixture(scope="module")
def small():
    """star2 on a coarse grid: the full Gramian has 3·79 columns."""
    return load_scenario("star2", ["grid.Nx=79", "grid.Nt=40"])


def _gramian_matrix(problem):
    n1, nx = problem.shape
    cols = []
    for k in range(n1 * nx):
        e = np.zeros(n1 * nx)
        e[k] = 1.0
        cols.append(gramian_apply(problem, e.reshape(n1, nx)).ravel())
    return np.array(cols).T


class TestGramian:
    def test_assembled_matrix_symmetric_psd(self, small):
        L = _gramian_matrix(small.problem())
        assert np.abs(L - L.T).max() <= 1e-12 * np.abs(L).max()
        ev = np.linalg.eigvalsh(0.5 * (L + L.T))
        assert ev.min() >= -1e-12 * ev.max()
        assert ev.max() > 0

    @pytest.mark.parametrize("name", ["star2_short", "tree4"])
    def test_random_pairs(self, name, request, rng):
        sc = request.getfixturevalue(name)
        pr = sc.problem()
        g = sc.grid
        for _ in range(5):
            q1, q2 = rng.standard_normal((2, *pr.shape))
            L1, L2 = gramian_apply(pr, q1), gramian_apply(pr, q2)
            scale = g.norm(L1) * g.norm(q2) + g.norm(L2) * g.norm(q1)
            assert abs(g.inner(L1, q2) - g.inner(q1, L2)) <= 1e-10 * scale
            assert g.inner(L1, q1) >= -1e-10 * g.norm(L1) * g.norm(q1)

    def test_energy_identity(self, star2_short, rng):
        pr = star2_short.problem()
        q = rng.standard_normal(pr.shape)
        lhs = star2_short.grid.inner(gramian_apply(pr, q), q)
        assert lhs == pytest.approx(weighted_energy(pr, q), rel=1e-10)

    def test_linear(self, star2_short, rng):
        pr = star2_short.problem()
        q1, q2 = rng.standard_normal((2, *pr.shape))
        np.testing.assert_allclose(
            gramian_apply(pr, 2 * q1 - q2), 2 * gramian_apply(pr, q1) - gramian_apply(pr, q2), rtol=1e-9, atol=1e-14
        )


class TestCG:
    g = build_grid(1.0, 19, 1.0, 4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_dense_solve(self, seed):
        r = np.random.default_rng(seed)
        A = r.standard_normal((19, 19))
        A = A @ A.T + 19 * np.eye(19)
        b = r.standard_normal(19)
        x, its, rel, energies = conjugate_gradient(lambda v: A @ v, b, self.g, 1e-12, 200)
        np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9, atol=1e-12)
        assert rel <= 1e-12
        # dual energy -½<b + r, x> = ½<Ax, x> - <b, x> decreases monotonically
        assert all(b2 <= b1 + 1e-12 * abs(b1) for b1, b2 in zip(energies, energies[1:]))

    def test_zero_rhs(self):
        x, its, rel, _ = conjugate_gradient(lambda v: v, np.zeros(19), self.g, 1e-10, 10)
        assert its == 0 and not x.any()

    def test_indefinite_detected(self):
        with pytest.raises(CGStalled):
            conjugate_gradient(lambda v: -v, np.ones(19), self.g, 1e-10, 10)

    def test_iteration_cap(self):
        A = np.diag(np.logspace(0, 8, 19))
        with pytest.raises(CGStalled):
            conjugate_gradient(lambda v: A @ v, np.ones(19), self.g, 1e-14, 3)


class TestPenalized:
    def test_zero_initial_state(self, star2_short):
        res = solve_penalized(star2_short.problem(), np.zeros(star2_short.problem().shape), 1e-4)
        assert res.cg_iters == 0 and res.terminal_norm == 0.0 and res.linf == 0.0

    def test_optimality_and_energy(self, star2_short):
        sc = star2_short
        pr = sc.problem()
        res = solve_penalized(pr, sc.z0, 1e-4)
        g = sc.grid
        np.testing.assert_allclose(res.qT, -res.state.final / 1e-4, rtol=0, atol=1e-6 * np.abs(res.qT).max())
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(res.energy_history, res.energy_history[1:]))
        assert res.gramian_residual <= 1e-8
        # the control reaches the state through its own forward solve
        again = pr.forward(sc.z0, res.u).final
        np.testing.assert_allclose(again, res.state.final, atol=1e-14)
        assert g.norm(res.state.final) == pytest.approx(res.terminal_norm)

    def test_bad_eps(self, star2_short):
        with pytest.raises(ValueError):
            solve_penalized(star2_short.problem(), star2_short.z0, 0.0)


class TestNorms:
    def test_control_norms_constant_observation(self, star2_short):
        sc = star2_short
        g, fam = sc.grid, sc.weights
        a, b = sc.family.omega0.node_range(g)
        p0 = np.ones((g.Nt + 1, b - a + 1))
        w2 = fam.weight_bar(g.t, 2.0)
        u = ControlField(w2[:, None] * p0, a, g)
        weighted, linf = control_norms(u, fam, p0)
        w1 = fam.weight_bar(g.t, 1.0)
        expect = np.sqrt(g.tau * g.h * (b - a + 1) * np.sum(w1[1:] ** 2))
        assert weighted == pytest.approx(expect, rel=1e-13)
        assert linf == pytest.approx(w2.max(), rel=1e-15)
        # ‖u e^{-sᾱ}‖ computed directly on levels where the weight is nonzero
        nz = w2 > 0
        direct = np.sqrt(g.tau * g.h * np.sum((u.values[nz] / w1[nz, None]) ** 2 * (w1[nz, None] ** 2) / w2[nz, None]))
        assert direct == pytest.approx(expect, rel=1e-10)


class TestSweep:
    def test_floor_index_examples(self):
        eps = np.array([1e-2, 1e-3, 1e-4, 1e-5])
        assert floor_index(eps, eps**0.5) == 3
        assert floor_index(eps, np.array([1.0, 0.3, 0.29, 0.29])) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 2.0), st.floats(1e-3, 1e3))
    def test_loglog_slope_of_power_law(self, k, c):
        eps = np.logspace(-1, -6, 6)
        assert loglog_slope(eps, c * eps**k) == pytest.approx(k, rel=1e-10)

    def test_sweep_decreases(self, star2_short):
        sc = star2_short
        sw = eps_sweep(sc.problem(), sc.z0, [1e-2, 1e-3, 1e-4, 1e-5])
        norms = sw.column("terminal_norm")
        assert np.all(np.diff(norms) < 0)
        assert len(sw.cauchy) == 3
        assert 0.3 <= sw.slope <= 0.7

    def test_threads_agree(self, star2_short):
        sc = star2_short
        a = eps_sweep(sc.problem(), sc.z0, [1e-2, 1e-3], threads=1)
        b = eps_sweep(sc.problem(), sc.z0, [1e-2, 1e-3], threads=2)
        assert a.rows == b.rows

    @pytest.mark.parametrize("eps", [[1e-2, 1e-2], [1e-3, 1e-2], [1e-2, -1.0]])
    def test_bad_list(self, star2_short, eps):
        with pytest.raises(ValueError):
            eps_sweep(star2_short.problem(), star2_short.z0, eps)


class TestClassSpread:
    def test_finite_and_deterministic(self, star2_short):
        from nullctrl.hum import class_spread

        sc = star2_short
        a = class_spread(sc.problem(), sc.z0, sc.family, 20.0, 10.0, n_sets=3, eps=1e-4)
        b = class_spread(sc.problem(), sc.z0, sc.family, 20.0, 10.0, n_sets=3, eps=1e-4)
        assert a.ratios == b.ratios
        assert all(np.isfinite(r) and r > 0 for r in a.ratios)
        assert a.spread >= 1.0
