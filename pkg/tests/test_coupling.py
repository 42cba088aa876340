import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullctrl.coupling import (
    CoefficientSet,
    check_class_membership,
    coefficients_from_spatial,
    constant_coupling_matrix,
    kalman_matrix,
    kalman_rank,
    star_tree,
    unobservable_directions,
    validate_tree,
)
from nullctrl.errors import CyclicCoupling, SelfLoop
from nullctrl.geometry import build_cutoff, build_family, build_grid

STAR_A0 = np.array([[0.0, 0, 0], [1, 0, 0], [1, 0, 0]])
E0 = np.array([1.0, 0, 0])


class TestTree:
    def test_star_depths(self):
        t = validate_tree([0, 0])
        assert list(t.depth) == [1, 1]
        assert t.depth_of(0) == 0
        assert t.is_star

    def test_five_node_tree(self):
        t = validate_tree([0, 0, 1, 1])
        assert [t.depth_of(i) for i in range(1, 5)] == [1, 1, 2, 2]
        assert not t.is_star
        assert t.children(1) == [3, 4]
        assert t.siblings(3) == [4]

    def test_two_cycle(self):
        with pytest.raises(CyclicCoupling):
            validate_tree([2, 1])

    def test_self_loop(self):
        with pytest.raises(SelfLoop):
            validate_tree([0, 2])

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_depth_recursion(self, data):
        n = data.draw(st.integers(1, 8))
        # random tree: parent of node j (in creation order) is an earlier node
        parents_created = [data.draw(st.integers(0, j - 1)) for j in range(1, n + 1)]
        perm = data.draw(st.permutations(list(range(1, n + 1))))
        label = {0: 0, **{j: perm[j - 1] for j in range(1, n + 1)}}
        k = [0] * n
        for j in range(1, n + 1):
            k[label[j] - 1] = label[parents_created[j - 1]]
        t = validate_tree(k)
        for i in range(1, n + 1):
            if t.parent(i) != 0:
                assert t.depth_of(t.parent(i)) == t.depth_of(i) - 1
            assert 1 <= t.depth_of(i) <= n


class TestClassMembership:
    g = build_grid(1.0, 99, 0.5, 20)
    fam = build_family(g, (0.1, 0.9), [(0.15, 0.40)], [(0.12, 0.88), (0.20, 0.35)], [(0.45, 0.55), (0.25, 0.30)])

    def _coeffs(self, a, c0=0.0):
        return coefficients_from_spatial(self.g, [a], [np.full(self.g.Nx, c0), np.zeros(self.g.Nx)], 1.0, 0.5)

    def test_bump_passes(self):
        bump = build_cutoff(self.g, self.fam.omega[0], self.fam.omega_under[1], 1)
        rep = check_class_membership(self._coeffs(bump), self.fam, 1.0, 0.5)
        assert rep.ok, rep.summary()
        assert rep["a_lower[1]"].detail["min_on_under"] == pytest.approx(1.0)

    def test_zero_fails_lower_bound(self):
        rep = check_class_membership(self._coeffs(np.zeros(self.g.Nx)), self.fam, 1.0, 0.5)
        assert not rep["a_lower[1]"].passed

    def test_large_reaction_fails_sup(self):
        bump = build_cutoff(self.g, self.fam.omega[0], self.fam.omega_under[1], 1)
        rep = check_class_membership(self._coeffs(bump, c0=2.0), self.fam, 1.0, 0.5)
        assert not rep["c_sup[0]"].passed
        assert rep["a_sup[1]"].passed

    def test_support_leak_detected(self):
        rep = check_class_membership(self._coeffs(np.ones(self.g.Nx)), self.fam, 1.0, 0.5)
        assert not rep["a_support[1]"].passed


class TestKalman:
    def test_star_example_columns(self):
        K = kalman_matrix(STAR_A0, E0)
        np.testing.assert_array_equal(K, [[1, 0, 0], [0, 1, 0], [0, 1, 0]])
        assert kalman_rank(K) == 2

    def test_star_matrix_from_tree(self):
        np.testing.assert_array_equal(constant_coupling_matrix(star_tree(2), [1, 1]), STAR_A0)

    def test_tree_example_rank_three(self):
        A0 = constant_coupling_matrix(validate_tree([0, 0, 1, 1]), [1, 1, 1, 1], [0] * 5)
        K = kalman_matrix(A0, np.eye(5)[0])
        assert K.shape == (5, 5)
        assert kalman_rank(K) == 3

    def test_zero_drift(self):
        K = kalman_matrix(np.zeros((3, 3)), E0)
        np.testing.assert_array_equal(K, np.column_stack([E0, np.zeros(3), np.zeros(3)]))

    def test_identity_rank(self):
        assert kalman_rank(np.eye(3)) == 3
        assert kalman_rank(np.zeros((3, 3))) == 0

    def test_unobservable_direction_star(self):
        V = unobservable_directions(STAR_A0, E0)
        assert V.shape == (1, 3)
        v = V[0] * np.sign(V[0, 1])
        np.testing.assert_allclose(v, np.array([0, 1, -1]) / np.sqrt(2), atol=1e-12)

    def test_full_rank_has_no_direction(self):
        A0 = np.array([[0.0, 0], [1, 0]])
        assert unobservable_directions(A0, np.array([1.0, 0])).shape == (0, 2)

    def test_zero_drift_directions(self):
        V = unobservable_directions(np.zeros((3, 3)), E0)
        # spans {e2, e3}
        P = V.T @ V
        np.testing.assert_allclose(P, np.diag([0.0, 1.0, 1.0]), atol=1e-12)

    def test_cascade_full_rank(self):
        A0 = np.array([[0.0, 0], [3.5, 0]])
        assert kalman_rank(kalman_matrix(A0, np.array([1.0, 0]))) == 2

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 6), st.integers(1, 6))
    def test_rank_invariances(self, seed, n, r):
        rng = np.random.default_rng(seed)
        r = min(r, n)
        K = rng.standard_normal((n, r)) @ rng.standard_normal((r, n))
        base = kalman_rank(K)
        assert base == r
        scale = rng.uniform(0.1, 10, n) * rng.choice([-1, 1], n)
        assert kalman_rank(K * scale[None, :]) == base
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        assert kalman_rank(Q @ K) == base

    def test_rank_tolerance_positive(self):
        with pytest.raises(ValueError):
            kalman_rank(np.eye(2), tol=0)
