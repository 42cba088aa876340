import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullctrl.errors import MarginTooSmall, NonPositiveDimension, SubdomainError, TooCoarse
from nullctrl.geometry import (
    IndexSet,
    Subdomain,
    _star_sets,
    build_cutoff,
    build_family,
    build_grid,
    check_star_hypotheses,
    check_tree_hypotheses,
    compactly_inside,
    make_subdomain,
    mask_compactly_inside,
    star_free_region_mask,
    tree_chain_mask,
    tree_chain_set,
    tree_free_region,
    tree_free_region_mask,
)
from nullctrl.coupling import validate_tree
from nullctrl.scenario import load_scenario

from conftest import PRESETS


class TestGrid:
    def test_spacing(self):
        g = build_grid(1.0, 99, 0.5, 200)
        assert g.h == pytest.approx(0.01, rel=1e-15)
        assert g.tau == pytest.approx(0.0025, rel=1e-15)

    def test_spacing_long_domain(self):
        g = build_grid(2.0, 199, 1.0, 400)
        assert g.h == pytest.approx(0.01, rel=1e-15)
        assert g.tau == pytest.approx(0.0025, rel=1e-15)

    def test_nodes(self):
        g = build_grid(1.0, 9, 1.0, 4)
        np.testing.assert_allclose(g.x, np.arange(1, 10) * 0.1)
        np.testing.assert_allclose(g.t, [0, 0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize("args", [(1.0, 2, 1.0, 10), (1.0, 5, 1.0, 1)])
    def test_too_coarse(self, args):
        with pytest.raises(TooCoarse):
            build_grid(*args)

    @pytest.mark.parametrize("args", [(0.0, 9, 1.0, 10), (1.0, 9, -1.0, 10)])
    def test_non_positive(self, args):
        with pytest.raises(NonPositiveDimension):
            build_grid(*args)

    def test_refined(self):
        g = build_grid(1.0, 99, 0.5, 200).refined()
        assert (g.Nx, g.Nt) == (199, 400)
        assert g.h == pytest.approx(0.005)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_inner_product_axioms(self, seed):
        g = build_grid(1.0, 17, 1.0, 4)
        r = np.random.default_rng(seed)
        a, b, c = r.standard_normal((3, 17))
        x, y = r.standard_normal(2)
        assert g.inner(a, b) == pytest.approx(g.inner(b, a), rel=1e-14, abs=1e-14)
        assert g.inner(x * a + y * c, b) == pytest.approx(x * g.inner(a, b) + y * g.inner(c, b), rel=1e-10, abs=1e-12)
        assert g.inner(a, a) > 0


class TestSubdomain:
    def test_node_count_minimum(self):
        g = build_grid(1.0, 99, 0.5, 200)
        with pytest.raises(SubdomainError):
            make_subdomain(g, 0.30, 0.32)
        assert make_subdomain(g, 0.30, 0.34).n_nodes(g) == 3

    def test_bounds(self):
        g = build_grid(1.0, 99, 0.5, 200)
        with pytest.raises(SubdomainError):
            make_subdomain(g, 0.5, 1.2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 0.9), st.floats(0.02, 0.5), st.integers(5, 60))
    def test_node_range_matches_scan(self, lo, width, nx):
        g = build_grid(1.0, nx, 1.0, 4)
        sub = Subdomain(lo, min(lo + width, 1.0))
        assert np.array_equal(sub.index_set(g).mask(g.Nx), sub.mask(g))


def _ranges(draw_list):
    return IndexSet.of([(a, a + w) for a, w in draw_list])


ranges_st = st.lists(st.tuples(st.integers(0, 40), st.integers(0, 8)), max_size=4)


class TestIndexSet:
    @settings(max_examples=200, deadline=None)
    @given(ranges_st, ranges_st)
    def test_set_algebra_matches_masks(self, r1, r2):
        n = 50
        A, B = _ranges(r1), _ranges(r2)
        ma, mb = A.mask(n), B.mask(n)
        assert np.array_equal(A.intersect(B).mask(n), ma & mb)
        assert np.array_equal(A.union(B).mask(n), ma | mb)
        assert np.array_equal(A.subtract(B).mask(n), ma & ~mb)
        assert len(A) == int(ma.sum())

    @settings(max_examples=200, deadline=None)
    @given(ranges_st, ranges_st)
    def test_compact_inclusion_matches_masks(self, r1, r2):
        n = 60
        A, B = _ranges(r1), _ranges(r2)
        assert A.contains_compactly(B) == mask_compactly_inside(B.mask(n), A.mask(n))


def _star_family(g, omega, under, tilde=None):
    tilde = tilde or [(0.45, 0.55)] + [((a + b) / 2 - 0.03, (a + b) / 2 + 0.03) for a, b in under[1:]]
    return build_family(g, (0.1, 0.9), omega, under, tilde)


class TestStarHypotheses:
    g = build_grid(1.0, 99, 0.5, 200)

    def test_nested_intervals_pass(self):
        fam = _star_family(
            self.g,
            [(0.15, 0.40), (0.60, 0.85)],
            [(0.12, 0.88), (0.20, 0.35), (0.65, 0.80)],
        )
        rep = check_star_hypotheses(fam)
        assert rep.ok, rep.summary()
        # witnesses are the free regions, computed by hand: nodes 0.16..0.39
        assert rep["free_region_nonempty[1]"].witness == [[15, 38]]

    def test_identical_sets_fail(self):
        fam = _star_family(
            self.g,
            [(0.2, 0.4), (0.2, 0.4)],
            [(0.12, 0.88), (0.24, 0.36), (0.24, 0.36)],
        )
        rep = check_star_hypotheses(fam)
        assert not rep["free_region_nonempty[1]"].passed
        assert not rep["free_region_nonempty[2]"].passed

    def test_disjoint_from_control_region_fails(self):
        g = self.g
        fam = build_family(g, (0.1, 0.4), [(0.5, 0.9)], [(0.15, 0.35), (0.6, 0.8)], [(0.2, 0.3), (0.65, 0.75)])
        rep = check_star_hypotheses(fam)
        assert not rep["free_region_nonempty[1]"].passed


TREE_OMEGA = [(0.10, 0.50), (0.55, 0.90), (0.12, 0.28), (0.32, 0.47)]
TREE_UNDER = [(0.08, 0.92), (0.12, 0.48), (0.60, 0.85), (0.15, 0.25), (0.35, 0.44)]
TREE_TILDE = [(0.45, 0.55), (0.25, 0.35), (0.68, 0.77), (0.17, 0.23), (0.37, 0.42)]


class TestTreeHypotheses:
    g = build_grid(1.0, 99, 0.5, 200)
    tree = validate_tree([0, 0, 1, 1])

    def test_nested_tree_passes(self):
        fam = build_family(self.g, (0.05, 0.95), TREE_OMEGA, TREE_UNDER, TREE_TILDE)
        rep = check_tree_hypotheses(fam, self.tree)
        assert rep.ok, rep.summary()
        # D_3 = ω3 ∩ ω1 ∩ ω0 = ω3, open: nodes 0.13..0.27
        assert tree_chain_set(fam, self.tree, 3).to_list() == [[12, 26]]

    def test_broken_chain_fails(self):
        under = list(TREE_UNDER)
        under[3] = (0.52, 0.62)
        tilde = list(TREE_TILDE)
        tilde[3] = (0.55, 0.59)
        fam = build_family(self.g, (0.05, 0.95), TREE_OMEGA, under, tilde)
        rep = check_tree_hypotheses(fam, self.tree)
        assert not rep["nested_in_parent_under[3]"].passed

    def test_identical_siblings_fail(self):
        omega = list(TREE_OMEGA)
        omega[3] = omega[2]
        under = list(TREE_UNDER)
        under[4] = (0.15, 0.25)
        tilde = list(TREE_TILDE)
        tilde[4] = (0.17, 0.23)
        fam = build_family(self.g, (0.05, 0.95), omega, under, tilde)
        rep = check_tree_hypotheses(fam, self.tree)
        assert not rep["chain_minus_siblings_nonempty[3]"].passed
        assert not rep["chain_minus_siblings_nonempty[4]"].passed


@pytest.mark.parametrize("name", PRESETS)
def test_interval_arithmetic_matches_scan_on_presets(name):
    sc = load_scenario(name)
    fam, tree, g = sc.family, sc.tree, sc.grid
    for sub in (fam.omega0, *fam.omega, *fam.omega_under, *fam.omega_tilde):
        assert np.array_equal(sub.index_set(g).mask(g.Nx), sub.mask(g))
    for j in range(fam.n + 1):
        assert compactly_inside(g, fam.omega_tilde[j], fam.omega_under[j]) == mask_compactly_inside(
            fam.omega_tilde[j].mask(g), fam.omega_under[j].mask(g)
        )
    for i in range(1, fam.n + 1):
        if tree.is_star:
            assert np.array_equal(_star_sets(fam, i).mask(g.Nx), star_free_region_mask(fam, i))
        assert np.array_equal(tree_chain_set(fam, tree, i).mask(g.Nx), tree_chain_mask(fam, tree, i))
        assert np.array_equal(tree_free_region(fam, tree, i).mask(g.Nx), tree_free_region_mask(fam, tree, i))


class TestCutoff:
    g = build_grid(1.0, 99, 0.5, 200)

    def test_definition(self):
        g = self.g
        under, tilde = Subdomain(0.2, 0.4), Subdomain(0.25, 0.35)
        gam = build_cutoff(g, under, tilde, 1)
        x = g.x
        on = (x >= 0.25 - 1e-12) & (x <= 0.35 + 1e-12)
        off = (x <= 0.2 + 1e-12) | (x >= 0.4 - 1e-12)
        # nodes within rounding of an interval end may land on a flank
        np.testing.assert_allclose(gam[on], 1.0, atol=1e-12)
        np.testing.assert_allclose(gam[off], 0.0, atol=1e-12)
        assert np.all((gam >= 0) & (gam <= 1))
        np.testing.assert_array_equal(build_cutoff(g, under, tilde, -1), -gam)

    def test_support_is_under_range(self):
        g = self.g
        under, tilde = Subdomain(0.2, 0.4), Subdomain(0.25, 0.35)
        gam = build_cutoff(g, under, tilde, 1)
        assert np.array_equal(gam != 0, under.mask(g))
        assert np.max(np.abs(gam)) == 1.0

    def test_second_differences_bounded(self):
        g = self.g
        gam = build_cutoff(g, Subdomain(0.2, 0.4), Subdomain(0.25, 0.35), 1)
        d2 = np.abs(np.diff(np.concatenate(([0.0], gam, [0.0])), 2))
        # quintic smoothstep: |γ''| ≤ 10/√3 / w² with flank width w = 0.05
        assert d2.max() <= 1.1 * (10 / np.sqrt(3)) / 0.05**2 * g.h**2

    def test_margin_too_small(self):
        with pytest.raises(MarginTooSmall):
            build_cutoff(self.g, Subdomain(0.2, 0.4), Subdomain(0.2, 0.4), 1)
