import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullctrl.coupling import star_tree, validate_tree
from nullctrl.errors import EvalAtSingularTime, SubdomainTouchesBoundary
from nullctrl.geometry import Subdomain, build_grid
from nullctrl.scenario import load_scenario
from nullctrl.weights import (
    _order_failures,
    LOG_UNDERFLOW,
    assign_constants_star,
    assign_constants_tree,
    build_eta,
    build_weight_family,
    central_gradient,
    check_weight_order,
    eval_weights,
    exp_safe,
    sigma_sequence,
)

from conftest import PRESETS

G = build_grid(1.0, 99, 0.5, 200)
TILDE = [Subdomain(0.45, 0.55), Subdomain(0.25, 0.30), Subdomain(0.70, 0.75)]


class TestEta:
    @pytest.mark.parametrize("w", TILDE)
    def test_shape(self, w):
        eta = build_eta(G, w)
        assert eta.sup == 1.0
        assert np.all(eta.values > 0)
        assert w.lo < G.x[np.argmax(eta.values)] < w.hi
        assert eta.center == pytest.approx(0.5 * (w.lo + w.hi))

    @pytest.mark.parametrize("w", TILDE)
    def test_gradient_vanishes_only_in_tilde(self, w):
        eta = build_eta(G, w)
        grad = np.abs(central_gradient(G, eta.values))
        outside = ~w.mask(G)
        assert eta.g_min > 0
        assert grad[outside].min() == pytest.approx(eta.g_min)
        # discrete sign change of the gradient happens inside ω̃ only
        d = np.diff(eta.values)
        flips = np.nonzero(np.sign(d[1:]) != np.sign(d[:-1]))[0] + 1
        assert all(w.lo < G.x[k] < w.hi for k in flips)

    def test_touches_boundary(self):
        with pytest.raises(SubdomainTouchesBoundary):
            build_eta(G, Subdomain(0.0, 0.2))
        with pytest.raises(SubdomainTouchesBoundary):
            build_eta(G, Subdomain(0.8, 1.0))


class TestConstants:
    def test_star_values_with_unit_bumps(self):
        etas = [build_eta(G, w).values for w in TILDE]
        comps, cert = assign_constants_star(etas, eps_sep=0.1)
        assert [p.K for p in comps] == pytest.approx([7.5, 8.6, 8.6], abs=1e-12)
        assert cert.ok, cert.margins

    def test_star_inequalities(self):
        etas = [build_eta(G, w).values for w in TILDE]
        comps, _ = assign_constants_star(etas, eps_sep=0.1)
        K0 = comps[0].K
        assert K0 > 7 * comps[0].eta.max()
        for p in comps[1:]:
            assert p.K > K0 + comps[0].eta.max()
        for p in comps:
            assert p.sup / p.inf < 8 / 7
        bar = max(p.sup for p in comps) + 0.1
        under = min(p.inf for p in comps) - 0.1
        assert bar / under <= 1.5

    def test_tree_inequalities(self):
        sc = load_scenario("tree4")
        tree = sc.tree
        by = {p.name: p for p in sc.weights.psis}
        eps = sc.weights.eps_sep
        for j in range(tree.n + 1):
            for i in tree.children(j):
                assert by[f"{i}s"].inf > by[f"{j}f"].sup + 2 * eps
                if tree.children(i):
                    top = max(by[f"{l}s"].sup for l in [i, *tree.siblings(i)])
                    assert by[f"{i}f"].inf > top + 2 * eps
        assert sc.weights.psi_bar / sc.weights.psi_under <= 1.5

    def test_eps_sep_rejected(self):
        etas = [build_eta(G, w).values for w in TILDE]
        with pytest.raises(ValueError):
            assign_constants_star(etas, eps_sep=0.0)
        with pytest.raises(ValueError):
            assign_constants_tree(etas, star_tree(2), eps_sep=0.0)

    def test_shift_applied_when_ratio_large(self):
        # tall sibling bumps push ψ̄/ψ̲ above 3/2 before the common shift
        etas = [np.full(5, 1.0), np.full(5, 30.0)]
        comps, cert = assign_constants_star(etas, eps_sep=0.1)
        bar = max(p.sup for p in comps) + 0.1
        under = min(p.inf for p in comps) - 0.1
        assert bar / under <= 1.5
        assert "psi_bar/psi_under<=3/2" in cert.margins


class TestEvaluation:
    fam = load_scenario("star2").weights

    def test_midpoint_values(self):
        T = G.T
        ev = eval_weights(self.fam, T / 2)
        psi0 = self.fam.psis[0].values
        np.testing.assert_allclose(ev.phi[0, 0], np.exp(self.fam.lam * psi0) * 4 / T**2, rtol=1e-14)
        assert np.all(ev.alpha < 0)
        assert ev.alpha_under[0] <= ev.alpha.min() + 1e-9 * abs(ev.alpha.min())
        assert ev.alpha.max() <= ev.alpha_bar[0] + 1e-9 * abs(ev.alpha_bar[0])

    def test_singular_limits(self):
        ev = eval_weights(self.fam, [0.0, G.T])
        assert np.all(np.isinf(ev.phi)) and np.all(ev.alpha == -np.inf)
        assert np.all(ev.exp() == 0.0)
        with pytest.raises(EvalAtSingularTime):
            eval_weights(self.fam, [0.0], finite=True)

    def test_calibration(self):
        # e^{2 s ᾱ(T/2)} = e^{-0.1} for the preset calibration
        assert self.fam.log_weight_bar(np.array([G.T / 2]), 2.0)[0] == pytest.approx(-0.1, rel=1e-12)
        assert self.fam.lam == pytest.approx(2.0 / self.fam.psi_bar)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-700.0, 700.0))
    def test_exp_safe_matches_exp(self, v):
        assert exp_safe(np.array([v]))[0] == pytest.approx(math.exp(v), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1e6, LOG_UNDERFLOW))
    def test_exp_safe_underflow(self, v):
        assert exp_safe(np.array([v]))[0] == 0.0

    def test_exp_safe_infinity(self):
        assert exp_safe(np.array([-np.inf]))[0] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 0.25))
    def test_weights_vanish_towards_ends(self, t):
        w1 = self.fam.weight_bar(np.array([t]), 2.0)[0]
        w2 = self.fam.weight_bar(np.array([t / 2]), 2.0)[0]
        assert w2 <= w1


@pytest.mark.parametrize("name", PRESETS)
def test_invariants_hold_on_presets(name):
    sc = load_scenario(name, enforce=False)
    cert = sc.weights.invariants()
    assert cert.ok, cert.worst


class TestOrder:
    fam = load_scenario("tree4").weights

    def test_m0_zero_holds_everywhere(self):
        rep = check_weight_order(self.fam, m0_range=0, lambda_grid=[self.fam.lam], s_grid=[1e-2, 1.0, 1e3])
        assert rep.thresholds["weightsorder"] == [1e-2]
        assert rep.thresholds["weightsorder1"] == [1e-2]

    def test_thresholds_finite_with_witness(self):
        rep = check_weight_order(self.fam, m0_range=8)
        assert rep.finite("weightsorder") and rep.finite("weightsorder1")
        # small s fails; the report names where
        w = rep.witnesses["weightsorder"]
        assert {"lambda", "s", "m", "component", "t", "x"} <= set(w)
        assert 0 < w["t"] < self.fam.grid.T

    def test_small_s_witness_at_midtime(self):
        # with m = 3 and s small, (sφ)^3 is smallest where φ is, at T/2
        w = _order_failures(self.fam.with_params(s=1e-3), 3)["weightsorder"]
        assert w["m"] == 3
        assert w["t"] == pytest.approx(self.fam.grid.T / 2)
        assert w["log_violation"] > 0

    def test_alpha_ratio_decreases_to_one(self):
        lams = [0.5 * self.fam.lam, self.fam.lam, 2 * self.fam.lam, 4 * self.fam.lam]
        r = [self.fam.with_params(lam=l).alpha_ratio() for l in lams]
        assert all(a > b for a, b in zip(r, r[1:]))
        assert all(v > 1 for v in r)
        # small-λ limit (1.5ψ̄ - ψ̲)/(0.5ψ̄)
        f = self.fam
        lim = (1.5 * f.psi_bar - f.psi_under) / (0.5 * f.psi_bar)
        assert f.with_params(lam=1e-8).alpha_ratio() == pytest.approx(lim, rel=1e-6)


def _sigma_oracle(N):
    half = Fraction(N + 2, 2)
    s = [Fraction(2)]
    if s[0] > half:
        return [2.0], 0
    while not s[-1] > half:
        p = s[-1]
        s.append(Fraction(N + 2) * p / (N + 2 - 2 * p) if p < half else Fraction(3, 2) * p)
    return [float(v) for v in s], len(s) - 1


class TestSigma:
    def test_edge_case_n1(self):
        seq = sigma_sequence(1)
        assert seq.edge_case and seq.m0 == 0 and seq.sigmas == (2.0,)

    @pytest.mark.parametrize("N,expected", [(2, [2.0, 3.0]), (3, [2.0, 10.0]), (10, [2.0, 3.0, 6.0, 9.0])])
    def test_small_dims(self, N, expected):
        assert list(sigma_sequence(N).sigmas) == expected

    @pytest.mark.parametrize("N", range(1, 40))
    def test_against_fraction_oracle(self, N):
        sig, m0 = _sigma_oracle(N)
        seq = sigma_sequence(N)
        assert list(seq.sigmas) == sig and seq.m0 == m0
        assert seq.sigmas[seq.m0] > (N + 2) / 2
        if seq.m0:
            assert seq.sigmas[seq.m0 - 1] <= (N + 2) / 2

    @pytest.mark.parametrize("N", [0, -1, 2.5])
    def test_invalid(self, N):
        with pytest.raises(ValueError):
            sigma_sequence(N)
