"""Auxiliary functions and singular Carleman weights.

All exponentials of ``s * alpha`` are carried as logarithms; ``alpha`` is
strictly negative inside (0, T) and tends to -inf at both ends, so the
weights themselves underflow long before anything overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .coupling import CouplingTree
from .errors import EvalAtSingularTime, SubdomainTouchesBoundary
from .geometry import Grid, Subdomain

LOG_UNDERFLOW = -700.0
RATIO_8_7 = 8.0 / 7.0


@dataclass(frozen=True)
class AuxiliaryFunction:
    values: np.ndarray
    center: float
    critical_subdomain: Subdomain
    g_min: float

    @property
    def sup(self) -> float:
        return float(np.max(self.values))


def _rise(r: np.ndarray) -> np.ndarray:
    # quintic with P(0)=0, P'(0)=2, P(1)=1, P'(1)=P''(1)=0, P' > 0 on [0, 1)
    return 1.0 - (1.0 - r) ** 3 * (1.0 + r - r * r)


def central_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([0.0], values, [0.0]))
    return (padded[2:] - padded[:-2]) / (2.0 * grid.h)


def build_eta(grid: Grid, omega_tilde: Subdomain) -> AuxiliaryFunction:
    """Positive bump vanishing on the boundary, single critical point at the centre of ω̃."""
    if omega_tilde.lo <= 0.0 or omega_tilde.hi >= grid.L:
        raise SubdomainTouchesBoundary(f"({omega_tilde.lo}, {omega_tilde.hi}) touches the boundary")
    c = 0.5 * (omega_tilde.lo + omega_tilde.hi)
    x = grid.x
    vals = np.where(x <= c, _rise(x / c), _rise((grid.L - x) / (grid.L - c)))
    vals = vals / np.max(vals)
    grad = np.abs(central_gradient(grid, vals))
    outside = ~omega_tilde.mask(grid)
    g_min = float(np.min(grad[outside])) if outside.any() else math.inf
    return AuxiliaryFunction(vals, c, omega_tilde, g_min)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class PsiComponent:
    """ψ = η + K for one named weight (``"2"`` in a star, ``"1f"`` / ``"3s"`` in a tree)."""

    name: str
    node: int
    eta: np.ndarray
    K: float

    @property
    def values(self) -> np.ndarray:
        return self.eta + self.K

    @property
    def sup(self) -> float:
        return float(np.max(self.eta)) + self.K

    @property
    def inf(self) -> float:
        # η vanishes on the boundary, so the infimum over Ω is K
        return self.K


@dataclass
class Certificate:
    margins: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, margin: float) -> None:
        self.margins[name] = float(margin)

    @property
    def ok(self) -> bool:
        return all(m > 0 for m in self.margins.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = min(self.margins, key=self.margins.get)
        return name, self.margins[name]


def _global_shift(comps: list[PsiComponent], eps: float) -> float:
    bar = max(p.sup for p in comps) + eps
    under = min(p.inf for p in comps) - eps
    if bar / under <= 1.5:
        return 0.0
    return 2.0 * (bar - 1.5 * under) + 0.1


def assign_constants_star(
    etas: Sequence[np.ndarray], eps_sep: float = 0.1, slack: float = 0.1
) -> tuple[list[PsiComponent], Certificate]:
    """K_0 > 7 sup η_0; K_i > K_0 + sup η_0; then a common shift until ψ̄/ψ̲ ≤ 3/2."""
    if eps_sep <= 0:
        raise ValueError("eps_sep must be positive")
    sups = [float(np.max(e)) for e in etas]
    K0 = 7.0 * sups[0] + 0.5
    Ks = [K0]
    for i in range(1, len(etas)):
        Ks.append(max(K0 + sups[0] + slack, 7.0 * sups[i] + 0.5))
    comps = [PsiComponent(str(j), j, np.asarray(etas[j]), Ks[j]) for j in range(len(etas))]
    shift = _global_shift(comps, eps_sep)
    comps = [replace(p, K=p.K + shift) for p in comps]
    return comps, _certify_star(comps, eps_sep)


def _certify_star(comps: list[PsiComponent], eps: float) -> Certificate:
    cert = Certificate()
    p0 = comps[0]
    for p in comps[1:]:
        cert.add(f"psi_{p.name}>psi_0", p.inf - p0.sup)
    _certify_common(comps, eps, cert)
    return cert


def _certify_common(comps: list[PsiComponent], eps: float, cert: Certificate) -> None:
    for p in comps:
        cert.add(f"sup/inf(psi_{p.name})<8/7", RATIO_8_7 - p.sup / p.inf)
    bar = max(p.sup for p in comps) + eps
    under = min(p.inf for p in comps) - eps
    cert.add("psi_bar/psi_under<=3/2", 1.5 - bar / under)
    cert.add("eps<inf psi", under)


def assign_constants_tree(
    etas: Sequence[np.ndarray], tree: CouplingTree, eps_sep: float = 0.1, slack: float = 0.1
) -> tuple[list[PsiComponent], Certificate]:
    """f-weights for nodes with children, s-weights for every non-root node.

    Constants grow with depth: a child's s-weight sits above its parent's
    f-weight, and a node's f-weight above the s-weights of all its siblings.
    """
    if eps_sep <= 0:
        raise ValueError("eps_sep must be positive")
    sups = [float(np.max(e)) for e in etas]
    Kf: dict[int, float] = {0: 7.0 * sups[0] + 0.5}
    Ks: dict[int, float] = {}
    max_depth = max(tree.depth) if tree.n else 0
    for d in range(1, max_depth + 1):
        level = [i for i in range(1, tree.n + 1) if tree.depth_of(i) == d]
        for i in level:
            p = tree.parent(i)
            Ks[i] = max(Kf[p] + sups[p] + 2 * eps_sep + slack, 7.0 * sups[i] + 0.5)
        for i in level:
            if tree.children(i):
                sib = [i, *tree.siblings(i)]
                top = max(Ks[l] + sups[l] for l in sib)
                Kf[i] = max(top + 2 * eps_sep + slack, 7.0 * sups[i] + 0.5)
    comps = [PsiComponent(f"{j}f", j, np.asarray(etas[j]), K) for j, K in sorted(Kf.items())]
    comps += [PsiComponent(f"{i}s", i, np.asarray(etas[i]), K) for i, K in sorted(Ks.items())]
    shift = _global_shift(comps, eps_sep)
    comps = [replace(p, K=p.K + shift) for p in comps]
    return comps, _certify_tree(comps, tree, eps_sep)


def _certify_tree(comps: list[PsiComponent], tree: CouplingTree, eps: float) -> Certificate:
    by = {p.name: p for p in comps}
    cert = Certificate()
    for j in range(tree.n + 1):
        kids = tree.children(j)
        if not kids:
            continue
        for i in kids:
            cert.add(f"psi_{i}s>sup psi_{j}f+2eps", by[f"{i}s"].inf - by[f"{j}f"].sup - 2 * eps)
        if j != 0:
            sib = [j, *tree.siblings(j)]
            top = max(by[f"{l}s"].sup for l in sib)
            cert.add(f"psi_{j}f>sup sibling s+2eps", by[f"{j}f"].inf - top - 2 * eps)
    _certify_common(comps, eps, cert)
    return cert


# ---------------------------------------------------------------------------
# weight family


@dataclass(frozen=True)
class WeightFamily:
    grid: Grid
    kind: str
    psis: tuple[PsiComponent, ...]
    eps_sep: float
    lam: float
    s: float
    certificate: Certificate = field(compare=False, default_factory=Certificate)
    etas: tuple[AuxiliaryFunction, ...] = field(compare=False, default=())

    @property
    def psi_bar(self) -> float:
        return max(p.sup for p in self.psis) + self.eps_sep

    @property
    def psi_under(self) -> float:
        return min(p.inf for p in self.psis) - self.eps_sep

    def with_params(self, lam: float | None = None, s: float | None = None) -> "WeightFamily":
        return replace(self, lam=self.lam if lam is None else lam, s=self.s if s is None else s)

    def component(self, name: str) -> PsiComponent:
        for p in self.psis:
            if p.name == name:
                return p
        raise KeyError(name)

    def root(self) -> PsiComponent:
        return self.psis[0]

    # numerators: e^{λψ} - e^{1.5 λ ψ̄}, all negative
    def _top(self) -> float:
        return math.exp(1.5 * self.lam * self.psi_bar)

    def alpha_bar_num(self) -> float:
        return math.exp(self.lam * self.psi_bar) - self._top()

    def alpha_under_num(self) -> float:
        return math.exp(self.lam * self.psi_under) - self._top()

    def log_weight_bar(self, t: np.ndarray, factor: float = 1.0) -> np.ndarray:
        """``factor * s * ᾱ(t)``; ``-inf`` at t ∈ {0, T}."""
        return factor * self.s * _over_tt(self.alpha_bar_num(), t, self.grid.T)

    def log_weight_under(self, t: np.ndarray, factor: float = 1.0) -> np.ndarray:
        return factor * self.s * _over_tt(self.alpha_under_num(), t, self.grid.T)

    def weight_bar(self, t: np.ndarray, factor: float = 1.0) -> np.ndarray:
        return exp_safe(self.log_weight_bar(t, factor))

    def weight_under(self, t: np.ndarray, factor: float = 1.0) -> np.ndarray:
        return exp_safe(self.log_weight_under(t, factor))

    def alpha_ratio(self) -> float:
        """α̲/ᾱ; independent of (t, x)."""
        return self.alpha_under_num() / self.alpha_bar_num()

    def invariants(self) -> Certificate:
        """Recomputed margins of every ordering invariant plus the sign of α."""
        cert = Certificate(dict(self.certificate.margins))
        cert.add("alpha_bar<0", -self.alpha_bar_num())
        cert.add("alpha_under<=alpha_bar", self.alpha_bar_num() - self.alpha_under_num())
        cert.add("lambda>0", self.lam)
        cert.add("s>0", self.s)
        return cert

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "constants": {p.name: p.K for p in self.psis},
            "eps_sep": self.eps_sep,
            "lambda": self.lam,
            "s": self.s,
            "psi_bar": self.psi_bar,
            "psi_under": self.psi_under,
            "alpha_ratio": self.alpha_ratio(),
            "margins": self.invariants().margins,
        }


def _over_tt(num: float | np.ndarray, t, T: float):
    t = np.asarray(t, dtype=float)
    den = t * (T - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), -np.inf)
    return out


def exp_safe(log_val) -> np.ndarray:
    """exp of a log-weight; anything below -700 (including -inf) is exactly 0."""
    log_val = np.asarray(log_val, dtype=float)
    out = np.zeros_like(log_val)
    ok = log_val > LOG_UNDERFLOW
    out[ok] = np.exp(log_val[ok])
    return out


def default_lambda(psi_bar: float) -> float:
    return 2.0 / psi_bar


def calibrated_s(fam: WeightFamily, peak_log: float = 1.0) -> float:
    """s such that the control weight e^{2 s ᾱ} equals e^{-peak_log} at t = T/2."""
    T = fam.grid.T
    alpha_mid = fam.alpha_bar_num() * 4.0 / (T * T)
    return peak_log / (2.0 * abs(alpha_mid))


def build_weight_family(
    grid: Grid,
    omega_tilde: Sequence[Subdomain],
    tree: CouplingTree,
    eps_sep: float = 0.1,
    lam: float | str = "auto",
    s: float | str = "auto",
    peak_log: float = 1.0,
) -> WeightFamily:
    etas = tuple(build_eta(grid, w) for w in omega_tilde)
    eta_vals = [e.values for e in etas]
    if tree.is_star:
        psis, cert = assign_constants_star(eta_vals, eps_sep)
        kind = "star"
    else:
        psis, cert = assign_constants_tree(eta_vals, tree, eps_sep)
        kind = "tree"
    fam = WeightFamily(grid, kind, tuple(psis), eps_sep, 1.0, 1.0, cert, etas)
    lam_val = default_lambda(fam.psi_bar) if lam == "auto" else float(lam)
    fam = fam.with_params(lam=lam_val)
    s_val = calibrated_s(fam, peak_log) if s == "auto" else float(s)
    return fam.with_params(s=s_val)


@dataclass
class WeightEval:
    names: list[str]
    phi: np.ndarray
    alpha: np.ndarray
    log_exp: np.ndarray
    phi_bar: np.ndarray
    phi_under: np.ndarray
    alpha_bar: np.ndarray
    alpha_under: np.ndarray
    singular: np.ndarray

    def exp(self) -> np.ndarray:
        return exp_safe(self.log_exp)


def eval_weights(fam: WeightFamily, t, finite: bool = False) -> WeightEval:
    """φ_j, α_j and s·α_j on every node for the requested times.

    At t ∈ {0, T} the limits are returned (φ = +inf, α = -inf, e^{sα} = 0)
    unless ``finite`` is set, in which case EvalAtSingularTime is raised.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    T = fam.grid.T
    den = t * (T - t)
    singular = den <= 0
    if finite and singular.any():
        raise EvalAtSingularTime(f"phi is infinite at t={t[singular].tolist()}")
    lam = fam.lam
    top = fam._top()
    names = [p.name for p in fam.psis]
    psi = np.stack([p.values for p in fam.psis])  # (ncomp, Nx)
    e = np.exp(lam * psi)
    with np.errstate(divide="ignore"):
        inv = np.where(singular, np.inf, 1.0 / np.where(singular, 1.0, den))
    phi = e[:, None, :] * inv[None, :, None]
    alpha = np.where(singular[None, :, None], -np.inf, (e - top)[:, None, :] * inv[None, :, None])
    return WeightEval(
        names=names,
        phi=phi,
        alpha=alpha,
        log_exp=fam.s * alpha,
        phi_bar=math.exp(lam * fam.psi_bar) * inv,
        phi_under=math.exp(lam * fam.psi_under) * inv,
        alpha_bar=_over_tt(fam.alpha_bar_num(), t, T),
        alpha_under=_over_tt(fam.alpha_under_num(), t, T),
        singular=singular,
    )


# ---------------------------------------------------------------------------
# weight ordering scan


@dataclass
class OrderReport:
    m0_range: int
    lambda_grid: list[float]
    s_grid: list[float]
    # thresholds[ineq][i] = smallest s on the grid from which the inequality holds
    # for every larger grid s at lambda_grid[i], or None
    thresholds: dict[str, list[float | None]]
    lambda_threshold: float | None
    alpha_ratios: list[float]
    witnesses: dict[str, dict]

    def finite(self, ineq: str) -> bool:
        return any(v is not None for v in self.thresholds[ineq])

    def to_dict(self) -> dict:
        return {
            "m0_range": self.m0_range,
            "lambda_grid": self.lambda_grid,
            "s_grid": self.s_grid,
            "thresholds": self.thresholds,
            "lambda_threshold_alpha_ratio": self.lambda_threshold,
            "alpha_ratios": self.alpha_ratios,
            "witnesses": self.witnesses,
        }


def _order_failures(fam: WeightFamily, m0: int) -> dict[str, dict | None]:
    """Worst violation per inequality at the family's (λ, s), or None.

    Violations are measured in log units; the witness names the exponent m,
    the component and the node where the violation is largest.
    """
    g = fam.grid
    t = g.t[1:-1]
    ev = eval_weights(fam, t)
    s = fam.s
    log_sphi = np.log(s * ev.phi)
    sa = ev.log_exp
    upper = s * ev.alpha_bar[None, :, None]
    lower = s * ev.alpha_under[None, :, None]
    root = 0
    worst: dict[str, tuple[float, dict] | None] = {"weightsorder": None, "weightsorder1": None}
    for m in sorted({-m0, 0, m0}):
        mid = m * log_sphi + sa
        gap1 = np.maximum(lower - mid - 1e-12 * np.abs(lower), mid - upper - 1e-12 * np.abs(upper))
        gap2 = sa[root][None] - mid - 1e-12 * np.abs(mid)
        gap2[root] = -np.inf
        for name, gap in (("weightsorder", gap1), ("weightsorder1", gap2)):
            k = int(np.argmax(gap))
            val = float(gap.flat[k])
            if val <= 0 or (worst[name] is not None and worst[name][0] >= val):
                continue
            c, it, ix = np.unravel_index(k, gap.shape)
            worst[name] = (
                val,
                {
                    "lambda": fam.lam,
                    "s": s,
                    "m": int(m),
                    "component": ev.names[c],
                    "t": float(t[it]),
                    "x": float(g.x[ix]),
                    "log_violation": val,
                },
            )
    return {k: None if v is None else v[1] for k, v in worst.items()}


def check_weight_order(
    fam: WeightFamily,
    m0_range: int = 8,
    lambda_grid: Sequence[float] | None = None,
    s_grid: Sequence[float] | None = None,
) -> OrderReport:
    """Scan (λ, s) for the weight comparisons used when chaining estimates."""
    if lambda_grid is None:
        lambda_grid = [fam.lam * f for f in (0.5, 1.0, 2.0, 4.0, 8.0)]
    if s_grid is None:
        s_grid = np.logspace(-2, 6, 33).tolist()
    lambda_grid = [float(v) for v in lambda_grid]
    s_grid = sorted(float(v) for v in s_grid)
    thresholds: dict[str, list[float | None]] = {"weightsorder": [], "weightsorder1": []}
    witnesses: dict[str, dict] = {}
    ratios = []
    for lam in lambda_grid:
        ratios.append(fam.with_params(lam=lam).alpha_ratio())
        ok_flags = {k: [] for k in thresholds}
        for s in s_grid:
            fails = _order_failures(fam.with_params(lam=lam, s=s), m0_range)
            for k in thresholds:
                ok_flags[k].append(fails[k] is None)
                if fails[k] is not None:
                    witnesses.setdefault(k, fails[k])
        for k, flags in ok_flags.items():
            thr = None
            for idx in range(len(s_grid) - 1, -1, -1):
                if not flags[idx]:
                    break
                thr = s_grid[idx]
            thresholds[k].append(thr)
    lam_thr = None
    for lam, r in sorted(zip(lambda_grid, ratios), reverse=True):
        if r < 2.0:
            lam_thr = lam
        else:
            break
    return OrderReport(m0_range, lambda_grid, s_grid, thresholds, lam_thr, ratios, witnesses)


# ---------------------------------------------------------------------------
# bootstrap exponents


@dataclass(frozen=True)
class SigmaSequence:
    sigmas: tuple[float, ...]
    m0: int
    edge_case: bool


def sigma_sequence(N: int, max_terms: int = 64) -> SigmaSequence:
    """Integrability exponents of the L∞ bootstrap and the index m0 where they pass (N+2)/2."""
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    half = Fraction(N + 2, 2)
    sig = [Fraction(2)]
    if sig[0] > half:
        return SigmaSequence((2.0,), 0, True)
    while len(sig) < max_terms:
        prev = sig[-1]
        if prev < half:
            nxt = (N + 2) * prev / (N + 2 - 2 * prev)
        else:
            nxt = Fraction(3, 2) * prev
        sig.append(nxt)
        if nxt > half >= prev:
            break
    return SigmaSequence(tuple(float(v) for v in sig), len(sig) - 1, False)
