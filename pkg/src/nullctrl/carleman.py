"""Both sides of the weighted energy and observability inequalities, evaluated numerically.

Weighted time integrals run over the interior levels m = 1..Nt-1; the
weights vanish at t = 0 and t = T.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coupling import CoefficientSet
from .errors import CGStalled, DegenerateSample, PowerIterationStalled
from .geometry import Grid, Subdomain
from .hum import ControlProblem, conjugate_gradient, gramian_apply, weighted_energy
from .pde import TrajectoryField, observe
from .weights import WeightFamily


def _interior(grid: Grid) -> slice:
    return slice(1, grid.Nt)


def lhs_energy(p: TrajectoryField, weights: WeightFamily, s: float | None = None) -> dict[str, float]:
    """∫_Q (|D_t p|² + |D²p|² + |Dp|² + |p|²) e^{2sα̲}, term by term."""
    g = p.grid
    fam = weights if s is None else weights.with_params(s=s)
    w = fam.weight_under(g.t, factor=2.0)
    P = p.data
    nt = g.Nt
    dt = np.empty_like(P[1:nt])
    dt[1:-1] = (P[3:nt] - P[1 : nt - 2]) / (2 * g.tau)
    dt[0] = (P[2] - P[1]) / g.tau
    dt[-1] = (P[nt - 1] - P[nt - 2]) / g.tau
    inner = P[1:nt]
    pad = np.pad(inner, ((0, 0), (0, 0), (1, 1)))
    d1 = (pad[..., 2:] - pad[..., :-2]) / (2 * g.h)
    d2 = (pad[..., 2:] - 2 * inner + pad[..., :-2]) / g.h**2
    wi = w[1:nt, None, None]
    q = g.tau * g.h
    terms = {
        "dt": float(q * np.sum(wi * dt**2)),
        "d2": float(q * np.sum(wi * d2**2)),
        "d1": float(q * np.sum(wi * d1**2)),
        "p": float(q * np.sum(wi * inner**2)),
    }
    terms["total"] = terms["dt"] + terms["d2"] + terms["d1"] + terms["p"]
    return terms


def rhs_terms(
    p: TrajectoryField,
    g_src: np.ndarray | None,
    weights: WeightFamily,
    omega0: Subdomain,
    s: float | None = None,
) -> tuple[float, float]:
    """(∫_{Q_ω0} |p_0|² e^{2sᾱ}, ∫_Q |g|² e^{2sᾱ})."""
    g = p.grid
    fam = weights if s is None else weights.with_params(s=s)
    w = fam.weight_bar(g.t, factor=2.0)
    sl = _interior(g)
    q = g.tau * g.h
    obs = observe(p, omega0)[sl]
    rhs_obs = float(q * np.sum(w[sl, None] * obs**2))
    if g_src is None:
        return rhs_obs, 0.0
    rhs_src = float(q * np.sum(w[sl, None, None] * np.asarray(g_src)[sl] ** 2))
    return rhs_obs, rhs_src


@dataclass
class CarlemanSample:
    sample_id: int
    lhs: float
    rhs_obs: float
    rhs_src: float
    seed: int
    skipped: bool = False

    @property
    def ratio(self) -> float:
        rhs = self.rhs_obs + self.rhs_src
        return self.lhs / rhs if rhs > 0 else math.nan


@dataclass
class CarlemanReport:
    samples: list[CarlemanSample]
    C_est: float | None
    worst: CarlemanSample | None
    s: float
    lam: float
    base_seed: int
    grid: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "C_est": self.C_est,
            "worst_sample": None if self.worst is None else self.worst.sample_id,
            "worst_seed": None if self.worst is None else self.worst.seed,
            "n_samples": len(self.samples),
            "n_skipped": sum(s.skipped for s in self.samples),
            "s": self.s,
            "lambda": self.lam,
            "seed": self.base_seed,
            "grid": self.grid,
        }


def sine_field(grid: Grid, coefs: np.ndarray) -> np.ndarray:
    """Σ_k coefs[..., k] sin((k+1) π x / L) on the interior nodes."""
    k = np.arange(1, coefs.shape[-1] + 1)
    basis = np.sin(np.outer(k, grid.x) * math.pi / grid.L)
    return coefs @ basis


@dataclass
class SampleSpec:
    """Random terminal data and sources: normal coefficients on the first ``modes`` sine modes."""

    modes: int = 10
    with_source: bool = True
    zero: bool = False
    coeffs_sampler: Callable[[np.random.Generator], CoefficientSet] | None = None

    def draw(self, grid: Grid, ncomp: int, rng: np.random.Generator):
        if self.zero:
            return np.zeros((ncomp, grid.Nx)), None
        pT = sine_field(grid, rng.standard_normal((ncomp, self.modes)))
        src = None
        if self.with_source:
            gx = sine_field(grid, rng.standard_normal((ncomp, self.modes)))
            src = np.broadcast_to(gx, (grid.Nt + 1, ncomp, grid.Nx)).copy()
        return pT, src


def _one_sample(problem: ControlProblem, spec: SampleSpec, fam: WeightFamily, idx: int, seed: int) -> CarlemanSample:
    rng = np.random.default_rng(seed)
    prob = problem
    if spec.coeffs_sampler is not None:
        prob = problem.with_coeffs(spec.coeffs_sampler(rng))
    pT, src = spec.draw(prob.grid, prob.tree.n + 1, rng)
    p = prob.adjoint(pT, src)
    lhs = lhs_energy(p, fam)["total"]
    ro, rs = rhs_terms(p, src, fam, prob.omega0)
    if ro + rs == 0.0:
        if lhs > 0.0:
            raise DegenerateSample(f"sample {idx}: positive weighted energy with zero observation")
        return CarlemanSample(idx, lhs, ro, rs, seed, skipped=True)
    return CarlemanSample(idx, lhs, ro, rs, seed)


def empirical_constant(
    problem: ControlProblem,
    n_samples: int = 100,
    seed: int = 0,
    s: float | None = None,
    spec: SampleSpec | None = None,
    threads: int = 1,
) -> CarlemanReport:
    """Largest observed lhs / (rhs_obs + rhs_src) over random adjoint solutions with sources."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    spec = spec or SampleSpec()
    fam = problem.weights if s is None else problem.weights.with_params(s=s)

    def run(idx):
        return _one_sample(problem, spec, fam, idx, seed + idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            samples = list(ex.map(run, range(n_samples)))
    else:
        samples = [run(i) for i in range(n_samples)]
    live = [smp for smp in samples if not smp.skipped]
    worst = max(live, key=lambda smp: smp.ratio) if live else None
    return CarlemanReport(
        samples,
        None if worst is None else worst.ratio,
        worst,
        fam.s,
        fam.lam,
        seed,
        problem.grid.to_dict(),
    )


# ---------------------------------------------------------------------------
# observability constant


@dataclass
class ObservabilityResult:
    constant: float
    quotients: list[float]
    iterations: int
    inner_iterations: list[int]


def _quotient(problem: ControlProblem, q: np.ndarray) -> tuple[float, float]:
    g = problem.grid
    p = problem.adjoint(q)
    num = g.inner(p.initial, p.initial)
    den = weighted_energy(problem, q)
    return num, den


def observability_constant(
    problem: ControlProblem,
    s: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
    shift: float = 1e-5,
    cap: float = 1e8,
    inner_tol: float = 1e-8,
    inner_max: int | None = None,
    start: np.ndarray | None = None,
) -> ObservabilityResult:
    """Largest ‖p(0)‖² / ∫_{Q_ω0} |p_0|² e^{2sᾱ} over terminal data.

    Power iteration on the pencil (P0ᵀP0, Λ + ρI): each step applies P0ᵀP0
    (adjoint down to t = 0, then the uncontrolled forward map, which is its
    transpose) and solves with the shifted Gramian by CG.  The shift ρ is
    ``shift`` times ‖p(0)‖² of the start vector, so it does not depend on ω0.
    It keeps the inner solves well posed; the price is that the estimate is
    a lower bound which creeps up as ``shift`` goes to zero.  The reported
    quotient is the unshifted one.  An unobservable direction
    makes it run past ``cap``, which raises PowerIterationStalled.
    """
    if s is not None:
        problem = ControlProblem(problem.grid, problem.tree, problem.coeffs, problem.weights.with_params(s=s), problem.omega0)
    g = problem.grid
    shape = problem.shape
    if inner_max is None:
        inner_max = 10 * shape[0] * g.Nx
    if start is None:
        rng = np.random.default_rng(seed)
        q = sine_field(g, rng.standard_normal((shape[0], 10)))
    else:
        q = np.array(start, dtype=float)
    q = q / g.norm(q)
    quotients: list[float] = []
    inner_its: list[int] = []
    num, den = _quotient(problem, q)
    if den <= 0.0:
        raise PowerIterationStalled("starting datum is unobserved", quotients)
    quotients.append(num / den)
    rho = shift * num

    def gram(v):
        return gramian_apply(problem, v) + rho * v

    for it in range(1, max_iter + 1):
        p = problem.adjoint(q)
        v = problem.forward(p.initial).final
        try:
            q_new, k, _, _ = conjugate_gradient(gram, v, g, inner_tol, inner_max)
        except CGStalled as exc:
            raise PowerIterationStalled(f"Gramian solve stalled at power iteration {it}: {exc}", quotients) from exc
        inner_its.append(k)
        q = q_new / g.norm(q_new)
        num, den = _quotient(problem, q)
        quotients.append(num / den if den > 0.0 else math.inf)
        if quotients[-1] > cap:
            raise PowerIterationStalled(
                f"quotient {quotients[-1]:.3e} exceeds cap {cap:.1e} at iteration {it}: unobservable direction", quotients
            )
        if abs(quotients[-1] - quotients[-2]) <= tol * abs(quotients[-1]):
            return ObservabilityResult(quotients[-1], quotients, it, inner_its)
    raise PowerIterationStalled(f"quotient not settled after {max_iter} iterations", quotients)


# ---------------------------------------------------------------------------
# L∞ - L² check


@dataclass
class LinfReport:
    ratios: list[float]
    lhs: list[float]
    rhs: list[float]
    max_ratio: float | None
    m0: int
    delta1: float
    s: float

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "m0": self.m0, "delta1": self.delta1, "s": self.s, "n_samples": len(self.ratios)}


def linf_sides(p: TrajectoryField, weights: WeightFamily, omega0: Subdomain, s: float, delta1: float, m0: int) -> tuple[float, float]:
    g = p.grid
    sl = _interior(g)
    shifted = weights.with_params(s=s + m0 * delta1)
    w_lhs = shifted.weight_under(g.t, factor=1.0)
    lhs = float(np.max(np.abs(p.data[sl]) * w_lhs[sl, None, None]))
    w_rhs = weights.with_params(s=s).weight_bar(g.t, factor=2.0)
    obs = observe(p, omega0)[sl]
    rhs = math.sqrt(g.tau * g.h * float(np.sum(w_rhs[sl, None] * obs**2)))
    return lhs, rhs


def linf_l2_check(
    problem: ControlProblem,
    delta1: float | None = None,
    m0: int = 0,
    n_samples: int = 20,
    seed: int = 0,
    s: float | None = None,
    zero: bool = False,
) -> LinfReport:
    """max over samples of ‖p e^{(s + m0 δ1) α̲}‖_∞ / ‖p_0 e^{sᾱ}‖_{L²(Q_ω0)}."""
    fam = problem.weights
    s = fam.s if s is None else s
    delta1 = 0.05 * s if delta1 is None else delta1
    spec = SampleSpec(with_source=False, zero=zero)
    ratios, lhs_l, rhs_l = [], [], []
    for idx in range(n_samples):
        rng = np.random.default_rng(seed + idx)
        pT, _ = spec.draw(problem.grid, problem.tree.n + 1, rng)
        p = problem.adjoint(pT)
        lhs, rhs = linf_sides(p, fam, problem.omega0, s, delta1, m0)
        if rhs == 0.0:
            if lhs > 0.0:
                raise DegenerateSample(f"sample {idx}: positive sup with zero observation")
            continue
        lhs_l.append(lhs)
        rhs_l.append(rhs)
        ratios.append(lhs / rhs)
    return LinfReport(ratios, lhs_l, rhs_l, max(ratios) if ratios else None, m0, delta1, s)
