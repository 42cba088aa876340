"""Penalized HUM: dual conjugate gradient on the terminal adjoint datum.

For penalty eps the optimal control is u = e^{2sᾱ} p_0 on ω0, where p is
the adjoint started from qT and qT solves

    (Λ + eps I) qT = -z_free(T),

Λ being the Gramian qT -> z(T) (adjoint, weight, forward from rest).  Since
the discrete adjoint is the transpose of the forward map, Λ is symmetric
positive semidefinite in the discrete L2 product and plain CG applies.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coupling import CoefficientSet, CouplingTree, random_class_coefficients
from .errors import CGStalled, InconsistentOptimality
from .geometry import Grid, Subdomain
from .pde import ControlField, TrajectoryField, observe, solve_adjoint, solve_forward
from .weights import WeightFamily

log = logging.getLogger(__name__)


@dataclass
class ControlProblem:
    grid: Grid
    tree: CouplingTree
    coeffs: CoefficientSet
    weights: WeightFamily
    omega0: Subdomain
    _w2: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.tree.n + 1, self.grid.Nx)

    @property
    def control_weight(self) -> np.ndarray:
        """e^{2sᾱ(t_m)} on every time level (zero at both ends)."""
        if self._w2 is None:
            self._w2 = self.weights.weight_bar(self.grid.t, factor=2.0)
        return self._w2

    def with_coeffs(self, coeffs: CoefficientSet) -> "ControlProblem":
        return ControlProblem(self.grid, self.tree, coeffs, self.weights, self.omega0, self._w2)

    def adjoint(self, qT: np.ndarray, g: np.ndarray | None = None) -> TrajectoryField:
        return solve_adjoint(self.grid, self.tree, self.coeffs, qT, g)

    def forward(self, z0: np.ndarray, u: ControlField | None = None) -> TrajectoryField:
        return solve_forward(self.grid, self.tree, self.coeffs, z0, u)

    def control_from_adjoint(self, p: TrajectoryField) -> ControlField:
        obs = observe(p, self.omega0)
        a, _ = self.omega0.node_range(self.grid)
        return ControlField(self.control_weight[:, None] * obs, a, self.grid)

    def free_terminal(self, z0: np.ndarray) -> np.ndarray:
        return self.forward(z0).final


def gramian_apply(problem: ControlProblem, qT: np.ndarray) -> np.ndarray:
    p = problem.adjoint(qT)
    u = problem.control_from_adjoint(p)
    return problem.forward(np.zeros(problem.shape), u).final


def weighted_energy(problem: ControlProblem, qT: np.ndarray) -> float:
    """Σ tau h e^{2sᾱ} |p_0|² on Q_ω0, computed straight from the adjoint."""
    g = problem.grid
    obs = observe(problem.adjoint(qT), problem.omega0)
    w = problem.control_weight
    return float(g.tau * g.h * np.sum(w[1:, None] * obs[1:] ** 2))


@dataclass
class ControlResult:
    u: ControlField
    terminal_norm: float
    weighted_l2: float
    linf: float
    cg_iters: int
    eps: float
    gramian_residual: float
    qT: np.ndarray
    state: TrajectoryField
    energy_history: list[float] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "eps": self.eps,
            "terminal_norm": self.terminal_norm,
            "weighted_l2": self.weighted_l2,
            "linf": self.linf,
            "cg_iters": self.cg_iters,
        }


def control_norms(u: ControlField, weights: WeightFamily, p0_on_omega0: np.ndarray) -> tuple[float, float]:
    """(‖u e^{-sᾱ}‖_{L2(Q_ω0)}, ‖u‖_∞), the first evaluated as ‖e^{sᾱ} p_0‖."""
    g = u.grid
    w1 = weights.weight_bar(g.t, factor=1.0)
    weighted = math.sqrt(g.tau * g.h * float(np.sum((w1[1:, None] * p0_on_omega0[1:]) ** 2)))
    return weighted, u.linf()


def conjugate_gradient(apply, b: np.ndarray, grid: Grid, tol: float, max_iter: int, extra_stop=None):
    """CG in the discrete L2 product.  Returns (x, iterations, rel_residual, dual energies)."""
    dot = grid.inner
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = math.sqrt(dot(b, b))
    energies = [0.0]
    if bnorm == 0.0:
        return x, 0, 0.0, energies
    p = r.copy()
    rr = dot(r, r)
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = dot(p, Ap)
        if pAp <= 0.0:
            raise CGStalled(f"non-positive curvature {pAp:.3e} at iteration {it}", it, math.sqrt(rr) / bnorm)
        step = rr / pAp
        x += step * p
        r -= step * Ap
        rr_new = dot(r, r)
        energies.append(-0.5 * dot(b + r, x))
        rel = math.sqrt(rr_new) / bnorm
        if rel <= tol and (extra_stop is None or extra_stop(x, r)):
            return x, it, rel, energies
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise CGStalled(f"relative residual {math.sqrt(rr) / bnorm:.3e} after {max_iter} iterations", max_iter, math.sqrt(rr) / bnorm)


def solve_penalized(
    problem: ControlProblem,
    z0: np.ndarray,
    eps: float,
    tol: float = 1e-8,
    max_iter: int | None = None,
    consistency_tol: float = 1e-6,
    z_free_T: np.ndarray | None = None,
) -> ControlResult:
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = problem.grid
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), problem.shape)
    if max_iter is None:
        max_iter = 10 * problem.shape[0] * g.Nx
    zf = problem.free_terminal(z0) if z_free_T is None else z_free_T
    b = -zf

    def apply(q):
        return gramian_apply(problem, q) + eps * q

    def consistent(x, r):
        # qT + z(T)/eps = -r/eps exactly; keep it well inside consistency_tol
        xn = math.sqrt(g.inner(x, x))
        return math.sqrt(g.inner(r, r)) <= 0.1 * consistency_tol * eps * xn

    qT, iters, rel, energies = conjugate_gradient(apply, b, g, tol, max_iter, consistent)
    p = problem.adjoint(qT)
    u = problem.control_from_adjoint(p)
    state = problem.forward(z0, u)
    zT = state.final
    qn = math.sqrt(g.inner(qT, qT))
    if qn > 0:
        mismatch = g.norm(qT + zT / eps) / qn
        if mismatch > consistency_tol:
            raise InconsistentOptimality(f"qT and -z(T)/eps differ by {mismatch:.3e} (relative)")
    weighted, linf = control_norms(u, problem.weights, observe(p, problem.omega0))
    return ControlResult(
        u=u,
        terminal_norm=g.norm(zT),
        weighted_l2=weighted,
        linf=linf,
        cg_iters=iters,
        eps=eps,
        gramian_residual=rel,
        qT=qT,
        state=state,
        energy_history=energies,
    )


@dataclass
class SweepResult:
    results: list[ControlResult]
    slope: float
    fit_range: tuple[int, int]
    cauchy: list[float]

    @property
    def rows(self) -> list[dict]:
        return [r.row() for r in self.results]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.results], dtype=float)


def floor_index(eps: np.ndarray, norms: np.ndarray, min_gain: float = 0.2) -> int:
    """Index of the last point of the pre-floor range.

    The floor starts where a further eps reduction buys less than
    ``min_gain`` of the decade-wise reduction of the previous step.
    """
    last = len(norms) - 1
    for k in range(1, len(norms)):
        rate = math.log(norms[k - 1] / norms[k]) / math.log(eps[k - 1] / eps[k]) if norms[k] > 0 else math.inf
        if rate < min_gain:
            return k - 1
    return last


def loglog_slope(eps: np.ndarray, norms: np.ndarray) -> float:
    x = np.log(eps)
    y = np.log(norms)
    return float(np.polyfit(x, y, 1)[0])


def eps_sweep(
    problem: ControlProblem,
    z0: np.ndarray,
    eps_list: Sequence[float],
    threads: int = 1,
    tol: float = 1e-8,
) -> SweepResult:
    eps_arr = np.asarray(list(eps_list), dtype=float)
    if np.any(eps_arr <= 0) or np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps_list must be positive and strictly decreasing")
    zf = problem.free_terminal(z0)

    def one(eps):
        return solve_penalized(problem, z0, float(eps), tol=tol, z_free_T=zf)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, eps_arr))
    else:
        results = [one(e) for e in eps_arr]
    norms = np.array([r.terminal_norm for r in results])
    k = floor_index(eps_arr, norms)
    slope = loglog_slope(eps_arr[: k + 1], norms[: k + 1]) if k >= 1 else float("nan")
    g = problem.grid
    cauchy = [
        math.sqrt(g.tau * g.h * float(np.sum((a.u.values - b.u.values) ** 2)))
        for a, b in zip(results, results[1:])
    ]
    return SweepResult(results, slope, (0, k), cauchy)


@dataclass
class ClassSpread:
    """weighted_l2 / ‖z0‖ over random coefficient sets from one class."""

    ratios: list[float]
    M: float
    delta: float
    eps: float

    @property
    def spread(self) -> float:
        return max(self.ratios) / min(self.ratios) if self.ratios else math.nan

    def to_dict(self) -> dict:
        return {"ratios": self.ratios, "min": min(self.ratios), "max": max(self.ratios), "spread": self.spread, "M": self.M, "delta": self.delta, "eps": self.eps}


def class_spread(
    problem: ControlProblem,
    z0: np.ndarray,
    family,
    M: float,
    delta: float,
    n_sets: int = 10,
    eps: float = 1e-6,
    seed: int = 0,
    tol: float = 1e-8,
) -> ClassSpread:
    """Solve with ``n_sets`` random coefficient sets of the class; report, do not bound, the spread."""
    draw = random_class_coefficients(problem.grid, problem.tree, family, M, delta)
    z0n = problem.grid.norm(z0)
    ratios = []
    for k in range(n_sets):
        coeffs = draw(np.random.default_rng(seed + k))
        res = solve_penalized(problem.with_coeffs(coeffs), z0, eps, tol=tol)
        ratios.append(res.weighted_l2 / z0n)
    return ClassSpread(ratios, M, delta, eps)
