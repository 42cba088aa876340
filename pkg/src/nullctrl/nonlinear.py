"""Semilinear systems of product form f_i(x, y_parent, y_i) = ζ_i(x) ξ_i(y_parent, y_i).

The control is found by Picard iteration on the linearized problem: freeze
z̃, average the partial derivatives of f along the segment ȳ -> ȳ + z̃,
solve the penalized linear problem and march the state with that control.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coupling import CoefficientSet, CouplingTree, check_class_membership
from .errors import ClassMembershipLost, NoConvergence, RangeExceeded
from .geometry import (
    Grid,
    SubdomainFamily,
    star_free_region_mask,
    tree_free_region_mask,
)
from .hum import ControlProblem, ControlResult, solve_penalized
from .pde import StationaryState, TrajectoryField, fmt, solve_elliptic_stationary
from .validation import ValidationReport

log = logging.getLogger(__name__)

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
# mapped to [0, 1]
GL_NODES = 0.5 * (GL_NODES + 1.0)
GL_WEIGHTS = 0.5 * GL_WEIGHTS


@dataclass(frozen=True)
class Xi:
    """Scalar nonlinearity ξ(y_parent, y_self) with both first partials."""

    name: str
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_parent: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_self: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)


def poly_xi(terms: Sequence[Sequence[float]]) -> Xi:
    """ξ = Σ c · y_parent^i · y_self^j for terms (i, j, c)."""
    terms = [(int(i), int(j), float(c)) for i, j, c in terms]

    def f(yp, ys):
        out = np.zeros(np.broadcast(yp, ys).shape)
        for i, j, c in terms:
            out = out + c * yp**i * ys**j
        return out

    def dp(yp, ys):
        out = np.zeros(np.broadcast(yp, ys).shape)
        for i, j, c in terms:
            if i > 0:
                out = out + c * i * yp ** (i - 1) * ys**j
        return out

    def ds(yp, ys):
        out = np.zeros(np.broadcast(yp, ys).shape)
        for i, j, c in terms:
            if j > 0:
                out = out + c * j * yp**i * ys ** (j - 1)
        return out

    return Xi("poly", f, dp, ds, {"terms": [list(t) for t in terms]})


def sine_xi(amp: float = 1.0, freq: float = 1.0, lin_parent: float = 0.0, lin_self: float = 0.0) -> Xi:
    """ξ = amp · sin(freq · y_parent) + lin_parent · y_parent + lin_self · y_self."""

    def f(yp, ys):
        return amp * np.sin(freq * yp) + lin_parent * yp + lin_self * ys

    def dp(yp, ys):
        return amp * freq * np.cos(freq * yp) + lin_parent + 0.0 * ys

    def ds(yp, ys):
        return np.zeros(np.broadcast(yp, ys).shape) + lin_self

    return Xi("sine", f, dp, ds, {"amp": amp, "freq": freq, "lin_parent": lin_parent, "lin_self": lin_self})


XI_REGISTRY: dict[str, Callable[..., Xi]] = {"poly": poly_xi, "sine": sine_xi}


def make_xi(decl: dict) -> Xi:
    decl = dict(decl)
    name = decl.pop("name")
    if name not in XI_REGISTRY:
        raise KeyError(f"unknown nonlinearity '{name}'; known: {sorted(XI_REGISTRY)}")
    return XI_REGISTRY[name](**decl)


@dataclass
class NonlinearSpec:
    """``zeta[j]`` and ``xi[j]`` for j = 0..n; for j = 0 the parent argument is ignored."""

    grid: Grid
    tree: CouplingTree
    zeta: list[np.ndarray]
    xi: list[Xi]
    gbar: list[np.ndarray]
    y_max: float = 10.0

    def f(self, j: int, yp, y):
        return self.zeta[j] * self.xi[j].f(yp, y)

    def df_dparent(self, j: int, yp, y):
        if j == 0:
            return np.zeros(np.broadcast(yp, y).shape)
        return self.zeta[j] * self.xi[j].d_parent(yp, y)

    def df_dself(self, j: int, yp, y):
        return self.zeta[j] * self.xi[j].d_self(yp, y)


def stationary_state(spec: NonlinearSpec, **kw) -> StationaryState:
    return solve_elliptic_stationary(spec, **kw)


def _parent_field(tree: CouplingTree, y: np.ndarray, j: int) -> np.ndarray:
    if j == 0:
        return np.zeros_like(y[..., 0, :])
    return y[..., tree.parent(j), :]


def linearize_coeffs(
    spec: NonlinearSpec,
    ybar: np.ndarray,
    ztilde: np.ndarray | TrajectoryField | None = None,
    M: float | None = None,
    delta: float | None = None,
) -> CoefficientSet:
    """a_i = ∫₀¹ ∂f_i/∂y_parent(ȳ + τz̃) dτ and c_j = ∫₀¹ ∂f_j/∂y_j(ȳ + τz̃) dτ.

    ``ztilde`` has shape (Nt+1, n+1, Nx); None means z̃ = 0.  The returned
    set carries the measured sup norm as M and the smallest |a_i| on ω̲_i is
    not known here, so ``delta`` defaults to 0 unless supplied.
    """
    g = spec.grid
    n1 = spec.tree.n + 1
    if isinstance(ztilde, TrajectoryField):
        ztilde = ztilde.data
    if ztilde is None:
        ztilde = np.zeros((g.Nt + 1, n1, g.Nx))
    ybar = np.asarray(ybar, dtype=float)
    top = float(np.max(np.abs(ybar[None] + ztilde)))
    if top > spec.y_max:
        raise RangeExceeded(f"|ȳ + z̃| reaches {top:.3g} > y_max = {spec.y_max:g}")
    a = np.zeros((n1, g.Nt + 1, g.Nx))
    c = np.zeros_like(a)
    for j in range(n1):
        yb_s = ybar[j][None, :]
        z_s = ztilde[:, j, :]
        yb_p = ybar[spec.tree.parent(j)][None, :] if j > 0 else np.zeros((1, g.Nx))
        z_p = ztilde[:, spec.tree.parent(j), :] if j > 0 else np.zeros_like(z_s)
        for node, w in zip(GL_NODES, GL_WEIGHTS):
            yp = yb_p + node * z_p
            ys = yb_s + node * z_s
            if j > 0:
                a[j] += w * spec.df_dparent(j, yp, ys)
            c[j] += w * spec.df_dself(j, yp, ys)
    sup = float(max(np.max(np.abs(a)), np.max(np.abs(c))))
    return CoefficientSet(a, c, sup if M is None else M, 0.0 if delta is None else delta)


def measured_class(coeffs: CoefficientSet, fam: SubdomainFamily) -> tuple[float, float]:
    """(M0, δ0): sup norm over all coefficients and min over i of min |a_i| on ω̲_i."""
    M0 = float(max(np.max(np.abs(coeffs.a)), np.max(np.abs(coeffs.c))))
    lows = []
    for i in range(1, coeffs.n + 1):
        under = fam.omega_under[i].mask(fam.grid)
        lows.append(float(np.min(np.abs(coeffs.a[i][:, under]))))
    return M0, (min(lows) if lows else 0.0)


def check_nonlinear_hypotheses(spec: NonlinearSpec, fam: SubdomainFamily, ybar: np.ndarray) -> ValidationReport:
    g = spec.grid
    tree = spec.tree
    rep = ValidationReport("nonlinear hypotheses")
    for i in range(1, tree.n + 1):
        supp = np.abs(spec.zeta[i]) > 0
        outside = ~fam.omega[i - 1].mask(g)
        rep.add(f"f_support_in_omega[{i}]", not np.any(supp & outside), nodes_outside=int(np.sum(supp & outside)))
        region = star_free_region_mask(fam, i) if tree.is_star else tree_free_region_mask(fam, tree, i)
        deriv = spec.df_dparent(i, ybar[tree.parent(i)], ybar[i])
        hit = (np.abs(deriv) > 0) & region
        idx = np.flatnonzero(hit)
        rep.add(
            f"coupling_derivative_meets_region[{i}]",
            bool(idx.size),
            witness=[int(idx[0]), int(idx[-1])] if idx.size else None,
            nodes=int(idx.size),
        )
    coeffs0 = linearize_coeffs(spec, ybar)
    M0, d0 = measured_class(coeffs0, fam)
    cls = check_class_membership(coeffs0, fam, M0, d0)
    rep.add("linearized_class", cls.ok and d0 > 0, M0=M0, delta0=d0, failures=[c.name for c in cls.failures()])
    return rep


# ---------------------------------------------------------------------------
# Picard loop


@dataclass
class TraceRow:
    iteration: int
    diff_norm: float
    terminal_norm: float
    u_linf: float
    class_ok: bool
    sup_norm: float


@dataclass
class FixedPointTrace:
    beta0: float
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False
    status: str = "running"
    M0: float = math.nan
    delta0: float = math.nan
    linear_floor: float = math.nan
    solves: int = 0

    @property
    def iterations(self) -> int:
        return self.solves

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "diff_norm", "terminal_norm", "u_linf", "class_ok"])
            for r in self.rows:
                w.writerow([r.iteration, fmt(r.diff_norm), fmt(r.terminal_norm), fmt(r.u_linf), int(r.class_ok)])

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "M0": self.M0,
            "delta0": self.delta0,
            "linear_floor": self.linear_floor,
            "rows": [r.__dict__ for r in self.rows],
        }


@dataclass
class NonlinearResult:
    control: ControlResult
    trace: FixedPointTrace
    y: TrajectoryField
    ybar: np.ndarray

    @property
    def terminal_deviation(self) -> float:
        return self.y.grid.norm(self.y.final - self.ybar)


def fixed_point_control(
    spec: NonlinearSpec,
    fam: SubdomainFamily,
    problem: ControlProblem,
    y0: np.ndarray,
    beta0: float = 0.1,
    eps: float = 1e-8,
    tol: float = 1e-10,
    max_iters: int = 10,
    zeta0: float | None = None,
    ybar: np.ndarray | None = None,
) -> NonlinearResult:
    """Picard realization of the fixed-point map z̃ -> z[u(z̃)] started at z̃ = 0.

    ``problem`` supplies grid, tree, weights and ω0; its coefficients are
    replaced each round.  Raises ClassMembershipLost when the linearized
    coefficients leave the class (2 M0, δ0 / 2) and NoConvergence when an
    iterate leaves the ball of radius beta0 or max_iters is reached.
    """
    g = spec.grid
    if ybar is None:
        ybar = stationary_state(spec).y
    zeta0 = beta0 / 10 if zeta0 is None else zeta0
    z0 = np.asarray(y0, dtype=float) - ybar
    if float(np.max(np.abs(z0))) >= zeta0:
        log.warning("‖y0 - ȳ‖∞ = %.3g is not below the radius %.3g", float(np.max(np.abs(z0))), zeta0)

    trace = FixedPointTrace(beta0)
    c0 = linearize_coeffs(spec, ybar)
    trace.M0, trace.delta0 = measured_class(c0, fam)
    ztilde = np.zeros((g.Nt + 1, spec.tree.n + 1, g.Nx))
    prev_coeffs: CoefficientSet | None = None
    res: ControlResult | None = None
    for k in range(max_iters):
        try:
            coeffs = linearize_coeffs(spec, ybar, ztilde, 2 * trace.M0, trace.delta0 / 2)
        except RangeExceeded as exc:
            trace.status = ClassMembershipLost.status
            raise ClassMembershipLost(str(exc), trace) from exc
        cls = check_class_membership(coeffs, fam, 2 * trace.M0, trace.delta0 / 2)
        if not cls.ok:
            trace.status = ClassMembershipLost.status
            trace.rows.append(TraceRow(k, math.nan, math.nan, math.nan, False, float(np.max(np.abs(ztilde)))))
            names = ", ".join(c.name for c in cls.failures())
            raise ClassMembershipLost(f"iteration {k}: linearized coefficients leave the class ({names})", trace)
        if prev_coeffs is not None and np.array_equal(coeffs.a, prev_coeffs.a) and np.array_equal(coeffs.c, prev_coeffs.c):
            # same coefficients give the same control and state
            z_new = ztilde
        else:
            res = solve_penalized(problem.with_coeffs(coeffs), z0, eps)
            trace.solves += 1
            z_new = res.state.data
            if k == 0:
                trace.linear_floor = res.terminal_norm
        assert res is not None
        diff = float(np.max(np.abs(z_new - ztilde)))
        sup = float(np.max(np.abs(z_new)))
        trace.rows.append(TraceRow(k, diff, res.terminal_norm, res.linf, True, sup))
        if sup > beta0:
            trace.status = NoConvergence.status
            raise NoConvergence(f"iteration {k}: ‖z‖∞ = {sup:.3g} left the ball of radius {beta0:g}", trace)
        ztilde = z_new
        prev_coeffs = coeffs
        if diff < tol:
            trace.converged = True
            trace.status = "converged"
            y = TrajectoryField(ybar[None] + ztilde, g)
            return NonlinearResult(res, trace, y, ybar)
    trace.status = NoConvergence.status
    raise NoConvergence(f"no convergence in {max_iters} iterations", trace)
