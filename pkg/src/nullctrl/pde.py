"""Forward and adjoint solvers for the coupled parabolic system on a 1D grid.

Time stepping is implicit Euler for diffusion and the diagonal reaction,
with the (strictly triangular) coupling lagged one level.  The adjoint is
the algebraic transpose of the forward step, not an independent
discretization, so

    <z(T), pT> = <z(0), p(0)> + sum_{m=1..Nt} tau <u^m, p_0^m>_{ω0}

holds to rounding for every input.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .coupling import CoefficientSet, CouplingTree
from .errors import NewtonDiverged, NonFiniteState, SingularStep
from .geometry import Grid, Subdomain

log = logging.getLogger(__name__)

_EMPTY3 = np.zeros((0, 0, 0))
_EMPTY2 = np.zeros((0, 0))


@dataclass
class TrajectoryField:
    """State or adjoint values indexed ``[time level, component, interior node]``."""

    data: np.ndarray
    grid: Grid

    @property
    def ncomp(self) -> int:
        return self.data.shape[1]

    def component(self, j: int) -> np.ndarray:
        return self.data[:, j, :]

    def at(self, m: int) -> np.ndarray:
        return self.data[m]

    @property
    def final(self) -> np.ndarray:
        return self.data[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.data[0]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.data)))

    def check_finite(self) -> "TrajectoryField":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteState("trajectory contains NaN or Inf")
        return self

    def write_csv(self, path, stride: int = 1) -> None:
        g = self.grid
        t, x = g.t, g.x
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "component", "value"])
            for m in range(0, g.Nt + 1, stride):
                for comp in range(self.ncomp):
                    for j in range(g.Nx):
                        w.writerow([fmt(t[m]), fmt(x[j]), comp, fmt(self.data[m, comp, j])])


def fmt(v: float) -> str:
    """17 significant digits, scientific notation."""
    return f"{float(v):.16e}"


@dataclass
class ControlField:
    """Control values on the ω0 nodes; ``values[m]`` acts in the step ending at t_m."""

    values: np.ndarray
    lo: int
    grid: Grid

    @classmethod
    def zeros(cls, grid: Grid, omega0: Subdomain) -> "ControlField":
        a, b = omega0.node_range(grid)
        return cls(np.zeros((grid.Nt + 1, b - a + 1)), a, grid)

    @classmethod
    def from_full(cls, full: np.ndarray, grid: Grid, omega0: Subdomain) -> "ControlField":
        a, b = omega0.node_range(grid)
        return cls(np.array(full[:, a : b + 1], dtype=float), a, grid)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def extend(self) -> np.ndarray:
        """Extension by zero to the whole grid, shape (Nt+1, Nx)."""
        out = np.zeros((self.grid.Nt + 1, self.grid.Nx))
        out[:, self.lo : self.lo + self.width] = self.values
        return out

    def linf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def l2(self) -> float:
        g = self.grid
        return float(np.sqrt(g.tau * g.h * np.sum(self.values[1:] ** 2)))


def _check_step_guard(grid: Grid, coeffs: CoefficientSet) -> None:
    cmax = float(np.max(coeffs.c)) if coeffs.c.size else 0.0
    if grid.tau * cmax >= 1.0:
        raise SingularStep(
            f"tau * max(c) = {grid.tau * cmax:.3g} >= 1: implicit reaction step not diagonally dominant"
        )
    if grid.tau * cmax > 0.5:
        log.warning("tau * max(c) = %.3g is close to 1", grid.tau * cmax)


def _check_shapes(grid: Grid, tree: CouplingTree, coeffs: CoefficientSet) -> None:
    want = (tree.n + 1, grid.Nt + 1, grid.Nx)
    if coeffs.a.shape != want or coeffs.c.shape != want:
        raise ValueError(f"coefficient arrays must have shape {want}, got {coeffs.a.shape}, {coeffs.c.shape}")


def solve_forward(
    grid: Grid,
    tree: CouplingTree,
    coeffs: CoefficientSet,
    z0: np.ndarray,
    u: ControlField | None = None,
    g: np.ndarray | None = None,
) -> TrajectoryField:
    """March the controlled system from ``z0`` (shape (n+1, Nx)).

    ``g`` is an optional source of shape (Nt+1, n+1, Nx); level m+1 enters step m -> m+1.
    """
    _check_shapes(grid, tree, coeffs)
    _check_step_guard(grid, coeffs)
    z0 = np.ascontiguousarray(np.broadcast_to(z0, (tree.n + 1, grid.Nx)), dtype=float)
    src = _EMPTY3 if g is None else np.ascontiguousarray(g, dtype=float)
    ctrl = _EMPTY2 if u is None else np.ascontiguousarray(u.values, dtype=float)
    lo = 0 if u is None else u.lo
    try:
        Z = _kernels.forward_march(
            z0, coeffs.a, coeffs.c, tree.parent_array(), src, g is not None,
            ctrl, lo, u is not None, grid.tau, grid.h,
        )
    except ZeroDivisionError as exc:
        raise SingularStep(str(exc)) from exc
    return TrajectoryField(Z, grid).check_finite()


def solve_adjoint(
    grid: Grid,
    tree: CouplingTree,
    coeffs: CoefficientSet,
    pT: np.ndarray,
    g: np.ndarray | None = None,
) -> TrajectoryField:
    """Backward march from terminal datum ``pT``, optionally with source ``g``.

    Level m >= 1 holds the multiplier paired with the control at t_m; level 0
    holds the multiplier paired with the initial state.
    """
    _check_shapes(grid, tree, coeffs)
    _check_step_guard(grid, coeffs)
    pT = np.ascontiguousarray(np.broadcast_to(pT, (tree.n + 1, grid.Nx)), dtype=float)
    src = _EMPTY3 if g is None else np.ascontiguousarray(g, dtype=float)
    try:
        R = _kernels.adjoint_march(pT, coeffs.a, coeffs.c, tree.parent_array(), src, g is not None, grid.tau, grid.h)
    except ZeroDivisionError as exc:
        raise SingularStep(str(exc)) from exc
    return TrajectoryField(R, grid).check_finite()


def step_residuals(
    grid: Grid,
    tree: CouplingTree,
    coeffs: CoefficientSet,
    traj: TrajectoryField,
    u: ControlField | None = None,
    g: np.ndarray | None = None,
) -> np.ndarray:
    """Sup-norm residual of the forward scheme at every step, shape (Nt,)."""
    Z = traj.data
    tau, r = grid.tau, grid.tau / grid.h**2
    parent = tree.parent_array()
    res = np.zeros(grid.Nt)
    for m in range(grid.Nt):
        new = Z[m + 1]
        pad = np.pad(new, ((0, 0), (1, 1)))
        lhs = (1 + 2 * r) * new - r * (pad[:, :-2] + pad[:, 2:]) - tau * coeffs.c[:, m + 1] * new
        rhs = Z[m].copy()
        for i in range(tree.n + 1):
            if parent[i] >= 0:
                rhs[i] += tau * coeffs.a[i, m] * Z[m, parent[i]]
        if g is not None:
            rhs += tau * g[m + 1]
        if u is not None:
            rhs[0, u.lo : u.lo + u.width] += tau * u.values[m + 1]
        scale = 1.0 + np.max(np.abs(rhs))
        res[m] = np.max(np.abs(lhs - rhs)) / scale
    return res


def observe(traj: TrajectoryField, omega0: Subdomain) -> np.ndarray:
    """B* p: component 0 restricted to the ω0 nodes, shape (Nt+1, width)."""
    a, b = omega0.node_range(traj.grid)
    return traj.data[:, 0, a : b + 1]


def duality_residual(
    grid: Grid,
    tree: CouplingTree,
    coeffs: CoefficientSet,
    z0: np.ndarray,
    u: ControlField,
    pT: np.ndarray,
    omega0: Subdomain,
) -> float:
    z = solve_forward(grid, tree, coeffs, z0, u)
    p = solve_adjoint(grid, tree, coeffs, pT)
    lhs = grid.inner(z.final, pT)
    pair0 = grid.inner(z0, p.initial)
    pair_u = grid.inner_st(u.values, observe(p, omega0))
    return abs(lhs - pair0 - pair_u) / (1.0 + abs(lhs))


# ---------------------------------------------------------------------------
# stationary elliptic system


@dataclass
class StationaryState:
    y: np.ndarray
    residuals: list[float]
    iterations: list[int]
    history: list[list[float]]


def laplacian_apply(grid: Grid, y: np.ndarray) -> np.ndarray:
    pad = np.pad(y, [(0, 0)] * (y.ndim - 1) + [(1, 1)])
    return (pad[..., :-2] - 2 * y + pad[..., 2:]) / grid.h**2


def solve_elliptic_stationary(
    spec,
    y_init: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> StationaryState:
    """Newton solve of -Δy_j = ḡ_j + f_j(x, y_{k(j)}, y_j), root first.

    ``spec`` provides ``grid``, ``tree``, ``gbar`` and the callables
    ``f(j, y_parent, y_j)`` / ``df_dself(j, y_parent, y_j)``.
    """
    grid: Grid = spec.grid
    tree: CouplingTree = spec.tree
    n1 = tree.n + 1
    y = np.zeros((n1, grid.Nx)) if y_init is None else np.array(y_init, dtype=float)
    inv_h2 = 1.0 / grid.h**2
    residuals = [0.0] * n1
    iterations = [0] * n1
    history: list[list[float]] = [[] for _ in range(n1)]

    for j in tree.order():
        yp = y[tree.parent(j)] if j > 0 else np.zeros(grid.Nx)
        gj = np.asarray(spec.gbar[j], dtype=float)

        def F(v):
            return -laplacian_apply(grid, v) - gj - spec.f(j, yp, v)

        cur = y[j].copy()
        Fv = F(cur)
        norm = float(np.max(np.abs(Fv)))
        history[j].append(norm)
        it = 0
        while norm > tol:
            if it >= max_iter:
                raise NewtonDiverged(f"component {j}: residual {norm:.3e} after {it} iterations")
            diag = 2 * inv_h2 - spec.df_dself(j, yp, cur)
            off = np.full(grid.Nx, -inv_h2)
            step = _kernels.thomas_general(off, diag, off, -Fv)
            lam = 1.0
            while True:
                trial = cur + lam * step
                Ft = F(trial)
                nt = float(np.max(np.abs(Ft)))
                if np.isfinite(nt) and nt < norm:
                    break
                lam *= 0.5
                if lam < 1e-6:
                    raise NewtonDiverged(f"component {j}: line search failed at residual {norm:.3e}")
            cur, Fv, norm = trial, Ft, nt
            history[j].append(norm)
            it += 1
        y[j] = cur
        residuals[j] = norm
        iterations[j] = it
    return StationaryState(y, residuals, iterations, history)
