"""Coupling trees, coefficient fields and constant-coefficient Kalman analysis."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from .errors import CyclicCoupling, SelfLoop
from .geometry import Grid, SubdomainFamily, build_cutoff
from .validation import ValidationReport


@dataclass(frozen=True)
class CouplingTree:
    """Parent map ``k`` on components ``1..n``; component 0 is the controlled root.

    ``k[i - 1]`` is the parent of component ``i`` and ``depth[i - 1]`` the number
    of applications of ``k`` needed to reach 0.
    """

    k: tuple[int, ...]
    depth: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.k)

    def parent(self, i: int) -> int:
        return self.k[i - 1]

    def depth_of(self, j: int) -> int:
        return 0 if j == 0 else self.depth[j - 1]

    def children(self, j: int) -> list[int]:
        return [i for i in range(1, self.n + 1) if self.k[i - 1] == j]

    def siblings(self, i: int) -> list[int]:
        p = self.parent(i)
        return [j for j in range(1, self.n + 1) if j != i and self.k[j - 1] == p]

    @property
    def is_star(self) -> bool:
        return all(p == 0 for p in self.k)

    def parent_array(self) -> np.ndarray:
        """Length n+1 int array, ``-1`` for the root."""
        return np.array([-1, *self.k], dtype=np.int64)

    def order(self) -> list[int]:
        """Components sorted root first, then by increasing depth."""
        return sorted(range(self.n + 1), key=lambda j: (self.depth_of(j), j))

    def descendants(self, j: int) -> set[int]:
        out: set[int] = set()
        stack = self.children(j)
        while stack:
            i = stack.pop()
            out.add(i)
            stack.extend(self.children(i))
        return out


def validate_tree(k: Sequence[int]) -> CouplingTree:
    k = tuple(int(v) for v in k)
    n = len(k)
    for i, p in enumerate(k, start=1):
        if p == i:
            raise SelfLoop(f"k({i}) = {i}")
        if not 0 <= p <= n:
            raise ValueError(f"k({i}) = {p} outside 0..{n}")
    depth = []
    for i in range(1, n + 1):
        seen = {i}
        j, m = i, 0
        while j != 0:
            j = k[j - 1]
            m += 1
            if j in seen or m > n:
                raise CyclicCoupling(f"orbit of {i} under k never reaches 0")
            seen.add(j)
        depth.append(m)
    return CouplingTree(k, tuple(depth))


def star_tree(n: int) -> CouplingTree:
    return validate_tree([0] * n)


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientSet:
    """Dense space-time coefficient fields.

    ``a[i]`` is a_{i,k(i)} on the (Nt+1, Nx) grid (``a[0]`` is unused and zero);
    ``c[j]`` is the diagonal reaction coefficient of component j.
    """

    a: np.ndarray
    c: np.ndarray
    M: float = 1.0
    delta: float = 0.5

    @property
    def n(self) -> int:
        return self.a.shape[0] - 1

    def sup_norms(self) -> dict[str, list[float]]:
        return {
            "a": [float(np.max(np.abs(self.a[i]))) for i in range(1, self.n + 1)],
            "c": [float(np.max(np.abs(self.c[j]))) for j in range(self.n + 1)],
        }


def coefficients_from_spatial(
    grid: Grid,
    a_fields: Sequence[np.ndarray],
    c_fields: Sequence[np.ndarray] | None = None,
    M: float = 1.0,
    delta: float = 0.5,
) -> CoefficientSet:
    """Time-constant coefficients from spatial profiles (``a_fields[i-1]`` is a_{i,k(i)})."""
    n = len(a_fields)
    a = np.zeros((n + 1, grid.Nt + 1, grid.Nx))
    c = np.zeros((n + 1, grid.Nt + 1, grid.Nx))
    for i, f in enumerate(a_fields, start=1):
        a[i] = np.broadcast_to(np.asarray(f, dtype=float), (grid.Nt + 1, grid.Nx))
    if c_fields is not None:
        for j, f in enumerate(c_fields):
            c[j] = np.broadcast_to(np.asarray(f, dtype=float), (grid.Nt + 1, grid.Nx))
    return CoefficientSet(a, c, M, delta)


def random_class_coefficients(
    grid: Grid, tree: CouplingTree, family: SubdomainFamily, M: float, delta: float, c_scale: float = 1.0
):
    """Sampler of time-dependent coefficient sets inside the class with bound M and lower bound delta.

    a_i is a signed bump on ω_i equal to its amplitude on ω̲_i, the amplitude
    oscillating in time within [delta, M]; c_j is a smooth profile bounded by
    min(M, c_scale).
    """
    n = tree.n
    bumps = [build_cutoff(grid, family.omega[i - 1], family.omega_under[i], 1) for i in range(1, n + 1)]
    t = grid.t[:, None]
    basis = np.sin(np.outer(np.arange(1, 4), grid.x) * math.pi / grid.L)

    def draw(rng: np.random.Generator) -> CoefficientSet:
        a = np.zeros((n + 1, grid.Nt + 1, grid.Nx))
        c = np.zeros_like(a)
        for i in range(1, n + 1):
            sign = rng.choice([-1.0, 1.0])
            phase = rng.uniform(0, 2 * math.pi)
            amp = delta + (M - delta) * (0.5 + 0.5 * np.sin(2 * math.pi * t / grid.T + phase)) * rng.uniform(0, 1)
            a[i] = sign * amp * bumps[i - 1][None, :]
        cmax = min(M, c_scale)
        for j in range(n + 1):
            c[j] = cmax * np.tanh(rng.standard_normal(3) @ basis)[None, :] * np.ones((grid.Nt + 1, 1))
        return CoefficientSet(a, c, M, delta)

    return draw


def zero_coefficients(grid: Grid, n: int) -> CoefficientSet:
    z = np.zeros((n + 1, grid.Nt + 1, grid.Nx))
    return CoefficientSet(z, z.copy())


def check_class_membership(
    coeffs: CoefficientSet,
    fam: SubdomainFamily,
    M: float | None = None,
    delta: float | None = None,
) -> ValidationReport:
    """Sup bounds, support inside ω_i, lower bound on ω̲_i and sign on ω̃_i."""
    M = coeffs.M if M is None else M
    delta = coeffs.delta if delta is None else delta
    g = fam.grid
    rep = ValidationReport(f"class membership (M={M:g}, delta={delta:g})")
    for i in range(1, coeffs.n + 1):
        ai = coeffs.a[i]
        sup = float(np.max(np.abs(ai)))
        rep.add(f"a_sup[{i}]", sup <= M, value=sup, bound=M)
        outside = ~fam.omega[i - 1].mask(g)
        leak = float(np.max(np.abs(ai[:, outside]))) if outside.any() else 0.0
        rep.add(f"a_support[{i}]", leak == 0.0, max_outside=leak)
        under = fam.omega_under[i].mask(g)
        low = float(np.min(np.abs(ai[:, under])))
        rep.add(f"a_lower[{i}]", low >= delta, min_on_under=low, bound=delta)
        tilde = fam.omega_tilde[i].mask(g)
        vals = ai[:, tilde]
        same_sign = bool(np.all(vals > 0) or np.all(vals < 0))
        rep.add(f"a_sign[{i}]", same_sign)
    for j in range(coeffs.n + 1):
        sup = float(np.max(np.abs(coeffs.c[j])))
        rep.add(f"c_sup[{j}]", sup <= M, value=sup, bound=M)
    return rep


# ---------------------------------------------------------------------------
# Kalman rank analysis


def constant_coupling_matrix(tree: CouplingTree, a_values: Sequence[float], c_values: Sequence[float] | None = None) -> np.ndarray:
    """(n+1)×(n+1) matrix A0 with A0[i, k(i)] = a_i and diag(c)."""
    n = tree.n
    A0 = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        A0[i, tree.parent(i)] = a_values[i - 1]
    if c_values is not None:
        A0[np.diag_indices(n + 1)] += np.asarray(c_values, dtype=float)
    return A0


def kalman_matrix(A0: np.ndarray, B: np.ndarray) -> np.ndarray:
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1)
    cols = [B]
    for _ in range(A0.shape[0] - 1):
        cols.append(A0 @ cols[-1])
    return np.column_stack(cols)


def kalman_rank(K: np.ndarray, tol: float = 1e-10) -> int:
    if tol <= 0:
        raise ValueError("tol must be positive")
    sv = np.linalg.svd(np.atleast_2d(K), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def unobservable_directions(A0: np.ndarray, B: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of the Kalman column space."""
    K = kalman_matrix(A0, B)
    U, sv, _ = np.linalg.svd(K)
    r = kalman_rank(K, tol)
    return U[:, r:].T.copy()
