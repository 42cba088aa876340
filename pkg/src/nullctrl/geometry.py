"""Uniform 1D space-time grid, interval subdomains and cutoff functions.

Subdomains are open intervals.  Every set relation between them is
evaluated on the node lattice of a :class:`Grid`: a subdomain owns the
interior nodes lying strictly inside it, and a set built from subdomains
(intersections, differences) is an :class:`IndexSet`, a union of disjoint
closed ranges of node indices.  ``A ⊂⊂ B`` means the node range of ``A``,
widened by one cell on each side, still lies inside ``B``.

Node index ``j`` (0-based) sits at ``x = (j + 1) * h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MarginTooSmall, NonPositiveDimension, SubdomainError, TooCoarse
from .validation import ValidationReport

# tolerance, in units of h, for deciding whether a node sits on an endpoint
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    L: float
    Nx: int
    T: float
    Nt: int

    @property
    def h(self) -> float:
        return self.L / (self.Nx + 1)

    @property
    def tau(self) -> float:
        return self.T / self.Nt

    @property
    def x(self) -> np.ndarray:
        return np.arange(1, self.Nx + 1) * self.h

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.Nt + 1) * self.tau

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete L2(Ω) product; stacked components are summed over."""
        return float(self.h * np.sum(np.asarray(a) * np.asarray(b)))

    def norm(self, a: np.ndarray) -> float:
        return math.sqrt(max(self.inner(a, a), 0.0))

    def inner_st(self, a: np.ndarray, b: np.ndarray) -> float:
        """Space-time product over time levels ``1..Nt`` (arrays indexed by level first)."""
        a = np.asarray(a)
        b = np.asarray(b)
        return float(self.tau * self.h * np.sum(a[1:] * b[1:]))

    def refined(self, factor: int = 2) -> "Grid":
        """Grid with h and tau divided by ``factor`` (same L, T)."""
        return Grid(self.L, factor * (self.Nx + 1) - 1, self.T, factor * self.Nt)

    def to_dict(self) -> dict:
        return {"L": self.L, "Nx": self.Nx, "T": self.T, "Nt": self.Nt, "h": self.h, "tau": self.tau}


def build_grid(L: float, Nx: int, T: float, Nt: int) -> Grid:
    if not (L > 0 and T > 0):
        raise NonPositiveDimension(f"L and T must be positive, got L={L}, T={T}")
    if int(Nx) != Nx or int(Nt) != Nt:
        raise TooCoarse("Nx and Nt must be integers")
    if Nx < 3 or Nt < 2:
        raise TooCoarse(f"need Nx >= 3 and Nt >= 2, got Nx={Nx}, Nt={Nt}")
    return Grid(float(L), int(Nx), float(T), int(Nt))


# ---------------------------------------------------------------------------
# index sets


@dataclass(frozen=True)
class IndexSet:
    """Union of disjoint, non-adjacent closed node ranges ``[a, b]``."""

    ranges: tuple[tuple[int, int], ...] = ()

    @staticmethod
    def of(ranges: Iterable[tuple[int, int]]) -> "IndexSet":
        rs = sorted((int(a), int(b)) for a, b in ranges if a <= b)
        merged: list[list[int]] = []
        for a, b in rs:
            if merged and a <= merged[-1][1] + 1:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return IndexSet(tuple((a, b) for a, b in merged))

    @property
    def empty(self) -> bool:
        return not self.ranges

    def __len__(self) -> int:
        return sum(b - a + 1 for a, b in self.ranges)

    def intersect(self, other: "IndexSet") -> "IndexSet":
        out = []
        for a, b in self.ranges:
            for c, d in other.ranges:
                lo, hi = max(a, c), min(b, d)
                if lo <= hi:
                    out.append((lo, hi))
        return IndexSet.of(out)

    def union(self, other: "IndexSet") -> "IndexSet":
        return IndexSet.of(self.ranges + other.ranges)

    def subtract(self, other: "IndexSet") -> "IndexSet":
        pieces = list(self.ranges)
        for c, d in other.ranges:
            nxt = []
            for a, b in pieces:
                if d < a or c > b:
                    nxt.append((a, b))
                    continue
                if a < c:
                    nxt.append((a, c - 1))
                if d < b:
                    nxt.append((d + 1, b))
            pieces = nxt
        return IndexSet.of(pieces)

    def contains_compactly(self, inner: "IndexSet") -> bool:
        """``inner ⊂⊂ self``: every range of inner, widened by one node, fits in one range of self."""
        if inner.empty:
            return True
        for a, b in inner.ranges:
            if not any(c <= a - 1 and b + 1 <= d for c, d in self.ranges):
                return False
        return True

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        for a, b in self.ranges:
            m[max(a, 0) : min(b, n - 1) + 1] = True
        return m

    def to_list(self) -> list[list[int]]:
        return [[a, b] for a, b in self.ranges]


@dataclass(frozen=True)
class Subdomain:
    lo: float
    hi: float

    def node_range(self, grid: Grid) -> tuple[int, int]:
        """0-based indices of the first and last interior node strictly inside (lo, hi)."""
        h = grid.h
        first = math.floor(self.lo / h + _EDGE_TOL) + 1
        last = math.ceil(self.hi / h - _EDGE_TOL) - 1
        first = max(first, 1)
        last = min(last, grid.Nx)
        return first - 1, last - 1

    def index_set(self, grid: Grid) -> IndexSet:
        a, b = self.node_range(grid)
        return IndexSet.of([(a, b)])

    def mask(self, grid: Grid) -> np.ndarray:
        """Brute-force membership scan, independent of :meth:`node_range`."""
        x = grid.x
        tol = _EDGE_TOL * grid.h
        return (x > self.lo + tol) & (x < self.hi - tol)

    def n_nodes(self, grid: Grid) -> int:
        a, b = self.node_range(grid)
        return max(b - a + 1, 0)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def to_list(self) -> list[float]:
        return [self.lo, self.hi]


def make_subdomain(grid: Grid, lo: float, hi: float) -> Subdomain:
    if not (0.0 <= lo < hi <= grid.L):
        raise SubdomainError(f"subdomain ({lo}, {hi}) not inside [0, {grid.L}]")
    sub = Subdomain(float(lo), float(hi))
    if sub.n_nodes(grid) < 3:
        raise SubdomainError(f"subdomain ({lo}, {hi}) holds fewer than 3 grid nodes")
    return sub


@dataclass(frozen=True)
class SubdomainFamily:
    grid: Grid
    omega0: Subdomain
    omega: tuple[Subdomain, ...]
    omega_under: tuple[Subdomain, ...]
    omega_tilde: tuple[Subdomain, ...]

    @property
    def n(self) -> int:
        return len(self.omega)

    def omega_all(self, j: int) -> Subdomain:
        """ω_j with ω_0 at index 0."""
        return self.omega0 if j == 0 else self.omega[j - 1]

    def to_dict(self) -> dict:
        return {
            "omega0": self.omega0.to_list(),
            "omega": [s.to_list() for s in self.omega],
            "omega_under": [s.to_list() for s in self.omega_under],
            "omega_tilde": [s.to_list() for s in self.omega_tilde],
        }


def build_family(
    grid: Grid,
    omega0: Sequence[float],
    omega: Sequence[Sequence[float]],
    omega_under: Sequence[Sequence[float]],
    omega_tilde: Sequence[Sequence[float]],
) -> SubdomainFamily:
    n = len(omega)
    if len(omega_under) != n + 1 or len(omega_tilde) != n + 1:
        raise SubdomainError(
            f"omega_under and omega_tilde need n+1={n + 1} entries, got "
            f"{len(omega_under)} and {len(omega_tilde)}"
        )
    fam = SubdomainFamily(
        grid,
        make_subdomain(grid, *omega0),
        tuple(make_subdomain(grid, *w) for w in omega),
        tuple(make_subdomain(grid, *w) for w in omega_under),
        tuple(make_subdomain(grid, *w) for w in omega_tilde),
    )
    for j in range(n + 1):
        if not compactly_inside(grid, fam.omega_tilde[j], fam.omega_under[j]):
            raise SubdomainError(f"omega_tilde[{j}] is not compactly inside omega_under[{j}]")
    return fam


def compactly_inside(grid: Grid, inner: Subdomain, outer: Subdomain) -> bool:
    return outer.index_set(grid).contains_compactly(inner.index_set(grid))


# ---------------------------------------------------------------------------
# brute-force mask versions of the same relations, used as an oracle


def mask_compactly_inside(inner: np.ndarray, outer: np.ndarray) -> bool:
    idx = np.flatnonzero(inner)
    if idx.size == 0:
        return True
    n = inner.size
    for j in idx:
        for k in (j - 1, j, j + 1):
            if k < 0 or k >= n or not outer[k]:
                return False
    return True


def _star_sets(fam: SubdomainFamily, i: int) -> IndexSet:
    g = fam.grid
    others = IndexSet()
    for j in range(1, fam.n + 1):
        if j != i:
            others = others.union(fam.omega[j - 1].index_set(g))
    return fam.omega[i - 1].index_set(g).intersect(fam.omega0.index_set(g)).subtract(others)


def star_free_region_mask(fam: SubdomainFamily, i: int) -> np.ndarray:
    g = fam.grid
    m = fam.omega[i - 1].mask(g) & fam.omega0.mask(g)
    for j in range(1, fam.n + 1):
        if j != i:
            m &= ~fam.omega[j - 1].mask(g)
    return m


def check_star_hypotheses(fam: SubdomainFamily) -> ValidationReport:
    """Support relations required of a star-coupled family.

    For each driven component i: the part of ω_i ∩ ω_0 not covered by the
    other ω_j must be nonempty, and ω̲_i must sit compactly inside it.
    """
    g = fam.grid
    rep = ValidationReport("star hypotheses")
    for i in range(1, fam.n + 1):
        free = _star_sets(fam, i)
        rep.add(
            f"free_region_nonempty[{i}]",
            not free.empty,
            witness=free.to_list() if not free.empty else None,
            nodes=len(free),
        )
        under = fam.omega_under[i].index_set(g)
        rep.add(
            f"omega_under_inside_free_region[{i}]",
            free.contains_compactly(under) and not free.empty,
            witness=under.to_list(),
        )
    return rep


def tree_chain_set(fam: SubdomainFamily, tree, i: int) -> IndexSet:
    """D_i: intersection of ω along the path from i to the root (root included)."""
    g = fam.grid
    acc = fam.omega_all(i).index_set(g)
    j = i
    while j != 0:
        j = tree.parent(j)
        acc = acc.intersect(fam.omega_all(j).index_set(g))
    return acc


def tree_chain_mask(fam: SubdomainFamily, tree, i: int) -> np.ndarray:
    g = fam.grid
    m = fam.omega_all(i).mask(g).copy()
    j = i
    while j != 0:
        j = tree.parent(j)
        m &= fam.omega_all(j).mask(g)
    return m


def tree_free_region(fam: SubdomainFamily, tree, i: int) -> IndexSet:
    g = fam.grid
    siblings = IndexSet()
    for j in tree.siblings(i):
        siblings = siblings.union(fam.omega[j - 1].index_set(g))
    return tree_chain_set(fam, tree, i).subtract(siblings)


def tree_free_region_mask(fam: SubdomainFamily, tree, i: int) -> np.ndarray:
    m = tree_chain_mask(fam, tree, i)
    for j in tree.siblings(i):
        m &= ~fam.omega[j - 1].mask(fam.grid)
    return m


def check_tree_hypotheses(fam: SubdomainFamily, tree) -> ValidationReport:
    """Chain, sibling-separation and nesting relations for a tree coupling."""
    g = fam.grid
    rep = ValidationReport("tree hypotheses")
    if tree.n != fam.n:
        rep.add("sizes_match", False, tree_n=tree.n, family_n=fam.n)
        return rep
    under0 = fam.omega_under[0].index_set(g)
    rep.add(
        "omega_under0_inside_omega0",
        fam.omega0.index_set(g).contains_compactly(under0),
        witness=under0.to_list(),
    )
    for i in range(1, fam.n + 1):
        chain = tree_chain_set(fam, tree, i)
        rep.add(
            f"chain_nonempty[{i}]",
            not chain.empty,
            witness=chain.to_list() if not chain.empty else None,
            nodes=len(chain),
        )
        free = tree_free_region(fam, tree, i)
        rep.add(
            f"chain_minus_siblings_nonempty[{i}]",
            not free.empty,
            witness=free.to_list() if not free.empty else None,
            nodes=len(free),
        )
        under = fam.omega_under[i].index_set(g)
        rep.add(
            f"omega_under_inside_free_region[{i}]",
            not free.empty and free.contains_compactly(under),
            witness=under.to_list(),
        )
        parent_under = fam.omega_under[tree.parent(i)].index_set(g)
        rep.add(
            f"nested_in_parent_under[{i}]",
            parent_under.contains_compactly(under),
            parent=tree.parent(i),
        )
        rep.add(
            f"nested_in_root_under[{i}]",
            under0.contains_compactly(under),
        )
    return rep


# ---------------------------------------------------------------------------
# cutoffs


def _smoothstep5(r: np.ndarray) -> np.ndarray:
    r = np.clip(r, 0.0, 1.0)
    return r * r * r * (10.0 - 15.0 * r + 6.0 * r * r)


def build_cutoff(grid: Grid, omega_under: Subdomain, omega_tilde: Subdomain, sign: int = 1) -> np.ndarray:
    """C² cutoff: ``sign`` on ω̃, zero off ω̲, quintic smoothstep flanks between."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not compactly_inside(grid, omega_tilde, omega_under):
        raise MarginTooSmall(
            f"({omega_tilde.lo}, {omega_tilde.hi}) needs a one-cell margin inside "
            f"({omega_under.lo}, {omega_under.hi})"
        )
    x = grid.x
    out = np.zeros_like(x)
    lo_u, hi_u = omega_under.lo, omega_under.hi
    lo_t, hi_t = omega_tilde.lo, omega_tilde.hi
    # node membership follows Subdomain.mask so the support is exactly the ω̲ nodes
    tol = _EDGE_TOL * grid.h
    inside = omega_under.mask(grid)
    core = (x >= lo_t - tol) & (x <= hi_t + tol)
    left = inside & (x < lo_t) & ~core
    right = inside & (x > hi_t) & ~core
    out[left] = _smoothstep5((x[left] - lo_u) / (lo_t - lo_u))
    out[right] = _smoothstep5((hi_u - x[right]) / (hi_u - hi_t))
    out[core] = 1.0
    return sign * out
