"""Finite-resolution skeleton of a stable tree, built level by level.

A node at level k (height a0 + k*delta) stands for one subtree rooted at
level k-1 that reaches level k; its mass is that subtree's local time at
level k.  By the branching property a node of mass x has
Poisson(x v(delta)) children whose masses are i.i.d. copies of <l^delta>
under N_delta.  Several independent roots may share one forest; every
statistic below is computed per root where it matters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DomainError, ModelParams, extinction_intensity
from .stable_laws import LocalTimeLawTable


class BudgetExceeded(RuntimeError):
    """Growth stopped because the node budget would be exceeded."""

    def __init__(self, msg, partial: "SliceTree"):
        super().__init__(msg)
        self.partial = partial


@dataclass
class SliceTree:
    p: ModelParams
    delta: float
    a0: float
    parent: list  # parent[k][i]: index at level k-1 (-1 at level 0)
    mass: list
    complete: bool = True
    _root: list = field(default=None, repr=False)
    _deepest: list = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.parent) != len(self.mass) or not self.mass:
            raise DomainError("parent and mass lists must have equal nonzero length")
        for k, (par, m) in enumerate(zip(self.parent, self.mass)):
            if par.shape != m.shape:
                raise DomainError(f"level {k}: shape mismatch")
            if m.size and not np.all(m > 0):
                raise DomainError(f"level {k}: masses must be positive")
            if k and par.size and (par.min() < 0 or par.max() >= self.mass[k - 1].size):
                raise DomainError(f"level {k}: parent index out of range")

    @classmethod
    def from_levels(cls, p, delta, a0, parents, masses):
        parents = [np.asarray(x, dtype=np.int64) for x in parents]
        masses = [np.asarray(x, dtype=float) for x in masses]
        if parents[0].size == 0:
            parents[0] = np.full(masses[0].size, -1, dtype=np.int64)
        return cls(p, delta, a0, parents, masses)

    # -- basic shape -------------------------------------------------------
    @property
    def n_levels(self) -> int:
        return len(self.mass)

    @property
    def n_roots(self) -> int:
        return self.mass[0].size

    @property
    def n_nodes(self) -> int:
        return int(sum(m.size for m in self.mass))

    def level_index(self, a: float) -> int:
        k = (a - self.a0) / self.delta
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or not 0 <= ki < self.n_levels:
            raise DomainError(f"level {a} is not on the grid a0 + k*delta within the tree")
        return ki

    def level_of(self, k: int) -> float:
        return self.a0 + k * self.delta

    def roots(self) -> list:
        """root[k][i]: which root node i at level k descends from."""
        if self._root is None:
            r = [np.arange(self.n_roots)]
            for k in range(1, self.n_levels):
                r.append(r[k - 1][self.parent[k]])
            self._root = r
        return self._root

    def aggregates(self) -> np.ndarray:
        """<l^{a0+k delta}> per root, shape (n_levels, n_roots)."""
        roots = self.roots()
        return np.stack([np.bincount(roots[k], weights=self.mass[k], minlength=self.n_roots)
                         for k in range(self.n_levels)])

    def deepest(self) -> list:
        """deepest[k][i]: largest level index reached by the subtree of node (k, i)."""
        if self._deepest is None:
            K = self.n_levels
            d = [None] * K
            d[K - 1] = np.full(self.mass[K - 1].size, K - 1, dtype=np.int64)
            for k in range(K - 2, -1, -1):
                dk = np.full(self.mass[k].size, k, dtype=np.int64)
                if self.mass[k + 1].size:
                    np.maximum.at(dk, self.parent[k + 1], d[k + 1])
                d[k] = dk
            self._deepest = d
        return self._deepest

    def ancestor(self, k: int, idx: np.ndarray, up: int) -> np.ndarray:
        """Indices at level k-up of the ancestors of nodes idx at level k."""
        if up > k:
            raise DomainError("ancestor above level 0")
        out = np.asarray(idx)
        for j in range(k, k - up, -1):
            out = self.parent[j][out]
        return out

    def node_ids(self, k: int, idx) -> np.ndarray:
        offs = np.cumsum([0] + [m.size for m in self.mass])
        return offs[k] + np.asarray(idx)

    def iter_rows(self):
        """(id, parent id, level, mass) for every node, level by level."""
        offs = np.cumsum([0] + [m.size for m in self.mass])
        for k in range(self.n_levels):
            ids = offs[k] + np.arange(self.mass[k].size)
            par = np.full(ids.size, -1) if k == 0 else offs[k - 1] + self.parent[k]
            lev = self.level_of(k)
            for i, q, m in zip(ids, par, self.mass[k]):
                yield int(i), int(q), lev, float(m)


def grow(p: ModelParams, delta: float, a0: float, horizon: float, table: LocalTimeLawTable,
         rng: np.random.Generator, n_roots: int = 1, root_mass=None,
         budget: int = 20_000_000) -> SliceTree:
    """Grow a forest of `n_roots` independent trees from level a0 to `horizon`.

    Root masses follow <l^{a0}> under N_{a0} unless `root_mass` pins them.
    Memory policy: every node is retained; the budget caps the node count and
    growth aborts with BudgetExceeded (carrying the partial tree) when a new
    level would exceed it.
    """
    if table.gamma != p.gamma:
        raise DomainError("table/model mismatch")
    if not (0 < delta <= a0 <= horizon):
        raise DomainError("need 0 < delta <= a0 <= horizon")
    K = (horizon - a0) / delta
    Ki = int(round(K))
    if abs(K - Ki) > 1e-9:
        raise DomainError("delta must divide horizon - a0")
    if root_mass is None:
        m0 = table.sample(rng, n_roots, scale=a0**p.p)
    else:
        m0 = np.broadcast_to(np.asarray(root_mass, dtype=float), (n_roots,)).copy()
    parents = [np.full(n_roots, -1, dtype=np.int64)]
    masses = [m0]
    rate = extinction_intensity(delta, p)
    scale = delta**p.p
    total = n_roots
    for k in range(Ki):
        cur = masses[-1]
        counts = rng.poisson(cur * rate)
        n = int(counts.sum())
        if total + n > budget:
            partial = SliceTree(p, delta, a0, parents, masses, complete=False)
            raise BudgetExceeded(
                f"node budget {budget} exceeded at level {k + 1} of {Ki} "
                f"({total} nodes grown, next level needs {n})", partial)
        parents.append(np.repeat(np.arange(cur.size), counts))
        masses.append(table.sample(rng, n, scale=scale) if n else np.zeros(0))
        total += n
    return SliceTree(p, delta, a0, parents, masses)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def level_counts(t: SliceTree, a: float, dprime: float, per_root: bool = False):
    """Z(a, delta'): subtrees rooted at level a that reach height delta' above it.

    These are the level-(a+delta) nodes whose subtree reaches a + delta'.
    """
    k = t.level_index(a)
    d = dprime / t.delta
    di = int(round(d))
    if di < 1 or abs(d - di) > 1e-9:
        raise DomainError("delta' must be a positive multiple of delta")
    if k + di >= t.n_levels:
        raise DomainError("a + delta' beyond the grown horizon")
    deep = t.deepest()[k + 1]
    alive = deep >= k + di
    if not per_root:
        return int(np.count_nonzero(alive))
    return np.bincount(t.roots()[k + 1][alive], minlength=t.n_roots)


@dataclass
class BallProfile:
    vertex: int
    level: float
    radii: np.ndarray
    ell: np.ndarray
    m: np.ndarray
    nb: np.ndarray | None = None


@dataclass
class ProfileBatch:
    """Ball profiles of M sampled vertices of one level, stored as arrays."""

    level: float
    index: np.ndarray  # node index within the level
    vertex: np.ndarray  # global node id
    radii: np.ndarray  # r_j = 2^j delta
    ell: np.ndarray  # (M, J+1)
    m: np.ndarray  # (M, J+1)
    nb: np.ndarray | None = None  # (M, J+1) branching counts at delta' = r_j
    all_nodes_used: bool = False

    def __len__(self):
        return self.index.size

    def profiles(self):
        for i in range(len(self)):
            yield BallProfile(int(self.vertex[i]), self.level, self.radii, self.ell[i], self.m[i],
                              None if self.nb is None else self.nb[i])


def max_scale_index(t: SliceTree, k: int) -> int:
    """Largest j with the ancestor at k-(2^j-1) and level k+2^j inside the tree."""
    j = 0
    while (1 << (j + 1)) - 1 <= k and k + (1 << (j + 1)) <= t.n_levels - 1:
        j += 1
    return j


def ball_profiles(t: SliceTree, a: float, M: int, sampling: str = "size_biased",
                  rng: np.random.Generator | None = None, jmax: int | None = None,
                  with_branching: bool = True) -> ProfileBatch:
    """Local-time and mass ball surrogates at dyadic radii for M vertices of level a.

    ell_j is the level-a mass of the subtree of the ancestor at level
    a - (2^j - 1) delta (j = 0 gives the vertex itself); m_j is delta times the
    total mass of that subtree over levels up to a + 2^j delta.
    """
    k = t.level_index(a)
    n = t.mass[k].size
    if n == 0:
        raise DomainError(f"level {a} is empty")
    J = max_scale_index(t, k) if jmax is None else min(jmax, max_scale_index(t, k))
    if with_branching:
        # branching at delta' = 2^J delta looks one level further down than the ball
        if k == 0:
            raise DomainError("branching counts need a level above a0")
        J = min(J, k.bit_length() - 1)
    rng = np.random.default_rng() if rng is None else rng
    all_used = M >= n
    if all_used:
        idx = np.arange(n)
    elif sampling == "size_biased":
        w = t.mass[k] / t.mass[k].sum()
        idx = np.sort(rng.choice(n, size=M, replace=False, p=w))
    elif sampling == "uniform_over_nodes":
        idx = np.sort(rng.choice(n, size=M, replace=False))
    else:
        raise DomainError(f"unknown sampling rule {sampling!r}")

    radii = t.delta * 2.0 ** np.arange(J + 1)
    ell = np.empty((idx.size, J + 1))
    mm = np.empty((idx.size, J + 1))
    mass_k = t.mass[k]
    for j in range(J + 1):
        up = (1 << j) - 1
        base = k - up
        anc_all = t.ancestor(k, np.arange(n), up)
        sums = np.bincount(anc_all, weights=mass_k, minlength=t.mass[base].size)
        anc = anc_all[idx]
        ell[:, j] = sums[anc]
        hi = k + (1 << j)
        W = t.mass[hi].copy()
        for L in range(hi - 1, base - 1, -1):
            W = t.mass[L] + np.bincount(t.parent[L + 1], weights=W, minlength=t.mass[L].size)
        mm[:, j] = t.delta * W[anc]
    nb = branching_counts(t, a, idx, radii) if with_branching else None
    return ProfileBatch(a, idx, t.node_ids(k, idx), radii, ell, mm, nb, all_used)


def branching_counts(t: SliceTree, a: float, idx, dprimes) -> np.ndarray:
    """n_b surrogate: off-path subtrees branching from the ancestral path within
    delta' below the target whose height reaches delta'.

    For each ancestor B at a level L in [a - delta', a - delta] the children of
    B other than the one on the path are counted when their subtree reaches
    level L + delta'.  Returns shape (len(idx), len(dprimes)).
    """
    k = t.level_index(a)
    idx = np.asarray(idx)
    deep = t.deepest()
    out = np.zeros((idx.size, len(dprimes)), dtype=np.int64)
    for c, dp in enumerate(dprimes):
        d = int(round(dp / t.delta))
        if d < 1 or k - d < 0:
            raise DomainError("need a - delta' >= a0 and delta' >= delta")
        cur = idx.copy()  # path node at level L+1
        total = np.zeros(idx.size, dtype=np.int64)
        for L in range(k - 1, k - d - 1, -1):
            par = t.parent[L + 1]
            good = deep[L + 1] >= L + d
            cnt = np.bincount(par, weights=good, minlength=t.mass[L].size).astype(np.int64)
            B = par[cur]
            total += cnt[B] - good[cur]
            cur = B
        out[:, c] = total
    return out


def box_masses(t: SliceTree, a: float, r: float) -> np.ndarray:
    """Level-a masses of the boxes at scale r: level-a nodes grouped by their
    ancestor at level a - r + delta (r = delta gives the nodes themselves)."""
    k = t.level_index(a)
    s = int(round(r / t.delta))
    if s < 1 or abs(s * t.delta - r) > 1e-9 * r:
        raise DomainError("r must be a positive multiple of delta")
    if k - (s - 1) < 0:
        raise DomainError("scale reaches below a0")
    anc = t.ancestor(k, np.arange(t.mass[k].size), s - 1)
    sums = np.bincount(anc, weights=t.mass[k], minlength=t.mass[k - s + 1].size)
    return sums[sums > 0]


def box_exponents(t: SliceTree, a: float, r: float) -> np.ndarray:
    """log(box mass)/log(r) for every box of level a at scale r."""
    return np.log(box_masses(t, a, r)) / math.log(r)
