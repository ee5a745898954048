"""Galton-Watson trees with stable offspring and their height-function metric trees.

Offspring law: generating function s + (1 - s)^gamma / gamma, geometric(1/2)
at gamma = 2.  Both are critical and in the domain of the gamma-stable tree.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .analytic import DomainError, ModelParams, extinction_intensity, laplace_Na
from .inversion import talbot
from .stable_laws import OffspringLaw, sample_offspring


class RejectionBudgetError(RuntimeError):
    def __init__(self, msg, acceptance_rate):
        super().__init__(msg)
        self.acceptance_rate = acceptance_rate


# ---------------------------------------------------------------------------
# plane trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneTree:
    """Vertices 0..n-1 in depth-first order; vertex 0 is the root."""

    children: np.ndarray  # number of children per vertex
    parent: np.ndarray
    depth: np.ndarray

    @property
    def n(self) -> int:
        return self.children.size

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @classmethod
    def from_offspring(cls, xi):
        """Rebuild the tree from its depth-first offspring sequence (Lukasiewicz code)."""
        xi = np.asarray(xi, dtype=np.int64)
        n = xi.size
        walk = 1 + np.cumsum(xi - 1)
        if n == 0 or walk[-1] != 0 or (n > 1 and walk[:-1].min() <= 0):
            raise DomainError("not a valid depth-first offspring sequence")
        parent = np.full(n, -1, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        stack = []  # [vertex, remaining children]
        if xi[0]:
            stack.append([0, int(xi[0])])
        for i in range(1, n):
            top = stack[-1]
            parent[i] = top[0]
            depth[i] = depth[top[0]] + 1
            top[1] -= 1
            if top[1] == 0:
                stack.pop()
            if xi[i]:
                stack.append([i, int(xi[i])])
        return cls(xi, parent, depth)


def _split_trees(xi: np.ndarray):
    """Cut an offspring stream into consecutive complete trees.

    Returns start offsets and sizes of the complete trees contained in `xi`.
    """
    w = np.cumsum(xi - 1)
    # tree j ends at the first time the walk reaches -(j+1)
    runmin = np.minimum(np.minimum.accumulate(w), 0)
    ends = np.flatnonzero((w == runmin) & (np.diff(np.concatenate([[0], runmin])) < 0))
    starts = np.concatenate([[0], ends[:-1] + 1])
    return starts, ends - starts + 1


def sample_gw(law: OffspringLaw, rng: np.random.Generator, n: int, eps: float = 0.1,
              count: int = 1, max_draws: int = 10**9, chunk: int | None = None):
    """`count` GW trees conditioned by rejection on total progeny in [n, (1+eps) n].

    Returns (trees, acceptance_rate) where the rate is accepted / trees examined.
    """
    if n < 1 or eps < 0:
        raise DomainError("need n >= 1 and eps >= 0")
    hi = int(math.floor((1 + eps) * n))
    chunk = chunk or max(1 << 16, 64 * hi)
    out, tried, drawn = [], 0, 0
    carry = np.zeros(0, dtype=np.int64)
    while len(out) < count:
        if drawn > max_draws:
            rate = len(out) / max(tried, 1)
            raise RejectionBudgetError(
                f"rejection budget exhausted after {tried} trees ({len(out)} accepted, "
                f"acceptance rate {rate:.3g})", rate)
        xi = np.concatenate([carry, sample_offspring(law, rng, chunk).astype(np.int64)])
        drawn += chunk
        starts, sizes = _split_trees(xi)
        used = int(starts[-1] + sizes[-1]) if sizes.size else 0
        carry = xi[used:]
        if carry.size > hi:
            # the pending tree is already too large; the stream is i.i.d. so it can be dropped
            tried += 1
            carry = carry[:0]
        tried += sizes.size
        for s, m in zip(starts, sizes):
            if n <= m <= hi:
                out.append(PlaneTree.from_offspring(xi[s:s + m]))
                if len(out) == count:
                    break
    return out, len(out) / max(tried, 1)


# ---------------------------------------------------------------------------
# height paths and metric trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeightPath:
    step: float
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 1 or v.size == 0 or v[0] != 0 or v[-1] != 0 or np.any(v < 0):
            raise DomainError("height path must be nonnegative and start and end at 0")

    @property
    def lifetime(self) -> float:
        return (self.values.size - 1) * self.step

    def rows(self):
        for i, h in enumerate(self.values):
            yield i * self.step, float(h)


def contour(tree: PlaneTree) -> np.ndarray:
    """Integer contour sequence: walks down to each vertex in depth-first order and back."""
    d = tree.depth
    if tree.n == 1:
        return np.zeros(1, dtype=np.int64)
    pieces = [np.zeros(1, dtype=np.int64)]
    for i in range(1, tree.n):
        top = d[i - 1]
        pd = d[tree.parent[i]]
        if top > pd:
            pieces.append(np.arange(top - 1, pd - 1, -1))
        pieces.append(np.array([d[i]]))
    pieces.append(np.arange(d[-1] - 1, -1, -1))
    return np.concatenate(pieces)


def height_path(tree: PlaneTree, c_h: float = 1.0, step: float | None = None) -> HeightPath:
    """Contour of the tree scaled by c_h; the time step defaults to 1/(2(n-1))."""
    c = contour(tree)
    if step is None:
        step = 1.0 / max(c.size - 1, 1)
    return HeightPath(step, c * float(c_h))


@dataclass(frozen=True)
class MetricTree:
    parent: np.ndarray
    edge: np.ndarray
    height: np.ndarray
    root: int
    time_vertex: np.ndarray | None = None  # grid time -> vertex of the source path

    def __post_init__(self):
        for a in (self.parent, self.edge, self.height):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.parent.size

    @property
    def h(self) -> float:
        return float(self.height.max())

    @property
    def degree(self) -> np.ndarray:
        deg = np.bincount(self.parent[self.parent >= 0], minlength=self.n)
        deg = deg + (self.parent >= 0)
        return deg

    @property
    def is_leaf(self) -> np.ndarray:
        kids = np.bincount(self.parent[self.parent >= 0], minlength=self.n)
        return kids == 0

    def _lift(self):
        if not hasattr(self, "_up"):
            gdepth = np.zeros(self.n, dtype=np.int64)
            order = _bfs_order(self.parent, self.root)
            for v in order[1:]:
                gdepth[v] = gdepth[self.parent[v]] + 1
            LOG = max(1, int(gdepth.max()).bit_length())
            up = np.empty((LOG, self.n), dtype=np.int64)
            up[0] = np.where(self.parent >= 0, self.parent, self.root)
            for j in range(1, LOG):
                up[j] = up[j - 1][up[j - 1]]
            object.__setattr__(self, "_up", (up, gdepth))
        return self._up

    def mrca(self, u: int, v: int) -> int:
        up, gd = self._lift()
        if gd[u] < gd[v]:
            u, v = v, u
        diff = gd[u] - gd[v]
        j = 0
        while diff:
            if diff & 1:
                u = up[j][u]
            diff >>= 1
            j += 1
        if u == v:
            return int(u)
        for j in range(up.shape[0] - 1, -1, -1):
            if up[j][u] != up[j][v]:
                u, v = up[j][u], up[j][v]
        return int(up[0][u])

    def distance(self, u: int, v: int) -> float:
        m = self.mrca(u, v)
        return float(self.height[u] + self.height[v] - 2 * self.height[m])

    def subtree(self, s: int) -> np.ndarray:
        """Vertex ids of the subtree above s (s included)."""
        kids = _children_lists(self.parent)
        out, q = [], deque([s])
        while q:
            x = q.popleft()
            out.append(x)
            q.extend(kids[x])
        return np.array(sorted(out))

    def level_set(self, a: float) -> np.ndarray:
        """Edges (child ids) whose closed span [h(parent), h(child)] contains level a."""
        par = self.parent
        lo = np.where(par >= 0, self.height[np.maximum(par, 0)], self.height)
        return np.flatnonzero((lo < a) & (self.height >= a) | ((self.height == a) & (par < 0)))

    def edge_rows(self):
        for v in range(self.n):
            yield v, int(self.parent[v]), float(self.edge[v]), float(self.height[v])


def _children_lists(parent):
    kids = [[] for _ in range(parent.size)]
    for v, q in enumerate(parent):
        if q >= 0:
            kids[q].append(v)
    return kids


def _bfs_order(parent, root):
    kids = _children_lists(parent)
    order, q = [], deque([root])
    while q:
        x = q.popleft()
        order.append(x)
        q.extend(kids[x])
    return np.array(order, dtype=np.int64)


def tree_from_height(hp: HeightPath, coarsening: int = 1) -> MetricTree:
    """Metric tree coded by the path: d(s, t) = H_s + H_t - 2 min_[s,t] H.

    Grid times are kept every `coarsening` steps (plus the last one).  A
    stack sweep keeps the chain of ancestors with strictly increasing heights;
    a time at the height of the chain top is identified with it, and a time
    below the top is inserted on the edge of the last popped vertex.
    """
    if coarsening < 1:
        raise DomainError("coarsening must be a positive integer")
    idx = np.arange(0, hp.values.size, coarsening)
    if idx[-1] != hp.values.size - 1:
        idx = np.append(idx, hp.values.size - 1)
    H = hp.values[idx]
    parent = [-1]
    height = [float(H[0])]
    tv = np.empty(H.size, dtype=np.int64)
    tv[0] = 0
    stack = [0]
    for i in range(1, H.size):
        h = float(H[i])
        last = -1
        while height[stack[-1]] > h:
            last = stack.pop()
            if not stack:
                break
        if stack and height[stack[-1]] == h:
            v = stack[-1]
        else:
            v = len(height)
            height.append(h)
            parent.append(stack[-1] if stack else -1)
            if last >= 0:
                parent[last] = v
            if not stack:  # new lowest point becomes the root
                pass
            stack.append(v)
        tv[i] = v
    parent = np.array(parent, dtype=np.int64)
    height = np.array(height)
    roots = np.flatnonzero(parent < 0)
    if roots.size != 1:
        raise DomainError("height path must code a single tree")
    edge = np.where(parent >= 0, height - height[np.maximum(parent, 0)], 0.0)
    full_tv = np.full(hp.values.size, -1, dtype=np.int64)
    full_tv[idx] = tv
    return MetricTree(parent, edge, height, int(roots[0]), full_tv)


def d_H(values: np.ndarray, s: int, t: int) -> float:
    if s > t:
        s, t = t, s
    return float(values[s] + values[t] - 2 * values[s:t + 1].min())


# ---------------------------------------------------------------------------
# measures and calibration
# ---------------------------------------------------------------------------


@dataclass
class Calibration:
    """Discrete-to-continuum normalisation at a reference generation K.

    Generation k maps to height a_k = v^{-1}(q_k) with q_k the exact
    survival probability to generation k, rescaled so a_K = 1; c_h is the
    asymptotic linear slope a_k ~ c_h k in those units.  c_l multiplies the
    generation size Z_K (jittered by a uniform) so that its mean given
    survival matches the continuum mean at level 1.
    """

    gamma: float
    K: int
    q: np.ndarray  # q_0..q_{2K}
    a: np.ndarray  # calibrated heights, a[K] == 1
    c_h: float
    c_l: float

    def height_of(self, k):
        return self.a[k]


def survival_probs(law: OffspringLaw, kmax: int) -> np.ndarray:
    """q_k = P(generation k is non-empty), via q_{k+1} = 1 - f(1 - q_k)."""
    g = law.gamma
    q = np.empty(kmax + 1)
    q[0] = 1.0
    for k in range(kmax):
        s = 1.0 - q[k]
        fs = 1.0 / (2.0 - s) if law.geometric else s + (1.0 - s) ** g / g
        q[k + 1] = 1.0 - fs
    return q


def calibrate(p: ModelParams, law: OffspringLaw, K: int, kmax: int | None = None) -> Calibration:
    kmax = 2 * K if kmax is None else kmax
    q = survival_probs(law, kmax)
    # v(a) = ((g-1) a)^{-p}  =>  a = q^{-(g-1)} / (g-1)
    a_raw = q ** (-(p.gamma - 1.0)) / (p.gamma - 1.0)
    a = a_raw / a_raw[K]
    c_h = (1.0 / p.gamma if not law.geometric else 1.0) / a_raw[K]
    c_l = (p.gamma - 1.0) ** p.p / (1.0 / q[K] - 0.5)
    return Calibration(p.gamma, K, q, a, c_h, c_l)


def upcrossings(values: np.ndarray, level: float) -> int:
    """Number of steps H_i < level <= H_{i+1}."""
    v = np.asarray(values)
    return int(np.count_nonzero((v[:-1] < level) & (v[1:] >= level)))


def measures(mt: MetricTree, hp: HeightPath, levels=None, c_l: float = 1.0, normalize=True):
    """Mass weights per vertex (exploration time) and the upcrossing local-time profile."""
    if mt.time_vertex is None:
        raise DomainError("metric tree carries no time map")
    tv = mt.time_vertex
    used = tv >= 0
    w = np.bincount(tv[used], minlength=mt.n).astype(float) * hp.step
    if normalize:
        w /= w.sum()
    out = {"mass": w, "c_l": c_l}
    if levels is not None:
        levels = np.asarray(levels, float)
        out["levels"] = levels
        out["local_time"] = c_l * np.array([upcrossings(hp.values, a) for a in levels], float)
    return out


def generation_sizes(law: OffspringLaw, rng: np.random.Generator, n_trees: int, kmax: int,
                     batch: int = 100_000) -> np.ndarray:
    """Generation sizes Z_0..Z_kmax for n_trees independent trees, shape (n_trees, kmax+1)."""
    out = np.zeros((n_trees, kmax + 1), dtype=np.int64)
    for s in range(0, n_trees, batch):
        B = min(batch, n_trees - s)
        Z = np.ones(B, dtype=np.int64)
        out[s:s + B, 0] = 1
        for k in range(kmax):
            alive = np.flatnonzero(Z)
            if alive.size == 0:
                break
            n = Z[alive]
            kids = sample_offspring(law, rng, int(n.sum())).astype(np.int64)
            owner = np.repeat(np.arange(alive.size), n)
            Z = np.zeros(B, dtype=np.int64)
            Z[alive] = np.bincount(owner, weights=kids, minlength=alive.size).astype(np.int64)
            out[s:s + B, k + 1] = Z
    return out


def conditioned_generation_sizes(law: OffspringLaw, rng: np.random.Generator, N: int, K: int,
                                 horizon: int, q: np.ndarray | None = None) -> np.ndarray:
    """Z_K for N trees conditioned to reach generation `horizon` >= K.

    Uses the Doob transform h_k(z) = 1 - (1 - q_{horizon-k})^z: each
    generation is redrawn until it is accepted with probability h_{k+1}(z'),
    which conditions exactly without simulating the trees that die out.
    """
    if horizon < K:
        raise DomainError("horizon must be at least K")
    q = survival_probs(law, horizon) if q is None else q
    Z = np.ones(N, dtype=np.int64)
    for k in range(K):
        lq = math.log1p(-q[horizon - k - 1]) if q[horizon - k - 1] < 1 else -math.inf
        nxt = np.zeros(N, dtype=np.int64)
        todo = np.arange(N)
        while todo.size:
            n = Z[todo]
            kids = sample_offspring(law, rng, int(n.sum())).astype(np.int64)
            owner = np.repeat(np.arange(todo.size), n)
            y = np.bincount(owner, weights=kids, minlength=todo.size).astype(np.int64)
            acc = rng.random(todo.size) < -np.expm1(y * lq)
            nxt[todo[acc]] = y[acc]
            todo = todo[~acc]
        Z = nxt
    return Z


def mid_level_local_times(p: ModelParams, law: OffspringLaw, K: int, N: int,
                          rng: np.random.Generator):
    """N calibrated local times at generation K of trees reaching generation 2K.

    Each is c_l (Z_K - U) with U uniform on [0, 1), a continuous version of
    the lattice count Z_K, which equals the number of upcrossings of the
    contour from K-1 to K.
    """
    cal = calibrate(p, law, K)
    z = conditioned_generation_sizes(law, rng, N, K, 2 * K, cal.q)
    return cal.c_l * (z - rng.random(z.size)), cal


def mid_level_cdf(p: ModelParams, cal: Calibration):
    """CDF of <l^1> under N_1 tilted by survival to height a_{2K} (units a_K = 1)."""
    beta = cal.a[2 * cal.K] - 1.0
    vb = extinction_intensity(beta, p)
    norm = 1.0 - laplace_Na(vb, 1.0, p)

    def lt(mu):
        return (laplace_Na(mu, 1.0, p) - laplace_Na(mu + vb, 1.0, p)) / norm

    def cdf(x):
        x = np.atleast_1d(np.asarray(x, float))
        out = np.zeros(x.shape)
        pos = x > 0
        if np.any(pos):
            out[pos] = np.clip(talbot(lambda s: lt(s) / s, x[pos]), 0.0, 1.0)
        return out

    return cdf


# ---------------------------------------------------------------------------
# graph queries and re-rooting
# ---------------------------------------------------------------------------


def _adjacency(mt: MetricTree):
    adj = [[] for _ in range(mt.n)]
    for v in range(mt.n):
        q = mt.parent[v]
        if q >= 0:
            adj[v].append((int(q), float(mt.edge[v])))
            adj[q].append((v, float(mt.edge[v])))
    return adj


def _rooted_at(mt: MetricTree, s: int, adj=None):
    """(order, parent, edge, dist) of the tree re-hung at s, by breadth-first search."""
    adj = _adjacency(mt) if adj is None else adj
    par = np.full(mt.n, -1, dtype=np.int64)
    edge = np.zeros(mt.n)
    dist = np.zeros(mt.n)
    seen = np.zeros(mt.n, dtype=bool)
    seen[s] = True
    order = [s]
    q = deque([s])
    while q:
        x = q.popleft()
        for y, w in adj[x]:
            if not seen[y]:
                seen[y] = True
                par[y], edge[y], dist[y] = x, w, dist[x] + w
                order.append(y)
                q.append(y)
    return np.array(order), par, edge, dist


def multiplicity(mt: MetricTree, s: int) -> int:
    """Components of T minus the vertex s: its degree."""
    return int(mt.degree[s])


def n_b(mt: MetricTree, s: int, delta: float, adj=None, threshold: float | None = None) -> int:
    """Components of T minus the closed ball B(s, delta) with diameter > delta.

    `threshold` replaces the diameter cut-off (default: delta itself).
    """
    cut = delta if threshold is None else threshold
    order, par, edge, dist = _rooted_at(mt, s, adj)
    n = mt.n
    down = np.zeros(n)  # longest downward path
    diam = np.zeros(n)  # diameter of the subtree
    best2 = np.zeros((n, 2))
    for v in order[::-1]:
        diam[v] = max(diam[v], best2[v, 0] + best2[v, 1])
        down[v] = best2[v, 0]
        q = par[v]
        if q >= 0:
            d = down[v] + edge[v]
            if d > best2[q, 0]:
                best2[q, 1], best2[q, 0] = best2[q, 0], d
            elif d > best2[q, 1]:
                best2[q, 1] = d
            diam[q] = max(diam[q], diam[v])
    count = 0
    for v in order[1:]:
        q = par[v]
        if dist[q] <= delta < dist[v]:
            stub = dist[v] - delta
            if max(diam[v], stub + down[v]) > cut:
                count += 1
    return count


def reroot(mt: MetricTree, s: int) -> MetricTree:
    """Same metric space hung from s; vertex ids are unchanged."""
    if s == mt.root:
        return mt
    order, par, edge, dist = _rooted_at(mt, s)
    return MetricTree(par, edge, dist, int(s), mt.time_vertex)
