"""Samplers for the local-time law under N_1 and the stable offspring law.

The law of <l^1> under N_1 is only known through its Laplace transform.  We
invert the transforms of its CDF and survival function on a log grid, keep
the nodes whose two independent inversions agree, and interpolate the
quantile function in (logit u, log x) coordinates where both tails are
asymptotically linear.  Outside the grid the tails are extended as pure
power laws (exponential at gamma = 2) anchored at the junction nodes.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .analytic import DomainError, ModelParams, tail_asymptotics
from .inversion import euler, talbot

TABLE_FORMAT_VERSION = 1
_DENSE = 1 << 16


class TableBuildError(RuntimeError):
    pass


def _transforms(g: float):
    g1 = g - 1.0

    def sf_hat(s):
        z = 1.0 / (g1 * np.power(s, g1))
        return np.exp(-np.log1p(z) / g1) / s

    def cdf_hat(s):
        z = 1.0 / (g1 * np.power(s, g1))
        return -np.expm1(-np.log1p(z) / g1) / s

    return sf_hat, cdf_hat


@dataclass
class LocalTimeLawTable:
    """Tabulated law of <l^1> under N_1 for one gamma.

    Nodes are stored as log x with the accurately inverted log F and log S
    (F + S = 1 up to inversion error; the smaller of the two is inverted
    directly so that both tails keep relative accuracy).
    """

    gamma: float
    log_x: np.ndarray
    log_F: np.ndarray
    log_S: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.log_x = np.asarray(self.log_x, dtype=float)
        self.log_F = np.asarray(self.log_F, dtype=float)
        self.log_S = np.asarray(self.log_S, dtype=float)
        self._logit = self.log_F - self.log_S
        if np.any(np.diff(self.log_x) <= 0) or np.any(np.diff(self._logit) <= 0):
            raise TableBuildError("table nodes are not strictly increasing")
        self._q = PchipInterpolator(self._logit, self.log_x)
        self._c = PchipInterpolator(self.log_x, self._logit)
        self._dense_t = np.linspace(self._logit[0], self._logit[-1], _DENSE)
        self._dense_lx = self._q(self._dense_t)
        self._dense_dlx = np.append(np.diff(self._dense_lx), 0.0)
        self._inv_h = (_DENSE - 1) / (self._dense_t[-1] - self._dense_t[0])

    # junction data
    @property
    def x_lo(self):
        return math.exp(self.log_x[0])

    @property
    def x_hi(self):
        return math.exp(self.log_x[-1])

    @property
    def F_lo(self):
        return math.exp(self.log_F[0])

    @property
    def S_hi(self):
        return math.exp(self.log_S[-1])

    @property
    def quadratic(self):
        return self.gamma == 2.0

    @property
    def quantile_grid(self):
        """(u_i, x_i) pairs of the grid."""
        return np.exp(self.log_F), np.exp(self.log_x)

    def left_tail_power(self):
        return self.gamma - 1.0

    def right_tail_power(self):
        return -self.gamma

    def sf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        lx = np.log(np.where(x > 0, x, 1.0))
        lo = x < self.x_lo
        hi = x > self.x_hi
        mid = ~(lo | hi)
        out[x <= 0] = 1.0
        pos_lo = lo & (x > 0)
        out[pos_lo] = 1.0 - self.F_lo * np.exp((self.gamma - 1.0) * (lx[pos_lo] - self.log_x[0]))
        if self.quadratic:
            out[hi] = self.S_hi * np.exp(-(x[hi] - self.x_hi))
        else:
            out[hi] = self.S_hi * np.exp(-self.gamma * (lx[hi] - self.log_x[-1]))
        t = self._c(lx[mid])
        out[mid] = 1.0 / (1.0 + np.exp(t))
        return out

    def cdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        lx = np.log(np.where(x > 0, x, 1.0))
        lo = (x < self.x_lo) & (x > 0)
        hi = x > self.x_hi
        mid = (~(lo | hi)) & (x > 0)
        out[x <= 0] = 0.0
        out[lo] = self.F_lo * np.exp((self.gamma - 1.0) * (lx[lo] - self.log_x[0]))
        out[hi] = 1.0 - self.sf(x[hi])
        t = self._c(lx[mid])
        out[mid] = 1.0 / (1.0 + np.exp(-t))
        return out

    def quantile(self, u, w=None) -> np.ndarray:
        """Inverse CDF; pass w = 1 - u when it is known more accurately."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w = 1.0 - u if w is None else np.atleast_1d(np.asarray(w, dtype=float))
        t = np.log(u)
        t -= np.log(w)
        # the dense grid is uniform in logit: index directly instead of searching
        pos = t - self._dense_t[0]
        pos *= self._inv_h
        np.clip(pos, 0.0, _DENSE - 1.000001, out=pos)
        i = pos.astype(np.intp)
        pos -= i
        lx = self._dense_lx[i]
        lx += pos * self._dense_dlx[i]
        out = np.exp(lx, out=lx)
        lo = np.flatnonzero(u < self.F_lo)
        if lo.size:
            out[lo] = self.x_lo * (u[lo] / self.F_lo) ** (1.0 / (self.gamma - 1.0))
        hi = np.flatnonzero(w < self.S_hi)
        if hi.size:
            if self.quadratic:
                out[hi] = self.x_hi - np.log(w[hi] / self.S_hi)
            else:
                out[hi] = self.x_hi * (w[hi] / self.S_hi) ** (-1.0 / self.gamma)
        return out

    def sample(self, rng: np.random.Generator, size, scale: float = 1.0) -> np.ndarray:
        u = rng.random(size)
        # u == 0 has probability 2^-53; map it to the smallest positive double
        u[u == 0.0] = 5e-324
        x = self.quantile(u.ravel())
        if scale != 1.0:
            x *= scale
        return x.reshape(np.shape(u))

    def mean(self) -> float:
        """int S(x) dx over the tabulated law (including both tails)."""
        g = self.gamma
        x = np.exp(self.log_x)
        S = np.exp(self.log_S)
        # left piece: int_0^x_lo (1 - F_lo (x/x_lo)^(g-1)) dx
        left = self.x_lo * (1.0 - self.F_lo / g)
        # trapezoid in log-space on nodes (integrand x S(x) d log x)
        mid = float(np.trapezoid(x * S, self.log_x))
        if self.quadratic:
            right = self.S_hi
        else:
            right = self.S_hi * self.x_hi / (g - 1.0)
        return left + mid + right

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.log_x, self.log_F, self.log_S):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.gamma).encode())
        return h.hexdigest()[:16]


def build_local_time_table(
    p: ModelParams, resolution: int = 1024, tail_mass: float = 1e-9, residual_tol: float = 1e-6
) -> LocalTimeLawTable:
    """Invert the N_1 Laplace transform of <l^1> onto a log grid.

    The x-range is chosen so that both tail probabilities at the end nodes
    are about `tail_mass`; outside it the asymptotic tails take over.  Raises
    TableBuildError if the Talbot and Euler inversions differ by more than
    `residual_tol` at any kept node.
    """
    if resolution < 256:
        raise DomainError(f"resolution must be >= 256, got {resolution}")
    g = p.gamma
    sf_hat, cdf_hat = _transforms(g)

    def tails(x):
        F = talbot(cdf_hat, x)
        S = talbot(sf_hat, x)
        return F, S

    # bracket the range: expand until the tail probabilities fall below tail_mass
    lo, hi = 1e-2, 1e1
    while tails(np.array([lo]))[0][0] > tail_mass:
        lo *= 1e-2
        if lo < 1e-300:
            raise TableBuildError("left tail does not decay")
    while tails(np.array([hi]))[1][0] > tail_mass:
        hi *= 2.0
        if hi > 1e300:
            raise TableBuildError("right tail does not decay")
    x = np.logspace(math.log10(lo), math.log10(hi), resolution)
    F, S = tails(x)
    F2 = euler(cdf_hat, x)
    S2 = euler(sf_hat, x)
    small_is_F = F < S
    resid = np.where(small_is_F, np.abs(F - F2), np.abs(S - S2))
    small = np.where(small_is_F, F, S)
    # keep nodes whose smaller tail is resolved by the inversion
    keep = small >= tail_mass
    keep &= np.abs(1.0 - F - S) <= 1e-9
    idx = np.flatnonzero(keep)
    if idx.size < 64:
        raise TableBuildError("too few resolved nodes")
    idx = np.arange(idx[0], idx[-1] + 1)
    worst = int(idx[np.argmax(resid[idx])])
    worst_x, worst_r = float(x[worst]), float(resid[worst])
    if worst_r > residual_tol:
        raise TableBuildError(
            f"inversion residual {worst_r:.3e} above {residual_tol:.1e} at x={worst_x:.6g}"
        )
    x, F, S = x[idx], F[idx], S[idx]
    # the smaller tail is the accurate one; derive the other from it
    f_small = F < S
    F, S = np.where(f_small, F, 1.0 - S), np.where(f_small, 1.0 - F, S)
    # drop nodes that are not strictly increasing in logit after rounding
    logit = np.log(F) - np.log(S)
    good = np.concatenate([[True], np.diff(logit) > 0])
    x, F, S = x[good], F[good], S[good]
    diagnostics = {
        "resolution": int(resolution),
        "kept_nodes": int(x.size),
        "max_residual": worst_r,
        "worst_node_x": worst_x,
        "x_lo": float(x[0]),
        "x_hi": float(x[-1]),
        "F_lo": float(F[0]),
        "S_hi": float(S[-1]),
    }
    table = LocalTimeLawTable(g, np.log(x), np.log(F), np.log(S), diagnostics)
    diagnostics.update(_crossover_report(table, p))
    diagnostics["mean"] = table.mean()
    return table


def _crossover_report(table: LocalTimeLawTable, p: ModelParams, rel: float = 0.05) -> dict:
    """Where the tabulated tails come within `rel` of the power-law asymptotes."""
    out = {}
    x = np.exp(table.log_x)
    F = np.exp(table.log_F)
    S = np.exp(table.log_S)
    left = np.array([tail_asymptotics("lt_left", xi, p) for xi in x])
    ok = np.abs(F / left - 1.0) <= rel
    # largest x such that every node below it is within rel
    bad = np.flatnonzero(~ok)
    out["left_crossover_x"] = float(x[bad[0]]) if bad.size else float(x[-1])
    if not p.is_quadratic:
        right = np.array([tail_asymptotics("lt_right", xi, p) for xi in x])
        ok = np.abs(S / right - 1.0) <= rel
        bad = np.flatnonzero(~ok)
        out["right_crossover_x"] = float(x[bad[-1] + 1]) if bad.size and bad[-1] + 1 < x.size else (
            float("inf") if bad.size else float(x[0])
        )
        out["right_junction_ratio"] = float(S[-1] / right[-1])
    return out


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------


def table_cache_name(gamma: float, resolution: int) -> str:
    return f"localtime_g{gamma:.6f}_r{resolution}_v{TABLE_FORMAT_VERSION}.npz"


def save_table(table: LocalTimeLawTable, path) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        np.savez(
            fh,
            version=TABLE_FORMAT_VERSION,
            gamma=table.gamma,
            log_x=table.log_x,
            log_F=table.log_F,
            log_S=table.log_S,
            resolution=table.diagnostics.get("resolution", len(table.log_x)),
        )
    os.replace(tmp, path)


def load_table(path) -> LocalTimeLawTable:
    with np.load(path) as z:
        if int(z["version"]) != TABLE_FORMAT_VERSION:
            raise TableBuildError(f"cache {path} has version {int(z['version'])}")
        t = LocalTimeLawTable(float(z["gamma"]), z["log_x"], z["log_F"], z["log_S"])
        t.diagnostics = {"resolution": int(z["resolution"]), "loaded_from": str(path)}
        t.diagnostics["mean"] = t.mean()
        return t


_MEMO: dict[tuple[float, int], LocalTimeLawTable] = {}


def get_table(p: ModelParams, resolution: int = 1024, cache_dir=None) -> LocalTimeLawTable:
    """Build or fetch a table; memoised in-process and optionally on disk."""
    key = (p.gamma, resolution)
    if key in _MEMO and cache_dir is None:
        return _MEMO[key]
    if cache_dir is not None:
        path = os.path.join(cache_dir, table_cache_name(p.gamma, resolution))
        if os.path.exists(path):
            return load_table(path)
        t = build_local_time_table(p, resolution)
        os.makedirs(cache_dir, exist_ok=True)
        save_table(t, path)
        return t
    t = _MEMO[key] = build_local_time_table(p, resolution)
    return t


def sample_local_time(table: LocalTimeLawTable, a: float, rng: np.random.Generator, size=None):
    """<l^a> under N_a, using <l^a> = a^(1/(gamma-1)) <l^1> in law."""
    if not a > 0:
        raise DomainError(f"level must be positive, got {a!r}")
    scale = a ** (1.0 / (table.gamma - 1.0))
    if size is None:
        return float(table.sample(rng, 1, scale)[0])
    return table.sample(rng, size, scale)


# ---------------------------------------------------------------------------
# heavy-tail mean estimator
# ---------------------------------------------------------------------------


def tail_corrected_mean(samples, gamma: float, tail_coef: float | None, trim: float = 1e-3):
    """Trimmed sample mean plus the analytic contribution of the top `trim`.

    For a tail P(X > x) ~ C x^-gamma, E[X; X > t] = C gamma/(gamma-1) t^(1-gamma).
    At gamma = 2 with tail_coef None the tail is taken exponential with unit
    rate: E[X; X > t] = P(X > t) (t + 1).
    Returns (estimate, standard error of the trimmed part).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    k = int(round(n * (1.0 - trim)))
    t = x[k - 1]
    body = np.where(x <= t, x, 0.0)
    if tail_coef is None:
        tail = trim * (t + 1.0)
    else:
        tail = tail_coef * gamma / (gamma - 1.0) * t ** (1.0 - gamma)
    est = body.mean() + tail
    se = body.std(ddof=1) / math.sqrt(n)
    return float(est), float(se)


# ---------------------------------------------------------------------------
# offspring law with pgf f(s) = s + (1-s)^gamma / gamma
# ---------------------------------------------------------------------------


@dataclass
class OffspringLaw:
    """Critical offspring law in the gamma-stable domain of attraction.

    For gamma < 2: p_0 = 1/gamma, p_1 = 0, p_k = |C(gamma, k)|/gamma, with the
    exact survival function P(X > k) = Gamma(k+1-g) / (g |Gamma(1-g)| k!)
    (k >= 1) used for inverse-CDF sampling beyond K.  gamma = 2 is the
    geometric(1/2) law on {0, 1, ...}.
    """

    gamma: float
    probs: np.ndarray
    K: int
    tail_mass: float
    tail_coef: float  # P(X > k) ~ tail_coef k^-gamma
    _cum: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self._cum = np.cumsum(self.probs)

    @property
    def geometric(self):
        return self.gamma == 2.0

    def log_survival(self, k):
        """log P(X > k) for k >= 1 (exact)."""
        k = np.asarray(k, dtype=float)
        g = self.gamma
        return gammaln(k + 1.0 - g) - gammaln(k + 1.0) - math.log(g * abs(math.gamma(1.0 - g)))

    def pmf(self, k):
        k = np.asarray(k)
        if self.geometric:
            return 0.5 ** (k + 1.0)
        out = np.zeros(k.shape)
        small = k <= self.K
        out[small] = self.probs[k[small]]
        big = ~small
        if np.any(big):
            kb = k[big].astype(float)
            out[big] = np.exp(self.log_survival(kb - 1)) - np.exp(self.log_survival(kb))
        return out


def offspring(p: ModelParams, K: int = 512) -> OffspringLaw:
    g = p.gamma
    if p.is_quadratic:
        probs = 0.5 ** (np.arange(K + 1) + 1.0)
        return OffspringLaw(g, probs, K, 0.5 ** (K + 1), 0.0)
    probs = np.zeros(K + 1)
    probs[0] = 1.0 / g
    c = 1.0  # (-1)^k C(g, k)
    for k in range(1, K + 1):
        c *= (k - 1 - g) / k
        if k >= 2:
            probs[k] = abs(c) / g
    tail_mass = math.exp(
        math.lgamma(K + 1.0 - g) - math.lgamma(K + 1.0) - math.log(g * abs(math.gamma(1.0 - g)))
    )
    return OffspringLaw(g, probs, K, tail_mass, 1.0 / (g * abs(math.gamma(1.0 - g))))


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size=None):
    """Draw child counts; exact inverse CDF (bisection on the exact tail beyond K)."""
    scalar = size is None
    n = 1 if scalar else size
    if law.geometric:
        out = rng.geometric(0.5, size=n) - 1
        return int(out[0]) if scalar else out
    u = rng.random(n)
    w = 1.0 - u
    out = np.searchsorted(law._cum, u, side="right").astype(np.int64)
    tail = out > law.K
    if np.any(tail):
        out[tail] = _tail_inverse(law, w[tail])
    return int(out[0]) if scalar else out


def _tail_inverse(law: OffspringLaw, w: np.ndarray) -> np.ndarray:
    """Smallest k > K with P(X > k) <= w."""
    lw = np.log(w)
    # asymptotic guess from the Pareto representation, then integer bisection
    guess = (w / law.tail_coef) ** (-1.0 / law.gamma)
    lo = np.full(w.shape, float(law.K))
    hi = np.maximum(2.0 * guess + 2.0, lo + 1.0)
    cap = 2.0**62
    while True:
        bad = law.log_survival(hi) > lw
        if not np.any(bad):
            break
        hi[bad] = np.minimum(hi[bad] * 2.0, cap)
        if np.all(hi[bad] >= cap):
            break
    # invariant: S(lo) > w >= S(hi)
    while True:
        gap = hi - lo > 1.0
        if not np.any(gap):
            break
        mid = np.floor(0.5 * (lo + hi))
        above = law.log_survival(mid) > lw
        lo = np.where(gap & above, mid, lo)
        hi = np.where(gap & ~above, mid, hi)
    return hi.astype(np.int64)
