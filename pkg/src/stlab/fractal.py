"""Exponent, spectrum and box-dimension estimators on simulated trees."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DomainError, ModelParams

WINDOW = 3
SPREAD_FLAG = 0.5


class EstimationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pointwise exponents
# ---------------------------------------------------------------------------


@dataclass
class ExponentEstimate:
    vertex: int
    alpha_l: float
    alpha_m: float
    alpha_b: float
    scales: tuple  # (r_min, r_max)
    n_scales: int
    r2: float
    spread: float = 0.0

    @property
    def oscillating(self) -> bool:
        return self.spread > SPREAD_FLAG


def _origin_slopes(y: np.ndarray, x: np.ndarray, window: int) -> np.ndarray:
    """Slopes of y against x through the origin over nested windows x[:e], e >= window.

    Rows are profiles, columns are windows ordered from finest to coarsest.
    """
    num = np.cumsum(y * x, axis=-1)
    den = np.cumsum(x * x)
    return (num / den)[..., window - 1:]


def trailing_min_slope(y, x, window: int = WINDOW) -> np.ndarray:
    """liminf surrogate: smallest through-origin slope over trailing windows.

    A trailing window holds every scale finer than some cut-off, with at least
    `window` scales.  For an exact power law y = alpha*x it returns alpha.
    """
    return _origin_slopes(np.asarray(y, float), np.asarray(x, float), window).min(axis=-1)


def trailing_max_slope(y, x, window: int = WINDOW) -> np.ndarray:
    return _origin_slopes(np.asarray(y, float), np.asarray(x, float), window).max(axis=-1)


def pointwise_exponents(profiles, window: int = WINDOW, with_dropped: bool = False):
    """ExponentEstimate per profile; profiles with a non-positive ball mass are dropped.

    Accepts a ProfileBatch, an iterable of BallProfile, or anything with
    `radii`, `ell`, `m` (and optionally `nb`) attributes per item.
    """
    if hasattr(profiles, "ell") and np.ndim(profiles.ell) == 2:
        radii = np.asarray(profiles.radii, float)
        ell, m = np.asarray(profiles.ell, float), np.asarray(profiles.m, float)
        nb = None if profiles.nb is None else np.asarray(profiles.nb, float)
        ids = np.asarray(profiles.vertex)
    else:
        items = list(profiles)
        if not items:
            return ([], []) if with_dropped else []
        radii = np.asarray(items[0].radii, float)
        for it in items:
            if len(it.radii) != len(radii) or not np.allclose(it.radii, radii):
                raise EstimationError("profiles must share one radius grid")
        ell = np.array([it.ell for it in items], float)
        m = np.array([it.m for it in items], float)
        nb = None if getattr(items[0], "nb", None) is None else np.array([it.nb for it in items], float)
        ids = np.array([it.vertex for it in items])
    J = radii.size
    if J < max(4, window):
        raise EstimationError(f"need at least 4 dyadic scales, got {J}")
    if np.any(radii >= 1):
        raise EstimationError("radii must be below 1 for log-ratio exponents")
    lr = np.log(radii)
    bad = ~(np.all(ell > 0, axis=1) & np.all(m > 0, axis=1))
    dropped = [(int(v), "zero_mass") for v in ids[bad]]
    keep = ~bad
    ly, lm = np.log(ell[keep]), np.log(m[keep])
    sl = _origin_slopes(ly, lr, window)
    sm = _origin_slopes(lm, lr, window)
    al, am = sl.min(axis=1), sm.min(axis=1)
    if nb is not None:
        ab = _origin_slopes(np.log1p(nb[keep]), -lr, window).max(axis=1)
    else:
        ab = np.full(al.shape, np.nan)
    # uncentred R^2 of the full-range fit through the origin
    full = sl[:, -1:]
    rss = ((ly - full * lr) ** 2).sum(axis=1)
    r2 = 1.0 - rss / (ly**2).sum(axis=1)
    spread = np.maximum(np.ptp(sl, axis=1), np.ptp(sm, axis=1))
    out = [ExponentEstimate(int(v), float(a), float(b), float(c), (float(radii[0]), float(radii[-1])),
                            J, float(q), float(s))
           for v, a, b, c, q, s in zip(ids[keep], al, am, ab, r2, spread)]
    return (out, dropped) if with_dropped else out


def _arrays(estimates):
    al = np.array([e.alpha_l for e in estimates])
    am = np.array([e.alpha_m for e in estimates])
    ab = np.array([e.alpha_b for e in estimates])
    return al, am, ab


@dataclass
class ExponentRelations:
    n: int
    eligible: int
    violations: int
    implication_fraction: float
    residual_median: float
    residual_abs_median: float
    residual_quantiles: tuple
    tol: float

    def passed(self, frac_min=0.9, resid_max=0.3) -> bool:
        return self.implication_fraction >= frac_min and self.residual_abs_median <= resid_max


def exponent_relations(estimates, p: ModelParams, tol: float = 0.3) -> ExponentRelations:
    """alpha_l <= 1/(gamma-1) + tol should force alpha_m <= alpha_l + 1 + tol;
    alpha_m + alpha_b should sit near gamma/(gamma-1)."""
    al, am, ab = _arrays(estimates)
    if al.size == 0:
        raise EstimationError("no estimates")
    elig = al <= p.p + tol
    viol = elig & (am > al + 1 + tol)
    res = am + ab - p.gamma * p.p
    res = res[np.isfinite(res)]
    q = tuple(np.quantile(res, [0.1, 0.5, 0.9])) if res.size else (math.nan,) * 3
    return ExponentRelations(
        n=int(al.size), eligible=int(elig.sum()), violations=int(viol.sum()),
        implication_fraction=float(1 - viol.sum() / al.size),
        residual_median=float(np.median(res)) if res.size else math.nan,
        residual_abs_median=float(np.median(np.abs(res))) if res.size else math.nan,
        residual_quantiles=q, tol=tol)


# ---------------------------------------------------------------------------
# coarse-grained spectrum
# ---------------------------------------------------------------------------


def reference_spectrum(h, p: ModelParams, kind: str = "local_time", dim_f: float = 0.0):
    """Spectrum line for the local time (gamma h - 1 + dim F on [1/gamma, 1/(gamma-1)])
    or the mass measure (gamma(h-1) - 1 + dim F on [(1+gamma)/gamma, gamma/(gamma-1)]).
    NaN outside the line's domain."""
    h = np.asarray(h, float)
    g = p.gamma
    if kind == "local_time":
        lo, hi, val = 1 / g, p.p, g * h - 1 + dim_f
    elif kind == "mass":
        lo, hi, val = (1 + g) / g, g * p.p, g * (h - 1) - 1 + dim_f
    else:
        raise DomainError(f"unknown spectrum kind {kind!r}")
    return np.where((h >= lo - 1e-12) & (h <= hi + 1e-12), val, np.nan)


@dataclass
class SpectrumEstimate:
    edges: np.ndarray
    counts: np.ndarray
    f_raw: np.ndarray  # log N / log(1/delta); NaN where count < min_count
    f_hat: np.ndarray  # anchored so the modal bin equals `anchor`
    reference: np.ndarray
    delta: float
    anchor: float
    min_count: int
    kind: str = "local_time"
    extra: dict = field(default_factory=dict)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def populated(self):
        return self.counts >= self.min_count

    def slope(self, h_lo=-np.inf, h_hi=np.inf):
        """OLS slope of f_hat against h over populated bins with centre in [h_lo, h_hi]."""
        c = self.centers
        sel = self.populated & (c >= h_lo) & (c <= h_hi)
        if sel.sum() < 3:
            raise EstimationError("fewer than 3 populated bins in the fit range")
        return float(np.polyfit(c[sel], self.f_hat[sel], 1)[0])

    def rows(self):
        for h, n, f, r in zip(self.centers, self.counts, self.f_hat, self.reference):
            yield float(h), int(n), float(f), float(r)


def spectrum(estimates, delta: float, p: ModelParams, reference: str = "local_time",
             bin_width: float = 0.1, min_count: int = 10, anchor: float | None = None,
             dim_f: float = 0.0, min_estimates: int = 1000) -> SpectrumEstimate:
    """Histogram exponents into bins of width `bin_width` and form
    f_raw = log N(h)/log(1/delta), then shift so the modal bin equals `anchor`
    (default: the level-set dimension 1/(gamma-1) + dim_f)."""
    if len(estimates) and isinstance(estimates[0], ExponentEstimate):
        h = np.array([e.alpha_m if reference == "mass" else e.alpha_l for e in estimates])
    else:
        h = np.asarray(estimates, float).ravel()
    h = h[np.isfinite(h)]
    if h.size < min_estimates:
        raise EstimationError(f"spectrum needs at least {min_estimates} estimates, got {h.size}")
    if not 0 < delta < 1:
        raise DomainError("working scale must lie in (0, 1)")
    lo = math.floor(h.min() / bin_width) * bin_width
    nb = max(1, int(math.ceil((h.max() - lo) / bin_width + 1e-9)))
    edges = lo + bin_width * np.arange(nb + 1)
    idx = np.clip(((h - lo) / bin_width).astype(np.intp), 0, nb - 1)
    counts = np.bincount(idx, minlength=nb)
    L = math.log(1 / delta)
    with np.errstate(divide="ignore"):
        f_raw = np.where(counts >= min_count, np.log(np.maximum(counts, 1)) / L, np.nan)
    if anchor is None:
        anchor = p.p + dim_f if reference == "local_time" else p.p + dim_f
    mode = int(np.argmax(counts))
    f_hat = f_raw - f_raw[mode] + anchor
    centers = 0.5 * (edges[1:] + edges[:-1])
    ref = reference_spectrum(centers, p, reference, dim_f)
    return SpectrumEstimate(edges, counts, f_raw, f_hat, ref, delta, anchor, min_count, reference,
                            {"n": int(h.size), "modal_bin": float(centers[mode])})


# ---------------------------------------------------------------------------
# level sets F and covering intervals
# ---------------------------------------------------------------------------


@dataclass
class LevelSetSpec:
    kind: str  # singleton | interval | cantor
    lo: float
    hi: float | None = None
    ratio: float = 1 / 3  # scale ratio of each Cantor piece
    depth: int | None = None

    def __post_init__(self):
        if self.kind not in ("singleton", "interval", "cantor"):
            raise DomainError(f"unknown level-set kind {self.kind!r}")
        if self.kind == "singleton":
            self.hi = self.lo
        elif self.hi is None or not self.hi > self.lo:
            raise DomainError("interval and Cantor sets need hi > lo")
        if self.kind == "cantor" and not 0 < self.ratio < 0.5:
            raise DomainError("Cantor ratio must lie in (0, 1/2)")

    @property
    def dim(self) -> float:
        if self.kind == "singleton":
            return 0.0
        if self.kind == "interval":
            return 1.0
        return math.log(2) / math.log(1 / self.ratio)

    dim_h = dim
    dim_p = dim

    def depth_for(self, delta: float) -> int:
        if self.depth is not None:
            return self.depth
        return max(1, math.ceil(math.log(1 / delta) / math.log(1 / self.ratio)))

    def pieces(self, delta: float) -> np.ndarray:
        """Closed intervals of the finite-depth approximation, shape (n, 2)."""
        if self.kind != "cantor":
            return np.array([[self.lo, self.hi]])
        iv = np.array([[self.lo, self.hi]])
        for _ in range(self.depth_for(delta)):
            w = (iv[:, 1] - iv[:, 0]) * self.ratio
            iv = np.concatenate([np.stack([iv[:, 0], iv[:, 0] + w], 1),
                                 np.stack([iv[:, 1] - w, iv[:, 1]], 1)])
            iv = iv[np.argsort(iv[:, 0])]
        return iv

    def covering(self, r: float, origin: float = 0.0, delta: float | None = None) -> np.ndarray:
        """Left ends of the grid intervals [origin + i r, origin + (i+1) r] meeting F."""
        eps = 1e-9 * r
        pcs = self.pieces(r if delta is None else delta)
        first = np.floor((pcs[:, 0] - origin - eps) / r).astype(np.int64)
        last = np.floor((pcs[:, 1] - origin + eps) / r).astype(np.int64)
        idx = np.unique(np.concatenate([np.arange(a, b + 1) for a, b in zip(first, last)]))
        return origin + idx * r

    def contains(self, x, delta: float) -> np.ndarray:
        pcs = self.pieces(delta)
        x = np.atleast_1d(np.asarray(x, float))
        tol = 1e-9 * max(1.0, abs(self.hi))
        return np.array([bool(np.any((pcs[:, 0] - tol <= v) & (v <= pcs[:, 1] + tol))) for v in x])


# ---------------------------------------------------------------------------
# box dimensions
# ---------------------------------------------------------------------------


@dataclass
class DimensionEstimate:
    target: str
    slope: float
    se: float
    ci: tuple
    scales: np.ndarray
    counts: np.ndarray  # (replicates, scales)
    per_replicate: np.ndarray

    def rows(self):
        mc = self.counts.mean(axis=0)
        for r, c in zip(self.scales, mc):
            yield float(r), float(c)


def _loglog_slope(scales, counts):
    x = np.log(1 / np.asarray(scales, float))
    y = np.log(np.asarray(counts, float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = x.size
    s2 = float(((y - A @ coef) ** 2).sum() / max(n - 2, 1))
    se = math.sqrt(s2 / ((x - x.mean()) ** 2).sum())
    return float(coef[0]), se


def covering_counts(t, target, scales, window=None) -> np.ndarray:
    """Covering counts of T(a), T(F) or the slab T[lo, hi] of a slice tree.

    `target` is a level (float), a LevelSetSpec, or the string "tree" with
    `window=(lo, hi)`.  At scale r a grid interval [b, b + r] contributes
    Z(b - r, r), the number of subtrees born at b - r that reach b; each
    covers its part of the slab by one set of diameter at most 4r.
    """
    from .slicetree import level_counts
    out = []
    for r in scales:
        if isinstance(target, (int, float)) and not isinstance(target, bool):
            lefts = [float(target)]
        elif isinstance(target, LevelSetSpec):
            lefts = target.covering(r, origin=t.a0, delta=t.delta)
        elif target == "tree":
            lo, hi = window
            n = int(round((hi - lo) / r))
            lefts = lo + r * np.arange(n)
        else:
            raise DomainError(f"unknown covering target {target!r}")
        tot = 0
        for b in lefts:
            base = b - r
            tot += level_counts(t, _snap(t, base), r)
        out.append(tot)
    return np.array(out, dtype=np.int64)


def _snap(t, a):
    k = round((a - t.a0) / t.delta)
    return t.a0 + k * t.delta


def box_dimension(trees, target, scales, window=None, name=None) -> DimensionEstimate:
    """Regress log of the ensemble-mean covering count on log(1/r)."""
    scales = np.asarray(scales, float)
    if scales.size < 4:
        raise EstimationError("need at least 4 scales")
    counts = np.array([covering_counts(t, target, scales, window) for t in trees])
    mean = counts.mean(axis=0)
    if np.any(mean <= 0):
        raise EstimationError("zero covering count at some scale")
    slope, se = _loglog_slope(scales, mean)
    per = []
    for c in counts:
        if np.all(c > 0):
            per.append(_loglog_slope(scales, c)[0])
    per = np.array(per)
    if per.size > 2:
        se = max(se, float(per.std(ddof=1) / math.sqrt(per.size)))
    label = name or (target.kind if isinstance(target, LevelSetSpec) else str(target))
    return DimensionEstimate(label, slope, se, (slope - 1.96 * se, slope + 1.96 * se), scales, counts, per)


# ---------------------------------------------------------------------------
# extreme exponents
# ---------------------------------------------------------------------------


@dataclass
class ExtremeReport:
    spec: LevelSetSpec
    delta: float
    min_alpha_l: float
    min_alpha_m: float
    per_level: np.ndarray  # (levels, min over boxes of alpha_l)
    target_l: float
    target_m: float
    n_boxes: int


def extreme_exponent(trees, spec: LevelSetSpec, p: ModelParams) -> ExtremeReport:
    """Smallest coarse-grained exponents over boxes at the working scale delta
    on the levels of F, pooled over a replicate ensemble.

    A box at level b is a node; its local-time exponent is log(mass)/log(delta)
    and its mass-measure exponent uses delta times the node's subtree mass
    summed over the next slice, log(delta*mass)/log(delta) at first order.
    """
    rows = []
    nbox = 0
    mins_m = []
    delta = None
    for t in trees:  # may be a generator; trees are not retained
        if delta is None:
            delta = t.delta
            L = math.log(delta)
        elif abs(t.delta - delta) > 1e-15:
            raise DomainError("ensemble must share delta")
        grid = t.a0 + t.delta * np.arange(t.n_levels)
        inF = spec.contains(grid, delta)
        for k in np.flatnonzero(inF):
            ms = t.mass[k]
            if ms.size == 0:
                continue
            nbox += ms.size
            rows.append((grid[k], float(np.log(ms.max()) / L)))
            mins_m.append(float(np.log(delta * ms.max()) / L))
    if delta is None:
        raise EstimationError("empty ensemble")
    per_level = np.array(rows) if rows else np.zeros((0, 2))
    dim = spec.dim
    return ExtremeReport(spec, delta,
                         float(per_level[:, 1].min()) if rows else math.inf,
                         float(min(mins_m)) if mins_m else math.inf,
                         per_level, (1 - dim) / p.gamma, (p.gamma + 1 - dim) / p.gamma, nbox)
