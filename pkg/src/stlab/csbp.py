"""Stable CSBP paths from exact compound-Poisson transitions.

By the branching property, X_delta under P_x is the total level-delta local
time of a Poisson(x v(delta)) number of independent trees, each distributed
as <l^delta> under N_delta.  That gives an exact one-step sampler, so paths
on a level grid are exact at the grid points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DomainError, ModelParams, cumulant_u, extinction_intensity
from .stable_laws import LocalTimeLawTable


class HypothesisError(DomainError):
    """A verification grid point violates a hypothesis of the bound it tests."""


@dataclass(frozen=True)
class CsbpPath:
    delta: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("a path needs at least one value")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("path values must be finite and >= 0")
        z = np.flatnonzero(v == 0)
        if z.size and np.any(v[z[0]:] != 0):
            raise DomainError("zero is absorbing")
        object.__setattr__(self, "values", v)

    @property
    def absorbed(self) -> bool:
        return bool(self.values[-1] == 0)

    @property
    def levels(self) -> np.ndarray:
        return self.delta * np.arange(self.values.size)


def _check_table(table: LocalTimeLawTable, p: ModelParams | None):
    if p is not None and table.gamma != p.gamma:
        raise DomainError(f"table gamma {table.gamma} != model gamma {p.gamma}")
    return ModelParams(table.gamma)


def csbp_step(x, delta: float, table: LocalTimeLawTable, rng: np.random.Generator,
              return_counts: bool = False):
    """One exact transition X_0 = x -> X_delta (vectorised over x).

    With return_counts the Poisson cluster counts are returned as well.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta!r}")
    p = _check_table(table, None)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise DomainError("mass must be >= 0")
    rate = xs * extinction_intensity(delta, p)
    counts = rng.poisson(rate)
    total = int(counts.sum())
    out = np.zeros(xs.shape)
    if total:
        jumps = table.sample(rng, total, scale=delta ** p.p)
        owner = np.repeat(np.arange(xs.size), counts)
        out = np.bincount(owner, weights=jumps, minlength=xs.size)
    if np.ndim(x) == 0:
        out, counts = float(out[0]), int(counts[0])
    return (out, counts) if return_counts else out


def csbp_paths(x0, steps: int, delta: float, table: LocalTimeLawTable,
               rng: np.random.Generator) -> np.ndarray:
    """Batch of paths, shape (len(x0), steps + 1); only live paths are stepped."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    out = np.zeros((x0.size, steps + 1))
    out[:, 0] = x0
    for k in range(steps):
        live = np.flatnonzero(out[:, k] > 0)
        if live.size == 0:
            break
        out[live, k + 1] = csbp_step(out[live, k], delta, table, rng)
    return out


def csbp_path(x0: float, horizon: float, delta: float, table: LocalTimeLawTable,
              rng: np.random.Generator) -> CsbpPath:
    if x0 < 0:
        raise DomainError("x0 must be >= 0")
    steps = int(round(horizon / delta))
    if steps < 1 or not math.isclose(steps * delta, horizon, rel_tol=1e-9):
        raise DomainError(f"horizon {horizon} is not a multiple of delta {delta}")
    return CsbpPath(delta, csbp_paths([x0], steps, delta, table, rng)[0])


@dataclass
class PathFunctionals:
    sup: float
    inf: float
    theta: float  # grid index of the first X_k >= 2*threshold; inf if never
    post_inf: float  # min over `window` grid values starting at theta; nan if no hit


def path_functionals(path, threshold: float, window: int = 8) -> PathFunctionals:
    """sup, inf, hitting index of 2*threshold and the infimum right after it.

    The post-hitting window holds `window` grid values X_theta .. X_{theta+window-1},
    clipped at the end of the path.
    """
    v = path.values if isinstance(path, CsbpPath) else np.asarray(path, dtype=float)
    if v.size == 0:
        raise DomainError("empty path")
    hit = np.flatnonzero(v >= 2.0 * threshold)
    if hit.size == 0:
        return PathFunctionals(float(v.max()), float(v.min()), math.inf, math.nan)
    k = int(hit[0])
    return PathFunctionals(float(v.max()), float(v.min()), k, float(v[k:k + window].min()))


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def c_gamma0(p: ModelParams) -> float:
    return 0.5 * p.gamma ** (-p.p)


def low_mass_bound(x, delta, p):
    return math.exp(-c_gamma0(p) * x * delta ** (-p.p))


def infimum_bound(x, y, delta, p):
    """exp(-v(delta) (x^b - y^b)^(g/(g-1))), b = 1 - 1/g.

    This is the minimum over the martingale parameter of
    y (mu - (g-1) delta)^(-1/(g-1)) - x mu^(-1/(g-1)); at y = 0 it is the
    extinction probability exp(-x v(delta)).
    """
    b = 1.0 - 1.0 / p.gamma
    return math.exp(-extinction_intensity(delta, p) * (x**b - y**b) ** (p.gamma * p.p))


def infimum_bound_alt(x, y, delta, p):
    """The closed form with (x^b + y^b)(x^b - y^b)^(1/(g-1)); kept for comparison."""
    b = 1.0 - 1.0 / p.gamma
    xb, yb = x**b, y**b
    return math.exp(-extinction_intensity(delta, p) * (xb + yb) * (xb - yb) ** p.p)


def recovery_c2(p):
    """Constant in exp(-c2 v(tau) Lambda): the infimum bound at x = 2 Lambda, y = Lambda."""
    b = 1.0 - 1.0 / p.gamma
    return (2.0**b - 1.0) ** (p.gamma * p.p)


def recovery_bound(lam, tau, p):
    """Conditional factor: P(inf over Theta+[0,tau] <= Lambda | X_Theta >= 2 Lambda) bound.

    The infimum bound is decreasing in the starting mass, so x = 2 Lambda is
    the worst case.
    """
    return math.exp(-recovery_c2(p) * extinction_intensity(tau, p) * lam)


@dataclass
class BoundRow:
    kind: str
    gamma: float
    x: float
    y_or_rho: float
    delta: float
    kappa: float
    bound: float
    freq: float
    se: float
    n: int
    passed: bool
    extra: dict = field(default_factory=dict)

    CSV_COLUMNS = ("gamma", "x", "y_or_rho", "delta", "kappa", "bound", "freq", "se", "pass")

    def csv_row(self):
        return (self.gamma, self.x, self.y_or_rho, self.delta, self.kappa,
                self.bound, self.freq, self.se, int(self.passed))


def _freq(hits: int, n: int):
    f = hits / n
    return f, math.sqrt(f * (1.0 - f) / n)


def default_grid(bound: str, p: ModelParams) -> list[dict]:
    """Cells chosen so the bounds sit in a range where domination is informative."""
    g = p.gamma
    c0 = c_gamma0(p)
    if bound == "low_mass":
        cells = []
        for delta in (1.0, 0.25):
            for t in (0.5, 1.0, 2.0, 3.0):
                x = t * delta**p.p / c0
                for frac in (1.0, 0.5):
                    cells.append(dict(x=x, rho=frac * c0 * x, delta=delta))
        return cells
    if bound == "infimum":
        cells = []
        for t in (0.5, 1.0, 2.0):
            x = t / extinction_intensity(1.0, p)
            for frac in (0.0, 0.25, 0.5, 0.75):
                cells.append(dict(x=x, y=frac * x, delta=1.0))
        return cells
    if bound == "sup_growth":
        if p.is_quadratic:
            return []
        cells = []
        for delta in (1.0, 0.5):
            for kappa in (1.0, 2.0):
                x = 1.0 / extinction_intensity(delta, p)
                for s in (2.0, 4.0):
                    cells.append(dict(x=x, rho=s * x, delta=delta, kappa=kappa))
        return cells
    if bound == "recovery":
        if p.is_quadratic:
            return []
        cells = []
        c2 = recovery_c2(p)
        lam = 1.0
        delta = 1.0 / (g - 1.0)  # v(delta) * Lambda = 1
        for target in (0.8, 0.5, 0.2):  # bound values
            lv = -math.log(target) / c2  # v(tau) * Lambda
            tau = (lv / lam) ** (-(g - 1.0)) / (g - 1.0)
            cells.append(dict(x=lam, lam=lam, delta=delta, tau=tau))
        return cells
    raise DomainError(f"unknown bound {bound!r}")


def verify_tail_bounds(p: ModelParams, bound: str, table: LocalTimeLawTable,
                       rng: np.random.Generator, grid: list[dict] | None = None,
                       replicates: int = 10_000, substeps: int = 8) -> list[BoundRow]:
    """Monte Carlo frequency vs bound for one inequality on a grid of cells.

    Infima and hitting times are taken on a grid of `substeps` points per
    delta, which can only make the empirical event smaller; the domination
    check is therefore conservative in the right direction.
    """
    _check_table(table, p)
    grid = default_grid(bound, p) if grid is None else grid
    rows = []
    for cell in grid:
        rows.append(_verify_cell(p, bound, cell, table, rng, replicates, substeps))
    return rows


def _verify_cell(p, bound, cell, table, rng, n, substeps):
    g = p.gamma
    if bound == "low_mass":
        x, rho, delta = cell["x"], cell["rho"], cell["delta"]
        if not (x > 0 and rho > 0 and delta > 0):
            raise HypothesisError("low-mass bound needs positive x, rho, delta")
        if rho > c_gamma0(p) * x * (1 + 1e-12):
            raise HypothesisError("low-mass bound needs rho <= c_{gamma,0} x")
        xd = csbp_step(np.full(n, x), delta, table, rng)
        f, se = _freq(int(np.count_nonzero(xd <= rho)), n)
        b = low_mass_bound(x, delta, p)
        return BoundRow(bound, g, x, rho, delta, 1.0, b, f, se, n, f <= b + 3 * se)
    if bound == "infimum":
        x, y, delta = cell["x"], cell["y"], cell["delta"]
        if not (x > 0 and delta > 0 and 0 <= y):
            raise HypothesisError("infimum bound needs x, delta > 0 and y >= 0")
        if y > x:
            raise HypothesisError("infimum bound needs y <= x")
        paths = csbp_paths(np.full(n, x), substeps, delta / substeps, table, rng)
        f, se = _freq(int(np.count_nonzero(paths.min(axis=1) <= y)), n)
        b = infimum_bound(x, y, delta, p)
        ok = f <= b + 3 * se
        extra = {}
        if y == 0:
            # the bound is the exact extinction probability here
            se_b = math.sqrt(b * (1 - b) / n)
            extra["tight"] = abs(f - b) <= 3 * se_b
            extra["se_bound"] = se_b
        return BoundRow(bound, g, x, y, delta, 1.0, b, f, se, n, ok, extra)
    if bound == "sup_growth":
        if p.is_quadratic:
            raise HypothesisError("sup growth check needs gamma < 2")
        x, rho, delta, kappa = cell["x"], cell["rho"], cell["delta"], cell["kappa"]
        if kappa < 1:
            raise HypothesisError("sup growth check needs kappa >= 1")
        steps = int(round(substeps * kappa))
        paths = csbp_paths(np.full(n, x), steps, kappa * delta / steps, table, rng)
        f_sup, se = _freq(int(np.count_nonzero(paths.max(axis=1) >= rho)), n)
        f_end, _ = _freq(int(np.count_nonzero(paths[:, -1] >= c_gamma0(p) * rho)), n)
        C = f_sup / f_end if f_end > 0 else math.inf
        return BoundRow(bound, g, x, rho, delta, kappa, C * f_end, f_sup, se, n,
                        math.isfinite(C), {"fitted_C": C, "p_end": f_end})
    if bound == "recovery":
        if p.is_quadratic:
            raise HypothesisError("recovery bound needs gamma < 2")
        x, lam, delta, tau = cell["x"], cell["lam"], cell["delta"], cell["tau"]
        if not (lam > 0 and tau > 0 and delta > 0):
            raise HypothesisError("recovery bound needs positive Lambda, delta, tau")
        # hitting on a coarse grid (a stopping time), then a finely resolved window
        pre = csbp_paths(np.full(n, x), substeps, delta / substeps, table, rng)
        hit_mask = pre >= 2.0 * lam
        idx = np.flatnonzero(hit_mask.any(axis=1))
        nh = idx.size
        b = recovery_bound(lam, tau, p)
        if nh == 0:
            return BoundRow(bound, g, x, lam, delta, tau, b, math.nan, math.nan, 0, False,
                            {"hits": 0})
        x_theta = pre[idx, hit_mask[idx].argmax(axis=1)]
        post = csbp_paths(x_theta, substeps, tau / substeps, table, rng).min(axis=1)
        f, se = _freq(int(np.count_nonzero(post <= lam)), nh)
        return BoundRow(bound, g, x, lam, delta, tau, b, f, se, nh, f <= b + 3 * se,
                        {"hits": nh, "p_hit": nh / n})
    raise DomainError(f"unknown bound {bound!r}")


def laplace_check(p: ModelParams, table: LocalTimeLawTable, x: float, delta: float,
                  mus, n: int, rng: np.random.Generator):
    """MC mean of exp(-mu X_delta) against exp(-x u_delta(mu)); returns rows."""
    xd = csbp_step(np.full(n, x), delta, table, rng)
    rows = []
    for mu in mus:
        e = np.exp(-mu * xd)
        rows.append((mu, float(e.mean()), float(e.std(ddof=1) / math.sqrt(n)),
                     math.exp(-x * cumulant_u(delta, mu, p))))
    return rows


# ---------------------------------------------------------------------------
# paths under N_1 (for the mass of balls around the root)
# ---------------------------------------------------------------------------


def sample_root_ball_masses(p: ModelParams, table: LocalTimeLawTable, n: int,
                            c_values=(0.0, 1.0), delta: float = 0.125,
                            rng: np.random.Generator | None = None, chunk: int = 50_000):
    """m(B(rho, 1+c)) = int_0^{1+c} <l^u> du under N_1, for each c.

    Level masses are drawn exactly at the grid points: <l^delta> from its law
    under N tilted by survival to level 1, then Doob-conditioned steps up to
    level 1 (rejection against h(x, s) = 1 - exp(-x v(1-s))), then free steps.
    The integral is the trapezoid rule with <l^0> = 0.
    Returns an array of shape (len(c_values), n).
    """
    _check_table(table, p)
    rng = np.random.default_rng() if rng is None else rng
    if not math.isclose(round(1.0 / delta) * delta, 1.0):
        raise DomainError("delta must divide 1")
    parts = [_root_ball_chunk(p, table, min(chunk, n - s), [float(c) for c in c_values], delta, rng)
             for s in range(0, n, chunk)]
    return np.concatenate(parts, axis=1)


def _root_ball_chunk(p, table, n, c_values, delta, rng):
    k1 = int(round(1.0 / delta))
    kmax = int(round((1.0 + max(c_values)) / delta))
    ell = np.zeros((n, kmax + 1))

    # level delta: proposals from the N_delta law, accepted with prob h(x, delta)
    filled = 0
    v_rest = extinction_intensity(1.0 - delta, p)
    scale = delta**p.p
    while filled < n:
        m = max(1024, 2 * (n - filled) * int(extinction_intensity(delta, p) / extinction_intensity(1.0, p)))
        prop = table.sample(rng, m, scale)
        keep = prop[rng.random(m) < -np.expm1(-prop * v_rest)]
        take = min(keep.size, n - filled)
        ell[filled:filled + take, 1] = keep[:take]
        filled += take

    for k in range(1, kmax):
        s_next = (k + 1) * delta
        cur = ell[:, k]
        if k + 1 <= k1:
            v_next = extinction_intensity(1.0 - s_next, p) if k + 1 < k1 else math.inf
            todo = np.arange(n)
            while todo.size:
                # several i.i.d. proposals per pending path; the first accepted one is kept
                reps = max(1, min(64, 8192 // todo.size))
                y = csbp_step(np.repeat(cur[todo], reps), delta, table, rng).reshape(todo.size, reps)
                if k + 1 < k1:
                    acc = rng.random(y.shape) < -np.expm1(-y * v_next)
                else:
                    acc = y > 0
                hit = acc.any(axis=1)
                first = acc.argmax(axis=1)
                ell[todo[hit], k + 1] = y[hit, first[hit]]
                todo = todo[~hit]
        else:
            live = np.flatnonzero(cur > 0)
            if live.size:
                ell[live, k + 1] = csbp_step(cur[live], delta, table, rng)

    out = np.empty((len(c_values), n))
    for i, c in enumerate(c_values):
        kc = int(round((1.0 + c) / delta))
        out[i] = delta * (ell[:, 1:kc].sum(axis=1) + 0.5 * ell[:, kc])
    return out
