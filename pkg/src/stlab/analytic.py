"""Closed-form laws of the gamma-stable tree and the kappa cumulant solver.

Everything here assumes the branching mechanism psi(lambda) = lambda**gamma
with unit multiplicative constant.  Functions are pure and thread-safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "KappaSolution",
    "MU_INF",
    "DomainError",
    "SolverError",
    "extinction_intensity",
    "cumulant_u",
    "laplace_Na",
    "kappa_solve",
    "tail_asymptotics",
    "gauges",
    "chernoff_poisson",
    "mean_local_time",
]


class DomainError(ValueError):
    """Argument outside the domain of a closed-form law."""


class SolverError(RuntimeError):
    """The kappa root finder failed to converge."""

    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (residual={residual:.3e})")
        self.residual = residual


class _MuInfinity:
    """Distinguished `mu = infinity` argument (the extinction limit)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MU_INF"

    def __reduce__(self):
        return (_MuInfinity, ())


MU_INF = _MuInfinity()


def _is_inf(mu) -> bool:
    return mu is MU_INF or (isinstance(mu, float) and math.isinf(mu) and mu > 0)


@dataclass(frozen=True)
class ModelParams:
    """Branching index of psi(lambda) = lambda**gamma, 1 < gamma <= 2."""

    gamma: float

    def __post_init__(self):
        g = float(self.gamma)
        if not (1.0 < g <= 2.0):
            raise DomainError(f"gamma must lie in (1, 2], got {self.gamma!r}")
        object.__setattr__(self, "gamma", g)

    @property
    def p(self) -> float:
        """Self-similarity exponent 1/(gamma - 1)."""
        return 1.0 / (self.gamma - 1.0)

    @property
    def is_quadratic(self) -> bool:
        return self.gamma == 2.0

    def psi(self, lam):
        return np.power(lam, self.gamma)


@dataclass(frozen=True)
class KappaSolution:
    a: float
    lam: float
    mu: object
    value: float
    residual: float


def extinction_intensity(a: float, p: ModelParams) -> float:
    """v(a) = N(height > a) = ((gamma-1) a)^(-1/(gamma-1))."""
    if not a > 0:
        raise DomainError(f"level must be positive, got {a!r}")
    return ((p.gamma - 1.0) * a) ** (-p.p)


def cumulant_u(a: float, mu, p: ModelParams) -> float:
    """u_a(mu) = N(1 - exp(-mu <l^a>)); `mu=MU_INF` gives v(a)."""
    if not a > 0:
        raise DomainError(f"level must be positive, got {a!r}")
    if _is_inf(mu):
        return extinction_intensity(a, p)
    if mu < 0:
        raise DomainError(f"mu must be >= 0, got {mu!r}")
    if mu == 0:
        return 0.0
    g1 = p.gamma - 1.0
    return (g1 * a + mu ** (-g1)) ** (-p.p)


def laplace_Na(mu, a, p: ModelParams):
    """Laplace transform of <l^a> under N_a; accepts complex arrays for mu.

    Written as -expm1(-log1p(z)/(gamma-1)) with z = 1/((gamma-1) a mu^(gamma-1))
    so it stays accurate when mu is large.
    """
    if not a > 0:
        raise DomainError(f"level must be positive, got {a!r}")
    mu_arr = np.asarray(mu)
    scalar = mu_arr.ndim == 0
    mu_arr = np.atleast_1d(mu_arr)
    if np.isrealobj(mu_arr) and np.any(mu_arr < 0):
        raise DomainError("mu must be >= 0")
    g1 = p.gamma - 1.0
    out = np.ones(mu_arr.shape, dtype=np.result_type(mu_arr.dtype, float))
    nz = mu_arr != 0
    z = 1.0 / (g1 * a * np.power(mu_arr[nz], g1))
    out[nz] = -np.expm1(-np.log1p(z) / g1)
    return out[0] if scalar else out


def mean_local_time(a: float, p: ModelParams) -> float:
    """N_a(<l^a>) = ((gamma-1) a)^(1/(gamma-1)) = 1/v(a)."""
    return 1.0 / extinction_intensity(a, p)


# ---------------------------------------------------------------------------
# kappa_a(lambda, mu): the integral equation int_mu^kappa du/(lambda-u^g) = a.
#
# With s = lambda^(1/g) and y = u/s the equation becomes
#     a * s^(g-1) = A(y_k) - A(y_mu)    (y < 1),  A(y) = int_0^y dt/(1-t^g)
#     a * s^(g-1) = B(y_k) - B(y_mu)    (y > 1),  B(y) = int_y^inf dt/(t^g-1)
# A and B are split into a log singularity at t = 1 plus the smooth remainder
# rho(t) = 1/(1-t^g) - 1/(g(1-t)), integrated by Gauss-Legendre.
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)
_NSERIES = 14


def _binom_coeffs(g: float, n: int) -> np.ndarray:
    """(-1)^k C(g, k) for k = 0..n-1."""
    c = np.empty(n)
    c[0] = 1.0
    for k in range(1, n):
        c[k] = c[k - 1] * (k - 1 - g) / k
    return c


def _rho(t: np.ndarray, g: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    d = 1.0 - t
    out = np.empty_like(t)
    near = np.abs(d) < 0.05
    far = ~near
    if np.any(far):
        tf = t[far]
        out[far] = 1.0 / (1.0 - tf**g) - 1.0 / (g * (1.0 - tf))
    if np.any(near):
        dn = d[near]
        c = _binom_coeffs(g, _NSERIES + 2)
        # 1 - (1-d)^g = d * T1,  g d - (1 - (1-d)^g) = d^2 * T2
        t1 = np.zeros_like(dn)
        t2 = np.zeros_like(dn)
        for k in range(_NSERIES, 0, -1):
            t1 = t1 * dn - c[k]
        for k in range(_NSERIES + 1, 1, -1):
            t2 = t2 * dn + c[k]
        out[near] = t2 / (g * t1)
    return out


def _gl(f, lo: float, hi: float) -> float:
    if hi == lo:
        return 0.0
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    return float(half * np.dot(_GL_W, f(mid + half * _GL_X)))


class _KappaPrimitives:
    """Primitive functions A, B for one value of gamma."""

    def __init__(self, g: float):
        self.g = g
        self.A_half = self._A_series(0.5)
        self.B_two = self._B_series(2.0)

    def _A_series(self, y: float) -> float:
        # sum_k y^(gk+1)/(gk+1); y^g <= 2^-g < 1/2
        g = self.g
        if y == 0:
            return 0.0
        total, k = 0.0, 0
        yg = y**g
        term_pow = y
        while True:
            term = term_pow / (g * k + 1)
            total += term
            if term <= 1e-18 * total:
                return total
            term_pow *= yg
            k += 1

    def _B_series(self, y: float) -> float:
        # sum_{k>=1} y^(1-gk)/(gk-1)
        g = self.g
        total, k = 0.0, 1
        yg = y ** (-g)
        term_pow = y * yg
        while True:
            term = term_pow / (g * k - 1)
            total += term
            if term <= 1e-18 * total:
                return total
            term_pow *= yg
            k += 1

    def rho(self, t):
        return _rho(t, self.g)

    # A as a function of y (y <= 1/2) or of tau = 1 - y (y > 1/2)
    def A(self, y: float | None = None, tau: float | None = None) -> float:
        if tau is None:
            if y <= 0.5:
                return self._A_series(y)
            tau = 1.0 - y
        return self.A_half + math.log(0.5 / tau) / self.g + _gl(self.rho, 0.5, 1.0 - tau)

    def dA_dtau(self, tau: float) -> float:
        # d/dtau of A at y = 1 - tau
        return -1.0 / (self.g * tau) - float(self.rho(np.array([1.0 - tau]))[0])

    # B as a function of y (y >= 2) or of tau = y - 1 (y < 2)
    def B(self, y: float | None = None, tau: float | None = None) -> float:
        if tau is None:
            if y >= 2.0:
                return self._B_series(y)
            tau = y - 1.0
        # int_{1+tau}^2 [1/(g(t-1)) - rho(t)] dt
        return self.B_two + math.log(1.0 / tau) / self.g - _gl(self.rho, 1.0 + tau, 2.0)

    def dB_dtau(self, tau: float) -> float:
        return -1.0 / (self.g * tau) + float(self.rho(np.array([1.0 + tau]))[0])


_PRIM_CACHE: dict[float, _KappaPrimitives] = {}


def _prims(g: float) -> _KappaPrimitives:
    pr = _PRIM_CACHE.get(g)
    if pr is None:
        pr = _PRIM_CACHE[g] = _KappaPrimitives(g)
    return pr


def _newton_log(f, df, x0: float, lo: float, hi: float, tol=1e-15, maxit=200):
    """Safeguarded Newton for an increasing/decreasing f on (lo, hi) in log-space.

    Root of f(x) = 0 with x > 0, bracket [lo, hi]; falls back to bisection in
    log x whenever a Newton step leaves the bracket.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise SolverError("root not bracketed", min(abs(flo), abs(fhi)))
    x = min(max(x0, lo), hi)
    for _ in range(maxit):
        fx = f(x)
        if fx == 0:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
        step = fx / (df(x) * x)  # Newton step in log x
        xn = x * math.exp(-step) if abs(step) < 50 else -1.0
        if not (lo < xn < hi):
            xn = math.sqrt(lo * hi)
        if abs(math.log(xn / x)) < tol:
            return xn
        x = xn
        if hi / lo - 1.0 < tol:
            return x
    raise SolverError("newton iteration did not converge", abs(f(x)))


def _kappa_scaled(a_s: float, y_mu, pr: _KappaPrimitives) -> tuple[float, bool, float]:
    """Solve in scaled units; returns (tau or y, is_tau, residual).

    a_s = a * s^(g-1).  Returns the distance tau = |1 - y_k| when the
    solution is in the log region, otherwise y_k itself.
    """
    g = pr.g
    if y_mu is None or y_mu > 1.0:
        # decreasing branch, y_k in (1, y_mu)
        b_mu = 0.0 if y_mu is None else pr.B(y=y_mu)
        target = b_mu + a_s
        if target <= pr.B_two:
            # series region y >= 2; B(y) ~ y^(1-g)/(g-1)
            y0 = ((g - 1.0) * target) ** (-1.0 / (g - 1.0))
            hi = y_mu if y_mu is not None else max(4.0 * y0, 4.0)
            while y_mu is None and pr.B(y=hi) > target:
                hi *= 4.0
            y = _newton_log(
                lambda y: pr.B(y=y) - target,
                lambda y: -1.0 / (y**g - 1.0),
                y0,
                2.0,
                hi,
            )
            return y, False, pr.B(y=y) - target
        tau_hi = 1.0 if y_mu is None or y_mu >= 2.0 else y_mu - 1.0
        tau0 = math.exp(-g * (target - pr.B_two))
        if tau0 == 0.0:
            return 0.0, True, 0.0
        tau_lo = tau0 * 1e-3
        while pr.B(tau=tau_lo) < target:
            tau_lo *= 1e-3
            if tau_lo < 1e-300:
                return 0.0, True, 0.0
        tau = _newton_log(lambda t: pr.B(tau=t) - target, pr.dB_dtau, tau0, tau_lo, tau_hi)
        return tau, True, pr.B(tau=tau) - target
    # increasing branch, y_k in (y_mu, 1)
    target = pr.A(y=y_mu) + a_s
    if target <= pr.A_half:
        y = _newton_log(
            lambda y: pr.A(y=y) - target,
            lambda y: 1.0 / (1.0 - y**g),
            max(y_mu, 1e-300) if y_mu > 0 else a_s,
            max(y_mu, 1e-300),
            0.5,
        )
        return y, False, pr.A(y=y) - target
    tau_hi = 0.5 if y_mu <= 0.5 else 1.0 - y_mu
    tau0 = math.exp(-g * (target - pr.A_half))
    if tau0 == 0.0:
        return 0.0, True, 0.0
    tau_lo = tau0 * 1e-3
    while pr.A(tau=tau_lo) < target:
        tau_lo *= 1e-3
        if tau_lo < 1e-300:
            return 0.0, True, 0.0
    tau = _newton_log(lambda t: pr.A(tau=t) - target, pr.dA_dtau, tau0, tau_lo, tau_hi)
    return tau, True, pr.A(tau=tau) - target


def kappa_solve(a: float, lam: float, mu, p: ModelParams) -> KappaSolution:
    """kappa_a(lambda, mu): joint cumulant of (m(B(rho, a)), <l^a>) under N.

    Solves int_mu^kappa du / (lambda - u^gamma) = a.  `mu` may be MU_INF.
    The reported residual is the scaled equation residual; the solution is
    accurate to a few ulps relative to the fixed point lambda^(1/gamma).
    """
    if not a > 0:
        raise DomainError(f"level must be positive, got {a!r}")
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam!r}")
    inf = _is_inf(mu)
    if not inf and mu < 0:
        raise DomainError(f"mu must be >= 0, got {mu!r}")
    g = p.gamma
    if lam == 0:
        return KappaSolution(a, lam, MU_INF if inf else mu, cumulant_u(a, MU_INF if inf else mu, p), 0.0)
    s = lam ** (1.0 / g)
    if not inf and mu == s:
        return KappaSolution(a, lam, mu, s, 0.0)
    pr = _prims(g)
    a_s = a * s ** (g - 1.0)
    y_mu = None if inf else mu / s
    sol, is_tau, resid = _kappa_scaled(a_s, y_mu, pr)
    if is_tau:
        above = inf or y_mu > 1.0
        value = s * (1.0 + sol) if above else s * (1.0 - sol)
    else:
        value = s * sol
    if abs(resid) > 1e-10 * max(1.0, abs(a_s)):
        raise SolverError("kappa residual above tolerance", resid)
    return KappaSolution(a, lam, MU_INF if inf else mu, value, resid / s ** (g - 1.0))


# ---------------------------------------------------------------------------
# Tail asymptotics, gauges, Chernoff
# ---------------------------------------------------------------------------


def tail_asymptotics(kind: str, x: float, p: ModelParams, c: float = 0.0) -> float:
    """Leading-order tails of <l^1> and m(B(rho, 1+c)) under N_1.

    kind: 'lt_left'  -> P(<l^1> <= x) ~ x^(g-1) / ((g-1)^2 Gamma(g))
          'lt_right' -> P(<l^1> >= x) ~ -x^(-g) / (v(1) Gamma(1-g))
          'mass_right' -> P(m >= x) ~ -(1+c)^(g+1) x^(-g) / ((g+1) v(1) Gamma(1-g))
    """
    if not x > 0:
        raise DomainError(f"x must be positive, got {x!r}")
    g = p.gamma
    if kind == "lt_left":
        return x ** (g - 1.0) / ((g - 1.0) ** 2 * math.gamma(g))
    if kind not in ("lt_right", "mass_right"):
        raise DomainError(f"unknown tail kind {kind!r}")
    if p.is_quadratic:
        raise DomainError("right tails are exponential at gamma = 2 (Gamma(1-gamma) has a pole)")
    v1 = extinction_intensity(1.0, p)
    base = -(x ** (-g)) / (v1 * math.gamma(1.0 - g))
    if kind == "lt_right":
        return base
    if c < 0:
        raise DomainError(f"window extension c must be >= 0, got {c!r}")
    return base * (1.0 + c) ** (g + 1.0) / (g + 1.0)


def gauges(kind: str, r: float, p: ModelParams | None = None) -> float:
    """Gauge functions of the small-ball estimates and the log gauges.

    g_gamma(r)  = r^(g/(g-1)) / (log log 1/r)^(g/(g-1))
    f_gamma(r)  = r^(g/(g-1)) / (log 1/r)^(g/(g-1))
    log_g(r)    = 1 / log(1/r)
    loglog_h(r) = 1 / log log(1/r)
    """
    if not 0.0 < r < 1.0:
        raise DomainError(f"radius must lie in (0, 1), got {r!r}")
    if kind == "log_g":
        return 1.0 / math.log(1.0 / r)
    if kind in ("loglog_h", "g_gamma") and not r < math.exp(-1.0):
        raise DomainError(f"{kind} needs r < 1/e, got {r!r}")
    if kind == "loglog_h":
        return 1.0 / math.log(math.log(1.0 / r))
    if p is None:
        raise DomainError(f"{kind} needs model parameters")
    e = p.gamma / (p.gamma - 1.0)
    if kind == "g_gamma":
        return r**e / math.log(math.log(1.0 / r)) ** e
    if kind == "f_gamma":
        return r**e / math.log(1.0 / r) ** e
    raise DomainError(f"unknown gauge {kind!r}")


def chernoff_poisson(lam: float, bound_at: float, side: str) -> float:
    """Chernoff bound e^-lam (e lam)^y y^-y on a Poisson(lam) tail."""
    if lam <= 0:
        raise DomainError(f"rate must be positive, got {lam!r}")
    y = float(bound_at)
    if side == "upper":
        if y < lam:
            raise DomainError("upper bound needs bound_at >= lambda")
    elif side == "lower":
        if y > lam or y < 0:
            raise DomainError("lower bound needs 0 <= bound_at <= lambda")
    else:
        raise DomainError(f"side must be 'upper' or 'lower', got {side!r}")
    if y == 0:
        return math.exp(-lam)
    return math.exp(-lam + y * (1.0 + math.log(lam)) - y * math.log(y))
