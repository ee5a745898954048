import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stlab.analytic import (MU_INF, DomainError, ModelParams, chernoff_poisson, cumulant_u,
                            extinction_intensity, gauges, kappa_solve, laplace_Na,
                            mean_local_time, tail_asymptotics)

gammas = st.sampled_from([1.2, 1.3, 1.5, 1.8, 2.0])
levels = st.floats(0.05, 5.0)
mus = st.floats(1e-3, 50.0)


def test_gamma_domain():
    for g in (1.0, 0.5, 2.5):
        with pytest.raises(DomainError):
            ModelParams(g)
    assert ModelParams(2).is_quadratic


def test_extinction_intensity_values():
    assert extinction_intensity(1.0, ModelParams(2.0)) == 1.0
    assert math.isclose(extinction_intensity(1.0, ModelParams(1.5)), 4.0)
    with pytest.raises(DomainError):
        extinction_intensity(0.0, ModelParams(1.5))


def test_u_quadratic_closed_form():
    p = ModelParams(2.0)
    for a, mu in [(1.0, 1.0), (0.5, 3.0), (2.0, 0.1)]:
        assert math.isclose(cumulant_u(a, mu, p), mu / (1 + a * mu), rel_tol=1e-14)


@given(gammas, levels, mus)
def test_u_solves_its_ode(g, a, mu):
    # d/da u_a = -psi(u_a)
    p = ModelParams(g)
    h = 1e-6 * a
    d = (cumulant_u(a + h, mu, p) - cumulant_u(a - h, mu, p)) / (2 * h)
    u = cumulant_u(a, mu, p)
    assert math.isclose(d, -(u**g), rel_tol=1e-5)


@given(gammas, levels, levels, mus)
def test_u_semigroup(g, a, b, mu):
    p = ModelParams(g)
    one = cumulant_u(a + b, mu, p)
    assert math.isclose(cumulant_u(a, cumulant_u(b, mu, p), p), one, rel_tol=1e-10)


@given(gammas, levels)
def test_u_tends_to_v(g, a):
    p = ModelParams(g)
    assert cumulant_u(a, MU_INF, p) == extinction_intensity(a, p)
    big = (1e-6 * (g - 1) * a) ** (-1 / (g - 1))
    assert math.isclose(cumulant_u(a, big, p), extinction_intensity(a, p), rel_tol=1e-5)


@given(gammas, levels, mus)
def test_laplace_identity(g, a, mu):
    p = ModelParams(g)
    lhs = laplace_Na(mu, a, p)
    assert abs(lhs - (1 - cumulant_u(a, mu, p) / extinction_intensity(a, p))) < 1e-12
    assert 0 < lhs < 1


def test_laplace_quadratic_is_exponential():
    p = ModelParams(2.0)
    # <l^1> under N_1 is Exp(1)
    for mu in (0.5, 1.0, 5.0):
        assert math.isclose(laplace_Na(mu, 1.0, p), 1 / (1 + mu), rel_tol=1e-13)
    assert laplace_Na(0.0, 1.0, p) == 1.0


def test_laplace_complex_and_array():
    p = ModelParams(1.5)
    out = laplace_Na(np.array([1.0, 2.0]) + 0j, 1.0, p)
    assert out.dtype.kind == "c"
    assert np.allclose(out.real, laplace_Na(np.array([1.0, 2.0]), 1.0, p))


def test_mean_local_time():
    p = ModelParams(1.5)
    # the heavy right tail makes the difference quotient converge like h**(gamma-1)
    h = 1e-10
    deriv = -(laplace_Na(h, 1.0, p) - 1) / h
    assert math.isclose(deriv, mean_local_time(1.0, p), rel_tol=1e-3)


def test_kappa_quadratic_oracle():
    p = ModelParams(2.0)
    assert abs(kappa_solve(1.0, 1.0, 0.0, p).value - math.tanh(1.0)) < 1e-12
    lam, a, mu = 4.0, 0.7, 0.5
    s = math.sqrt(lam)
    want = s * math.tanh(a * s + math.atanh(mu / s))
    assert math.isclose(kappa_solve(a, lam, mu, p).value, want, rel_tol=1e-12)
    # above the fixed point the solution is a coth
    mu = 5.0
    want = s / math.tanh(a * s + math.atanh(s / mu))
    assert math.isclose(kappa_solve(a, lam, mu, p).value, want, rel_tol=1e-12)


def test_kappa_special_cases():
    p = ModelParams(1.5)
    assert kappa_solve(1.0, 0.0, 2.0, p).value == cumulant_u(1.0, 2.0, p)
    s = 2.0 ** (1 / 1.5)
    assert kappa_solve(3.0, 2.0, s, p).value == s
    assert kappa_solve(1.0, 0.0, MU_INF, p).value == extinction_intensity(1.0, p)
    with pytest.raises(DomainError):
        kappa_solve(1.0, -1.0, 0.0, p)


@settings(max_examples=40, deadline=None)
@given(gammas, st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.01, 10.0),
       st.one_of(st.floats(0.0, 20.0), st.just(MU_INF)))
def test_kappa_semigroup(g, a, b, lam, mu):
    p = ModelParams(g)
    inner = kappa_solve(b, lam, mu, p).value
    two = kappa_solve(a, lam, inner, p).value
    one = kappa_solve(a + b, lam, mu, p).value
    assert math.isclose(two, one, rel_tol=1e-8)


@settings(max_examples=40, deadline=None)
@given(gammas, st.floats(0.1, 3.0), st.floats(0.01, 10.0), st.floats(0.0, 10.0),
       st.floats(0.2, 5.0))
def test_kappa_scaling(g, a, lam, mu, c):
    p = ModelParams(g)
    lhs = kappa_solve(a, c**g * lam, c * mu, p).value
    rhs = c * kappa_solve(a * c ** (g - 1), lam, mu, p).value
    assert math.isclose(lhs, rhs, rel_tol=1e-8)


@settings(max_examples=30, deadline=None)
@given(gammas, st.floats(0.1, 3.0), st.floats(0.01, 10.0), st.floats(0.0, 10.0))
def test_kappa_monotone_towards_fixed_point(g, a, lam, mu):
    p = ModelParams(g)
    s = lam ** (1 / g)
    k = kappa_solve(a, lam, mu, p).value
    assert min(mu, s) - 1e-12 <= k <= max(mu, s) + 1e-12


def test_tail_asymptotics():
    p = ModelParams(1.5)
    right = tail_asymptotics("lt_right", 10.0, p)
    assert math.isclose(right * 10**1.5, 0.0705236979, rel_tol=1e-6)
    assert math.isclose(tail_asymptotics("mass_right", 10.0, p, c=1.0) / tail_asymptotics("mass_right", 10.0, p),
                        2**2.5, rel_tol=1e-12)
    q = ModelParams(2.0)
    assert math.isclose(tail_asymptotics("lt_left", 1e-3, q), 1e-3)
    with pytest.raises(DomainError):
        tail_asymptotics("lt_right", 1.0, q)
    with pytest.raises(DomainError):
        tail_asymptotics("nope", 1.0, p)


def test_gauges():
    p = ModelParams(1.5)
    r = 0.01
    assert math.isclose(gauges("log_g", r), 1 / math.log(100))
    assert math.isclose(gauges("f_gamma", r, p), r**3 / math.log(100) ** 3)
    assert gauges("g_gamma", r, p) > gauges("f_gamma", r, p)
    with pytest.raises(DomainError):
        gauges("loglog_h", 0.5)
    with pytest.raises(DomainError):
        gauges("f_gamma", r)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_chernoff_dominates_poisson(lam):
    for y in range(0, int(5 * lam + 20) + 1):
        if y >= lam:
            assert stats.poisson.sf(y - 1, lam) <= chernoff_poisson(lam, y, "upper") * (1 + 1e-12)
        if y <= lam:
            assert stats.poisson.cdf(y, lam) <= chernoff_poisson(lam, y, "lower") * (1 + 1e-12)


def test_chernoff_domain():
    with pytest.raises(DomainError):
        chernoff_poisson(1.0, 0.5, "upper")
    with pytest.raises(DomainError):
        chernoff_poisson(1.0, 2.0, "lower")
    with pytest.raises(DomainError):
        chernoff_poisson(0.0, 1.0, "upper")


def test_kappa_subnormal_mu():
    p = ModelParams(1.5)
    k = kappa_solve(1.0, 2.0, 5e-324, p).value
    assert math.isclose(k, kappa_solve(1.0, 2.0, 0.0, p).value, rel_tol=1e-12)
