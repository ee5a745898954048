import math

import numpy as np
import pytest

from stlab.analytic import DomainError, ModelParams, extinction_intensity
from stlab.csbp import (CsbpPath, HypothesisError, c_gamma0, csbp_path, csbp_paths, csbp_step,
                        default_grid, infimum_bound, infimum_bound_alt, laplace_check,
                        low_mass_bound, path_functionals, recovery_bound, recovery_c2,
                        sample_root_ball_masses, verify_tail_bounds)


def test_zero_is_absorbing(table15, rng):
    assert csbp_step(0.0, 0.5, table15, rng) == 0.0
    with pytest.raises(DomainError):
        CsbpPath(0.1, [1.0, 0.0, 0.5])
    with pytest.raises(DomainError):
        csbp_step(-1.0, 0.5, table15, rng)
    with pytest.raises(DomainError):
        csbp_path(1.0, 0.3, 0.25, table15, rng)


def test_step_counts_are_poisson(table15, rng):
    p = ModelParams(1.5)
    out, counts = csbp_step(np.full(50_000, 2.0), 0.5, table15, rng, return_counts=True)
    lam = 2.0 * extinction_intensity(0.5, p)
    assert abs(counts.mean() - lam) < 4 * math.sqrt(lam / counts.size)
    assert np.all((out == 0) == (counts == 0))


def test_path_shape_and_levels(table15, rng):
    path = csbp_path(1.0, 1.0, 0.125, table15, rng)
    assert path.values.size == 9 and path.values[0] == 1.0
    assert np.allclose(path.levels, np.arange(9) * 0.125)
    batch = csbp_paths([1.0, 0.0, 3.0], 4, 0.25, table15, rng)
    assert batch.shape == (3, 5) and np.all(batch[1] == 0)


def test_laplace_transform_of_one_step(table15):
    rows = laplace_check(ModelParams(1.5), table15, 1.0, 0.5, [0.5, 2.0, 8.0], 100_000,
                         np.random.default_rng(4))
    for mu, mc, se, exact in rows:
        assert abs(mc - exact) < 4 * se + 1e-4


def test_path_functionals():
    f = path_functionals([1.0, 0.5, 2.5, 0.7, 3.0, 0.2], 1.0, window=3)
    assert (f.sup, f.inf, f.theta, f.post_inf) == (3.0, 0.2, 2, 0.7)
    g = path_functionals([1.0, 0.5], 1.0)
    assert math.isinf(g.theta) and math.isnan(g.post_inf)


def test_bound_formulas():
    p = ModelParams(1.5)
    x, d = 2.0, 0.5
    assert math.isclose(infimum_bound(x, 0.0, d, p), math.exp(-x * extinction_intensity(d, p)))
    assert infimum_bound(x, 1.0, d, p) > infimum_bound(x, 0.5, d, p)
    # the alternative closed form is never below the corrected one
    for y in (0.1, 0.5, 1.5):
        assert infimum_bound_alt(x, y, d, p) <= infimum_bound(x, y, d, p) + 1e-15
    assert math.isclose(recovery_bound(1.0, 1.0, p),
                        infimum_bound(2.0, 1.0, 1.0, p), rel_tol=1e-12)
    assert 0 < recovery_c2(p) < 1
    assert low_mass_bound(1.0, 1.0, p) == math.exp(-c_gamma0(p))


def test_infimum_bound_is_the_optimised_martingale_bound():
    p = ModelParams(1.5)
    x, y, d = 2.0, 0.7, 0.5
    g1 = p.gamma - 1

    def obj(mu):
        return y * (mu - g1 * d) ** (-1 / g1) - x * mu ** (-1 / g1)

    mus = g1 * d + np.geomspace(1e-6, 1e3, 200_001)
    assert math.isclose(math.exp(obj(mus).min()), infimum_bound(x, y, d, p), rel_tol=1e-6)


@pytest.mark.parametrize("bound", ["low_mass", "infimum", "recovery"])
def test_bounds_dominate(table15, bound):
    rows = verify_tail_bounds(ModelParams(1.5), bound, table15, np.random.default_rng(9),
                              replicates=3000, substeps=4)
    assert rows and all(r.passed for r in rows)
    assert all(r.kind == bound for r in rows)


def test_sup_growth_reports_fitted_constant(table15):
    rows = verify_tail_bounds(ModelParams(1.5), "sup_growth", table15, np.random.default_rng(2),
                              replicates=2000, substeps=4)
    assert all("fitted_C" in r.extra for r in rows)
    assert default_grid("sup_growth", ModelParams(2.0)) == []


def test_hypothesis_violations(table15, rng):
    p = ModelParams(1.5)
    with pytest.raises(HypothesisError):
        verify_tail_bounds(p, "infimum", table15, rng, grid=[dict(x=1.0, y=2.0, delta=1.0)])
    with pytest.raises(HypothesisError):
        verify_tail_bounds(p, "low_mass", table15, rng, grid=[dict(x=1.0, rho=1.0, delta=1.0)])
    with pytest.raises(DomainError):
        verify_tail_bounds(ModelParams(1.8), "infimum", table15, rng)
    with pytest.raises(DomainError):
        default_grid("bogus", p)


def test_root_ball_masses(table15):
    m = sample_root_ball_masses(ModelParams(1.5), table15, 2000, c_values=(0.0, 1.0),
                                delta=0.25, rng=np.random.default_rng(3))
    assert m.shape == (2, 2000)
    assert np.all(m[1] >= m[0]) and np.all(m[0] > 0)
    with pytest.raises(DomainError):
        sample_root_ball_masses(ModelParams(1.5), table15, 10, delta=0.3)
