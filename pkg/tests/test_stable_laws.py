import math

import numpy as np
import pytest
from scipy import stats

from stlab.analytic import DomainError, ModelParams, mean_local_time, tail_asymptotics
from stlab.stable_laws import (TableBuildError, get_table, load_table, offspring, sample_local_time,
                               sample_offspring, save_table, table_cache_name, tail_corrected_mean)


@pytest.fixture(scope="module")
def table2():
    return get_table(ModelParams(2.0))


def test_quadratic_table_is_exponential(table2):
    x = np.array([1e-3, 0.1, 0.5, 1.0, 3.0, 10.0, 30.0])
    assert np.allclose(table2.cdf(x), -np.expm1(-x), rtol=1e-6, atol=1e-12)
    assert np.allclose(table2.sf(x), np.exp(-x), rtol=1e-5)
    u = np.array([1e-8, 0.01, 0.5, 0.99])
    assert np.allclose(table2.quantile(u), -np.log1p(-u), rtol=1e-5)


def test_table_tails_match_asymptotics(table15, p15):
    # the left correction decays like x**(1 - 1/gamma)
    x = 1e-10
    assert math.isclose(table15.cdf(x)[0], tail_asymptotics("lt_left", x, p15), rel_tol=1e-3)
    x = 1e6
    assert math.isclose(table15.sf(x)[0], tail_asymptotics("lt_right", x, p15), rel_tol=1e-3)
    assert math.isclose(table15.mean(), mean_local_time(1.0, p15), rel_tol=1e-4)


def test_cdf_sf_quantile_consistent(table15):
    x = np.geomspace(1e-4, 1e4, 41)
    assert np.allclose(table15.cdf(x) + table15.sf(x), 1.0, atol=1e-9)
    assert np.all(np.diff(table15.cdf(x)) > 0)
    u = table15.cdf(x)
    assert np.allclose(table15.quantile(u, table15.sf(x)), x, rtol=1e-4)


def test_samples_pass_ks(table15):
    rng = np.random.default_rng(5)
    xs = table15.sample(rng, 20000)
    assert stats.kstest(xs, lambda t: table15.cdf(t)).pvalue > 1e-3


def test_scaled_sampling_and_domain(table15):
    rng = np.random.default_rng(1)
    a = 0.25
    xs = sample_local_time(table15, a, rng, 20000) / a**2
    assert stats.kstest(xs, lambda t: table15.cdf(t)).pvalue > 1e-3
    assert isinstance(sample_local_time(table15, 1.0, rng), float)
    with pytest.raises(DomainError):
        sample_local_time(table15, 0.0, rng)


def test_tail_corrected_mean(table15, p15):
    rng = np.random.default_rng(11)
    xs = sample_local_time(table15, 1.0, rng, 400_000)
    est, se = tail_corrected_mean(xs, 1.5, tail_asymptotics("lt_right", 1.0, p15))
    assert abs(est - 0.25) < 3 * se + 2e-3
    e2, _ = tail_corrected_mean(np.random.default_rng(2).exponential(size=200_000), 2.0, None)
    assert abs(e2 - 1.0) < 0.01


def test_cache_round_trip(tmp_path, table15, p15):
    path = tmp_path / table_cache_name(1.5, 1024)
    save_table(table15, path)
    back = load_table(path)
    assert back.fingerprint() == table15.fingerprint()
    again = get_table(p15, cache_dir=tmp_path)
    assert again.fingerprint() == table15.fingerprint()


def test_table_rejects_unsorted_nodes(table15):
    from stlab.stable_laws import LocalTimeLawTable

    with pytest.raises(TableBuildError):
        LocalTimeLawTable(1.5, table15.log_x[::-1], table15.log_F, table15.log_S)


@pytest.mark.parametrize("g", [1.2, 1.5, 1.8, 2.0])
def test_offspring_law(g):
    law = offspring(ModelParams(g))
    total = law.probs.sum() + law.tail_mass
    assert abs(total - 1.0) < 1e-12
    if g < 2:
        assert math.isclose(law.probs[0], 1 / g) and law.probs[1] == 0.0
        ks = np.array([1, 5, 50])
        surv = 1 - np.cumsum(law.probs)[ks]
        assert np.allclose(np.exp(law.log_survival(ks)), surv, rtol=1e-9)


def test_offspring_sampling_mean_and_tail():
    law = offspring(ModelParams(1.5), K=64)
    rng = np.random.default_rng(3)
    x = sample_offspring(law, rng, 400_000)
    assert x.min() >= 0 and (x == 1).sum() == 0
    assert abs(np.mean(x == 0) - 2 / 3) < 0.005
    # beyond K the exact survival function is used
    k = 200
    want = math.exp(law.log_survival(k))
    assert abs(np.mean(x > k) - want) < 4 * math.sqrt(want / x.size)
    assert isinstance(sample_offspring(law, rng), int)


def test_geometric_offspring():
    law = offspring(ModelParams(2.0))
    x = sample_offspring(law, np.random.default_rng(0), 100_000)
    assert abs(x.mean() - 1.0) < 0.02
    assert np.allclose(law.pmf(np.arange(3)), [0.5, 0.25, 0.125])
