import math

import numpy as np
import pytest

from stlab import verify
from stlab.analytic import ModelParams
from stlab.config import ExperimentConfig
from stlab.stable_laws import LocalTimeLawTable, get_table, save_table, table_cache_name


def test_profile_scaling():
    trim, desk = verify.Profile("trim"), verify.Profile("desk")
    assert trim.n(100_000) == 10_000 and desk.n(100_000) == 100_000
    assert trim.n(500) == 100
    assert math.isclose(trim.widen(0.1), 0.1 * math.sqrt(10)) and desk.widen(0.1) == 0.1


def test_trim_closed_forms_and_sampler():
    cfg = ExperimentConfig(profile="trim")
    rep = verify.verify_all(cfg, only=[1, 2, 3])
    assert rep["schema"] == verify.SCHEMA and rep["profile"] == "trim"
    assert [c["id"] for c in rep["criteria"]] == [1, 2, 3]
    assert rep["overall"], [c for c in rep["criteria"] if not c["pass"]]


def test_corrupted_law_cache_is_caught(tmp_path):
    good = get_table(ModelParams(1.5))
    bad = LocalTimeLawTable(1.5, good.log_x + 0.3, good.log_F, good.log_S)
    save_table(bad, tmp_path / table_cache_name(1.5, 1024))
    cfg = ExperimentConfig(profile="trim", law_cache=str(tmp_path))
    res = verify.run_criterion(3, cfg)
    assert not res.passed
    failing = res.details["failing"]
    assert failing and {f["gamma"] for f in failing} == {1.5}
    assert all(f["mu"] in (0.5, 1.0, 2.0, 5.0) for f in failing)


def test_crash_becomes_error_entry(monkeypatch):
    def boom(cfg, prof):
        raise RuntimeError("stage exploded")

    monkeypatch.setitem(verify.CRITERIA, 4, boom)
    res = verify.run_criterion(4, ExperimentConfig())
    assert not res.passed and res.error == "RuntimeError: stage exploded"
    assert "traceback" in res.details and res.line().startswith("[FAIL] criterion  4")


def test_helpers():
    rng = np.random.default_rng(0)
    x = np.sort(rng.pareto(1.5, 200_000) + 1.0)
    right, _ = verify.tail_slopes(x)
    assert abs(right + 1.5) < 0.1
    res, bins = verify.poisson_gof(rng.poisson(3.0, 5000), 3.0)
    assert res.pvalue > 1e-3 and bins >= 8


def test_kappa_coefficients_quadratic_oracle():
    # at gamma = 2: sqrt(l) tanh(a sqrt(l)) = a l - a^3 l^2 / 3 + ..., coth gives 1 + l/3 + ...
    c = verify.kappa_coefficients(ModelParams(2.0))
    assert math.isclose(c["inf"], 1 / 3, rel_tol=1e-3)
    assert math.isclose(c["c0"], -1 / 3, rel_tol=1e-3)
    assert math.isclose(c["c1"], -8 / 3, rel_tol=1e-3)
