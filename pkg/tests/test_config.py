import pytest
from hypothesis import given, strategies as st

from stlab.config import ConfigError, ExperimentConfig, load, loads, parse_level_set


@given(gamma=st.floats(1.01, 2.0), delta_exp=st.integers(1, 10), extra=st.integers(0, 50),
       seed=st.integers(0, 2**64 - 1), reps=st.integers(1, 100),
       gen=st.sampled_from(["slice", "gw", "both"]), rm=st.floats(0, 10))
def test_round_trip(gamma, delta_exp, extra, seed, reps, gen, rm):
    d = 2.0**-delta_exp
    cfg = ExperimentConfig(gamma=gamma, delta=d, a0=d, horizon=d + extra * d, seed=seed,
                           replicates=reps, generator=gen, root_mass=rm)
    assert loads(cfg.dumps()) == cfg


@pytest.mark.parametrize("key,val", [("gamma", "2.5"), ("delta", "0"), ("horizon", "0.1"),
                                     ("replicates", "0"), ("seed", "-3"), ("level_set", "disk:1"),
                                     ("generator", "tree"), ("gamma", "abc"), ("bogus", "1")])
def test_errors_name_the_key(key, val):
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig().with_overrides({key: val})
    assert ei.value.key == key


def test_horizon_must_sit_on_grid():
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig(delta=0.25, a0=0.5, horizon=0.6)
    assert ei.value.key == "horizon"


def test_file_with_comments(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# run\ngamma = 1.8\nseed=9  # trailing\n\nbudget=1e6\n")
    cfg = load(f)
    assert (cfg.gamma, cfg.seed, cfg.budget) == (1.8, 9, 1_000_000)
    with pytest.raises(ConfigError):
        loads("gamma 1.8")


def test_level_sets():
    assert parse_level_set("singleton:0.5").dim == 0
    assert parse_level_set("interval:0.5:1").dim == 1
    c = parse_level_set("cantor:0.5:1:0.25")
    assert c.ratio == 0.25 and abs(c.dim - 0.5) < 1e-12
    with pytest.raises(ValueError):
        parse_level_set("interval:1")
