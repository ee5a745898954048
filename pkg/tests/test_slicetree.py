import math

import numpy as np
import pytest

from stlab.analytic import DomainError, ModelParams, extinction_intensity
from stlab.slicetree import (BudgetExceeded, SliceTree, ball_profiles, box_exponents, box_masses,
                             branching_counts, grow, level_counts, max_scale_index)


@pytest.fixture
def small():
    # two roots; the second one survives to the top level
    return SliceTree.from_levels(
        ModelParams(1.5), 0.5, 0.5,
        [[], [0, 0, 1], [0, 2], [1]],
        [[1.0, 2.0], [0.5, 0.25, 1.0], [0.1, 0.2], [0.3]],
    )


def test_shape(small):
    assert (small.n_levels, small.n_roots, small.n_nodes) == (4, 2, 8)
    assert small.level_index(1.5) == 2
    with pytest.raises(DomainError):
        small.level_index(1.25)
    assert [r.tolist() for r in small.roots()] == [[0, 1], [0, 0, 1], [0, 1], [1]]
    assert np.allclose(small.aggregates(), [[1, 2], [0.75, 1], [0.1, 0.2], [0, 0.3]])


def test_deepest_and_ancestor(small):
    d = small.deepest()
    assert d[0].tolist() == [2, 3] and d[1].tolist() == [2, 1, 3]
    assert small.ancestor(3, np.array([0]), 3).tolist() == [1]
    with pytest.raises(DomainError):
        small.ancestor(1, np.array([0]), 2)


def test_level_counts(small):
    assert level_counts(small, 0.5, 1.0) == 2
    assert level_counts(small, 0.5, 1.0, per_root=True).tolist() == [1, 1]
    assert level_counts(small, 0.5, 1.5) == 1
    with pytest.raises(DomainError):
        level_counts(small, 0.5, 0.75)


def test_ball_profiles_by_hand(small):
    assert max_scale_index(small, 1) == 1
    assert ball_profiles(small, 1.0, 10).radii.size == 1
    b = ball_profiles(small, 1.0, 10, with_branching=False)
    assert b.all_nodes_used and len(b) == 3
    assert np.allclose(b.ell, [[0.5, 0.75], [0.25, 0.75], [1.0, 1.0]])
    assert np.allclose(b.m, 0.5 * np.array([[0.6, 1.85], [0.25, 1.85], [1.2, 3.5]]))
    assert b.nb is None
    assert branching_counts(small, 1.0, np.arange(3), [0.5]).ravel().tolist() == [1, 1, 0]
    assert b.vertex.tolist() == [2, 3, 4]
    assert len(list(b.profiles())) == 3


def test_branching_counts_threshold(small):
    # at delta' = 2 delta only the off-path subtree that reaches two levels counts
    out = branching_counts(small, 1.5, np.array([0, 1]), [0.5, 1.0])
    assert out.tolist() == [[0, 0], [0, 0]]


def test_box_masses(small):
    assert np.allclose(box_masses(small, 1.5, 0.5), [0.1, 0.2])
    assert np.allclose(np.sort(box_masses(small, 1.0, 1.0)), [0.75, 1.0])
    assert np.allclose(box_exponents(small, 1.5, 0.5), np.log([0.1, 0.2]) / math.log(0.5))
    with pytest.raises(DomainError):
        box_masses(small, 1.0, 1.5)


def test_grow_deterministic_and_poisson(table15):
    p = ModelParams(1.5)
    kw = dict(n_roots=4000, root_mass=0.2)
    t1 = grow(p, 0.125, 0.5, 0.75, table15, np.random.default_rng(8), **kw)
    t2 = grow(p, 0.125, 0.5, 0.75, table15, np.random.default_rng(8), **kw)
    assert all(np.array_equal(a, b) for a, b in zip(t1.mass, t2.mass))
    lam = 0.2 * extinction_intensity(0.125, p)
    per_root = np.bincount(t1.parent[1], minlength=4000)
    assert abs(per_root.mean() - lam) < 4 * math.sqrt(lam / 4000)


def test_budget_keeps_partial_tree(table15):
    with pytest.raises(BudgetExceeded) as ei:
        grow(ModelParams(1.5), 2**-6, 0.5, 1.0, table15, np.random.default_rng(0),
             n_roots=50, root_mass=1.0, budget=500)
    part = ei.value.partial
    assert not part.complete and part.n_nodes <= 500 and part.n_levels >= 1


def test_grow_rejects_bad_grid(table15, rng):
    with pytest.raises(DomainError):
        grow(ModelParams(1.5), 0.3, 0.5, 1.0, table15, rng)
    with pytest.raises(DomainError):
        grow(ModelParams(1.8), 0.25, 0.5, 1.0, table15, rng)
