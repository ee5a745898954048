import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stlab.analytic import DomainError, ModelParams
from stlab.gwtree import (HeightPath, MetricTree, PlaneTree, RejectionBudgetError, calibrate,
                          contour, d_H, generation_sizes, height_path, measures, multiplicity,
                          n_b, reroot, sample_gw, survival_probs, tree_from_height, upcrossings)
from stlab.stable_laws import offspring


@pytest.fixture(scope="module")
def law15():
    return offspring(ModelParams(1.5))


@pytest.fixture(scope="module")
def big_tree(law15):
    trees, _ = sample_gw(law15, np.random.default_rng(21), 400, eps=0.5)
    return trees[0]


def test_from_offspring():
    t = PlaneTree.from_offspring([2, 0, 0])
    assert t.parent.tolist() == [-1, 0, 0] and t.depth.tolist() == [0, 1, 1]
    assert contour(t).tolist() == [0, 1, 0, 1, 0]
    chain = PlaneTree.from_offspring([1, 1, 0])
    assert contour(chain).tolist() == [0, 1, 2, 1, 0] and chain.height == 2
    for bad in ([1, 0, 0], [0, 1], []):
        with pytest.raises(DomainError):
            PlaneTree.from_offspring(bad)


def test_tree_from_height_by_hand():
    mt = tree_from_height(HeightPath(1.0, np.array([0, 1, 2, 1, 2, 1, 0])))
    assert mt.parent.tolist() == [-1, 0, 1, 1]
    assert mt.height.tolist() == [0, 1, 2, 2]
    assert mt.time_vertex.tolist() == [0, 1, 2, 1, 3, 1, 0]
    assert mt.degree.tolist() == [1, 3, 1, 1]
    assert mt.distance(2, 3) == 2.0
    with pytest.raises(DomainError):
        HeightPath(1.0, np.array([0, 1, 1]))


def test_path_distance_matches_tree(big_tree):
    hp = height_path(big_tree)
    mt = tree_from_height(hp)
    tv = mt.time_vertex
    rng = np.random.default_rng(0)
    for s, t in rng.integers(0, hp.values.size, size=(200, 2)):
        assert math.isclose(d_H(hp.values, s, t), mt.distance(tv[s], tv[t]), abs_tol=1e-12)
    # every vertex of the plane tree appears in the metric tree
    assert mt.n == big_tree.n


def test_reroot_preserves_distances(big_tree):
    mt = tree_from_height(height_path(big_tree))
    assert reroot(mt, mt.root) is mt
    s = int(np.argmax(mt.height))
    rt = reroot(mt, s)
    assert rt.root == s and rt.height[s] == 0
    rng = np.random.default_rng(1)
    for u, v in rng.integers(0, mt.n, size=(100, 2)):
        assert math.isclose(rt.distance(u, v), mt.distance(u, v), abs_tol=1e-12)


def _fork():
    # stem of length 1 from the root, then two branches of length 10
    return MetricTree(np.array([-1, 0, 1, 1]), np.array([0.0, 1, 10, 10]),
                      np.array([0.0, 1, 11, 11]), 0)


def test_n_b_is_not_monotone_in_delta():
    mt = _fork()
    assert n_b(mt, 0, 0.5) == 1
    assert n_b(mt, 0, 2.0) == 2
    assert multiplicity(mt, 0) == 1 and multiplicity(mt, 1) == 3


def test_n_b_monotone_in_threshold(big_tree):
    mt = tree_from_height(height_path(big_tree, c_h=0.05))
    s = int(np.flatnonzero(mt.is_leaf)[3])
    counts = [n_b(mt, s, 0.3, threshold=t) for t in (0.0, 0.1, 0.3, 0.6, 1.2)]
    assert counts == sorted(counts, reverse=True)
    assert [n_b(_fork(), 0, 2.0, threshold=t) for t in (5.0, 9.5)] == [2, 0]


def test_max_degree_grows_with_heavier_tail():
    rng = np.random.default_rng(4)
    d15 = [t.children.max() for t in sample_gw(offspring(ModelParams(1.5)), rng, 2000, count=5)[0]]
    d2 = [t.children.max() for t in sample_gw(offspring(ModelParams(2.0)), rng, 2000, count=5)[0]]
    assert np.median(d15) > 2 * np.median(d2)


def test_survival_probs(law15):
    q = survival_probs(law15, 50)
    assert q[0] == 1.0 and math.isclose(q[1], 1 - 1 / 1.5)
    assert np.all(np.diff(q) < 0)
    geo = survival_probs(offspring(ModelParams(2.0)), 30)
    assert np.allclose(geo, 1.0 / (np.arange(31) + 1.0))


def test_calibration(law15):
    cal = calibrate(ModelParams(1.5), law15, 64)
    assert cal.a[64] == 1.0 and cal.q.size == 129
    assert np.all(np.diff(cal.a) > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_upcrossings_count_generations(seed):
    rng = np.random.default_rng(seed)
    trees, _ = sample_gw(offspring(ModelParams(1.5)), rng, 30, eps=2.0)
    t = trees[0]
    c = contour(t)
    Z = np.bincount(t.depth)
    for k in range(1, Z.size):
        assert upcrossings(c, k) == Z[k]


def test_sample_gw_window(law15):
    trees, rate = sample_gw(law15, np.random.default_rng(3), 200, eps=0.1, count=4)
    assert all(200 <= t.n <= 220 for t in trees) and 0 < rate <= 1
    with pytest.raises(RejectionBudgetError) as ei:
        sample_gw(law15, np.random.default_rng(3), 10**6, max_draws=5000, chunk=1000)
    assert ei.value.acceptance_rate == 0.0


def test_measures(big_tree):
    hp = height_path(big_tree)
    mt = tree_from_height(hp)
    m = measures(mt, hp, levels=[1, 2], c_l=2.0)
    assert math.isclose(m["mass"].sum(), 1.0)
    Z = np.bincount(big_tree.depth)
    assert m["local_time"].tolist() == [2.0 * Z[1], 2.0 * Z[2]]


def test_generation_sizes_are_critical(law15):
    Z = generation_sizes(law15, np.random.default_rng(6), 200_000, 3)
    assert np.all(Z[:, 0] == 1)
    assert abs(Z[:, 1].mean() - 1.0) < 0.05
