import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iotsense.clustering import (CLUSTERED, InsufficientPointsError, DbscanParams, PointSet,
                                 auto_cluster, dbscan, grid_to_points, inverse_map,
                                 knee_point, knn_distance_curve, map_to_euclidean,
                                 min_points_heuristic)
from iotsense.detection import binarize

from oracles import brute_dbscan, brute_knee_index, brute_knn_curve, same_partition


def grid(bits):
    return binarize(np.asarray(bits, dtype=float), 0.5)


def test_grid_to_points():
    assert len(grid_to_points(grid(np.zeros((4, 4))))) == 0
    g = np.zeros((8, 6))
    g[0, 0] = g[5, 3] = 1
    assert grid_to_points(grid(g)).points.tolist() == [[0, 0], [5, 3]]


def test_mapping_and_inverse():
    pts = PointSet([[2, 4], [7, 1]])
    mapped = map_to_euclidean(pts, 0.5)
    assert mapped.points.tolist() == [[2, 2], [7, 0.5]]
    np.testing.assert_array_equal(inverse_map(mapped, 0.5), pts.points)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            map_to_euclidean(pts, bad)


def test_min_points_values():
    assert min_points_heuristic(np.zeros((1000, 2))) == 6
    assert min_points_heuristic(np.zeros((2, 2))) == 1
    assert min_points_heuristic(np.zeros((148, 2))) == 4
    with pytest.raises(InsufficientPointsError):
        min_points_heuristic(np.zeros((0, 2)))


def test_knn_small_cases():
    np.testing.assert_array_equal(knn_distance_curve([[0, 0], [1, 0], [2, 0]], 1), [1, 1, 1])
    lattice = np.argwhere(np.ones((10, 10))).astype(float)
    assert np.all(knn_distance_curve(lattice, 1) == 1)
    with pytest.raises(InsufficientPointsError):
        knn_distance_curve([[0, 0], [1, 1]], 2)


def test_knn_matches_brute_force():
    xy = np.random.default_rng(0).uniform(0, 100, (500, 2))
    np.testing.assert_allclose(knn_distance_curve(xy, 4), brute_knn_curve(xy, 4), rtol=0, atol=1e-12)


def test_knee_examples():
    step = [0.0] * 9 + [10.0]
    k = knee_point(step)
    assert k.index == 8 and k.value == 0.0
    line = knee_point([1, 2, 3, 4, 5])
    assert line.degenerate and line.value == 3
    const = knee_point([2, 2, 2, 2])
    assert const.degenerate and const.value == 2
    curve = [1, 1, 1, 1, 2, 4, 8, 16]
    assert knee_point(curve).index == brute_knee_index(curve)[0]
    with pytest.raises(ValueError):
        knee_point([3, 2, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=3, max_size=60))
def test_knee_matches_exhaustive(vals):
    curve = np.sort(vals)
    k = knee_point(curve)
    i, d = brute_knee_index(curve)
    if not k.degenerate:
        assert k.index == i


def test_dbscan_two_blocks():
    eps = 1.5
    a = np.argwhere(np.ones((5, 5))).astype(float)
    b = a + (0, 4 + 10 * eps)
    out = dbscan(np.vstack([a, b]), DbscanParams(4, eps))
    assert out.n_clusters == 2 and not (out.labels == 0).any()


def test_dbscan_noise_point():
    eps, mu = 1.0, 5
    pts = np.column_stack([np.linspace(0, 0.5, mu), np.zeros(mu)])
    pts = np.vstack([pts, [[100.0, 0.0]]])
    out = dbscan(pts, DbscanParams(mu, eps))
    assert out.n_clusters == 1
    assert out.labels.tolist() == [1] * mu + [0]


def test_dbscan_matches_oracle_and_streaming():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n = int(rng.integers(5, 250))
        xy = np.round(rng.uniform(0, 20, (n, 2)) * 2) / 2
        mu, eps = int(rng.integers(1, 6)), float(rng.uniform(0.5, 3))
        ref, _ = brute_dbscan(xy, mu, eps)
        fast = dbscan(xy, DbscanParams(mu, eps))
        assert same_partition(fast.labels, ref)
        streamed = dbscan(xy, DbscanParams(mu, eps), max_edges=0)
        assert streamed.meta["streamed"] or n < 2
        np.testing.assert_array_equal(streamed.labels, fast.labels)


def test_dbscan_invariances():
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 30, (200, 2))
    params = DbscanParams(3, 2.0)
    base = dbscan(xy, params).labels
    perm = rng.permutation(len(xy))
    assert same_partition(dbscan(xy[perm], params).labels, base[perm])
    scaled = dbscan(xy * 3.0, DbscanParams(3, 6.0)).labels
    assert same_partition(scaled, base)


def test_auto_cluster_empty_and_tiny():
    out = auto_cluster(grid(np.zeros((20, 20))))
    assert out.space == CLUSTERED and len(out) == 0 and out.n_clusters == 0
    g = np.zeros((20, 20))
    g[3, 3] = g[10, 10] = 1
    out = auto_cluster(grid(g))
    assert out.n_clusters == 0 and out.labels.tolist() == [0, 0]


def test_auto_cluster_single_frame():
    g = np.zeros((200, 60))
    g[50:90, 20:25] = 1
    out = auto_cluster(grid(g))
    assert out.n_clusters == 1
    assert not (out.labels == 0).any()
    assert out.meta["min_points"] == 5 and out.meta["eps"] > 0
