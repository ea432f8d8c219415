"""Autonomous DBSCAN over the observed occupancy point process.

Busy cells become points at integer ``(n, k)`` grid indices.  The frequency
axis is compressed by ``delta`` so that distances are comparable across the
two axes, then DBSCAN runs with ``min_points`` from the log of the point count
and ``eps`` from the knee of the sorted ``min_points``-NN distance curve.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import _backend
from .detection import OBSERVED, OccupancyGrid

log = logging.getLogger(__name__)

TIME_FREQUENCY = "time-frequency"
MAPPED = "mapped"
CLUSTERED = "clustered"
REINFORCED = "reinforced"
ESTIMATED = "estimated"
_SPACES = {TIME_FREQUENCY, MAPPED, CLUSTERED, REINFORCED, ESTIMATED}

DEFAULT_DELTA = 0.5
# widens eps a hair so the knee distance itself counts as a neighbour
_EPS_SLACK = 1e-9
# neighbour-graph entries above which dbscan switches to streamed expansion
MAX_EDGES = 10_000_000


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    space: str = TIME_FREQUENCY
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.space not in _SPACES:
            raise ValueError(f"unknown point space {self.space!r}")
        if (self.labels is not None) != (self.space == CLUSTERED):
            raise ValueError("labels are carried by clustered point sets only")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(pts),):
                raise ValueError("one label per point required")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)

    @property
    def n_clusters(self) -> int:
        if self.labels is None or not len(self.labels):
            return 0
        return int(self.labels.max())

    def cluster(self, j: int) -> np.ndarray:
        return self.points[self.labels == j]

    @property
    def noise(self) -> np.ndarray:
        return self.points[self.labels == 0]


@dataclass(frozen=True)
class DbscanParams:
    min_points: int
    eps: float

    def __post_init__(self):
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass(frozen=True)
class Knee:
    value: float
    index: int
    degenerate: bool = False


def grid_to_points(grid: OccupancyGrid) -> PointSet:
    """One point per busy cell, in row-major order."""
    if grid.kind != OBSERVED:
        raise ValueError("point process is built from an observed grid")
    return PointSet(np.argwhere(grid.bits).astype(float), TIME_FREQUENCY)


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def map_to_euclidean(pts: PointSet, delta: float = DEFAULT_DELTA) -> PointSet:
    _check_delta(delta)
    if pts.space != TIME_FREQUENCY:
        raise ValueError("mapping starts from time-frequency points")
    return PointSet(pts.points * (1.0, delta), MAPPED, meta={"delta": delta})


def inverse_map(points, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Undo the frequency compression; returns raw ``(n, k)`` coordinates."""
    _check_delta(delta)
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    return pts.reshape(-1, 2) / (1.0, delta)


def min_points_heuristic(pts) -> int:
    n = len(pts)
    if n == 0:
        raise InsufficientPointsError("no points to cluster")
    return max(1, int(math.floor(math.log(n))))


def knn_distance_curve(pts, mu: int) -> np.ndarray:
    """Ascending distances from every point to its ``mu``-th nearest other point."""
    xy = pts.points if isinstance(pts, PointSet) else np.asarray(pts, dtype=float)
    if mu < 1:
        raise ValueError("mu must be >= 1")
    if len(xy) <= mu:
        raise InsufficientPointsError(f"{len(xy)} points cannot have a {mu}-th neighbour")
    dist, _ = cKDTree(xy).query(xy, k=mu + 1)
    return np.sort(dist[:, mu])


def knee_point(curve) -> Knee:
    """Point of a sorted curve furthest from the chord joining its ends.

    Ties go to the smaller index.  A curve with no curvature returns its
    middle value flagged as degenerate.
    """
    y = np.asarray(curve, dtype=float)
    if y.size < 3:
        raise ValueError("knee detection needs at least 3 points")
    if np.any(np.diff(y) < 0):
        raise ValueError("curve must be non-decreasing")
    x = np.arange(y.size, dtype=float)
    x1, y1 = x[-1], y[-1]
    dy = y1 - y[0]
    # perpendicular distance to the chord through (0, y0) and (x1, y1)
    dist = np.abs(dy * x - x1 * (y - y[0])) / math.hypot(x1, dy)
    # ties within rounding go to the smaller index
    top = dist.max()
    idx = int(np.flatnonzero(dist >= top - 1e-12 * max(1.0, top))[0])
    scale = max(1.0, abs(y1), abs(y[0]))
    if dist[idx] <= 1e-12 * scale:
        mid = y.size // 2
        return Knee(float(y[mid]), mid, degenerate=True)
    return Knee(float(y[idx]), idx)


def neighbor_graph(xy: np.ndarray, eps: float, tree: cKDTree | None = None):
    """CSR adjacency of all pairs within ``eps`` (self excluded), columns sorted."""
    n = len(xy)
    if n == 0:
        return np.zeros(1, np.int64), np.zeros(0, np.int64)
    tree = tree if tree is not None else cKDTree(xy)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    src = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.int64)
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, np.ascontiguousarray(dst)


def neighbor_counts(xy: np.ndarray, eps: float, tree: cKDTree | None = None,
                    chunk: int = 1 << 16) -> np.ndarray:
    """Points within ``eps`` of each point, itself included."""
    tree = tree if tree is not None else cKDTree(xy)
    out = [tree.query_ball_point(xy[i:i + chunk], eps, return_length=True)
           for i in range(0, len(xy), chunk)]
    return np.concatenate(out).astype(np.int64) if out else np.zeros(0, np.int64)


def _expand_streaming(tree, xy, eps, is_core, counts, budget):
    # Same partition as the graph kernel: a cluster is everything reachable
    # from its seed, so the visiting order inside a cluster does not matter.
    n = len(xy)
    labels = np.zeros(n, dtype=np.int64)
    core = is_core.astype(bool)
    current = 0
    for seed in range(n):
        if labels[seed] or not core[seed]:
            continue
        current += 1
        labels[seed] = current
        frontier = np.array([seed])
        while frontier.size:
            grown = []
            ends = np.cumsum(counts[frontier])
            start = 0
            while start < frontier.size:
                base = ends[start - 1] if start else 0
                stop = max(start + 1, int(np.searchsorted(ends, base + budget, "right")))
                nb = tree.query_ball_point(xy[frontier[start:stop]], eps)
                idx = np.unique(np.concatenate([np.asarray(v, dtype=np.int64) for v in nb]))
                idx = idx[labels[idx] == 0]
                labels[idx] = current
                grown.append(idx[core[idx]])
                start = stop
            frontier = np.concatenate(grown)
    return labels


def dbscan(pts, params: DbscanParams, max_edges: int = MAX_EDGES) -> PointSet:
    """Classic DBSCAN; a point's neighbourhood includes the point itself.

    Every input point receives a label: 1..N for clusters in discovery order,
    0 for noise.  When the neighbour graph would exceed ``max_edges`` entries
    the clusters are grown from on-demand range queries instead, which keeps
    memory bounded at the cost of speed.
    """
    xy = pts.points if isinstance(pts, PointSet) else np.asarray(pts, dtype=float).reshape(-1, 2)
    tree = cKDTree(xy) if len(xy) else None
    counts = neighbor_counts(xy, params.eps, tree) if len(xy) else np.zeros(0, np.int64)
    streamed = int(counts.sum()) - len(xy) > max_edges
    if streamed:
        is_core = counts >= params.min_points
        log.info("dbscan: %d neighbour pairs exceed the graph budget; streaming",
                 int(counts.sum()) - len(xy))
        labels = _expand_streaming(tree, xy, params.eps, is_core, counts, max_edges)
    else:
        indptr, indices = neighbor_graph(xy, params.eps, tree)
        counts = np.diff(indptr) + 1
        is_core = np.ascontiguousarray((counts >= params.min_points).astype(np.uint8))
        labels = np.asarray(_backend.expand_clusters(indptr, indices, is_core))
    meta = dict(pts.meta) if isinstance(pts, PointSet) else {}
    meta.update(min_points=params.min_points, eps=params.eps, n_core=int(is_core.sum()),
                streamed=streamed)
    return PointSet(xy, CLUSTERED, labels=labels, meta=meta)


def auto_cluster(grid: OccupancyGrid, delta: float = DEFAULT_DELTA) -> PointSet:
    """Parameter-free clustering of an observed grid.

    Returns points in the mapped plane with labels; ``meta`` records the
    chosen ``min_points``, ``eps`` and ``delta``.
    """
    mapped = map_to_euclidean(grid_to_points(grid), delta)
    n = len(mapped)
    if n < 3:
        return PointSet(mapped.points, CLUSTERED, labels=np.zeros(n, np.int64),
                        meta={"delta": delta, "min_points": None, "eps": None, "n_points": n})
    mu = min_points_heuristic(mapped)
    curve = knn_distance_curve(mapped, mu)
    knee = knee_point(curve)
    eps = knee.value
    if eps <= 0:
        positive = curve[curve > 0]
        eps = float(positive[0]) if positive.size else 1.0
    eps *= 1.0 + _EPS_SLACK
    result = dbscan(mapped, DbscanParams(mu, eps))
    meta = dict(result.meta, delta=delta, n_points=n, knee_index=knee.index,
                knee_degenerate=knee.degenerate)
    log.debug("auto_cluster: %d points, mu=%d, eps=%.4g, %d clusters", n, mu, eps,
              result.n_clusters)
    return replace(result, meta=meta)
