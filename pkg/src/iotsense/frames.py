"""From labelled clusters to rectangular frames and the estimated occupancy.

Each cluster is boxed per axis with a Tukey-style fence of full extent
``kappa * IQR`` centred between the quartiles.  Points outside the box are
outliers; the box itself is then filled cell by cell (reinforcement), so a
frame with missed detections inside it comes back solid.

A box survives only if it holds more busy cells than a random set of
cells of the same size would (one-sided Fisher test against the rest of
the grid, p-value below ``alpha``).  Without this, sparse noise on an empty channel is clustered
at a huge knee distance and boxed into giant frames.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import hypergeom

from .clustering import CLUSTERED, DEFAULT_DELTA, PointSet, inverse_map
from .detection import ESTIMATED, OccupancyGrid

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 2.0
DEFAULT_ALPHA = 1e-6
_TOL = 1e-9


class EmptyClusterWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in index coordinates: ``center +- extent / 2``."""

    center: np.ndarray
    extent: np.ndarray
    degenerate: bool = False

    @property
    def low(self):
        return self.center - self.extent / 2.0

    @property
    def high(self):
        return self.center + self.extent / 2.0


@dataclass(frozen=True)
class Frame:
    cluster_id: int
    row0: int
    row1: int  # inclusive
    col0: int
    col1: int  # inclusive
    t_center: float
    f_center: float
    toa: float
    bandwidth: float
    point_count: int

    @property
    def rows(self) -> int:
        return self.row1 - self.row0 + 1

    @property
    def cols(self) -> int:
        return self.col1 - self.col0 + 1

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    def as_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "t_center_s": self.t_center,
            "f_center_hz": self.f_center,
            "toa_s": self.toa,
            "bandwidth_hz": self.bandwidth,
            "point_count": self.point_count,
            "row0": self.row0,
            "row1": self.row1,
            "col0": self.col0,
            "col1": self.col1,
        }


@dataclass
class FrameSet:
    frames: list
    dt: float
    df: float
    time_span: float
    shape: tuple = (0, 0)
    t0: float = 0.0
    f0: float = 0.0
    overlaps: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def toa(self) -> np.ndarray:
        return np.array([f.toa for f in self.frames])

    @property
    def bandwidth(self) -> np.ndarray:
        return np.array([f.bandwidth for f in self.frames])


def _cell_quantiles(x: np.ndarray, qs, cell: float) -> np.ndarray:
    # each point spread uniformly over its cell; invert the piecewise-linear CDF
    values, counts = np.unique(x, return_counts=True)
    h = cell / 2.0
    knots = np.unique(np.concatenate([values - h, values + h]))
    # CDF at x: cells wholly below x plus the covered share of cells straddling x
    rel = values - values[0]
    cs = np.concatenate([[0.0], np.cumsum(counts, dtype=float)])
    cv = np.concatenate([[0.0], np.cumsum(counts * rel)])
    a = np.searchsorted(values, knots - h + _TOL, side="right")
    b = np.searchsorted(values, knots + h - _TOL, side="left")
    pos = knots - values[0]
    cdf = (cs[a] + ((cs[b] - cs[a]) * (pos + h) - (cv[b] - cv[a])) / cell) / cs[-1]
    cdf = np.round(cdf, 12)
    qs = np.asarray(qs, dtype=float)
    # a q that lands on a flat stretch maps to the middle of the stretch
    return 0.5 * (_invert(cdf, knots, qs, "left") + _invert(cdf, knots, qs, "right"))


def _invert(cdf, knots, qs, side):
    i = np.clip(np.searchsorted(cdf, qs, side=side), 1, knots.size - 1)
    lo, hi = cdf[i - 1], cdf[i]
    w = np.clip((qs - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
    return knots[i - 1] + w * (knots[i] - knots[i - 1])


def axis_extent(coords, kappa: float = DEFAULT_KAPPA, cell: float | None = None):
    """``(extent, center, degenerate)`` of one coordinate axis.

    With ``cell=None`` quartiles interpolate linearly between order
    statistics.  With a cell size, each point is treated as covering its
    grid cell, so a solid run of ``K`` cells has extent exactly ``K`` cells
    at ``kappa = 2``.  A zero IQR yields a one-cell extent flagged degenerate.
    """
    x = np.asarray(coords, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty cluster")
    if cell is None:
        q1, q3 = np.quantile(x, [0.25, 0.75])
    else:
        q1, q3 = _cell_quantiles(x, [0.25, 0.75], cell)
    extent = kappa * (q3 - q1)
    center = 0.5 * (q1 + q3)
    if extent <= 0:
        return (cell or 1.0), center, True
    return extent, center, False


def tukey_bounds(points, kappa: float = DEFAULT_KAPPA, cell=None) -> Bounds:
    """Per-axis fence box of a cluster given as ``(n, 2)`` coordinates."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    cells = (None, None) if cell is None else np.broadcast_to(np.asarray(cell, float), (2,))
    ext, cen, deg = zip(*(axis_extent(pts[:, a], kappa, cells[a]) for a in range(2)))
    return Bounds(np.array(cen), np.array(ext), degenerate=any(deg))


def filter_outliers(points, bounds: Bounds) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.all((pts >= bounds.low - _TOL) & (pts <= bounds.high + _TOL), axis=1)
    return pts[inside]


def _cell_range(lo, hi, size=None):
    a = int(np.ceil(lo - _TOL))
    b = int(np.floor(hi + _TOL))
    if size is not None:
        a, b = max(a, 0), min(b, size - 1)
    return a, b


def reinforce(bounds: Bounds, shape=None) -> np.ndarray:
    """All integer cells whose centres lie inside the box, as ``(m, 2)`` ints."""
    sizes = (None, None) if shape is None else shape
    (r0, r1), (c0, c1) = (_cell_range(bounds.low[a], bounds.high[a], sizes[a]) for a in range(2))
    if r0 > r1 or c0 > c1:
        return np.zeros((0, 2), dtype=np.int64)
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()]).astype(np.int64)


def _box_overlaps(frames):
    out = []
    order = sorted(range(len(frames)), key=lambda i: frames[i].row0)
    for a_pos, i in enumerate(order):
        fa = frames[i]
        for j in order[a_pos + 1:]:
            fb = frames[j]
            if fb.row0 > fa.row1:
                break
            rows = min(fa.row1, fb.row1) - max(fa.row0, fb.row0) + 1
            cols = min(fa.col1, fb.col1) - max(fa.col0, fb.col0) + 1
            if rows > 0 and cols > 0:
                out.append((fa.cluster_id, fb.cluster_id, rows * cols))
    return out


def _significant(busy, area, total_busy, total_cells, alpha):
    # one-sided Fisher test: is the box busier than a random draw of its size?
    return hypergeom.sf(busy - 1, total_cells, total_busy, area) < alpha


def estimate_occupancy(clusters: PointSet, grid: OccupancyGrid, delta: float | None = None,
                       kappa: float = DEFAULT_KAPPA, quantiles: str = "cell",
                       alpha: float | None = DEFAULT_ALPHA):
    """Filter, box and fill every cluster; return ``(estimated grid, FrameSet)``.

    ``clusters`` holds mapped-plane points with labels (as returned by
    :func:`iotsense.clustering.auto_cluster`); ``grid`` is the observed grid
    supplying shape, axes and the busy cells used by the significance test.
    ``quantiles`` is ``"cell"`` (cell-footprint quartiles) or ``"linear"``
    (order-statistic interpolation).  ``alpha=None`` keeps every box.
    """
    if clusters.space != CLUSTERED:
        raise ValueError("estimate_occupancy needs a clustered point set")
    if quantiles not in ("cell", "linear"):
        raise ValueError("quantiles must be 'cell' or 'linear'")
    delta = delta if delta is not None else clusters.meta.get("delta", DEFAULT_DELTA)
    shape = grid.shape
    dt, df = grid.dt, grid.df
    t0 = float(grid.time_axis[0]) if shape[0] else 0.0
    f0 = float(grid.freq_axis[0]) if shape[1] else 0.0
    out = np.zeros(shape, dtype=np.uint8)
    dropped, boxes = [], []
    idx = np.rint(inverse_map(clusters.points, delta)) if len(clusters) else np.zeros((0, 2))
    cell = 1.0 if quantiles == "cell" else None

    for j in range(1, clusters.n_clusters + 1):
        members = idx[clusters.labels == j]
        if not len(members):
            continue
        bounds = tukey_bounds(members, kappa, cell=cell)
        kept = filter_outliers(members, bounds)
        if not len(kept):
            warnings.warn(f"cluster {j} lost every point to the outlier filter",
                          EmptyClusterWarning, stacklevel=2)
            dropped.append(j)
            continue
        cells = reinforce(bounds, shape)
        if not len(cells):
            dropped.append(j)
            log.info("cluster %d boxed outside the grid; dropped", j)
            continue
        r0, c0 = cells.min(axis=0)
        r1, c1 = cells.max(axis=0)
        boxes.append((j, int(r0), int(r1), int(c0), int(c1), len(kept)))

    if alpha is not None and boxes:
        bits = grid.bits
        total = int(bits.sum(dtype=np.int64))
        significant = []
        for box in boxes:
            j, r0, r1, c0, c1, _ = box
            area = (r1 - r0 + 1) * (c1 - c0 + 1)
            busy = int(bits[r0:r1 + 1, c0:c1 + 1].sum(dtype=np.int64))
            if _significant(busy, area, total, bits.size, alpha):
                significant.append(box)
            else:
                log.info("cluster %d: %d of %d cells busy is within the background rate",
                         j, busy, area)
                dropped.append(j)
        boxes = significant

    frames = []
    for j, r0, r1, c0, c1, n_kept in boxes:
        out[r0:r1 + 1, c0:c1 + 1] = 1
        frames.append(Frame(
            cluster_id=j, row0=r0, row1=r1, col0=c0, col1=c1,
            t_center=t0 + (0.5 * (r0 + r1) + 0.5) * dt,
            f_center=f0 + 0.5 * (c0 + c1) * df,
            toa=(r1 - r0 + 1) * dt,
            bandwidth=(c1 - c0 + 1) * df,
            point_count=int(n_kept),
        ))

    est = OccupancyGrid(bits=out, time_axis=grid.time_axis, freq_axis=grid.freq_axis,
                        threshold=grid.threshold, kind=ESTIMATED, meta=dict(grid.meta))
    fs = FrameSet(frames=frames, dt=dt, df=df,
                  time_span=float(grid.meta.get("time_span", shape[0] * dt)),
                  shape=tuple(shape), t0=t0, f0=f0, overlaps=_box_overlaps(frames),
                  dropped=sorted(dropped))
    return est, fs


def duty_cycle(grid):
    """Per-bin busy fraction over time and its mean across bins."""
    bits = grid.bits if isinstance(grid, OccupancyGrid) else np.asarray(grid)
    if bits.ndim != 2 or bits.size == 0:
        raise ValueError("duty cycle of an empty grid is undefined")
    per_bin = bits.mean(axis=0, dtype=float)
    return per_bin, float(per_bin.mean())


@dataclass(frozen=True)
class JointHistogram:
    density: np.ndarray  # [bandwidth bin, toa bin]
    bandwidth_edges: np.ndarray
    toa_edges: np.ndarray


def frame_statistics(frames, bandwidth_edges=10, toa_edges=10) -> JointHistogram:
    """Joint density of (bandwidth, ToA), normalised to unit integral."""
    bw = np.asarray(frames.bandwidth if isinstance(frames, FrameSet) else frames[0], float)
    toa = np.asarray(frames.toa if isinstance(frames, FrameSet) else frames[1], float)
    if bw.size == 0:
        raise ValueError("no frames to summarise")
    density, be, te = np.histogram2d(bw, toa, bins=[bandwidth_edges, toa_edges], density=True)
    return JointHistogram(density, be, te)
