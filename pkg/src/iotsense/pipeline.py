"""End-to-end sensing over a capture, optionally in independent row blocks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import DEFAULT_DELTA, auto_cluster, inverse_map
from .detection import ESTIMATED, OBSERVED, OccupancyGrid, binarize
from .frames import DEFAULT_ALPHA, DEFAULT_KAPPA, Frame, FrameSet, _box_overlaps, estimate_occupancy
from .spectrogram import Spectrogram

log = logging.getLogger(__name__)


@dataclass
class SenseResult:
    frames: FrameSet
    busy_per_bin: np.ndarray  # estimated busy-cell counts per column
    rows: int
    observed: OccupancyGrid | None = None
    estimated: OccupancyGrid | None = None
    points: np.ndarray | None = None  # (n, k, label) with global labels
    blocks: list = field(default_factory=list)

    @property
    def duty_per_bin(self) -> np.ndarray:
        return self.busy_per_bin / self.rows

    @property
    def duty_cycle(self) -> float:
        return float(self.duty_per_bin.mean())


def _offset(frame: Frame, rows: int) -> Frame:
    return replace(frame, row0=frame.row0 + rows, row1=frame.row1 + rows)


def merge_across_blocks(frames, boundaries, dt, t0=0.0) -> list:
    """Join frames cut by a block boundary.

    Two frames merge when one ends within a cell of a boundary, the other
    starts within a cell of it, and their column ranges touch or overlap
    within one cell.
    """
    bset = set(boundaries)
    frames = sorted(frames, key=lambda f: (f.row0, f.col0))
    merged = True
    while merged:
        merged = False
        for i, a in enumerate(frames):
            if not any(b - 2 <= a.row1 <= b - 1 for b in bset):
                continue
            for j, c in enumerate(frames):
                if j == i or c.row0 <= a.row1 or c.row0 - a.row1 - 1 > 1:
                    continue
                if not any(a.row1 < b <= c.row0 for b in bset):
                    continue
                if c.col0 > a.col1 + 1 or c.col1 < a.col0 - 1:
                    continue
                frames[i] = _union(a, c, dt, t0)
                del frames[j]
                merged = True
                break
            if merged:
                break
    return frames


def _union(a: Frame, b: Frame, dt, t0) -> Frame:
    r0, r1 = min(a.row0, b.row0), max(a.row1, b.row1)
    c0, c1 = min(a.col0, b.col0), max(a.col1, b.col1)
    df = a.bandwidth / a.cols
    f_lo = a.f_center - 0.5 * (a.col0 + a.col1) * df
    return Frame(cluster_id=a.cluster_id, row0=r0, row1=r1, col0=c0, col1=c1,
                 t_center=t0 + (0.5 * (r0 + r1) + 0.5) * dt,
                 f_center=f_lo + 0.5 * (c0 + c1) * df,
                 toa=(r1 - r0 + 1) * dt, bandwidth=(c1 - c0 + 1) * df,
                 point_count=a.point_count + b.point_count)


def sense_blocks(blocks, threshold: float, delta: float = DEFAULT_DELTA,
                 kappa: float = DEFAULT_KAPPA, keep_grids: bool = True,
                 keep_points: bool = False, time_span: float | None = None,
                 alpha: float | None = DEFAULT_ALPHA) -> SenseResult:
    """Run detection, clustering and reinforcement on consecutive spectrogram blocks."""
    frames, observed, estimated, points, info = [], [], [], [], []
    busy = None
    rows = 0
    boundaries = []
    dt = df = None
    t0 = f0 = 0.0
    freq_axis = None
    label_offset = 0
    span = 0.0
    for block in blocks:
        b = binarize(block, threshold)
        clusters = auto_cluster(b, delta)
        est, fs = estimate_occupancy(clusters, b, delta, kappa, alpha=alpha)
        if dt is None:
            dt, df = b.dt, b.df
            t0 = float(block.time_axis[0])
            f0 = float(block.freq_axis[0])
            freq_axis = block.freq_axis
        if rows:
            boundaries.append(rows)
        frames += [_offset(f, rows) for f in fs.frames]
        counts = est.bits.sum(axis=0, dtype=np.int64)
        busy = counts if busy is None else busy + counts
        if keep_grids:
            observed.append(b.bits)
            estimated.append(est.bits)
        if keep_points and len(clusters):
            nk = np.rint(inverse_map(clusters.points, delta)).astype(np.int64)
            nk[:, 0] += rows
            lab = clusters.labels + np.where(clusters.labels > 0, label_offset, 0)
            points.append(np.column_stack([nk, lab]))
        label_offset += clusters.n_clusters
        info.append({"row_start": rows, "rows": b.shape[0], "n_points": len(clusters),
                     "min_points": clusters.meta.get("min_points"),
                     "eps": clusters.meta.get("eps"), "n_clusters": clusters.n_clusters,
                     "n_frames": len(fs), "dropped": fs.dropped})
        rows += b.shape[0]
        span += block.time_span
    if dt is None:
        raise ValueError("no blocks to process")

    frames = merge_across_blocks(frames, boundaries, dt, t0) if boundaries else frames
    frames = sorted(frames, key=lambda f: (f.row0, f.col0))
    frames = [replace(f, cluster_id=i + 1) for i, f in enumerate(frames)]
    n_cols = len(freq_axis)
    fset = FrameSet(frames=frames, dt=dt, df=df,
                    time_span=time_span if time_span is not None else span,
                    shape=(rows, n_cols), t0=t0, f0=f0, overlaps=_box_overlaps(frames),
                    dropped=[d for blk in info for d in blk["dropped"]])
    result = SenseResult(frames=fset, busy_per_bin=busy, rows=rows, blocks=info)
    if keep_grids:
        t = t0 + np.arange(rows) * dt
        meta = {"dt": dt, "df": df, "time_span": fset.time_span}
        result.observed = OccupancyGrid(np.vstack(observed), t, freq_axis, threshold, OBSERVED, meta)
        result.estimated = OccupancyGrid(np.vstack(estimated), t, freq_axis, threshold,
                                         ESTIMATED, meta)
    if keep_points:
        result.points = np.vstack(points) if points else np.zeros((0, 3), np.int64)
    return result


def split_rows(spec: Spectrogram, block_rows: int | None):
    rows = spec.shape[0]
    if not block_rows or block_rows >= rows:
        yield spec
        return
    dt = spec.dt
    for start in range(0, rows, block_rows):
        stop = min(rows, start + block_rows)
        yield Spectrogram(spec.values[start:stop], spec.time_axis[start:stop], spec.freq_axis,
                          (stop - start) * dt, spec.unit, meta=dict(spec.meta, dt=dt, df=spec.df))


def sense(spec: Spectrogram, threshold: float, delta: float = DEFAULT_DELTA,
          kappa: float = DEFAULT_KAPPA, block_rows: int | None = None,
          keep_points: bool = False, alpha: float | None = DEFAULT_ALPHA) -> SenseResult:
    return sense_blocks(split_rows(spec, block_rows), threshold, delta, kappa,
                        keep_grids=True, keep_points=keep_points, time_span=spec.time_span,
                        alpha=alpha)
