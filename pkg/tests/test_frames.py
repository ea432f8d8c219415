import numpy as np
import pytest
from scipy import stats

from iotsense.clustering import CLUSTERED, PointSet, auto_cluster
from iotsense.detection import OccupancyGrid, binarize
from iotsense.frames import (Bounds, axis_extent, duty_cycle, estimate_occupancy,
                             filter_outliers, frame_statistics, reinforce, tukey_bounds)
from iotsense.simulator import (Distribution, TrafficSpec, generate_traffic, score_detection,
                                synthesize_psd, thresholds_for_pfa)

from oracles import type7_quantile


def grid(bits):
    return binarize(np.asarray(bits, dtype=float), 0.5)


def test_tukey_linear_quartiles():
    b = tukey_bounds(np.column_stack([[1, 2, 3, 4, 5], [0] * 5]))
    assert b.extent[0] == 4.0 and b.center[0] == 3.0
    x = np.random.default_rng(0).uniform(0, 10, 37)
    ext, cen, _ = axis_extent(x)
    q1, q3 = type7_quantile(x, 0.25), type7_quantile(x, 0.75)
    assert ext == pytest.approx(2 * (q3 - q1)) and cen == pytest.approx((q1 + q3) / 2)


def test_cell_quartiles_cover_solid_runs():
    for k in (1, 2, 5, 7, 40):
        ext, cen, _ = axis_extent(np.arange(k), cell=1.0)
        assert ext == pytest.approx(k)
        assert cen == pytest.approx((k - 1) / 2)


def test_cell_quartiles_ignore_single_stray():
    x = np.r_[np.repeat([10, 11], 20), 17]
    ext, _, _ = axis_extent(x, cell=1.0)
    assert ext < 3


def test_degenerate_bounds():
    b = tukey_bounds([[3, 4], [3, 4], [3, 4]])
    assert b.degenerate
    assert reinforce(b).tolist() == [[3, 4]]


def test_filter_outliers():
    rect = np.argwhere(np.ones((10, 4))).astype(float)
    b = tukey_bounds(rect, cell=1.0)
    np.testing.assert_array_equal(filter_outliers(rect, b), rect)
    stray = np.vstack([rect, [[100.0, 1.0]]])
    b = tukey_bounds(stray, cell=1.0)
    np.testing.assert_array_equal(filter_outliers(stray, b), rect)


def test_reinforce_counts():
    b = Bounds(np.array([1.5, 1.0]), np.array([4.0, 3.0]))
    cells = reinforce(b)
    assert len(cells) == 12
    assert cells.min(axis=0).tolist() == [0, 0] and cells.max(axis=0).tolist() == [3, 2]
    rng = np.random.default_rng(1)
    box = np.argwhere(np.ones((10, 10)))
    keep = box[rng.random(100) < 0.5]
    known = Bounds(np.array([4.5, 4.5]), np.array([10.0, 10.0]))
    assert len(filter_outliers(keep, known)) == len(keep)
    assert len(reinforce(known)) == 100


def test_reinforce_clips_to_shape():
    b = Bounds(np.array([0.0, 0.0]), np.array([6.0, 6.0]))
    cells = reinforce(b, shape=(2, 2))
    assert len(cells) == 4


def test_estimate_occupancy_empty():
    g = grid(np.zeros((30, 10)))
    est, fs = estimate_occupancy(auto_cluster(g), g)
    assert not est.bits.any() and len(fs) == 0


def test_estimate_occupancy_recovers_frame():
    # 200 ms x 100 kHz at (0.5 ms, 20 kHz): 400 x 5 cells
    rng = np.random.default_rng(2)
    bits = np.zeros((1000, 40), np.uint8)
    bits[300:700, 10:15] = 1
    bits |= (rng.random(bits.shape) < 1e-4).astype(np.uint8)
    t = np.arange(1000) * 0.5e-3
    f = np.arange(40) * 20e3
    g = OccupancyGrid(bits, t, f, 1.0)
    est, fs = estimate_occupancy(auto_cluster(g), g)
    big = max(fs.frames, key=lambda fr: fr.cells)
    assert abs(big.rows - 400) <= 1 and abs(big.cols - 5) <= 1
    assert abs(big.row0 - 300) <= 1 and abs(big.col0 - 10) <= 1
    assert big.toa == pytest.approx(big.rows * 0.5e-3)
    assert big.bandwidth == pytest.approx(big.cols * 20e3)


def test_estimate_requires_clustered():
    g = grid(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        estimate_occupancy(PointSet(np.zeros((0, 2))), g)


def test_overlaps_recorded_once():
    bits = np.zeros((60, 30))
    bits[5:25, 5:15] = 1
    bits[30:50, 5:15] = 1
    g = grid(bits)
    pts = np.argwhere(bits) * (1.0, 0.5)
    labels = np.where(np.argwhere(bits)[:, 0] < 28, 1, 2)
    # add a second cluster overlapping the first
    extra = np.argwhere(np.ones((10, 4))) + (10, 10)
    pts = np.vstack([pts, extra * (1.0, 0.5)])
    labels = np.r_[labels, np.full(len(extra), 3)]
    clusters = PointSet(pts, CLUSTERED, labels=labels, meta={"delta": 0.5})
    est, fs = estimate_occupancy(clusters, g)
    assert est.bits.max() == 1
    assert fs.overlaps and fs.overlaps[0][:2] == (1, 3)


def test_boxes_of_background_noise_are_rejected():
    rng = np.random.default_rng(5)
    bits = (rng.random((4000, 50)) < 1e-2).astype(np.uint8)
    g = grid(bits)
    clusters = auto_cluster(g)
    _, kept = estimate_occupancy(clusters, g)
    _, everything = estimate_occupancy(clusters, g, alpha=None)
    assert len(everything) > 0 and len(kept) == 0
    assert kept.dropped
    bits[1000:1200, 10:15] |= (rng.random((200, 5)) < 0.5).astype(np.uint8)
    est, fs = estimate_occupancy(auto_cluster(grid(bits)), grid(bits))
    assert len(fs) >= 1
    assert est.bits[1000:1200, 10:15].mean() >= 0.5


def test_framework_reduces_errors_on_noisy_frames():
    spec = TrafficSpec(arrival_rate=5, duration=10, band=2e6, snr_db=5, seed=3,
                       averaging=10, min_gap=10)
    truth = generate_traffic(spec)
    psd = synthesize_psd(truth, spec)
    th = float(thresholds_for_pfa([1e-2], spec.noise_power, spec.averaging)[0])
    obs = binarize(psd, th)
    est, _ = estimate_occupancy(auto_cluster(obs), obs)
    ed = score_detection(truth.truth_grid, obs.bits)
    fw = score_detection(truth.truth_grid, est.bits)
    assert fw.p_f < ed.p_f
    assert fw.p_m < ed.p_m


def test_duty_cycle():
    per, psi = duty_cycle(grid(np.ones((4, 3))))
    assert per.tolist() == [1, 1, 1] and psi == 1.0
    half = np.zeros((10, 6))
    half[:5] = 1
    assert duty_cycle(half)[1] == 0.5
    with pytest.raises(ValueError):
        duty_cycle(np.zeros((0, 3)))


def test_frame_statistics_single_and_identical():
    h = frame_statistics(([100e3], [0.2]), bandwidth_edges=[0, 200e3], toa_edges=[0, 0.4])
    assert h.density[0, 0] == pytest.approx(1 / (200e3 * 0.4))
    h = frame_statistics(([50e3] * 5, [0.1] * 5), bandwidth_edges=4, toa_edges=4)
    assert np.count_nonzero(h.density) == 1
    with pytest.raises(ValueError):
        frame_statistics(([], []))


def _rounded_uniform_pmf(lo, hi, step, k):
    # P(round(U / step) == k) for U ~ uniform(lo, hi)
    a = np.clip((k - 0.5) * step, lo, hi)
    b = np.clip((k + 0.5) * step, lo, hi)
    return (b - a) / (hi - lo)


def test_frame_statistics_chi_square():
    spec = TrafficSpec(arrival_rate=20, duration=100, band=5e6, seed=4,
                       toa=Distribution("uniform", (0.01, 0.05)),
                       bandwidth=Distribution("uniform", (40e3, 200e3)))
    truth = generate_traffic(spec)
    bw = np.array([f.bandwidth for f in truth.frames])
    toa = np.array([f.toa for f in truth.frames])
    # sizes are whole cells: bandwidth 2..10 columns, ToA 20..100 rows
    col_groups = [(2, 3), (4, 5), (6, 7), (8, 9, 10)]
    row_groups = [range(20, 40), range(40, 60), range(60, 80), range(80, 101)]
    be = np.array([g[0] - 0.5 for g in col_groups] + [10.5]) * spec.df
    te = np.array([g[0] - 0.5 for g in row_groups] + [100.5]) * spec.dt
    h = frame_statistics((bw, toa), be, te)
    observed = h.density * np.outer(np.diff(be), np.diff(te)) * len(bw)
    pb = [sum(_rounded_uniform_pmf(40e3, 200e3, spec.df, k) for k in g) for g in col_groups]
    pt = [sum(_rounded_uniform_pmf(0.01, 0.05, spec.dt, k) for k in g) for g in row_groups]
    expected = np.outer(pb, pt) * len(bw)
    assert expected.sum() == pytest.approx(len(bw))
    observed = np.rint(observed).ravel()
    _, p = stats.chisquare(observed, expected.ravel() * observed.sum() / expected.sum())
    assert p > 0.01
