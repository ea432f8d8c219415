"""Synthetic captures with known ground truth, and scoring against it.

Frames are axis-aligned rectangles arriving as a Poisson process with
uniform centre frequencies.  The PSD is synthesised directly on the
spectrogram grid: idle cells hold exponential noise power of mean
``noise_power``; a busy cell holds the power of a complex Gaussian signal
plus noise, i.e. exponential power of mean ``(1 + snr) * noise_power``
(Rayleigh fading redrawn per cell).  Randomness is drawn in fixed row
chunks with their own seed streams, so any row range of a capture can be
regenerated on its own and matches the full capture bit for bit.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .detection import analytic_threshold, binarize
from .spectrogram import IQRecording, Spectrogram, dbm_to_watts, hamming_window

log = logging.getLogger(__name__)

CHUNK_ROWS = 4096
_TRAFFIC, _PSD, _IQ = 0, 1, 2


class SpecError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid traffic spec: " + "; ".join(self.problems))


@dataclass(frozen=True)
class Distribution:
    """``fixed`` (value), ``uniform`` (low, high) or ``exponential`` (mean)."""

    kind: str
    params: tuple

    @classmethod
    def parse(cls, obj) -> "Distribution":
        if isinstance(obj, Distribution):
            return obj
        if isinstance(obj, (int, float)):
            return cls("fixed", (float(obj),))
        if isinstance(obj, dict):
            (kind, params), = obj.items()
            params = tuple(params) if isinstance(params, (list, tuple)) else (params,)
            return cls(kind, tuple(float(p) for p in params))
        raise ValueError(f"cannot read a distribution from {obj!r}")

    def to_config(self):
        return {self.kind: list(self.params)}

    def problems(self, name):
        p = self.params
        if self.kind == "fixed" and len(p) == 1 and p[0] > 0:
            return []
        if self.kind == "uniform" and len(p) == 2 and 0 < p[0] <= p[1]:
            return []
        if self.kind == "exponential" and len(p) == 1 and p[0] > 0:
            return []
        return [f"{name}: bad distribution {self.kind}{list(p)}"]

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return self.params[0]

    @property
    def upper(self) -> float:
        return self.params[-1] if self.kind != "exponential" else math.inf

    def sample(self, rng, n):
        if self.kind == "fixed":
            return np.full(n, self.params[0])
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], n)
        return rng.exponential(self.params[0], n)


@dataclass(frozen=True)
class TrafficSpec:
    """Everything needed to regenerate a synthetic capture."""

    arrival_rate: float = 10.0
    duration: float = 10.0
    band: float = 2.0e6
    dt: float = 0.5e-3
    df: float = 20e3
    toa: Distribution = Distribution("uniform", (0.05, 0.4))
    bandwidth: Distribution = Distribution("uniform", (40e3, 200e3))
    snr_db: float = 10.0
    noise_power: float = float(dbm_to_watts(-154.0))
    center_frequency: float = 921.5e6
    seed: int = 0
    fading: str = "cell"
    averaging: int = 1
    frame_count: int | None = None
    min_gap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "toa", Distribution.parse(self.toa))
        object.__setattr__(self, "bandwidth", Distribution.parse(self.bandwidth))
        problems = []
        for name in ("duration", "band", "dt", "df", "noise_power"):
            if not getattr(self, name) > 0:
                problems.append(f"{name}: must be positive")
        if not self.arrival_rate >= 0:
            problems.append("arrival_rate: must be >= 0")
        if self.fading not in ("cell", "block"):
            problems.append("fading: must be 'cell' or 'block'")
        if self.averaging < 1:
            problems.append("averaging: must be >= 1")
        if self.frame_count is not None and self.frame_count < 0:
            problems.append("frame_count: must be >= 0")
        if self.min_gap is not None and self.min_gap < 0:
            problems.append("min_gap: must be >= 0")
        problems += self.toa.problems("toa") + self.bandwidth.problems("bandwidth")
        if not problems and (self.rows < 1 or self.cols < 1):
            problems.append("grid: duration/dt and band/df must give at least one cell")
        if problems:
            raise SpecError(problems)

    @classmethod
    def from_config(cls, cfg: dict) -> "TrafficSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise SpecError([f"{k}: unknown field" for k in unknown])
        return cls(**cfg)

    def to_config(self) -> dict:
        out = asdict(self)
        out["toa"] = self.toa.to_config()
        out["bandwidth"] = self.bandwidth.to_config()
        return out

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def rows(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def cols(self) -> int:
        return int(round(self.band / self.df))

    @property
    def shape(self):
        return self.rows, self.cols

    @property
    def f_low(self) -> float:
        return self.center_frequency - self.band / 2.0

    def streams(self, key):
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


@dataclass(frozen=True)
class TrueFrame:
    start: float
    f_center: float
    toa: float
    bandwidth: float
    snr_db: float
    row0: int
    row1: int
    col0: int
    col1: int
    gain: float = 1.0

    @property
    def rows(self):
        return self.row1 - self.row0 + 1

    @property
    def cols(self):
        return self.col1 - self.col0 + 1

    @property
    def cells(self):
        return self.rows * self.cols


@dataclass
class GroundTruth:
    frames: list
    truth_grid: np.ndarray
    dt: float
    df: float
    duration: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.truth_grid.shape


def _frame_cells(start, fc, toa, bw, spec):
    rows, cols = spec.shape
    r0 = int(math.floor(start / spec.dt))
    nr = max(1, int(round(toa / spec.dt)))
    nc = max(1, int(round(bw / spec.df)))
    centre_col = (fc - spec.f_low) / spec.df - 0.5
    c0 = int(round(centre_col - (nc - 1) / 2.0))
    return (max(r0, 0), min(r0 + nr - 1, rows - 1), max(c0, 0), min(c0 + nc - 1, cols - 1))


def _poisson_times(rng, rate, duration):
    if rate == 0:
        return np.zeros(0)
    expected = rate * duration
    times = []
    t = 0.0
    while True:
        gaps = rng.exponential(1.0 / rate, int(expected + 10 * math.sqrt(expected) + 16))
        arrivals = t + np.cumsum(gaps)
        times.append(arrivals[arrivals < duration])
        if arrivals[-1] >= duration:
            break
        t = arrivals[-1]
    return np.concatenate(times)


def generate_traffic(spec: TrafficSpec) -> GroundTruth:
    """Draw frames for ``spec``; deterministic in ``spec.seed``.

    Start times form a homogeneous Poisson process of rate ``arrival_rate``
    over the duration, or, when ``frame_count`` is set, that many uniform
    start times (a Poisson process conditioned on its count).  With
    ``min_gap`` set, a candidate whose box comes within ``min_gap`` cells of
    an accepted frame is rejected and redrawn (``frame_count``) or thinned
    away (Poisson mode).
    """
    if spec.toa.upper > spec.duration or spec.bandwidth.upper > spec.band:
        warnings.warn("frame size distribution exceeds the capture; frames will be clipped",
                      stacklevel=2)
    rng = spec.streams((_TRAFFIC,))
    rows, cols = spec.shape
    grid = np.zeros(spec.shape, dtype=np.uint8)
    blocked = np.zeros(spec.shape, dtype=bool) if spec.min_gap is not None else None
    g = spec.min_gap or 0

    def draw(n, times=None):
        if times is None:
            times = rng.uniform(0.0, spec.duration, n)
        return (times,
                rng.uniform(spec.f_low, spec.f_low + spec.band, n),
                spec.toa.sample(rng, n),
                spec.bandwidth.sample(rng, n),
                rng.exponential(1.0, n))

    frames = []

    def accept(start, fc, toa, bw, gain):
        r0, r1, c0, c1 = _frame_cells(start, fc, toa, bw, spec)
        if blocked is not None:
            if blocked[r0:r1 + 1, c0:c1 + 1].any():
                return False
            blocked[max(r0 - g, 0):r1 + g + 1, max(c0 - g, 0):c1 + g + 1] = True
        grid[r0:r1 + 1, c0:c1 + 1] = 1
        frames.append(TrueFrame(float(start), float(fc), (r1 - r0 + 1) * spec.dt,
                                (c1 - c0 + 1) * spec.df, spec.snr_db, r0, r1, c0, c1, float(gain)))
        return True

    if spec.frame_count is None:
        times = _poisson_times(rng, spec.arrival_rate, spec.duration)
        for cand in zip(*draw(times.size, times)):
            accept(*cand)
    else:
        target = spec.frame_count
        attempts = 0
        while len(frames) < target:
            if attempts > 1000 * max(target, 1):
                raise SpecError([f"frame_count: could not place {target} separated frames"])
            batch = target - len(frames)
            for cand in zip(*draw(batch)):
                attempts += 1
                if accept(*cand) and len(frames) == target:
                    break
        frames.sort(key=lambda f: f.start)

    return GroundTruth(frames=frames, truth_grid=grid, dt=spec.dt, df=spec.df,
                       duration=spec.duration, meta={"seed": spec.seed})


def _chunk_power(rng, spec, n_rows, truth, r_start):
    z = spec.averaging
    s2 = spec.noise_power
    shape = (n_rows, spec.cols)
    if z == 1:
        power = rng.exponential(s2, shape)
    else:
        power = rng.gamma(z, s2 / z, shape)
    r_stop = r_start + n_rows - 1
    for fr in truth.frames:
        if fr.row1 < r_start or fr.row0 > r_stop:
            continue
        a, b = max(fr.row0, r_start) - r_start, min(fr.row1, r_stop) - r_start
        cells = (b - a + 1, fr.cols, z)
        if spec.fading == "cell":
            mean = (1.0 + spec.snr) * s2
            sub = rng.exponential(mean, cells)
        else:
            amp = math.sqrt(fr.gain * spec.snr * s2)
            phase = rng.uniform(0.0, 2.0 * math.pi, cells)
            noise = rng.normal(0.0, math.sqrt(s2 / 2.0), cells + (2,))
            sub = (amp * np.cos(phase) + noise[..., 0]) ** 2 + (amp * np.sin(phase) + noise[..., 1]) ** 2
        power[a:b + 1, fr.col0:fr.col1 + 1] = sub.mean(axis=-1)
    return power


def synthesize_psd(truth: GroundTruth, spec: TrafficSpec, row_start: int = 0,
                   row_stop: int | None = None) -> Spectrogram:
    """PSD for rows ``[row_start, row_stop)`` of the capture described by ``truth``.

    With ``averaging = z > 1`` every cell is the mean of ``z`` independent
    sub-bins, mimicking frequency-bin averaging in the STFT.
    """
    rows = spec.rows
    row_stop = rows if row_stop is None else min(row_stop, rows)
    if not 0 <= row_start < row_stop:
        raise ValueError("empty row range")
    out = np.empty((row_stop - row_start, spec.cols))
    first = row_start // CHUNK_ROWS
    last = (row_stop - 1) // CHUNK_ROWS
    for c in range(first, last + 1):
        c0 = c * CHUNK_ROWS
        n = min(CHUNK_ROWS, rows - c0)
        power = _chunk_power(spec.streams((_PSD, c)), spec, n, truth, c0)
        lo, hi = max(row_start, c0), min(row_stop, c0 + n)
        out[lo - row_start:hi - row_start] = power[lo - c0:hi - c0]
    time_axis = np.arange(row_start, row_stop) * spec.dt
    freq_axis = spec.f_low + (np.arange(spec.cols) + 0.5) * spec.df
    span = spec.duration if (row_start, row_stop) == (0, rows) else (row_stop - row_start) * spec.dt
    return Spectrogram(out, time_axis, freq_axis, span,
                       meta={"dt": spec.dt, "df": spec.df, "row_start": row_start,
                             "simulated": True})


def synthesize_iq(truth: GroundTruth, spec: TrafficSpec, window_size: int,
                  averaging: int) -> IQRecording:
    """Time-domain capture: complex white noise plus tone-burst frames.

    Each busy column is filled with one tone per DFT bin, held for the
    frame's rows.  Powers are scaled so that :func:`compute_spectrogram` with
    the same window and averaging sees noise of mean ``noise_power`` and
    in-frame signal of mean about ``snr * noise_power``.
    """
    if window_size // averaging != spec.cols or window_size % averaging:
        raise ValueError("window_size / averaging must equal the number of grid columns")
    fs = window_size / spec.dt
    rng = spec.streams((_IQ,))
    w = hamming_window(window_size)
    wsq = float(np.sum(w ** 2))
    noise_var = spec.noise_power * window_size ** 2 / wsq
    n = spec.rows * window_size
    x = rng.normal(0.0, math.sqrt(noise_var / 2.0), (n, 2)) @ np.array([1.0, 1j])
    # one tone per raw bin; with random phases each bin sees A^2 * sum(w^2) / N
    amp = math.sqrt(spec.snr * spec.noise_power * window_size / wsq)
    n_idx = np.arange(window_size)
    for fr in truth.frames:
        s0, s1 = fr.row0 * window_size, (fr.row1 + 1) * window_size
        # fft-shifted bin b sits at (b - N/2) cycles per window, so every tone
        # repeats each window and one period can be tiled over the frame
        bins = np.arange(fr.col0 * averaging, (fr.col1 + 1) * averaging)
        cycles = bins - window_size // 2
        phases = rng.uniform(0.0, 2 * math.pi, bins.size)
        period = np.exp(1j * (2 * np.pi * np.outer(n_idx, cycles) / window_size + phases)).sum(axis=1)
        x[s0:s1] += amp * np.tile(period, fr.rows)
    return IQRecording(x, fs, spec.center_frequency)


def simulate_ctmc(psi: float, tau_corr: float, duration: float, dt: float, seed=0,
                  return_path: bool = False):
    """Sample a two-state chain with duty cycle ``psi`` at times ``0, dt, 2dt, ...``.

    Sojourns are exponential with means ``tau_corr / psi`` (idle) and
    ``tau_corr / (1 - psi)`` (busy); the initial state is stationary.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    means = np.array([tau_corr / psi, tau_corr / (1.0 - psi)])
    state = int(rng.random() < psi)
    # sojourn k is spent in state (state + k) % 2
    batch = int(duration / means.sum() * 2) + 16
    jumps, t, k0 = [], 0.0, 0
    while t < duration:
        k = np.arange(k0, k0 + batch)
        ends = t + np.cumsum(rng.exponential(1.0, batch) * means[(state + k) % 2])
        jumps.append(ends)
        t, k0 = ends[-1], k0 + batch
    ends = np.concatenate(jumps)
    n = int(round(duration / dt))
    sample_t = np.arange(n) * dt
    k = np.searchsorted(ends, sample_t, side="right")
    states = ((state + k) % 2).astype(np.uint8)
    if return_path:
        return states, ends[ends < duration], state
    return states


@dataclass(frozen=True)
class DetectionScore:
    p_f: float
    p_m: float
    p_d: float
    frame_pd: float
    n_idle: int
    n_busy: int

    def as_dict(self):
        return asdict(self)


def frame_hits(truth_frames, estimated, min_overlap: float = 0.5) -> np.ndarray:
    """Boolean per true frame: covered by at least ``min_overlap`` of its area.

    ``estimated`` is either a binary grid (fraction of the frame's cells set)
    or an iterable of estimated frames with ``row0/row1/col0/col1`` (largest
    single-box overlap).
    """
    hits = np.zeros(len(truth_frames), dtype=bool)
    if hasattr(estimated, "bits") or isinstance(estimated, np.ndarray):
        bits = np.asarray(getattr(estimated, "bits", estimated))
        for i, fr in enumerate(truth_frames):
            cover = bits[fr.row0:fr.row1 + 1, fr.col0:fr.col1 + 1].mean()
            hits[i] = cover >= min_overlap
        return hits
    boxes = list(estimated)
    for i, fr in enumerate(truth_frames):
        for e in boxes:
            rows = min(fr.row1, e.row1) - max(fr.row0, e.row0) + 1
            cols = min(fr.col1, e.col1) - max(fr.col0, e.col0) + 1
            if rows > 0 and cols > 0 and rows * cols >= min_overlap * fr.cells:
                hits[i] = True
                break
    return hits


def score_detection(truth_grid, estimated_grid, truth_frames=(), estimated_frames=None,
                    min_overlap: float = 0.5) -> DetectionScore:
    truth = np.asarray(getattr(truth_grid, "truth_grid", truth_grid), dtype=bool)
    est = np.asarray(getattr(estimated_grid, "bits", estimated_grid), dtype=bool)
    if truth.shape != est.shape:
        raise ValueError(f"grid shapes differ: {truth.shape} vs {est.shape}")
    idle, busy = ~truth, truth
    n_idle, n_busy = int(idle.sum()), int(busy.sum())
    p_f = float((est & idle).sum() / n_idle) if n_idle else 0.0
    p_m = float((~est & busy).sum() / n_busy) if n_busy else 0.0
    frames = list(truth_frames)
    if frames:
        target = estimated_frames if estimated_frames is not None else est
        frame_pd = float(frame_hits(frames, target, min_overlap).mean())
    else:
        frame_pd = float("nan")
    return DetectionScore(p_f, p_m, 1.0 - p_m, frame_pd, n_idle, n_busy)


@dataclass(frozen=True)
class RocPoint:
    snr_db: float
    threshold: float
    pfa_ed: float
    pd_ed: float
    pfa_fw: float
    pd_fw: float
    frame_pd_ed: float
    frame_pd_fw: float
    n_idle: int
    n_busy: int

    def as_dict(self):
        return asdict(self)


def thresholds_for_pfa(p_fs, noise_power: float, averaging: int = 1) -> np.ndarray:
    """Thresholds giving false-alarm rates ``p_fs`` on noise averaged over ``averaging`` bins."""
    if averaging == 1:
        return np.array([analytic_threshold(p, noise_power) for p in p_fs])
    from scipy.stats import gamma

    return gamma.isf(np.asarray(p_fs, dtype=float), averaging, scale=noise_power / averaging)


def run_framework(observed, delta: float, kappa: float, alpha: float | None = 1e-6):
    """Cluster, filter and reinforce an observed grid; returns ``(O, frames, clusters)``."""
    from .clustering import auto_cluster
    from .frames import estimate_occupancy

    clusters = auto_cluster(observed, delta)
    est, frames = estimate_occupancy(clusters, observed, delta, kappa, alpha=alpha)
    return est, frames, clusters


def component_boxes(bits) -> list:
    """Bounding boxes of the 8-connected busy regions of a binary grid.

    These stand in for "frames" when scoring plain energy detection, which
    has no notion of a frame of its own.
    """
    from scipy import ndimage

    labels, _ = ndimage.label(np.asarray(bits, dtype=bool), structure=np.ones((3, 3), bool))
    return [_Box(sl[0].start, sl[0].stop - 1, sl[1].start, sl[1].stop - 1)
            for sl in ndimage.find_objects(labels) if sl is not None]


@dataclass(frozen=True)
class _Box:
    row0: int
    row1: int
    col0: int
    col1: int


def roc_sweep(spec: TrafficSpec, thresholds, snrs_db=None, delta: float = 0.5,
              kappa: float = 2.0, min_overlap: float = 0.5,
              alpha: float | None = 1e-6) -> list:
    """Energy detection and the clustering framework on identical captures.

    For each SNR one capture is drawn (same seed, so the same traffic) and
    every threshold is applied to it.  Frame-level detection uses box
    overlap: the framework's estimated frames, and for energy detection the
    bounding boxes of connected busy regions.
    """
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.size < 2:
        raise ValueError("need at least two thresholds")
    snrs_db = [spec.snr_db] if snrs_db is None else list(snrs_db)
    out = []
    for snr_db in snrs_db:
        s = replace(spec, snr_db=float(snr_db))
        truth = generate_traffic(s)
        psd = synthesize_psd(truth, s)
        for theta in thresholds:
            observed = binarize(psd, float(theta))
            ed = score_detection(truth.truth_grid, observed.bits, truth.frames,
                                 component_boxes(observed.bits), min_overlap)
            est, frames, _ = run_framework(observed, delta, kappa, alpha)
            fw = score_detection(truth.truth_grid, est.bits, truth.frames, frames.frames,
                                 min_overlap)
            log.info("snr %.1f dB theta %.3g: ED pf=%.3g pd=%.3g | FW pf=%.3g pd=%.3g",
                     snr_db, theta, ed.p_f, ed.p_d, fw.p_f, fw.p_d)
            out.append(RocPoint(float(snr_db), float(theta), ed.p_f, ed.p_d, fw.p_f, fw.p_d,
                                ed.frame_pd, fw.frame_pd, ed.n_idle, ed.n_busy))
    return out
