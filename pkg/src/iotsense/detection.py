"""Noise calibration, threshold selection and energy detection.

All arithmetic here is in linear units (W/Hz).  Convert dBm/Hz inputs with
:func:`iotsense.spectrogram.dbm_to_watts` before calling in.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .spectrogram import Spectrogram

OBSERVED = "observed"
ESTIMATED = "estimated"
TRUTH = "truth"


class CalibrationError(ValueError):
    pass


class UnverifiablePfaWarning(UserWarning):
    """The requested false-alarm rate is below the calibration resolution."""


@dataclass(frozen=True)
class NoiseCalibration:
    """Pooled terminated-input PSD samples and their empirical CDF."""

    samples: np.ndarray  # sorted ascending
    mean_power: float

    @classmethod
    def from_samples(cls, samples) -> "NoiseCalibration":
        s = np.sort(np.asarray(samples, dtype=float).ravel())
        s.setflags(write=False)
        return cls(samples=s, mean_power=float(s.mean()))

    @property
    def size(self) -> int:
        return int(self.samples.size)

    def cdf(self, x):
        """Right-continuous ECDF, ``#(samples <= x) / n``."""
        return np.searchsorted(self.samples, x, side="right") / self.size

    def ccdf(self, x):
        """``#(samples > x) / n``, counted directly to avoid ``1 - cdf`` rounding."""
        return (self.size - np.searchsorted(self.samples, x, side="right")) / self.size


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary busy/idle matrix on the spectrogram grid.

    ``kind`` is ``"observed"`` for the thresholded matrix, ``"estimated"``
    for the matrix produced by clustering and reinforcement and ``"truth"``
    for simulator ground truth.
    """

    bits: np.ndarray
    time_axis: np.ndarray
    freq_axis: np.ndarray
    threshold: float = float("nan")
    kind: str = OBSERVED
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise ValueError("occupancy grid must be 2-D")
        if bits.shape != (len(self.time_axis), len(self.freq_axis)):
            raise ValueError("axes do not match the grid shape")
        if self.kind not in (OBSERVED, ESTIMATED, TRUTH):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self):
        return self.bits.shape

    @property
    def dt(self) -> float:
        if len(self.time_axis) > 1:
            return float(self.time_axis[1] - self.time_axis[0])
        return float(self.meta.get("dt", 1.0))

    @property
    def df(self) -> float:
        if len(self.freq_axis) > 1:
            return float(self.freq_axis[1] - self.freq_axis[0])
        return float(self.meta.get("df", 1.0))


def _pooled(capture) -> np.ndarray:
    values = capture.values if isinstance(capture, Spectrogram) else capture
    if isinstance(capture, Spectrogram) and capture.unit != "W/Hz":
        raise CalibrationError(f"calibration needs linear W/Hz samples, got {capture.unit}")
    return np.asarray(values, dtype=float).ravel()


def calibrate_noise(noise_capture, min_samples: int = 1000) -> NoiseCalibration:
    """Build the pooled noise ECDF from a terminated-input capture.

    ``noise_capture`` is a :class:`Spectrogram` or an array of linear PSD
    values.  All bins are pooled: the noise floor is taken as flat across
    the band.
    """
    samples = _pooled(noise_capture)
    if samples.size == 0:
        raise CalibrationError("noise capture is empty")
    bad = int(np.count_nonzero(~np.isfinite(samples)))
    if bad:
        raise CalibrationError(f"noise capture contains {bad} non-finite samples")
    if samples.size < min_samples:
        raise CalibrationError(
            f"noise capture has {samples.size} samples, need at least {min_samples}"
        )
    cal = NoiseCalibration.from_samples(samples)
    if not cal.mean_power > 0:
        raise CalibrationError("mean noise power must be positive")
    return cal


def threshold_from_pfa(cal: NoiseCalibration, p_f: float) -> float:
    """Smallest calibration sample ``v`` with ``1 - ECDF(v) <= p_f``.

    The empirical false-alarm rate on the calibration set is therefore never
    above ``p_f``.
    """
    if not 0.0 < p_f < 1.0:
        raise ValueError(f"p_f must lie in (0, 1), got {p_f}")
    n = cal.size
    # number of samples allowed strictly above the threshold
    allowed = min(n - 1, math.floor(n * p_f * (1.0 + 1e-12)))
    if allowed == 0:
        warnings.warn(
            f"p_f={p_f:g} is below 1/{n}; threshold is the sample maximum and "
            "the target cannot be verified from this calibration",
            UnverifiablePfaWarning,
            stacklevel=2,
        )
    return float(cal.samples[n - allowed - 1])


def analytic_pfa(threshold, noise_power):
    """False-alarm probability ``exp(-theta / sigma^2)`` for exponential noise power."""
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0) or noise_power <= 0:
        raise ValueError("need threshold >= 0 and noise_power > 0")
    out = np.exp(-threshold / noise_power)
    return float(out) if out.ndim == 0 else out


def analytic_threshold(p_f: float, noise_power: float) -> float:
    """Inverse of :func:`analytic_pfa`."""
    if not 0.0 < p_f <= 1.0:
        raise ValueError("p_f must lie in (0, 1]")
    return float(-noise_power * math.log(p_f))


def analytic_pd_rayleigh(threshold, noise_power, snr):
    """Per-bin detection probability of a Rayleigh-faded signal in AWGN.

    ``exp(-theta / (sigma^2 (1 + snr)))``; equals :func:`analytic_pfa` at
    ``snr = 0`` and tends to 1 as ``snr`` grows.
    """
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("snr must be >= 0 (linear)")
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0) or noise_power <= 0:
        raise ValueError("need threshold >= 0 and noise_power > 0")
    with np.errstate(divide="ignore"):
        out = np.exp(-threshold / (noise_power * (1.0 + snr)))
    return float(out) if out.ndim == 0 else out


def analytic_pm_rayleigh(threshold, noise_power, snr):
    return 1.0 - analytic_pd_rayleigh(threshold, noise_power, snr)


def binarize(spec, threshold: float) -> OccupancyGrid:
    """Energy detection: a cell is busy when its power is ``>= threshold``.

    ``spec`` must be linear (W/Hz); a dB spectrogram compared against a
    linear threshold gives meaningless output and this cannot be detected
    from the numbers alone.
    """
    if isinstance(spec, Spectrogram):
        if spec.unit != "W/Hz":
            raise ValueError(f"binarize needs a linear spectrogram, got unit {spec.unit}")
        values, t, f = spec.values, spec.time_axis, spec.freq_axis
        meta = {"dt": spec.dt, "df": spec.df, "time_span": spec.time_span}
    else:
        values = np.asarray(spec, dtype=float)
        t, f = np.arange(values.shape[0], dtype=float), np.arange(values.shape[1], dtype=float)
        meta = {"dt": 1.0, "df": 1.0, "time_span": float(values.shape[0])}
    bits = (values >= threshold).astype(np.uint8)
    return OccupancyGrid(bits=bits, time_axis=t, freq_axis=f, threshold=float(threshold),
                         kind=OBSERVED, meta=meta)
