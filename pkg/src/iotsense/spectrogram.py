"""IQ capture to power-spectral-density matrix.

Each row of the spectrogram is one stride of ``window_size`` samples, Hamming
windowed, transformed, normalised by the window length and squared, then
averaged over groups of ``averaging`` adjacent bins.  Columns are fft-shifted
so column 0 sits at the low edge of the captured band.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MW = 1e-3


class EmptySpectrogramError(ValueError):
    """Raised when a recording cannot fill a single window."""


@dataclass(frozen=True)
class IQRecording:
    samples: np.ndarray
    sample_rate: float
    center_frequency: float = 0.0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))

    @property
    def total_samples(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT settings.  Defaults are the 30 MHz / 15000-sample capture setup."""

    window_size: int = 15000
    averaging: int = 10
    overlap: float = 0.0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.averaging < 1:
            raise ValueError("averaging must be >= 1")
        if self.window_size % self.averaging:
            raise ValueError(
                f"averaging factor {self.averaging} does not divide window size {self.window_size}"
            )
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")

    @property
    def dft_points(self) -> int:
        """Columns after bin averaging."""
        return self.window_size // self.averaging

    @property
    def hop(self) -> int:
        return max(1, int(round(self.window_size * (1.0 - self.overlap))))

    def time_resolution(self, sample_rate: float) -> float:
        return self.window_size / sample_rate

    def frequency_resolution(self, sample_rate: float) -> float:
        return self.averaging / self.time_resolution(sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """PSD matrix ``values[n, k]`` with its physical axes.

    ``time_axis`` holds row start times in seconds, ``freq_axis`` the absolute
    centre frequency of every column in Hz.
    """

    values: np.ndarray
    time_axis: np.ndarray
    freq_axis: np.ndarray
    time_span: float
    unit: str = "W/Hz"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError("spectrogram values must be 2-D")
        if values.shape != (len(self.time_axis), len(self.freq_axis)):
            raise ValueError(
                f"axes {len(self.time_axis)}x{len(self.freq_axis)} do not match values {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def dt(self) -> float:
        if len(self.time_axis) > 1:
            return float(self.time_axis[1] - self.time_axis[0])
        return float(self.meta.get("dt", self.time_span))

    @property
    def df(self) -> float:
        if len(self.freq_axis) > 1:
            return float(self.freq_axis[1] - self.freq_axis[0])
        return float(self.meta.get("df", 0.0))


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window ``0.54 - 0.46 cos(2 pi i / (length - 1))``."""
    if length < 1:
        raise ValueError("window length must be >= 1")
    if length == 1:
        return np.ones(1)
    i = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * i / (length - 1))


def average_bins(power: np.ndarray, factor: int) -> np.ndarray:
    """Arithmetic mean over contiguous groups of ``factor`` columns."""
    power = np.asarray(power)
    if factor < 1 or power.shape[-1] % factor:
        raise ValueError(f"factor {factor} does not divide {power.shape[-1]} bins")
    return power.reshape(*power.shape[:-1], power.shape[-1] // factor, factor).mean(axis=-1)


def frequency_axis(sample_rate: float, cfg: SpectrogramConfig, center_frequency: float = 0.0):
    raw = np.fft.fftshift(np.fft.fftfreq(cfg.window_size, d=1.0 / sample_rate))
    return center_frequency + average_bins(raw, cfg.averaging)


def compute_spectrogram(
    iq: IQRecording, cfg: SpectrogramConfig | None = None, chunk_rows: int = 256
) -> Spectrogram:
    cfg = cfg or SpectrogramConfig()
    x = iq.samples
    n_w = cfg.window_size
    if x.size < n_w:
        raise EmptySpectrogramError(
            f"recording has {x.size} samples, fewer than one window of {n_w}"
        )
    hop = cfg.hop
    rows = 1 + (x.size - n_w) // hop
    # partial final stride is dropped
    frames = np.lib.stride_tricks.sliding_window_view(x, n_w)[::hop][:rows]
    window = hamming_window(n_w)
    values = np.empty((rows, cfg.dft_points))
    for start in range(0, rows, chunk_rows):
        stop = min(rows, start + chunk_rows)
        spectrum = np.fft.fft(frames[start:stop] * window, axis=1) / n_w
        power = np.fft.fftshift(np.abs(spectrum) ** 2, axes=1)
        values[start:stop] = average_bins(power, cfg.averaging)

    fs = iq.sample_rate
    time_axis = np.arange(rows) * (hop / fs)
    freq_axis = frequency_axis(fs, cfg, iq.center_frequency)
    return Spectrogram(
        values=values,
        time_axis=time_axis,
        freq_axis=freq_axis,
        time_span=(iq.total_samples - 1) / fs,
        meta={
            "sample_rate": fs,
            "center_frequency": iq.center_frequency,
            "window_size": n_w,
            "averaging": cfg.averaging,
            "overlap": cfg.overlap,
            "dt": cfg.time_resolution(fs),
            "df": cfg.frequency_resolution(fs),
        },
    )


def to_dbm_per_hz(spec: Spectrogram, reference: float = MW) -> Spectrogram:
    """Convert a linear W/Hz spectrogram to dBm/Hz (``reference`` is 1 mW)."""
    if reference <= 0:
        raise ValueError("reference scale must be positive")
    if spec.unit != "W/Hz":
        raise ValueError(f"expected a linear spectrogram, got unit {spec.unit!r}")
    v = spec.values
    if np.any(~(v > 0)):
        raise ValueError("dB conversion needs strictly positive values")
    return replace(spec, values=10.0 * np.log10(v / reference), unit="dBm/Hz")


def from_dbm_per_hz(spec: Spectrogram, reference: float = MW) -> Spectrogram:
    if spec.unit != "dBm/Hz":
        raise ValueError(f"expected a dBm/Hz spectrogram, got unit {spec.unit!r}")
    return replace(spec, values=reference * 10.0 ** (spec.values / 10.0), unit="W/Hz")


def dbm_to_watts(dbm):
    return MW * 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def watts_to_dbm(watts):
    watts = np.asarray(watts, dtype=float)
    if np.any(~(watts > 0)):
        raise ValueError("dB conversion needs strictly positive values")
    return 10.0 * np.log10(watts / MW)
