"""Two-state continuous-time Markov occupancy model and Poisson arrival model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RHO_FLOOR = 0.05

# Published campaign results: duty cycle (fraction), correlation time (s),
# arrival rate over the band (1/s) and the quoted normalised traffic.
MEASURED_SITES = {
    "site1": (0.0035, 7.07e-3, 57.86, 0.41),
    "site2": (0.0017, 6.93e-3, 28.28, 0.20),
    "site3": (0.0006, 9.68e-3, 6.87, 0.07),
    "site4": (0.0005, 6.27e-3, 12.42, 0.08),
}


class ModelError(ValueError):
    pass


class InsufficientDataError(ModelError):
    pass


class ModelMismatchError(ModelError):
    pass


def _check_psi(psi):
    if not 0.0 < psi < 1.0:
        raise ValueError(f"duty cycle must lie in (0, 1), got {psi}")


def _check_tau(tau_corr):
    if not tau_corr > 0:
        raise ValueError(f"correlation time must be positive, got {tau_corr}")


def _lagged_products(x: np.ndarray, max_lag: int) -> np.ndarray:
    """``sum_n x[n] x[n+l]`` for ``l = 0..max_lag`` along the last axis."""
    n = x.shape[-1]
    size = 1 << int(math.ceil(math.log2(2 * n - 1))) if n > 1 else 2
    f = np.fft.rfft(x, size, axis=-1)
    acf = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., : max_lag + 1]
    return np.rint(acf) if np.issubdtype(x.dtype, np.integer) else acf


def estimate_autocorrelation(states, dt: float, max_lag: float) -> np.ndarray:
    """Normalised autocovariance of a 0/1 state sequence at lags ``0..max_lag``.

    ``states`` may be 1-D (one channel) or 2-D ``[time, bin]``; in the latter
    case the covariances of all non-constant bins are pooled before
    normalising.  ``max_lag`` is in seconds.
    """
    s = np.asarray(states)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise ValueError("states must be 1-D or 2-D")
    n = s.shape[0]
    lags = int(round(max_lag / dt))
    if lags < 1 or lags >= n:
        raise InsufficientDataError(f"max lag of {lags} samples does not fit {n} samples")
    s = s.astype(np.int64)
    psi = s.mean(axis=0)
    live = (psi > 0) & (psi < 1)
    if not live.any():
        raise ModelError("state sequence never changes; autocorrelation undefined")
    cols = np.flatnonzero(live)
    psi = psi[live]
    cov = np.zeros(lags + 1)
    # bins in batches to bound the FFT workspace
    batch = max(1, (1 << 22) // n)
    for i in range(0, cols.size, batch):
        x = np.ascontiguousarray(s[:, cols[i:i + batch]].T)
        means = _lagged_products(x, lags) / (n - np.arange(lags + 1))
        cov += (means - psi[i:i + batch, None] ** 2).sum(axis=0)
    var = (psi * (1 - psi)).sum()
    rho = cov / var
    rho[0] = 1.0
    return rho


def fit_exponential(rho, dt: float, floor: float = RHO_FLOOR) -> float:
    """Correlation time from a log-linear fit of ``rho(l dt) = exp(-l dt / tau)``.

    Uses the leading run of lags (from lag 0) whose value stays above
    ``floor``.  Each lag is weighted by ``rho`` since additive estimation
    noise of fixed size spreads ``log rho`` by about ``sigma / rho``.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.size == 0 or abs(rho[0] - 1.0) > 1e-9:
        raise ValueError("autocorrelation must start at 1")
    below = np.flatnonzero(rho <= floor)
    stop = int(below[0]) if below.size else rho.size
    if stop - 1 < 3:
        raise InsufficientDataError(f"only {stop - 1} lags above the {floor} floor")
    lag_t = np.arange(stop) * dt
    slope, _ = np.polyfit(-lag_t, np.log(rho[:stop]), 1, w=rho[:stop])
    if not slope > 0:
        raise ModelMismatchError("autocorrelation does not decay")
    return float(1.0 / slope)


def correlation(tau, tau_corr: float):
    return np.exp(-np.asarray(tau, dtype=float) / tau_corr)


def transition_probabilities(psi: float, tau_corr: float, tau) -> np.ndarray:
    """``P(tau)``; a scalar ``tau`` gives 2x2, an array gives ``(len, 2, 2)``."""
    _check_psi(psi)
    _check_tau(tau_corr)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    r = correlation(tau, tau_corr)
    p = np.empty(tau.shape + (2, 2))
    p[..., 0, 0] = 1 - psi + psi * r
    p[..., 0, 1] = psi - psi * r
    p[..., 1, 0] = (1 - psi) - (1 - psi) * r
    p[..., 1, 1] = psi + (1 - psi) * r
    return p


def generator_matrix(psi: float, tau_corr: float) -> np.ndarray:
    _check_psi(psi)
    _check_tau(tau_corr)
    return np.array([[-psi, psi], [1 - psi, psi - 1]]) / tau_corr


def dwell_times(psi: float, tau_corr: float):
    """Mean idle and busy sojourns ``(tau_0, tau_1)``."""
    _check_psi(psi)
    _check_tau(tau_corr)
    return tau_corr / psi, tau_corr / (1 - psi)


def steady_state(psi: float) -> np.ndarray:
    _check_psi(psi)
    return np.array([1 - psi, psi])


@dataclass(frozen=True)
class TemporalModel:
    duty_cycle: float
    tau_corr: float

    @property
    def steady_state(self):
        return steady_state(self.duty_cycle)

    @property
    def generator(self):
        return generator_matrix(self.duty_cycle, self.tau_corr)

    @property
    def dwell_times(self):
        return dwell_times(self.duty_cycle, self.tau_corr)

    def transition(self, tau):
        return transition_probabilities(self.duty_cycle, self.tau_corr, tau)


def fit_temporal_model(grid_bits, dt: float, max_lag: float | None = None) -> tuple:
    """Fit ``(TemporalModel, rho)`` to a binary occupancy matrix ``[time, bin]``."""
    bits = np.asarray(grid_bits)
    psi = float(bits.mean())
    _check_psi(psi)
    if max_lag is None:
        max_lag = min(bits.shape[0] - 1, 400) * dt
    rho = estimate_autocorrelation(bits, dt, max_lag)
    return TemporalModel(psi, fit_exponential(rho, dt)), rho


def arrival_rate(frames, time_span: float | None = None) -> float:
    """Frames per second over the capture."""
    t = time_span if time_span is not None else frames.time_span
    if not t > 0:
        raise ValueError("measurement time must be positive")
    return len(frames) / t


@dataclass(frozen=True)
class ArrivalFit:
    widths: np.ndarray
    rates: np.ndarray
    lambda_0: float
    lambda_B: float
    band: float
    mse: float
    low_confidence: bool

    def rate(self, b):
        b = np.asarray(b, dtype=float)
        return (b / self.band) * self.lambda_B + ((self.band - b) / self.band) * self.lambda_0


def _extent_cols(frames):
    lo = np.array([f.col0 for f in frames], dtype=np.int64)
    hi = np.array([f.col1 for f in frames], dtype=np.int64)
    return lo, hi


def sub_band_rates(frames, widths_cols, n_cols: int, time_span: float) -> np.ndarray:
    """Mean frames/s touching a window of each width, slid one column at a time."""
    lo, hi = _extent_cols(frames.frames if hasattr(frames, "frames") else frames)
    out = []
    for w in widths_cols:
        w = int(w)
        if not 1 <= w <= n_cols:
            raise ValueError(f"sub-band of {w} columns does not fit {n_cols}")
        starts = np.arange(n_cols - w + 1)
        if lo.size == 0:
            out.append(0.0)
            continue
        # frame overlaps [s, s+w-1] iff lo <= s+w-1 and hi >= s
        first = np.maximum(lo - w + 1, 0)
        last = np.minimum(hi, n_cols - w)
        hits = np.zeros(starts.size + 1)
        valid = last >= first
        np.add.at(hits, first[valid], 1)
        np.add.at(hits, last[valid] + 1, -1)
        counts = np.cumsum(hits)[:-1]
        out.append(counts.mean() / time_span)
    return np.asarray(out)


def arrival_rate_vs_bandwidth(frames, widths_cols=None, n_cols: int | None = None,
                              time_span: float | None = None, df: float | None = None,
                              min_frames: int = 30) -> ArrivalFit:
    """Least-squares line through the sub-band arrival rates.

    Widths are given in columns; the returned ``widths`` are in Hz.  The
    intercept is ``lambda(0)`` and the value at the full band ``lambda(B)``.
    """
    n_cols = n_cols if n_cols is not None else frames.shape[1]
    time_span = time_span if time_span is not None else frames.time_span
    df = df if df is not None else frames.df
    if widths_cols is None:
        widths_cols = np.unique(np.linspace(1, n_cols, num=min(n_cols, 20)).round().astype(int))
    widths_cols = np.asarray(widths_cols, dtype=int)
    if np.unique(widths_cols).size < 2:
        raise ValueError("need at least two distinct sub-band widths")
    rates = sub_band_rates(frames, widths_cols, n_cols, time_span)
    b = widths_cols * df
    band = n_cols * df
    slope, intercept = np.polyfit(b, rates, 1)
    resid = rates - (slope * b + intercept)
    return ArrivalFit(widths=b, rates=rates, lambda_0=float(intercept),
                      lambda_B=float(intercept + slope * band), band=band,
                      mse=float(np.mean(resid ** 2)), low_confidence=len(frames) < min_frames)


def normalized_traffic(rate, psi: float, tau_corr: float):
    """Offered load ``lambda * tau_corr / (1 - psi)``, i.e. rate times busy dwell."""
    _check_psi(psi)
    _check_tau(tau_corr)
    out = np.asarray(rate, dtype=float) * tau_corr / (1.0 - psi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelModel:
    temporal: TemporalModel
    lambda_B: float
    lambda_0: float
    band: float
    fit_mse: float

    @property
    def normalized_traffic(self) -> float:
        return normalized_traffic(self.lambda_B, self.temporal.duty_cycle, self.temporal.tau_corr)

    def as_dict(self) -> dict:
        t = self.temporal
        tau0, tau1 = t.dwell_times
        return {
            "psi": t.duty_cycle,
            "tau_corr_s": t.tau_corr,
            "lambda_B": self.lambda_B,
            "lambda_0": self.lambda_0,
            "band_hz": self.band,
            "G_B": self.normalized_traffic,
            "Q": t.generator.tolist(),
            "dwell_0_s": tau0,
            "dwell_1_s": tau1,
            "fit_mse": self.fit_mse,
        }
