"""Sliding-window spectral peak tracking of the oscillator frequency."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.optimize import curve_fit


@dataclass(frozen=True)
class TrackerConfig:
    window_s: float = 0.5
    hop_s: float = 0.25
    f_min: float = 0.0
    f_max: float | None = None
    zero_pad: int = 4
    nsigma: float = 3.0
    refine: str = "parabolic"  # or "lorentzian"
    window: str = "hann"
    f_nominal: float | None = None  # expected line frequency; fs must be >= 10x this


@dataclass(frozen=True)
class FrequencyTrack:
    t: np.ndarray  # window centres, s
    f: np.ndarray  # Hz, nan where no peak was found
    confidence: np.ndarray  # peak-to-floor ratio in dB, nan for gaps
    rbw: float

    @property
    def gaps(self) -> np.ndarray:
        return np.isnan(self.f)


def _parabolic(y: np.ndarray, i: int) -> float:
    # vertex offset of a parabola through three log-power samples
    a, b, c = np.log(y[i - 1:i + 2])
    den = a - 2 * b + c
    return 0.0 if den == 0 else 0.5 * (a - c) / den


def _lorentz(f, amp, f0, w, fl):
    return amp / (1 + ((f - f0) / w) ** 2) + fl


def window_estimate(seg: np.ndarray, fs: float, cfg: TrackerConfig, taper: np.ndarray
                    ) -> tuple[float, float]:
    """(frequency, confidence dB) of the dominant line in one window; nan if none."""
    n = seg.size
    nfft = n * cfg.zero_pad
    spec = np.abs(np.fft.rfft(seg * taper, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    f_max = fs / 2 if cfg.f_max is None else cfg.f_max
    band = np.flatnonzero((freqs >= cfg.f_min) & (freqs <= f_max))
    if band.size < 3:
        raise ValueError("tracking band holds fewer than 3 bins")
    p = spec[band]
    # unaveraged periodogram bins of noise are exponential with mean mu;
    # the largest of N independent bins exceeds mu*(ln N + s^2) with prob ~exp(-s^2)
    mu = np.median(p) / math.log(2)
    n_indep = max(band.size // cfg.zero_pad, 2)
    thresh = mu * (math.log(n_indep) + cfg.nsigma**2)
    j = int(np.argmax(p))
    if mu <= 0 or p[j] <= thresh or j == 0 or j == p.size - 1:
        return math.nan, math.nan
    df = freqs[1] - freqs[0]
    f0 = freqs[band[j]] + _parabolic(p, j) * df
    if cfg.refine == "lorentzian":
        lo, hi = max(j - 4 * cfg.zero_pad, 0), min(j + 4 * cfg.zero_pad + 1, p.size)
        try:
            popt, _ = curve_fit(_lorentz, freqs[band[lo:hi]], p[lo:hi],
                                p0=[p[j], f0, 2 * df * cfg.zero_pad, 0.0], maxfev=400)
            if abs(popt[1] - f0) < 2 * df * cfg.zero_pad:
                f0 = float(popt[1])
        except RuntimeError:
            pass
    return float(f0), float(10 * np.log10(p[j] / mu))


def track_frequency(v, fs: float, cfg: TrackerConfig = TrackerConfig(), t0: float = 0.0
                    ) -> FrequencyTrack:
    """Estimate the dominant frequency in sliding windows, stamped at window centres."""
    v = np.asarray(v, dtype=float)
    if cfg.f_nominal is not None and fs < 10 * cfg.f_nominal:
        raise ValueError(f"sample rate {fs:g} Hz is below 10x the tracked frequency")
    n = int(round(cfg.window_s * fs))
    hop = int(round(cfg.hop_s * fs))
    if n < 8 or hop < 1 or n > v.size:
        raise ValueError("window must hold >= 8 samples and fit inside the record")
    taper = signal.get_window(cfg.window, n)
    ts, fs_est, conf = [], [], []
    for start in range(0, v.size - n + 1, hop):
        f0, c = window_estimate(v[start:start + n], fs, cfg, taper)
        ts.append(t0 + (start + 0.5 * n) / fs)
        fs_est.append(f0)
        conf.append(c)
    enbw = fs * np.sum(taper**2) / np.sum(taper) ** 2
    return FrequencyTrack(np.array(ts), np.array(fs_est), np.array(conf), float(enbw))
