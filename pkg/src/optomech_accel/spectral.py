"""PSD estimation, Lorentzian fitting and calibration-tone extraction of g0.

Spectra of the thermally driven mode are spectra of cavity-frequency
fluctuations ``g_om * x(t)`` (units (rad/s)^2/Hz, one-sided). Their integral
over positive frequencies is the frequency variance ``2 g0^2 n_th``. A phase
modulation ``beta * cos(omega_tone t)`` appears in that channel as a line of
integrated power ``beta^2 omega_tone^2 / 2``. The ratio of the two areas
gives g0 without knowing the detector gain.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal
from scipy.optimize import OptimizeWarning, curve_fit

from .model import HBAR, K_B, MechanicalMode


class NoPeakError(RuntimeError):
    pass


class FitError(RuntimeError):
    def __init__(self, msg, last_params=None, residual=None):
        super().__init__(msg)
        self.last_params = last_params
        self.residual = residual


@dataclass(frozen=True)
class PsdTrace:
    freqs: np.ndarray  # Hz
    psd: np.ndarray  # one-sided, units^2 / Hz
    window: str = "none"
    n_segments: int = 0
    rbw: float = 0.0  # equivalent noise bandwidth, Hz
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        if f.shape != p.shape or f.ndim != 1:
            raise ValueError("freqs and psd must be 1-D arrays of equal length")
        if len(f) > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("PSD values must be >= 0")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "psd", p)

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if len(self.freqs) > 1 else 0.0

    def total_power(self) -> float:
        """Sum of PSD * bin width (the discrete Parseval integral)."""
        return float(np.sum(self.psd) * self.df)

    def scaled(self, factor: float) -> PsdTrace:
        return PsdTrace(self.freqs, self.psd * factor, self.window, self.n_segments, self.rbw,
                        dict(self.meta))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# rbw_hz={float(self.rbw)!r}\n")
            fh.write(f"# window={self.window} segments={self.n_segments}\n")
            fh.write("freq_hz,psd\n")
            for f, p in zip(self.freqs, self.psd):
                fh.write(f"{float(f)!r},{float(p)!r}\n")

    @classmethod
    def from_csv(cls, path) -> PsdTrace:
        rbw, window, nseg = 0.0, "none", 0
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("# rbw_hz="):
                    rbw = float(line.split("=", 1)[1])
                elif line.startswith("# window="):
                    parts = dict(p.split("=") for p in line[2:].split())
                    window, nseg = parts["window"], int(parts["segments"])
                elif line and not line.startswith("#") and not line.startswith("freq_hz"):
                    f, p = line.split(",")
                    rows.append((float(f), float(p)))
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], window, nseg, rbw)


def periodogram(x, fs: float, window: str = "hann", nperseg: int | None = None,
                noverlap: int | None = None) -> PsdTrace:
    """Welch-averaged one-sided PSD, density scaled by the window power sum(w^2).

    No detrending, so a DC offset stays in the 0 Hz bin(s).
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty time series")
    nperseg = x.size if nperseg is None else int(nperseg)
    if nperseg > x.size:
        raise ValueError("segment length exceeds series length")
    noverlap = nperseg // 2 if noverlap is None else int(noverlap)
    if noverlap >= nperseg:
        raise ValueError("overlap must be smaller than the segment length")
    f, p = signal.welch(x, fs=fs, window=window, nperseg=nperseg, noverlap=noverlap,
                        detrend=False, scaling="density", return_onesided=True)
    w = signal.get_window(window, nperseg)
    enbw = fs * np.sum(w**2) / np.sum(w) ** 2
    nseg = 1 + (x.size - nperseg) // (nperseg - noverlap)
    return PsdTrace(f, p, window, nseg, float(enbw))


def thermal_occupancy(mech: MechanicalMode, temperature: float) -> float:
    """k_B T / (hbar omega_m), classical limit without the +1/2."""
    return K_B * temperature / (HBAR * mech.omega_m)


def mode_lineshape(f, f0: float, fwhm: float):
    """Oscillator lineshape normalized to unit area over f > 0 (1/Hz).

    Equal to 4 w0^2 G / ((w^2 - w0^2)^2 + G^2 w^2) with w = 2 pi f and
    G = 2 pi fwhm.
    """
    w = 2 * np.pi * np.asarray(f, dtype=float)
    w0, g = 2 * np.pi * f0, 2 * np.pi * fwhm
    return 4 * w0**2 * g / ((w**2 - w0**2) ** 2 + g**2 * w**2)


def analytic_mode_psd(mech: MechanicalMode, g0: float, n_th: float, freqs) -> PsdTrace:
    """Cavity-frequency noise PSD of the thermal mode, (rad/s)^2 per Hz.

    8 g0^2 n_th w_m^2 G / ((w^2 - w_m^2)^2 + G^2 w^2), which integrates to
    2 g0^2 n_th over positive frequencies and peaks at 8 g0^2 n_th / G.
    """
    freqs = np.asarray(freqs, dtype=float)
    if np.any(freqs <= 0):
        raise ValueError("frequency grid must be positive")
    psd = 2 * g0**2 * n_th * mode_lineshape(freqs, mech.f_m, mech.gamma_m / (2 * np.pi))
    return PsdTrace(freqs, psd, "analytic", 0, 0.0)


# --- fitting -----------------------------------------------------------------

@dataclass(frozen=True)
class LorentzianFit:
    omega_m: float  # rad/s
    gamma_m: float  # FWHM, rad/s
    area: float  # trace units * Hz
    floor: float
    stderr: dict
    residual_norm: float
    covariance: np.ndarray = field(repr=False)

    @property
    def f_m(self) -> float:
        return self.omega_m / (2 * np.pi)

    def model(self, f) -> np.ndarray:
        return self.area * mode_lineshape(f, self.f_m, self.gamma_m / (2 * np.pi)) + self.floor


def _floor_and_sigma(p: np.ndarray) -> tuple[float, float]:
    floor = float(np.median(p))
    sigma = float(1.4826 * np.median(np.abs(p - floor)))
    return floor, sigma


def detect_peak(p: np.ndarray, nsigma: float = 3.0) -> int:
    """Index of the largest bin if it stands ``nsigma`` above the noise floor.

    The floor is the median and sigma the MAD-scaled spread; the threshold adds
    sqrt(2 ln N) sigma, the typical largest excursion of N noise-only bins.
    """
    floor, sigma = _floor_and_sigma(p)
    i = int(np.argmax(p))
    thresh = floor + (nsigma + math.sqrt(2 * math.log(max(len(p), 2)))) * sigma
    if sigma == 0.0:
        if p[i] > floor:
            return i
        raise NoPeakError("flat trace: no peak above the floor")
    if p[i] <= thresh:
        raise NoPeakError(f"no peak above floor: max {p[i]:.3g} <= threshold {thresh:.3g}")
    return i


def lorentzian_fit(trace: PsdTrace, band: tuple[float, float] | None = None,
                   exclude: list[tuple[float, float]] = (), maxfev: int = 2000
                   ) -> LorentzianFit:
    """Least-squares fit of the oscillator lineshape plus a constant floor.

    Initial guess: peak bin, half-power width, trapezoid area above the
    median floor. ``exclude`` masks frequency intervals (e.g. a calibration
    tone) from the fit.
    """
    f, p = trace.freqs, trace.psd
    mask = np.ones_like(f, dtype=bool)
    if band is not None:
        mask &= (f >= band[0]) & (f <= band[1])
    for lo, hi in exclude:
        mask &= ~((f >= lo) & (f <= hi))
    mask &= f > 0
    f, p = f[mask], p[mask]
    if len(f) < 8:
        raise ValueError("too few points to fit")

    i0 = detect_peak(p)
    floor0, _ = _floor_and_sigma(p)
    half = floor0 + 0.5 * (p[i0] - floor0)
    lo = i0
    while lo > 0 and p[lo] > half:
        lo -= 1
    hi = i0
    while hi < len(p) - 1 and p[hi] > half:
        hi += 1
    df = np.median(np.diff(f))
    fwhm0 = max(f[hi] - f[lo], df)
    area0 = max(float(np.trapezoid(np.clip(p - floor0, 0, None), f)), 1e-300)
    f00 = f[i0]

    # fit in scaled coordinates so every parameter is O(1)
    scale = p[i0]
    y = p / scale
    fl_unit = floor0 if floor0 > 0 else 1e-3 * scale

    def model(ff, c, w, a, fl):
        return (a * area0 * mode_lineshape(ff, f00 + c * fwhm0, abs(w) * fwhm0)
                + fl * fl_unit) / scale

    p0 = [0.0, 1.0, 1.0, 1.0 if floor0 > 0 else 0.0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, f, y, p0=p0, maxfev=maxfev)
    except RuntimeError as exc:
        raise FitError(f"fit did not converge: {exc}", last_params=p0) from exc
    if not np.all(np.isfinite(pcov)):
        # Levenberg-Marquardt drops the covariance on near-exact fits; redo it by SVD
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, f, y, p0=popt, method="trf", maxfev=maxfev)
        if not np.all(np.isfinite(pcov)):
            raise FitError("singular covariance", last_params=popt)
    c, w, a, fl = popt
    jac = np.diag([fwhm0 * 2 * np.pi, fwhm0 * 2 * np.pi, area0, fl_unit])
    cov = jac @ pcov @ jac
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    resid = float(np.linalg.norm(y - model(f, *popt)) * scale)
    return LorentzianFit(
        omega_m=2 * np.pi * (f00 + c * fwhm0), gamma_m=2 * np.pi * abs(w) * fwhm0,
        area=a * area0, floor=fl * fl_unit,
        stderr={"omega_m": err[0], "gamma_m": err[1], "area": err[2], "floor": err[3]},
        residual_norm=resid, covariance=cov)


def integrate_psd_area(trace: PsdTrace, band: tuple[float, float] | None = None) -> float:
    """Trapezoidal integral of the PSD over ``band`` (whole trace if None)."""
    f, p = trace.freqs, trace.psd
    if band is not None:
        if band[0] < f[0] or band[1] > f[-1]:
            raise ValueError("band outside trace support")
        m = (f >= band[0]) & (f <= band[1])
        f, p = f[m], p[m]
    if len(f) < 2:
        raise ValueError("empty integration band")
    return float(np.trapezoid(p, f))


def line_power(trace: PsdTrace, f_line: float, half_width_bins: int = 4,
               baseline=None) -> float:
    """Integrated power of a narrow line: sum of (PSD - baseline) * df near ``f_line``.

    Leakage of a windowed tone stays within a few bins, so the sum does not
    depend on where the tone falls between bins. ``baseline`` is a callable
    of frequency or a constant; by default the median of the neighbouring bins.
    """
    f, p = trace.freqs, trace.psd
    i = int(np.argmin(np.abs(f - f_line)))
    lo, hi = max(i - half_width_bins, 0), min(i + half_width_bins + 1, len(f))
    if baseline is None:
        side = np.r_[p[max(lo - 8 * half_width_bins, 0):lo], p[hi:hi + 8 * half_width_bins]]
        base = np.median(side) if side.size else 0.0
    elif callable(baseline):
        base = baseline(f[lo:hi])
    else:
        base = baseline
    return float(np.sum(p[lo:hi] - base) * trace.df)


# --- g0 extraction -----------------------------------------------------------

@dataclass(frozen=True)
class CalibrationTone:
    omega_tone: float
    v_tone: float
    v_pi: float

    def __post_init__(self):
        if self.omega_tone <= 0:
            raise ValueError("tone frequency must be > 0")
        if self.v_pi <= 0:
            raise ValueError("half-wave voltage must be > 0")
        if self.beta_tone >= 0.5:
            warnings.warn(f"modulation depth {self.beta_tone:.3g} >= 0.5: outside the linear regime",
                          stacklevel=2)

    @property
    def beta_tone(self) -> float:
        return self.v_tone * math.pi / self.v_pi

    @property
    def line_power(self) -> float:
        """Integrated frequency-noise power of the tone, beta^2 omega^2 / 2."""
        return 0.5 * self.beta_tone**2 * self.omega_tone**2

    @classmethod
    def from_beta(cls, beta: float, omega_tone: float, v_pi: float = 1.0) -> CalibrationTone:
        return cls(omega_tone, beta * v_pi / math.pi, v_pi)


@dataclass(frozen=True)
class G0Estimate:
    g0: float  # rad/s
    sigma: float

    @property
    def g0_hz(self) -> float:
        return self.g0 / (2 * math.pi)


def extract_g0(area_mode: float, area_tone: float, tone: CalibrationTone, n_th: float, *,
               gain_ratio: float | None = None, sigma_area_mode: float = 0.0,
               sigma_area_tone: float = 0.0, omega_m: float | None = None,
               gamma_m: float | None = None) -> G0Estimate:
    """g0 = (beta omega_tone / 2) sqrt(A_m / (n_th A_tone)) [* |G(w_tone)/G(w_m)|].

    ``gain_ratio`` is |G_V(omega_tone) / G_V(omega_m)|; None assumes the
    detector response is equal at both frequencies, which is warned about
    when the tone sits more than 10 linewidths from the mode.
    """
    if area_tone <= 0:
        raise ValueError("tone area must be > 0")
    if n_th <= 0:
        raise ValueError("n_th must be > 0")
    beta = tone.beta_tone
    if beta <= 0:
        raise ValueError("modulation depth must be > 0")
    if area_mode < 0:
        raise ValueError("mode area must be >= 0")
    if gain_ratio is None and omega_m is not None and gamma_m is not None:
        if abs(tone.omega_tone - omega_m) > 10 * gamma_m:
            warnings.warn("tone is more than 10 linewidths from the mode; equal-gain "
                          "simplification may not hold", stacklevel=2)
    ratio = 1.0 if gain_ratio is None else gain_ratio
    g0 = 0.5 * beta * tone.omega_tone * math.sqrt(area_mode / (n_th * area_tone)) * ratio
    if area_mode == 0:
        return G0Estimate(0.0, 0.0)
    rel = 0.5 * math.hypot(sigma_area_mode / area_mode, sigma_area_tone / area_tone)
    return G0Estimate(g0, g0 * rel)


# --- synthetic calibration record -------------------------------------------

def colored_noise(psd_fn, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian series with one-sided PSD ``psd_fn(f)`` (periodic, exact in expectation)."""
    f = np.fft.rfftfreq(n, 1.0 / fs)
    s = np.zeros_like(f)
    s[1:] = psd_fn(f[1:])
    amp = np.sqrt(s * n * fs / 4.0)
    spec = amp * (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size))
    spec[0] = 0.0
    return np.fft.irfft(spec, n=n)


def synthesize_calibration_signal(mech: MechanicalMode, g0: float, n_th: float,
                                  tone: CalibrationTone, *, fs: float, n_samples: int,
                                  gain: float = 1.0, gain_curve=None,
                                  noise_floor: float = 0.0, seed: int | None = 0
                                  ) -> np.ndarray:
    """Detector voltage for a frequency-noise calibration measurement.

    Cavity-frequency fluctuations from the thermal mode (PSD of
    :func:`analytic_mode_psd`) plus the phase-modulation tone, transduced with
    ``gain`` (V per rad/s, optionally shaped by ``gain_curve`` =
    (f_hz, relative gain) pairs), plus white detector noise of one-sided
    density ``noise_floor`` V/sqrt(Hz).
    """
    rng = np.random.default_rng(seed)
    fwhm = mech.gamma_m / (2 * np.pi)
    mode = colored_noise(lambda f: 2 * g0**2 * n_th * mode_lineshape(f, mech.f_m, fwhm),
                         n_samples, fs, rng)
    t = np.arange(n_samples) / fs
    phase = rng.uniform(0, 2 * np.pi)
    # instantaneous frequency of the phase modulation beta*cos(w t + phi)
    tone_sig = -tone.beta_tone * tone.omega_tone * np.sin(tone.omega_tone * t + phase)
    sig = mode + tone_sig
    if gain_curve is not None:
        fr = np.fft.rfftfreq(n_samples, 1.0 / fs)
        fx, gx = zip(*gain_curve)
        sig = np.fft.irfft(np.fft.rfft(sig) * np.interp(fr, fx, gx), n=n_samples)
    v = gain * sig
    if noise_floor > 0:
        v = v + noise_floor * math.sqrt(fs / 2.0) * rng.standard_normal(n_samples)
    return v


@dataclass(frozen=True)
class CalibrationResult:
    g0: G0Estimate
    fit: LorentzianFit
    area_mode: float
    area_tone: float
    snr_mode_db: float
    snr_tone_db: float
    trace: PsdTrace = field(repr=False)

    def to_json(self, path, provenance: dict | None = None) -> None:
        fit = self.fit
        doc = {
            "g0_rad_s": self.g0.g0, "g0_sigma_rad_s": self.g0.sigma, "g0_hz": self.g0.g0_hz,
            "area_mode": self.area_mode, "area_tone": self.area_tone,
            "fit": {"omega_m_rad_s": fit.omega_m, "gamma_m_rad_s": fit.gamma_m,
                    "area": fit.area, "floor": fit.floor,
                    "stderr": {k: float(v) for k, v in fit.stderr.items()},
                    "residual_norm": fit.residual_norm},
            "snr_mode_db": self.snr_mode_db, "snr_tone_db": self.snr_tone_db,
            "provenance": provenance or {},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def calibrate_g0(voltage, fs: float, tone: CalibrationTone, n_th: float, *,
                 nperseg: int = 16384, fit_halfwidth: float = 25.0,
                 tone_bins: int = 4, gain_ratio: float | None = None) -> CalibrationResult:
    """Periodogram -> Lorentzian fit of the mode -> tone line power -> g0."""
    trace = periodogram(voltage, fs, "hann", nperseg)
    f_tone = tone.omega_tone / (2 * np.pi)
    guard = (tone_bins + 2) * trace.df
    excl = [(f_tone - guard, f_tone + guard), (0.0, 2 * trace.df)]
    coarse = lorentzian_fit(trace, exclude=excl)
    fwhm = coarse.gamma_m / (2 * np.pi)
    band = (max(coarse.f_m - fit_halfwidth * fwhm, trace.df * 3),
            coarse.f_m + fit_halfwidth * fwhm)
    fit = lorentzian_fit(trace, band=band, exclude=excl)
    # tone power above the fitted mode tail and floor
    a_tone = line_power(trace, f_tone, tone_bins, baseline=fit.model)
    i_t = int(np.argmin(np.abs(trace.freqs - f_tone)))
    bg_t = float(fit.model(trace.freqs[i_t]))
    snr_tone = 10 * np.log10(max(trace.psd[i_t] - bg_t, 1e-300) / bg_t)
    peak = float(fit.model(fit.f_m)) - fit.floor
    snr_mode = 10 * np.log10(peak / fit.floor) if fit.floor > 0 else math.inf
    if a_tone <= 0:
        raise NoPeakError("calibration tone not found above background")
    est = extract_g0(fit.area, a_tone, tone, n_th, gain_ratio=gain_ratio,
                     sigma_area_mode=fit.stderr["area"], omega_m=fit.omega_m,
                     gamma_m=fit.gamma_m)
    return CalibrationResult(est, fit, fit.area, a_tone, float(snr_mode), float(snr_tone), trace)


def fit_to_dict(fit: LorentzianFit) -> dict:
    d = asdict(fit)
    d.pop("covariance")
    return d
