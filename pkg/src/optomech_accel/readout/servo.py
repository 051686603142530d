"""Laser-detuning servo that extends the dynamic range, and a closed-loop demo.

The controller is a hysteresis state machine: while the tracked frequency
stays inside ``[f_lo, f_hi]`` nothing happens; when it leaves the band the
laser detuning is stepped so the frequency jumps back by whole band widths.
Each step is booked in a ledger so the readout can add the equivalent
acceleration back in.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from .. import spring
from ..model import DeviceConfig, G_STANDARD
from .chain import ScaleFactor, accel_per_detuning, estimate_acceleration, noise_budget, scale_factor
from .tracking import TrackerConfig, window_estimate


class SaturationError(RuntimeError):
    def __init__(self, msg: str, max_accel: float):
        super().__init__(msg)
        self.max_accel = max_accel


@dataclass(frozen=True)
class RetuneEvent:
    t: float
    step: float  # rad/s
    cumulative: float  # rad/s


@dataclass(frozen=True)
class RangeController:
    f_lo: float
    f_hi: float
    hz_per_rad_s: float  # df_eff/dDelta at the operating point
    step: float | None = None  # rad/s; default band width / |slope|
    max_offset: float = math.inf  # usable laser tuning (rad/s) inside the stable region
    settle_s: float = 0.0
    accel_per_rad_s: float = math.nan  # for saturation reports only
    offset: float = 0.0
    step_count: int = 0
    state: str = "locked"
    hold_until: float = -math.inf
    ledger: tuple[RetuneEvent, ...] = ()

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise ValueError("need f_lo < f_hi")
        if self.hz_per_rad_s == 0:
            raise ValueError("zero frequency slope: the operating point has no spring")
        if self.step is None:
            object.__setattr__(self, "step", (self.f_hi - self.f_lo) / abs(self.hz_per_rad_s))

    @property
    def band(self) -> float:
        return self.f_hi - self.f_lo

    @property
    def available_steps(self) -> float:
        return math.floor(self.max_offset / self.step) if math.isfinite(self.max_offset) else math.inf

    def dynamic_range(self, single_point_range: float) -> float:
        return single_point_range * (1 + self.available_steps)


def extend_dynamic_range(ctrl: RangeController, stream: Iterable[tuple[float, float]]
                         ) -> tuple[RangeController, list[RetuneEvent], tuple[RetuneEvent, ...]]:
    """Feed (t, f_est) samples in order; return the new state, new commands and the ledger."""
    commands = []
    centre = 0.5 * (ctrl.f_lo + ctrl.f_hi)
    for t, f in stream:
        if t < ctrl.hold_until:
            continue
        if ctrl.state != "locked":
            ctrl = replace(ctrl, state="locked")
        if not math.isfinite(f) or ctrl.f_lo <= f <= ctrl.f_hi:
            continue
        n = max(1, math.floor(abs(f - centre) / ctrl.band + 0.5))
        # frequency must move by -sign(f - centre) * n * band
        direction = -int(np.sign(f - centre)) * int(np.sign(ctrl.hz_per_rad_s))
        count = ctrl.step_count + direction * n
        offset = count * ctrl.step
        if abs(offset) > ctrl.max_offset * (1 + 1e-12):
            span = ctrl.max_offset + 0.5 * ctrl.step
            raise SaturationError(
                f"retune to offset {offset:.4g} rad/s leaves the usable range "
                f"+-{ctrl.max_offset:.4g} rad/s; max representable acceleration "
                f"{span * abs(ctrl.accel_per_rad_s):.4g} m/s^2",
                span * abs(ctrl.accel_per_rad_s))
        ev = RetuneEvent(float(t), direction * n * ctrl.step, offset)
        commands.append(ev)
        ctrl = replace(ctrl, offset=offset, step_count=count, state="retuning",
                       hold_until=t + ctrl.settle_s, ledger=ctrl.ledger + (ev,))
    return ctrl, commands, ctrl.ledger


def ledger_to_json(ledger, path) -> None:
    with open(path, "w") as fh:
        json.dump([{"t": e.t, "step_rad_s": e.step, "cumulative_rad_s": e.cumulative}
                   for e in ledger], fh, indent=2)
        fh.write("\n")


# --- closed-loop simulation --------------------------------------------------

@dataclass
class ClosedLoopResult:
    t: np.ndarray
    f_est: np.ndarray
    a_est: np.ndarray
    a_true: np.ndarray
    offset: np.ndarray
    held: np.ndarray
    retune: np.ndarray
    f_ref: float
    scale: ScaleFactor
    controller: RangeController | None
    sf_pairs: list = field(default_factory=list)  # (sf_before, sf_after) per retune, Hz/(m/s^2)

    def usable(self) -> np.ndarray:
        return ~self.held & np.isfinite(self.a_est)

    def to_csv(self, path, confidence=None) -> None:
        conf = np.ones_like(self.t) if confidence is None else confidence
        with open(path, "w") as fh:
            fh.write("t_s,a_mps2,a_g,confidence,retune_flag\n")
            for t, a, c, r in zip(self.t, self.a_est, conf, self.retune):
                fh.write(f"{t!r},{a!r},{a / G_STANDARD!r},{c!r},{int(r)}\n")


def frequency_map(config: DeviceConfig, u_lo: float, u_hi: float, n: int = 401):
    """Spline of f_eff (Hz) over the total static detuning shift u (rad/s).

    With the laser fixed, f_eff depends on the acceleration and the laser
    offset only through u = offset + g_om * a / omega_m^2.
    """
    apd = accel_per_detuning(config)
    us = np.linspace(u_lo, u_hi, n)
    fs = [spring.effective_frequency(config, accel=u * apd).f_eff for u in us]
    return CubicSpline(us, fs)


def synthesize_oscillator(config: DeviceConfig, accel: Callable, *, duration: float, fs: float,
                          amplitude: float = 1.0, noise_density: float = 1e-3,
                          thermal: bool = False, seed: int | None = 0
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Open-loop self-oscillation signal whose frequency follows f_eff(a(t)).

    Returns (t, voltage, applied acceleration). ``noise_density`` is the white
    detector noise in V/sqrt(Hz); ``thermal`` adds the Brownian acceleration
    noise of :func:`noise_budget` before the frequency map.
    """
    if fs < 10 * config.mechanical.f_m:
        raise ValueError("sample rate must be >= 10 f_m")
    rng = np.random.default_rng(seed)
    apd = accel_per_detuning(config)
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    a = np.asarray(accel(t), dtype=float) * np.ones(n)
    a_in = a
    if thermal:
        a_in = a + noise_budget(config).nea * math.sqrt(fs / 2) * rng.standard_normal(n)
    span = np.max(np.abs(a_in)) / abs(apd) + 0.02 * config.optical.kappa
    fmap = frequency_map(config, -span, span)
    ph = 2 * math.pi * np.cumsum(fmap(a_in / apd)) / fs
    v = amplitude * np.cos(ph) + noise_density * math.sqrt(fs / 2) * rng.standard_normal(n)
    return t, v, a


def run_closed_loop(config: DeviceConfig, accel: Callable, *, duration: float, fs: float,
                    tracker: TrackerConfig = TrackerConfig(), servo: bool = True,
                    band_hz: float | None = None, max_offset: float = math.inf,
                    quiet_s: float = 1.0, amplitude: float = 1.0,
                    noise_density: float = 1e-3, thermal: bool = False,
                    seed: int | None = 0) -> ClosedLoopResult:
    """Synthesize the oscillator signal, track it, run the servo and invert to acceleration.

    ``accel`` maps a time array to m/s^2. The first ``quiet_s`` seconds must
    be free of input: the frequency reference is measured there. With
    ``thermal`` the Brownian acceleration noise of :func:`noise_budget` is
    added before the frequency map.
    """
    mech = config.mechanical
    if fs < 10 * mech.f_m:
        raise ValueError("sample rate must be >= 10 f_m")
    rng = np.random.default_rng(seed)
    sf = scale_factor(config)
    slope = sf.operating_point.d_omega_d_detuning / (2 * math.pi)
    apd = accel_per_detuning(config)
    n_total = int(round(duration * fs))
    t_all = np.arange(n_total) / fs
    a_all = np.asarray(accel(t_all), dtype=float) * np.ones(n_total)
    if thermal:
        nea = noise_budget(config).nea
        a_all = a_all + nea * math.sqrt(fs / 2) * rng.standard_normal(n_total)

    if band_hz is None:
        band_hz = 0.05 * config.optical.kappa * abs(slope)  # kappa/20 in detuning
    span = np.max(np.abs(a_all)) / abs(apd) + (0 if math.isinf(max_offset) else max_offset)
    span += 4 * band_hz / abs(slope) + 0.02 * config.optical.kappa
    fmap = frequency_map(config, -span, span)

    n_win = int(round(tracker.window_s * fs))
    hop = int(round(tracker.hop_s * fs))
    taper = signal.get_window(tracker.window, n_win)
    ctrl = None
    offset = 0.0
    noise_sigma = noise_density * math.sqrt(fs / 2)
    v = np.empty(n_total)
    offs = np.empty(n_total)
    phase = 0.0
    written = 0
    ts, fe, held, retune, off_c = [], [], [], [], []
    quiet_f = []
    f_ref = math.nan
    sf_pairs = []
    for start in range(0, n_total - n_win + 1, hop):
        end = start + n_win
        if end > written:
            seg = slice(written, end)
            u = offset + a_all[seg] / apd
            f_inst = fmap(u)
            ph = phase + 2 * math.pi * np.cumsum(f_inst) / fs
            phase = float(ph[-1] % (2 * math.pi))
            v[seg] = amplitude * np.cos(ph) + noise_sigma * rng.standard_normal(end - written)
            offs[seg] = offset
            written = end
        t_c = (start + 0.5 * n_win) / fs
        f0, _ = window_estimate(v[start:end], fs, tracker, taper)
        mixed = offs[start] != offs[end - 1]
        ts.append(t_c)
        fe.append(f0)
        off_c.append(offs[start + n_win // 2])
        ev_flag = False
        if end / fs <= quiet_s:
            quiet_f.append(f0)
            held.append(True)
        else:
            if ctrl is None:
                f_ref = float(np.nanmedian(quiet_f)) if quiet_f else float(fmap(0.0))
                ctrl = RangeController(f_ref - band_hz / 2, f_ref + band_hz / 2, slope,
                                       max_offset=max_offset, settle_s=tracker.window_s,
                                       accel_per_rad_s=apd)
            is_held = mixed or t_c < ctrl.hold_until
            held.append(is_held)
            if servo and not is_held:
                before = ctrl.offset
                ctrl, cmds, _ = extend_dynamic_range(ctrl, [(end / fs, f0)])
                if cmds:
                    ev_flag = True
                    offset = ctrl.offset
                    a_now = a_all[end - 1]
                    sf_pairs.append(tuple(
                        spring.effective_frequency(config, config.laser.detuning + o,
                                                   accel=a_now).d_omega_d_detuning
                        / (2 * math.pi) / apd for o in (before, offset)))
        retune.append(ev_flag)

    t_arr = np.array(ts)
    f_arr = np.array(fe)
    off_arr = np.array(off_c)
    a_est = estimate_acceleration(f_arr, sf, f_ref, off_arr, apd)
    # truth: taper-weighted mean over each window
    w = taper**2 / np.sum(taper**2)
    a_clean = np.asarray(accel(t_all), dtype=float) * np.ones(n_total)
    a_true = np.array([np.dot(w, a_clean[int(round(tc * fs - 0.5 * n_win)):][:n_win])
                       for tc in t_arr])
    return ClosedLoopResult(t_arr, f_arr, a_est, a_true, off_arr, np.array(held),
                            np.array(retune), f_ref, sf, ctrl, sf_pairs)
