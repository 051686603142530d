"""Acceleration transduction chain, scale factor and thermal noise budget."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import dynamics, spring
from ..model import C_LIGHT, G_STANDARD, K_B, DeviceConfig
from ..spring import OperatingPoint


def transduce_acceleration(a, config: DeviceConfig):
    """Static displacement x_s = a / omega_m^2 and the detuning shift g_om * x_s."""
    mech = config.mechanical
    x_s = np.asarray(a, dtype=float) / mech.omega_m**2
    shift = config.optical.g_om * x_s
    if x_s.ndim == 0:
        return float(x_s), float(shift)
    return x_s, shift


def accel_per_detuning(config: DeviceConfig) -> float:
    """Acceleration (m/s^2) that shifts the cavity by 1 rad/s."""
    return config.mechanical.omega_m**2 / config.optical.g_om


def optical_shift_readout(a, config: DeviceConfig):
    """Optical resonance shift (rad/s) and transmission-dip wavelength shift (m)."""
    _, shift = transduce_acceleration(a, config)
    lam = config.optical.wavelength
    return shift, lam**2 * np.asarray(shift) / (2 * math.pi * C_LIGHT)


@dataclass(frozen=True)
class ScaleFactor:
    hz_per_mps2: float
    operating_point: OperatingPoint | None
    linear_range_mps2: float

    @property
    def hz_per_g(self) -> float:
        return self.hz_per_mps2 * G_STANDARD

    @property
    def g_per_hz(self) -> float:
        return math.inf if self.hz_per_mps2 == 0 else 1.0 / abs(self.hz_per_g)

    @property
    def mg_per_hz(self) -> float:
        return 1e3 * self.g_per_hz


def scale_factor(config: DeviceConfig, detuning: float | None = None) -> ScaleFactor:
    """d f_eff / d a by the chain rule (d omega_eff / d Delta) * g_om / omega_m^2 / 2 pi.

    The linear range is the acceleration that moves the detuning by kappa/10.
    """
    if detuning is not None:
        config = config.with_laser(detuning=detuning)
    cav = config.optical
    lin = 0.1 * cav.kappa * abs(accel_per_detuning(config))
    op = spring.effective_frequency(config)
    value = op.d_omega_d_detuning / (2 * math.pi) / accel_per_detuning(config)
    return ScaleFactor(value, op, lin)


def frequency_vs_acceleration(config: DeviceConfig, a: float, offset: float = 0.0) -> float:
    """Full nonlinear f_eff (Hz) at static acceleration ``a`` and laser offset."""
    op = spring.effective_frequency(config, config.laser.detuning + offset, accel=a)
    return op.f_eff


@dataclass(frozen=True)
class NoiseBudget:
    thermal_force_psd: float  # N^2/Hz
    nea: float  # (m/s^2)/sqrt(Hz)
    displacement: float  # m/sqrt(Hz), nea / omega_m^2
    detector_nea: float  # (m/s^2)/sqrt(Hz)

    @property
    def nea_ug(self) -> float:
        return self.nea / G_STANDARD * 1e6

    @property
    def detector_nea_ug(self) -> float:
        return self.detector_nea / G_STANDARD * 1e6

    @property
    def total_nea_ug(self) -> float:
        return math.hypot(self.nea_ug, self.detector_nea_ug)


def noise_budget(config: DeviceConfig) -> NoiseBudget:
    """Thermal (Brownian) limit plus the detector floor referred to acceleration.

    The detector floor is divided by the voltage-per-displacement slope of
    the transmitted power at the operating point and multiplied by omega_m^2.
    """
    mech = config.mechanical
    s_f = dynamics.thermal_force_psd(config)
    nea = math.sqrt(4 * K_B * config.temperature * mech.omega_m / (mech.mass * mech.q_m))
    disp = nea / mech.omega_m**2
    det = config.detector
    detector_nea = 0.0
    if det.noise_floor_v_per_rthz > 0:
        try:
            x_eq = dynamics.stable_equilibrium(config)
        except dynamics.EquilibriumError:
            x_eq = 0.0
        cav = config.optical
        h = 1e-4 * 0.5 * cav.kappa / abs(cav.g_om)
        field = dynamics.steady_state_field(cav, config.laser, np.array([x_eq - h, x_eq + h]))
        p = dynamics.transmitted_power(config, field)
        dv_dx = abs(det.gain_at(mech.f_m) * (p[1] - p[0]) / (2 * h))
        detector_nea = math.inf if dv_dx == 0 else det.noise_floor_v_per_rthz / dv_dx * mech.omega_m**2
    return NoiseBudget(s_f, nea, disp, detector_nea)


def estimate_acceleration(f_est, sf: ScaleFactor | float | None, f_ref: float,
                          offsets=None, accel_per_rad_s: float | None = None) -> np.ndarray:
    """Invert the readout: a = (f - f_ref)/SF - offset * omega_m^2 / g_om.

    ``offsets`` are the laser-detuning offsets (rad/s) in force for each
    estimate; ``accel_per_rad_s`` is :func:`accel_per_detuning`. Gaps (nan)
    in ``f_est`` stay nan.
    """
    if sf is None:
        raise ValueError("a scale factor is required")
    value = sf.hz_per_mps2 if isinstance(sf, ScaleFactor) else float(sf)
    if value == 0 or not math.isfinite(value):
        raise ValueError("scale factor must be finite and nonzero")
    f_est = np.asarray(f_est, dtype=float)
    a = (f_est - f_ref) / value
    if offsets is not None:
        if accel_per_rad_s is None:
            raise ValueError("offsets need accel_per_rad_s")
        a = a - np.asarray(offsets, dtype=float) * accel_per_rad_s
    return a
