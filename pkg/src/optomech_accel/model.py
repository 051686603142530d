"""Device parameters, derived quantities and config validation.

All quantities are SI. Angular frequencies are rad/s unless a name says
``_hz``. Dataclasses keep the config-file values (``f_m``, ``wavelength``,
``g_om_ghz_per_nm``) as fields so that a config survives a JSON round trip
bit-exactly; everything else is derived. ``OpticalCavity.g_om`` is the
angular coupling rate (rad/s per m), ``g_om_cyclic`` the same in Hz/m.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import constants as _c

HBAR = _c.hbar
K_B = _c.k
C_LIGHT = _c.c
G_STANDARD = 9.80665  # m/s^2 per g

# 1 GHz/nm in Hz/m
GHZ_PER_NM = 1e9 / 1e-9


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` holds ``(field_path, message)`` pairs, one per violation.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


def _require_positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError([(name, f"must be a finite number > 0, got {value!r}")])


@dataclass(frozen=True)
class MechanicalMode:
    mass: float
    f_m: float
    q_m: float

    def __post_init__(self):
        _require_positive("mass_kg", self.mass)
        _require_positive("f_m_hz", self.f_m)
        _require_positive("q_m", self.q_m)

    @property
    def omega_m(self) -> float:
        return 2 * math.pi * self.f_m

    @property
    def k(self) -> float:
        return self.mass * self.omega_m**2

    @property
    def b(self) -> float:
        return self.mass * self.omega_m / self.q_m

    @property
    def gamma_m(self) -> float:
        """Energy damping rate b/m = omega_m/Q_m (rad/s)."""
        return self.omega_m / self.q_m

    @property
    def zeta(self) -> float:
        # b / (2 sqrt(k m)) = 1 / (2 Q_m)
        return self.b / (2 * math.sqrt(self.k * self.mass))

    @property
    def x_zpf(self) -> float:
        return math.sqrt(HBAR / (2 * self.mass * self.omega_m))

    @property
    def m_eff(self) -> float:
        return self.mass


@dataclass(frozen=True)
class OpticalCavity:
    wavelength: float
    tau_0: float
    tau_ex: float
    g_om_ghz_per_nm: float

    def __post_init__(self):
        _require_positive("wavelength_m", self.wavelength)
        _require_positive("tau_0_s", self.tau_0)
        _require_positive("tau_ex_s", self.tau_ex)
        if not math.isfinite(self.g_om_ghz_per_nm):
            raise ConfigError([("g_om_ghz_per_nm", "must be finite")])

    @property
    def omega_c(self) -> float:
        return 2 * math.pi * C_LIGHT / self.wavelength

    @property
    def g_om(self) -> float:
        """Angular coupling rate, rad/s per m."""
        return 2 * math.pi * self.g_om_ghz_per_nm * GHZ_PER_NM

    @property
    def tau(self) -> float:
        return 1.0 / (1.0 / self.tau_0 + 1.0 / self.tau_ex)

    @property
    def kappa(self) -> float:
        """Energy decay rate 1/tau (rad/s); the field decays at kappa/2."""
        return 1.0 / self.tau_0 + 1.0 / self.tau_ex

    @property
    def eta(self) -> float:
        return self.tau_0 / (self.tau_0 + self.tau_ex)

    @property
    def g_om_cyclic(self) -> float:
        return self.g_om / (2 * math.pi)

    def g0(self, mech: MechanicalMode) -> float:
        """Vacuum coupling rate g_om * x_zpf (rad/s)."""
        return self.g_om * mech.x_zpf


@dataclass(frozen=True)
class LaserDrive:
    omega_l: float
    power: float
    detuning: float

    def __post_init__(self):
        _require_positive("omega_l", self.omega_l)
        if not (math.isfinite(self.power) and self.power >= 0):
            raise ConfigError([("power", f"must be >= 0, got {self.power!r}")])

    @property
    def s(self) -> float:
        """Input field amplitude, |s|^2 in photons/s."""
        return math.sqrt(self.power / (HBAR * self.omega_l))

    @property
    def photon_flux(self) -> float:
        return self.power / (HBAR * self.omega_l)


@dataclass(frozen=True)
class Geometry:
    """Photonic-crystal geometry; metadata only, never used in physics."""

    hole_radius_m: float = 185e-9
    lattice_constant_m: float = 510e-9
    slot_width_m: float = 100e-9
    mode_volume_lambda_over_n_cubed: float = 0.051


@dataclass(frozen=True)
class Detector:
    gain_v_per_w: float = 1.0
    noise_floor_v_per_rthz: float = 0.0
    # optional tabulated |G_V(f)| as (f_hz, relative gain) pairs
    gain_curve: tuple[tuple[float, float], ...] | None = None

    def gain_at(self, f_hz: float) -> float:
        if not self.gain_curve:
            return self.gain_v_per_w
        fs, gs = zip(*self.gain_curve)
        return self.gain_v_per_w * float(np.interp(f_hz, fs, gs))


@dataclass(frozen=True)
class DeviceConfig:
    mechanical: MechanicalMode
    optical: OpticalCavity
    laser: LaserDrive
    temperature: float = 300.0
    detector: Detector = field(default_factory=Detector)
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self):
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ConfigError([("temperature_k", "temperature must be >= 0")])

    @property
    def g0(self) -> float:
        return self.optical.g0(self.mechanical)

    def with_laser(self, power: float | None = None, detuning: float | None = None) -> DeviceConfig:
        """Copy with a different input power and/or detuning (omega_c fixed)."""
        p = self.laser.power if power is None else power
        d = self.laser.detuning if detuning is None else detuning
        laser = LaserDrive(omega_l=self.optical.omega_c + d, power=p, detuning=d)
        return DeviceConfig(self.mechanical, self.optical, laser, self.temperature,
                            self.detector, self.geometry)

    def with_changes(self, **kw) -> DeviceConfig:
        d = dict(mechanical=self.mechanical, optical=self.optical, laser=self.laser,
                 temperature=self.temperature, detector=self.detector,
                 geometry=self.geometry)
        d.update(kw)
        return DeviceConfig(**d)


def build_mechanical_mode(m: float, f_m: float, q_m: float) -> MechanicalMode:
    for name, v in (("mass_kg", m), ("f_m_hz", f_m), ("q_m", q_m)):
        _require_positive(name, v)
    return MechanicalMode(mass=float(m), f_m=float(f_m), q_m=float(q_m))


def build_optical_cavity(wavelength: float, tau_0: float, tau_ex: float,
                         g_om_cyclic: float) -> OpticalCavity:
    """Cavity from resonance wavelength (m), lifetimes (s), and g_om in Hz/m."""
    _require_positive("wavelength_m", wavelength)
    _require_positive("tau_0_s", tau_0)
    _require_positive("tau_ex_s", tau_ex)
    if not 1.4e-6 <= wavelength <= 1.7e-6:
        warnings.warn(f"cavity wavelength {wavelength:.4g} m is outside the 1550 nm band",
                      stacklevel=2)
    return OpticalCavity(wavelength=float(wavelength), tau_0=float(tau_0),
                         tau_ex=float(tau_ex), g_om_ghz_per_nm=float(g_om_cyclic) / GHZ_PER_NM)


def build_laser(cavity: OpticalCavity, power: float, detuning: float) -> LaserDrive:
    return LaserDrive(omega_l=cavity.omega_c + detuning, power=float(power),
                      detuning=float(detuning))


def thermal_occupancy(mech: MechanicalMode, temperature: float) -> float:
    """Classical phonon number k_B T / (hbar omega_m)."""
    return K_B * temperature / (HBAR * mech.omega_m)


# --- serialization -----------------------------------------------------------

_SCHEMA = {
    "mechanical": {"mass_kg": True, "f_m_hz": True, "q_m": True},
    "optical": {"wavelength_m": True, "tau_0_s": True, "tau_ex_s": True,
                "g_om_ghz_per_nm": True},
    "laser": {"power_w": True, "detuning_rad_s": True},
}


def _num(raw: dict, path: str, errors: list, *, positive=False, nonneg=False):
    section, _, key = path.rpartition(".")
    if key not in raw:
        errors.append((path, "required field is missing"))
        return None
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errors.append((path, f"must be a finite number, got {v!r}"))
        return None
    if positive and v <= 0:
        errors.append((path, f"must be > 0, got {v!r}"))
        return None
    if nonneg and v < 0:
        errors.append((path, f"must be >= 0, got {v!r}"))
        return None
    return float(v)


def validate_config(raw: dict[str, Any]) -> DeviceConfig:
    """Validate a raw config document; raise ConfigError listing every violation."""
    errors: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([("", "config document must be a JSON object")])

    sections = {}
    for name in ("mechanical", "optical", "laser"):
        sec = raw.get(name)
        if not isinstance(sec, dict):
            errors.append((name, "required section is missing"))
            sections[name] = None
        else:
            sections[name] = sec

    vals: dict[str, float | None] = {}
    if sections["mechanical"] is not None:
        sec = sections["mechanical"]
        for key in _SCHEMA["mechanical"]:
            vals[key] = _num(sec, f"mechanical.{key}", errors, positive=True)
    if sections["optical"] is not None:
        sec = sections["optical"]
        vals["wavelength_m"] = _num(sec, "optical.wavelength_m", errors, positive=True)
        vals["tau_0_s"] = _num(sec, "optical.tau_0_s", errors, positive=True)
        vals["tau_ex_s"] = _num(sec, "optical.tau_ex_s", errors, positive=True)
        vals["g_om_ghz_per_nm"] = _num(sec, "optical.g_om_ghz_per_nm", errors)
    if sections["laser"] is not None:
        sec = sections["laser"]
        vals["power_w"] = _num(sec, "laser.power_w", errors, nonneg=True)
        vals["detuning_rad_s"] = _num(sec, "laser.detuning_rad_s", errors)

    temperature = 300.0
    if "temperature_k" in raw:
        t = raw["temperature_k"]
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
            errors.append(("temperature_k", f"must be a finite number, got {t!r}"))
        elif t < 0:
            errors.append(("temperature_k", "temperature must be >= 0"))
        else:
            temperature = float(t)

    det_raw = raw.get("detector", {}) or {}
    det_kw = {}
    if not isinstance(det_raw, dict):
        errors.append(("detector", "must be an object"))
    else:
        if "gain_v_per_w" in det_raw:
            det_kw["gain_v_per_w"] = _num(det_raw, "detector.gain_v_per_w", errors, positive=True)
        if "noise_floor_v_per_rthz" in det_raw:
            det_kw["noise_floor_v_per_rthz"] = _num(
                det_raw, "detector.noise_floor_v_per_rthz", errors, nonneg=True)
        curve = det_raw.get("gain_curve")
        if curve is not None:
            try:
                pts = tuple((float(f), float(g)) for f, g in curve)
                if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
                    raise ValueError
                det_kw["gain_curve"] = pts
            except (TypeError, ValueError):
                errors.append(("detector.gain_curve",
                               "must be a list of [f_hz, gain] pairs with increasing f_hz"))

    geo_raw = raw.get("geometry", {}) or {}
    geo_kw = {k: float(v) for k, v in geo_raw.items()
              if k in Geometry.__dataclass_fields__ and isinstance(v, (int, float))}

    if errors:
        raise ConfigError(errors)

    mech = build_mechanical_mode(vals["mass_kg"], vals["f_m_hz"], vals["q_m"])
    if not 1.4e-6 <= vals["wavelength_m"] <= 1.7e-6:
        warnings.warn("cavity wavelength is outside the 1550 nm band", stacklevel=2)
    cav = OpticalCavity(vals["wavelength_m"], vals["tau_0_s"], vals["tau_ex_s"],
                        vals["g_om_ghz_per_nm"])
    laser = build_laser(cav, vals["power_w"], vals["detuning_rad_s"])
    return DeviceConfig(mech, cav, laser, temperature, Detector(**det_kw), Geometry(**geo_kw))


def config_to_dict(cfg: DeviceConfig) -> dict[str, Any]:
    """Inverse of :func:`validate_config` (up to float round-off of the derived fields)."""
    mech, cav, laser = cfg.mechanical, cfg.optical, cfg.laser
    det = {"gain_v_per_w": cfg.detector.gain_v_per_w,
           "noise_floor_v_per_rthz": cfg.detector.noise_floor_v_per_rthz}
    if cfg.detector.gain_curve:
        det["gain_curve"] = [list(p) for p in cfg.detector.gain_curve]
    return {
        "mechanical": {"mass_kg": mech.mass, "f_m_hz": mech.f_m, "q_m": mech.q_m},
        "optical": {"wavelength_m": cav.wavelength, "tau_0_s": cav.tau_0,
                    "tau_ex_s": cav.tau_ex, "g_om_ghz_per_nm": cav.g_om_ghz_per_nm},
        "laser": {"power_w": laser.power, "detuning_rad_s": laser.detuning},
        "temperature_k": cfg.temperature,
        "detector": det,
        "geometry": asdict(cfg.geometry),
    }


def load_config(path) -> DeviceConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return validate_config(_strip_comments(raw))


def _strip_comments(raw):
    # keys starting with "_" hold free-text notes in config files
    if isinstance(raw, dict):
        return {k: _strip_comments(v) for k, v in raw.items() if not k.startswith("_")}
    return raw


def save_config(cfg: DeviceConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
