"""Coupled mechanical / intracavity-field dynamics.

Conventions used throughout:

* The field ``a`` lives in the frame rotating at the laser frequency and is
  normalized so that ``|a|**2`` is the intracavity photon number. The
  optical force is ``hbar * g_om * |a|**2``.
* ``da/dt = (i*Delta(x) - 1/(2 tau)) a + i*sqrt(1/(2 tau_ex)) * s`` with
  ``Delta(x) = Delta_0 + g_om * x``.
* The transmitted field is ``s + i*sqrt(2/tau_ex) * a``; with this choice
  transmission is unity far off resonance and vanishes at critical coupling.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import HBAR, K_B, DeviceConfig, LaserDrive, OpticalCavity


class EquilibriumError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    pass


# --- steady state ------------------------------------------------------------

def steady_state_field(cavity: OpticalCavity, laser: LaserDrive, x=0.0):
    """Stationary intracavity field at fixed displacement ``x`` (array ok)."""
    delta = laser.detuning + cavity.g_om * np.asarray(x, dtype=float)
    drive = 1j * math.sqrt(1.0 / (2.0 * cavity.tau_ex)) * laser.s
    out = drive / (1.0 / (2.0 * cavity.tau) - 1j * delta)
    return out if np.ndim(out) else complex(out)


def photon_number(cavity: OpticalCavity, laser: LaserDrive, x=0.0):
    a = steady_state_field(cavity, laser, x)
    return np.abs(a) ** 2 if isinstance(a, np.ndarray) else abs(a) ** 2


def peak_photon_number(cavity: OpticalCavity, laser: LaserDrive) -> float:
    """Photon number on resonance, 2 tau^2 / tau_ex * |s|^2."""
    return 2.0 * cavity.tau**2 / cavity.tau_ex * laser.photon_flux


def optical_force(config: DeviceConfig, x=0.0):
    return HBAR * config.optical.g_om * photon_number(config.optical, config.laser, x)


def intracavity_power(config: DeviceConfig, n_photons) -> float:
    """Circulating power hbar*omega_l*kappa*n (W); equals P_in on resonance at critical coupling."""
    return HBAR * config.laser.omega_l * config.optical.kappa * n_photons


def input_power_for_intracavity(config: DeviceConfig, p_cav_peak: float) -> float:
    """Input power giving on-resonance intracavity power ``p_cav_peak``."""
    cav = config.optical
    # n_peak = 2 tau^2/tau_ex * P_in/(hbar w_l); P_cav = hbar w_l kappa n_peak
    return p_cav_peak * cav.tau_ex / (2.0 * cav.tau)


def optical_spring_constant(config: DeviceConfig, x=0.0):
    """k_opt = -dF_o/dx in the adiabatic limit (N/m)."""
    cav = config.optical
    delta = config.laser.detuning + cav.g_om * np.asarray(x, dtype=float)
    n = photon_number(cav, config.laser, x)
    k = 2.0 * HBAR * cav.g_om**2 * n * delta / (delta**2 + (0.5 * cav.kappa) ** 2)
    return k if np.ndim(k) else float(k)


@dataclass(frozen=True)
class Equilibrium:
    x: float
    stable: bool


def static_equilibrium(config: DeviceConfig, accel: float = 0.0,
                       max_points: int = 400_000) -> list[Equilibrium]:
    """All static equilibria of k*x = F_o(x) + m*a, sorted by x.

    A root is stable when d(k*x - F_o)/dx = k + k_opt > 0.
    """
    mech, cav = config.mechanical, config.optical
    k = mech.k
    x_acc = mech.mass * accel / k
    f_max = HBAR * abs(cav.g_om) * peak_photon_number(cav, config.laser)
    if f_max == 0.0 or cav.g_om == 0.0:
        return [Equilibrium(x_acc, True)]

    def h(x):
        return k * (x - x_acc) - optical_force(config, x)

    # F_o lies in [0, f_max] so every root sits in [lo, hi]
    lo, hi = x_acc, x_acc + f_max / k
    if cav.g_om < 0:
        lo, hi = x_acc - f_max / k, x_acc
    width = 0.5 * cav.kappa / abs(cav.g_om)
    x_peak = -config.laser.detuning / cav.g_om
    # beyond `reach` from the Lorentzian peak |dF_o/dx| < k, so h is monotone there
    reach = max(50.0 * width, 2.0 * (2.0 * f_max * width**2 / k) ** (1.0 / 3.0))
    d_lo, d_hi = max(lo, x_peak - reach), min(hi, x_peak + reach)
    pts = [lo, hi]
    if d_lo < d_hi:
        n = int(min(max_points, max(200, (d_hi - d_lo) / (width / 20.0))))
        pts.extend(np.linspace(d_lo, d_hi, n))
    xs = np.unique(np.asarray(pts))
    hs = h(xs)

    roots = []
    for i in range(len(xs)):
        if hs[i] == 0.0:
            roots.append(float(xs[i]))
        elif i + 1 < len(xs) and hs[i] * hs[i + 1] < 0:
            a, b = float(xs[i]), float(xs[i + 1])
            fa, fb = float(h(a)), float(h(b))
            if fa * fb < 0:
                roots.append(brentq(h, a, b, xtol=1e-15 * max(abs(hi), width),
                                    rtol=4 * np.finfo(float).eps, maxiter=200))
            else:
                # scalar and vector rounding disagree: the root is at a grid point
                roots.append(a if abs(fa) <= abs(fb) else b)
    if not roots:
        raise EquilibriumError(f"no equilibrium found in search bounds [{lo:.6g}, {hi:.6g}] m")
    roots = sorted(set(roots))
    return [Equilibrium(r, bool(k + optical_spring_constant(config, r) > 0)) for r in roots]


def stable_equilibrium(config: DeviceConfig, accel: float = 0.0, branch: str = "low") -> float:
    """Stable root of :func:`static_equilibrium` with the lowest (``"low"``) or
    highest (``"high"``) displacement.

    With bistability the high branch is the one a laser swept down from the
    blue side stays on: the optical force drags the cavity along.
    """
    if branch not in ("low", "high"):
        raise ValueError(f"unknown branch {branch!r}")
    eqs = static_equilibrium(config, accel)
    if (branch == "high") == (config.optical.g_om > 0):
        eqs = eqs[::-1]
    for eq in eqs:
        if eq.stable:
            return eq.x
    raise EquilibriumError("no stable static equilibrium")


# --- time domain -------------------------------------------------------------

@dataclass(frozen=True)
class ForceInputs:
    """External and thermal forcing.

    ``accel`` is the applied specific force per unit mass (m/s^2), either a
    constant or a callable of time. ``thermal`` switches on the Langevin force
    with one-sided PSD 4 k_B T m omega_m / Q_m at the config temperature.
    """

    accel: float | Callable[[float], float] = 0.0
    thermal: bool = False

    def accel_fn(self) -> Callable[[float], float]:
        if callable(self.accel):
            return self.accel
        a = float(self.accel)
        return lambda t: a


def thermal_force_psd(config: DeviceConfig) -> float:
    mech = config.mechanical
    return 4.0 * K_B * config.temperature * mech.mass * mech.omega_m / mech.q_m


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    field: np.ndarray
    dt: float
    seed: int | None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for arr in (self.t, self.x, self.v, self.field):
            arr.setflags(write=False)

    @property
    def photons(self) -> np.ndarray:
        return np.abs(self.field) ** 2

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "x_m", "v_mps", "re_a", "im_a"])
            for row in zip(self.t, self.x, self.v, self.field.real, self.field.imag):
                w.writerow([repr(float(c)) for c in row])

    def to_binary(self, path) -> None:
        """Little-endian float64 records (t, x, v, re_a, im_a), no header."""
        data = np.column_stack([self.t, self.x, self.v, self.field.real, self.field.imag])
        data.astype("<f8").tofile(path)


def _field_rhs_consts(config: DeviceConfig):
    cav, laser = config.optical, config.laser
    return (laser.detuning, cav.g_om, 0.5 / cav.tau,
            math.sqrt(0.5 / cav.tau_ex) * laser.s)


def simulate_trajectory(config: DeviceConfig, forces: ForceInputs | None = None, *,
                        duration: float, dt: float, seed: int | None = 0,
                        x0: float = 0.0, v0: float = 0.0, a0: complex | None = None,
                        field_mode: str = "auto", method: str = "rk4",
                        prescribed_motion: Callable | None = None) -> Trajectory:
    """Integrate the 1-DOF mechanics jointly with the intracavity field.

    field_mode
        ``"exact"`` integrates the complex field; ``"adiabatic"`` slaves it to
        the steady state at the instantaneous displacement; ``"auto"`` picks
        adiabatic when kappa >= 100 omega_m.
    method
        ``"rk4"``: fixed-step RK4 with the thermal kick applied to the velocity
        once per step (Euler-Maruyama split). Bit-reproducible from the seed.
        ``"adaptive"``: scipy DOP853, rtol 1e-9, sampled every ``dt``;
        deterministic forces only.
    prescribed_motion
        Callable t -> (x, v). Mechanics is then not integrated and only the
        field responds to the given motion.
    """
    forces = forces or ForceInputs()
    mech, cav = config.mechanical, config.optical
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if field_mode == "auto":
        field_mode = "adiabatic" if cav.kappa >= 100 * mech.omega_m else "exact"
    if field_mode not in ("exact", "adiabatic"):
        raise ValueError(f"unknown field_mode {field_mode!r}")
    period = 2 * math.pi / mech.omega_m
    bound = period / 20 if field_mode == "adiabatic" else min(period, cav.tau) / 20
    # the adaptive integrator picks its own steps; dt is then only the output spacing
    if method == "rk4" and dt > bound:
        raise ValueError(f"dt={dt:.3g} s too large; need dt <= {bound:.3g} s")

    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    accel = forces.accel_fn()
    thermal = forces.thermal and config.temperature > 0
    if a0 is None:
        a0 = steady_state_field(cav, config.laser, x0) if field_mode == "exact" else 0j
    if prescribed_motion is not None and field_mode != "exact":
        raise ValueError("prescribed_motion needs field_mode='exact'")

    if method == "rk4":
        out = _rk4(config, accel, thermal, n, dt, seed, x0, v0, complex(a0), field_mode,
                   prescribed_motion)
    elif method == "adaptive":
        if thermal:
            raise ValueError("adaptive integration does not support the thermal force")
        out = _adaptive(config, accel, t, x0, v0, complex(a0), field_mode, prescribed_motion)
    else:
        raise ValueError(f"unknown method {method!r}")
    x, v, a = out
    if field_mode == "adiabatic":
        a = steady_state_field(cav, config.laser, x)
    return Trajectory(t=t, x=x, v=v, field=np.asarray(a, dtype=complex), dt=dt,
                      seed=seed, meta={"field_mode": field_mode, "method": method})


def _rk4(config, accel, thermal, n, dt, seed, x0, v0, a0, field_mode, prescribed):
    mech = config.mechanical
    w2 = mech.omega_m**2
    gam = mech.gamma_m
    inv_m = 1.0 / mech.mass
    hg = HBAR * config.optical.g_om
    d0, g, half_k, drive = _field_rhs_consts(config)
    cav, laser = config.optical, config.laser
    exact = field_mode == "exact"

    if thermal:
        rng = np.random.default_rng(seed)
        # velocity kick per step: sqrt(S_F/2 * dt) / m with one-sided S_F
        sigma_v = math.sqrt(0.5 * thermal_force_psd(config) * dt) * inv_m
        kicks = (sigma_v * rng.standard_normal(n)).tolist()
    else:
        kicks = None

    xs = np.empty(n + 1)
    vs = np.empty(n + 1)
    ar = np.empty(n + 1)
    ai = np.empty(n + 1)
    x, v, re, im = float(x0), float(v0), a0.real, a0.imag

    if prescribed is not None:
        x, v = prescribed(0.0)

    def deriv(t, x, v, re, im):
        if exact:
            nph = re * re + im * im
            dl = d0 + g * x
            dre = -dl * im - half_k * re
            dim = dl * re - half_k * im + drive
        else:
            dl = d0 + g * x
            nph = drive * drive / (half_k * half_k + dl * dl)
            dre = dim = 0.0
        acc = -w2 * x - gam * v + hg * nph * inv_m + accel(t)
        return v, acc, dre, dim

    xs[0], vs[0], ar[0], ai[0] = x, v, re, im
    h2 = 0.5 * dt
    for i in range(n):
        t = i * dt
        if prescribed is None:
            k1 = deriv(t, x, v, re, im)
            k2 = deriv(t + h2, x + h2 * k1[0], v + h2 * k1[1], re + h2 * k1[2], im + h2 * k1[3])
            k3 = deriv(t + h2, x + h2 * k2[0], v + h2 * k2[1], re + h2 * k2[2], im + h2 * k2[3])
            k4 = deriv(t + dt, x + dt * k3[0], v + dt * k3[1], re + dt * k3[2], im + dt * k3[3])
            x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            re += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            im += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
            if kicks is not None:
                v += kicks[i]
        else:
            re, im = _field_step(prescribed, t, dt, re, im, d0, g, half_k, drive)
            x, v = prescribed(t + dt)
        if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(re)
                and math.isfinite(im)):
            raise SimulationError(f"state diverged at t={t + dt:.6g} s")
        xs[i + 1], vs[i + 1], ar[i + 1], ai[i + 1] = x, v, re, im
    return xs, vs, ar + 1j * ai


def _field_step(prescribed, t, dt, re, im, d0, g, half_k, drive):
    def f(tt, re, im):
        dl = d0 + g * prescribed(tt)[0]
        return -dl * im - half_k * re, dl * re - half_k * im + drive

    h2 = 0.5 * dt
    k1 = f(t, re, im)
    k2 = f(t + h2, re + h2 * k1[0], im + h2 * k1[1])
    k3 = f(t + h2, re + h2 * k2[0], im + h2 * k2[1])
    k4 = f(t + dt, re + dt * k3[0], im + dt * k3[1])
    return (re + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            im + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _adaptive(config, accel, t, x0, v0, a0, field_mode, prescribed):
    mech, cav = config.mechanical, config.optical
    w2, gam, inv_m = mech.omega_m**2, mech.gamma_m, 1.0 / mech.mass
    hg = HBAR * cav.g_om
    d0, g, half_k, drive = _field_rhs_consts(config)
    exact = field_mode == "exact"

    # integrate in scaled units so a scalar atol is meaningful
    xs = max(abs(x0), HBAR * abs(g) * peak_photon_number(cav, config.laser) / mech.k, 1e-18)
    vs = xs * mech.omega_m
    as_ = max(abs(a0), math.sqrt(peak_photon_number(cav, config.laser)), 1e-6)

    def rhs(tt, y):
        if prescribed is not None:
            x, v = prescribed(tt)
        else:
            x, v = y[0] * xs, y[1] * vs
        re, im = y[2] * as_, y[3] * as_
        dl = d0 + g * x
        if exact:
            nph = re * re + im * im
            dre = -dl * im - half_k * re
            dim = dl * re - half_k * im + drive
        else:
            nph = drive * drive / (half_k * half_k + dl * dl)
            dre = dim = 0.0
        if prescribed is not None:
            dx = dv = 0.0
        else:
            dx = v
            dv = -w2 * x - gam * v + hg * nph * inv_m + accel(tt)
        return [dx / xs, dv / vs, dre / as_, dim / as_]

    y0 = [x0 / xs, v0 / vs, a0.real / as_, a0.imag / as_]
    sol = solve_ivp(rhs, (t[0], t[-1]), y0, method="DOP853", t_eval=t, rtol=1e-9, atol=1e-12)
    if not sol.success:
        raise SimulationError(sol.message)
    y = sol.y
    if not np.all(np.isfinite(y)):
        bad = np.argmax(~np.all(np.isfinite(y), axis=0))
        raise SimulationError(f"state diverged at t={t[bad]:.6g} s")
    if prescribed is not None:
        xv = np.array([prescribed(tt) for tt in t])
        x, v = xv[:, 0], xv[:, 1]
    else:
        x, v = y[0] * xs, y[1] * vs
    return x, v, (y[2] + 1j * y[3]) * as_


# --- sideband (Bessel) solution ---------------------------------------------

@dataclass(frozen=True)
class SidebandSpectrum:
    """Bessel-series field for the motion x(t) = x_s - x_o sin(omega_m t).

    The field is ``exp(i beta cos(omega_m t)) * sum_k amp_k exp(-i k omega_m t)``.
    ``amplitudes[j]`` belongs to order ``orders[j]``.
    """

    beta_mech: float
    orders: np.ndarray
    amplitudes: np.ndarray
    static_detuning: float
    omega_m: float
    warning: str | None = None

    def completeness(self) -> float:
        """Sum of J_k(beta)^2 over the retained orders (1 when converged)."""
        return float(np.sum(special.jv(self.orders, self.beta_mech) ** 2))

    def field_lines(self, n_max: int | None = None) -> dict[int, complex]:
        """Fourier coefficients c_n of the field, a(t) = sum_n c_n exp(-i n omega_m t)."""
        kmax = int(self.orders.max())
        n_max = kmax if n_max is None else n_max
        out = {}
        for n in range(-n_max, n_max + 1):
            m = self.orders - n
            out[n] = complex(np.sum(self.amplitudes * (1j ** (m % 4)) * special.jv(m, self.beta_mech)))
        return out

    def field(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phase = np.exp(-1j * np.outer(t, self.orders) * self.omega_m)
        return np.exp(1j * self.beta_mech * np.cos(self.omega_m * t)) * (phase @ self.amplitudes)


def bessel_sideband_spectrum(config: DeviceConfig, x_o: float, x_s: float = 0.0,
                             order: int | None = None, simplified: bool = False
                             ) -> SidebandSpectrum:
    """Sideband amplitudes of the field driven by sinusoidal motion.

    Overall scale is fixed so that ``x_o = 0`` reproduces
    :func:`steady_state_field` at ``x_s``. ``simplified=True`` evaluates every
    denominator at k = 0, the large-detuning limit |Delta_s| >> omega_m.
    """
    mech, cav, laser = config.mechanical, config.optical, config.laser
    beta = cav.g_om * x_o / mech.omega_m
    if order is None:
        order = int(math.ceil(abs(beta))) + 20
    if order < 1:
        raise ValueError("truncation order must be >= 1")
    warning = None
    if order < abs(beta) + 10:
        warning = f"truncation order {order} < beta_mech + 10 = {abs(beta) + 10:.3g}; possible truncation error"
        warnings.warn(warning, stacklevel=2)
    ks = np.arange(-order, order + 1)
    static = laser.detuning + cav.g_om * x_s
    drive = 1j * math.sqrt(0.5 / cav.tau_ex) * laser.s
    shift = 0.0 if simplified else 1.0
    den = -1j * (static + shift * ks * mech.omega_m) + 0.5 / cav.tau
    amps = drive * ((-1j) ** (ks % 4)) * special.jv(ks, beta) / den
    return SidebandSpectrum(beta_mech=beta, orders=ks, amplitudes=amps,
                            static_detuning=static, omega_m=mech.omega_m, warning=warning)


# --- detector ----------------------------------------------------------------

def transmitted_power(config: DeviceConfig, field) -> np.ndarray:
    cav, laser = config.optical, config.laser
    s_out = laser.s + 1j * math.sqrt(2.0 / cav.tau_ex) * np.asarray(field)
    return HBAR * laser.omega_l * np.abs(s_out) ** 2


def synthesize_photocurrent(traj: Trajectory, config: DeviceConfig, seed: int | None = 0
                            ) -> np.ndarray:
    """Detector voltage: G_V applied to the transmitted power, plus white noise."""
    p = transmitted_power(config, traj.field)
    det = config.detector
    if det.gain_curve:
        f = np.fft.rfftfreq(len(p), traj.dt)
        fs, gs = zip(*det.gain_curve)
        gain = det.gain_v_per_w * np.interp(f, fs, gs)
        v = np.fft.irfft(np.fft.rfft(p) * gain, n=len(p))
    else:
        v = det.gain_v_per_w * p
    if det.noise_floor_v_per_rthz > 0:
        rng = np.random.default_rng(seed)
        sigma = det.noise_floor_v_per_rthz * math.sqrt(0.5 / traj.dt)
        v = v + sigma * rng.standard_normal(len(v))
    return v
