"""Optical-spring effective frequency, detuning/power sweeps and slopes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .dynamics import EquilibriumError
from .model import HBAR, K_B, DeviceConfig


class SpringInstabilityError(RuntimeError):
    def __init__(self, k_opt: float, k: float):
        self.k_opt = k_opt
        super().__init__(f"spring instability: k + k_opt = {k:.4g} + {k_opt:.4g} <= 0 N/m")


@dataclass(frozen=True)
class OperatingPoint:
    detuning_op: float  # Delta_0 + g_om * x_eq, rad/s
    x_eq: float
    photons: float
    p_cav: float  # hbar*omega_l*kappa*n, W
    k_opt: float
    omega_eff: float
    gamma_opt: float
    d_omega_d_detuning: float  # d omega_eff / d Delta_0 at fixed input power
    d_omega_d_power: float  # d omega_eff / d P_cav at fixed Delta_0, rad/s per W

    @property
    def f_eff(self) -> float:
        return self.omega_eff / (2 * math.pi)


def _sideband_terms(g2: float, kappa: float, delta: float, omega: float):
    # frequency shift and optical damping from the two-Lorentzian response
    lor = lambda d: 1.0 / (0.25 * kappa**2 + d**2)  # noqa: E731
    shift = g2 * ((delta - omega) * lor(delta - omega) + (delta + omega) * lor(delta + omega))
    damp = g2 * kappa * (lor(delta + omega) - lor(delta - omega))
    return shift, damp


def effective_frequency(config: DeviceConfig, detuning: float | None = None, *,
                        accel: float = 0.0, sideband_correction: bool = False,
                        branch: str = "low") -> OperatingPoint:
    """Effective mechanical frequency at the stable static operating point.

    ``detuning`` overrides the laser detuning Delta_0 of ``config``; ``accel``
    adds a static specific force. The adiabatic spring is
    omega_eff^2 = omega_m^2 + k_opt/m with k_opt = -dF_o/dx at equilibrium.
    With ``sideband_correction`` the shift uses the finite-omega_m
    two-Lorentzian response instead (relevant when kappa is not >> omega_m).
    ``branch`` picks the stable root when the static response is bistable
    (see :func:`dynamics.stable_equilibrium`).
    """
    if detuning is not None:
        config = config.with_laser(detuning=detuning)
    mech, cav, laser = config.mechanical, config.optical, config.laser
    x_eq = dynamics.stable_equilibrium(config, accel, branch)
    k = mech.k
    delta = laser.detuning + cav.g_om * x_eq
    n = float(dynamics.photon_number(cav, laser, x_eq))
    c2 = (0.5 * cav.kappa) ** 2
    k_opt = float(dynamics.optical_spring_constant(config, x_eq))
    g2 = cav.g0(mech) ** 2 * n
    shift, gamma_opt = _sideband_terms(g2, cav.kappa, delta, mech.omega_m)
    if sideband_correction:
        k_opt = 2.0 * mech.mass * mech.omega_m * shift
    k_tot = k + k_opt
    if k_tot <= 0:
        raise SpringInstabilityError(k_opt, k)
    omega_eff = math.sqrt(k_tot / mech.mass)

    # d k_opt / d Delta_op at fixed input power, n = N0 c^2/(Delta^2 + c^2)
    n0 = dynamics.peak_photon_number(cav, laser)
    dk_ddelta = 2 * HBAR * cav.g_om**2 * n0 * c2 * (c2 - 3 * delta**2) / (delta**2 + c2) ** 3
    # static displacement feedback: d Delta_op / d Delta_0 = k / (k + k_opt)
    d_omega_d_detuning = dk_ddelta * (k / k_tot) / (2 * mech.mass * omega_eff)
    # at fixed Delta_op, k_opt is linear in P_cav
    p_cav = float(dynamics.intracavity_power(config, n))
    dk_dp = 2 * HBAR * cav.g_om**2 * delta / (delta**2 + c2) / (HBAR * laser.omega_l * cav.kappa)
    d_omega_d_power = dk_dp / (2 * mech.mass * omega_eff)
    return OperatingPoint(detuning_op=delta, x_eq=x_eq, photons=n, p_cav=p_cav, k_opt=k_opt,
                          omega_eff=omega_eff, gamma_opt=gamma_opt,
                          d_omega_d_detuning=d_omega_d_detuning,
                          d_omega_d_power=d_omega_d_power)


@dataclass(frozen=True)
class SweepRow:
    detuning: float
    p_in: float
    f_eff: float  # nan when no stable branch
    peak_power: float  # integrated transduced thermal line power, W^2
    stable: bool
    tag: str  # "ok", "bistable", "no-stable-branch", "spring-instability"


def _peak_power(config: DeviceConfig, op: OperatingPoint) -> float:
    # (dP_out/dx)^2 * <x^2>, the line power a spectrum analyser would show
    cav = config.optical
    h = 1e-4 * 0.5 * cav.kappa / abs(cav.g_om) if cav.g_om else 0.0
    if h == 0.0:
        return 0.0
    a = dynamics.steady_state_field(cav, config.laser, np.array([op.x_eq - h, op.x_eq + h]))
    p = dynamics.transmitted_power(config, a)
    slope = (p[1] - p[0]) / (2 * h)
    return float(slope**2 * K_B * config.temperature / (op.omega_eff**2 * config.mechanical.mass))


def spring_sweep(config: DeviceConfig, detunings, powers, *, power_kind: str = "input",
                 branch: str = "low") -> list[SweepRow]:
    """Effective frequency over a (power x detuning) grid, power-major order.

    ``power_kind="intracavity"`` interprets ``powers`` as on-resonance
    intracavity powers and converts them to input powers. ``branch="high"``
    follows the dragged (blue) branch where the response is bistable.
    """
    detunings = list(detunings)
    if not detunings or len(powers) == 0:
        raise ValueError("sweep grid is empty")
    rows = []
    for p in powers:
        p_in = dynamics.input_power_for_intracavity(config, p) if power_kind == "intracavity" else p
        for d in detunings:
            cfg = config.with_laser(power=p_in, detuning=d)
            try:
                eqs = dynamics.static_equilibrium(cfg)
                op = effective_frequency(cfg, branch=branch)
            except SpringInstabilityError:
                rows.append(SweepRow(d, p_in, math.nan, math.nan, False, "spring-instability"))
                continue
            except EquilibriumError:
                rows.append(SweepRow(d, p_in, math.nan, math.nan, False, "no-stable-branch"))
                continue
            tag = "bistable" if sum(e.stable for e in eqs) > 1 else "ok"
            rows.append(SweepRow(d, p_in, op.f_eff, _peak_power(cfg, op), True, tag))
    return rows


def max_frequency_shift(rows: list[SweepRow], f_m: float) -> dict[float, float]:
    """Largest |f_eff - f_m| over the stable rows, keyed by input power."""
    out: dict[float, float] = {}
    for r in rows:
        if r.stable:
            out[r.p_in] = max(out.get(r.p_in, 0.0), abs(r.f_eff - f_m))
        else:
            out.setdefault(r.p_in, 0.0)
    return out


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_rad_s", "p_in_w", "f_eff_hz", "stable_flag", "peak_power", "tag"])
        for r in rows:
            w.writerow([repr(r.detuning), repr(r.p_in), repr(r.f_eff), int(r.stable),
                        repr(r.peak_power), r.tag])


def power_sensitivity_slope(config: DeviceConfig, detuning: float | None = None,
                            rel_step: float = 1e-3) -> float:
    """d f_eff / d P_cav (Hz per W) by central difference in input power at fixed Delta_0."""
    if detuning is not None:
        config = config.with_laser(detuning=detuning)
    p = config.laser.power
    if p <= 0:
        # linear in power near zero: use the analytic slope at the unloaded point
        op = effective_frequency(config)
        return op.d_omega_d_power / (2 * math.pi)
    ops = [effective_frequency(config.with_laser(power=p * (1 + s * rel_step)))
           for s in (-1, 1)]
    return (ops[1].f_eff - ops[0].f_eff) / (ops[1].p_cav - ops[0].p_cav)


def analytic_power_slope(config: DeviceConfig, detuning: float) -> float:
    """P -> 0 limit of d f_eff / d P_cav in Hz/W (no static displacement)."""
    mech, cav = config.mechanical, config.optical
    omega_l = cav.omega_c + detuning
    c2 = (0.5 * cav.kappa) ** 2
    return (cav.g_om**2 * detuning
            / (2 * math.pi * mech.mass * mech.omega_m * omega_l * cav.kappa * (detuning**2 + c2)))
