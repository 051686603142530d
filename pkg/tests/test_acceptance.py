"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line in the terminal summary (see conftest.py).
Tolerances are the contractual ones; runtimes are noted per test.
"""
import json
import math

import numpy as np
import pytest
from scipy.optimize import curve_fit

from optomech_accel import cli, dynamics, spectral, spring
from optomech_accel.model import (HBAR, K_B, G_STANDARD, DeviceConfig, build_laser,
                                  build_mechanical_mode, build_optical_cavity)
from optomech_accel.readout import (TrackerConfig, estimate_acceleration, noise_budget,
                                    run_closed_loop, scale_factor, synthesize_oscillator,
                                    track_frequency)

G_OM = 87.74e18  # Hz/m, i.e. 87.74 GHz/nm
MASS, F_M = 7.2e-12, 41e3


def _cavity(kappa):
    return build_optical_cavity(1.55e-6, 2 / kappa, 2 / kappa, G_OM)


@pytest.mark.acceptance(1, "vacuum coupling g0 within 2% of 464 kHz")
def test_g0_consistency(record_property):
    mech = build_mechanical_mode(MASS, F_M, 2e4)
    g0 = _cavity(2 * math.pi * 2e9).g0(mech)
    # independent: g_om * sqrt(hbar / 2 m omega_m)
    oracle = 2 * math.pi * G_OM * math.sqrt(HBAR / (2 * MASS * 2 * math.pi * F_M))
    record_property("detail", f"g0/2pi = {g0 / 2 / math.pi / 1e3:.1f} kHz")
    assert g0 == pytest.approx(oracle, rel=1e-12)
    assert abs(g0 / (2 * math.pi) / 464e3 - 1) < 0.02


@pytest.mark.acceptance(2, "thermal NEA in [16.2, 18.4] ug/rtHz; 2.5 fm/rtHz x omega_m^2 within 5%")
def test_thermodynamic_limit(record_property):
    mech = build_mechanical_mode(MASS, F_M, 2e4)
    cav = _cavity(2 * math.pi * 2e9)
    nb = noise_budget(DeviceConfig(mech, cav, build_laser(cav, 0.0, 0.0), 300.0))
    from_disp = 2.5e-15 * mech.omega_m**2
    record_property("detail", f"NEA {nb.nea_ug:.2f} ug/rtHz, 2.5 fm x w^2 = "
                              f"{from_disp / G_STANDARD * 1e6:.2f} ug/rtHz")
    assert 16.2 <= nb.nea_ug <= 18.4
    assert abs(from_disp / nb.nea - 1) < 0.05


@pytest.mark.acceptance(3, "calibration round trip: 50 seeds within 5%, bias < 2%, SNR >= 20 dB")
def test_calibration_round_trip(record_property):
    # runtime ~30 s
    mech = build_mechanical_mode(MASS, F_M, 200)
    n_th = spectral.thermal_occupancy(mech, 300.0)
    g0 = 2 * math.pi * 2.0
    tone = spectral.CalibrationTone.from_beta(0.3, 2 * math.pi * 39.2e3)
    fs = 2.0**17
    ratio, snr, parseval = [], [], []
    for seed in range(50):
        v = spectral.synthesize_calibration_signal(mech, g0, n_th, tone, fs=fs,
                                                   n_samples=65 * 8192, gain=1e-3,
                                                   noise_floor=0.5, seed=seed)
        res = spectral.calibrate_g0(v, fs, tone, n_th)
        ratio.append(res.g0.g0 / g0)
        snr.append(min(res.snr_mode_db, res.snr_tone_db))
        full = spectral.periodogram(v, fs, window="boxcar")
        parseval.append(full.total_power() / np.mean(v**2))
    ratio = np.array(ratio)
    record_property("detail", f"worst {np.abs(ratio - 1).max():.2%}, bias {ratio.mean() - 1:+.2%}, "
                              f"min SNR {min(snr):.1f} dB")
    assert np.all(np.abs(ratio - 1) < 0.05)
    assert abs(ratio.mean() - 1) < 0.02
    assert min(snr) >= 20
    assert np.all(np.abs(np.array(parseval) - 1) < 0.01)


def _damped(t, amp, rate, omega, phase, offset):
    return amp * np.exp(-rate * t) * np.cos(omega * t + phase) + offset


@pytest.mark.acceptance(4, "spring: 0.1% vs force-derivative oracle, 0.5% vs ringdown (5x5 grid)")
def test_spring_oracles(record_property):
    # runtime ~1 min
    mech = build_mechanical_mode(MASS, F_M, 1e4)
    kappa = 200 * mech.omega_m
    cav = _cavity(kappa)
    half = kappa / 2
    base = DeviceConfig(mech, cav, build_laser(cav, 0.0, 0.0), temperature=0.0)
    # photon number whose spring reaches at most ~0.4 k at the steepest detuning
    n_top = 0.4 * mech.k / (0.65 * HBAR * cav.g_om**2 / half)
    probe = base.with_laser(power=1e-6)
    per_photon = 1e-6 / dynamics.peak_photon_number(probe.optical, probe.laser)
    worst_fd = worst_ring = 0.0
    for frac in (0.2, 0.4, 0.6, 0.8, 1.0):
        for dk in (-1.0, -0.4, 0.3, 0.6, 1.2):
            cfg = base.with_laser(power=frac * n_top * per_photon, detuning=dk * kappa)
            op = spring.effective_frequency(cfg)
            h = 1e-6 * half / abs(cav.g_om)
            force = dynamics.optical_force(cfg, np.array([op.x_eq - h, op.x_eq + h]))
            k_fd = -(force[1] - force[0]) / (2 * h)
            w_fd = math.sqrt((mech.k + k_fd) / mech.mass)
            worst_fd = max(worst_fd, abs(op.omega_eff / w_fd - 1))

            dx = 1e-3 * half / abs(cav.g_om)
            period = 2 * math.pi / op.omega_eff
            traj = dynamics.simulate_trajectory(cfg, duration=15 * period, dt=period / 50,
                                                x0=op.x_eq + dx, field_mode="exact",
                                                method="adaptive")
            popt, _ = curve_fit(_damped, traj.t, traj.x - op.x_eq,
                                p0=[dx, 0.0, op.omega_eff, 0.0, 0.0])
            worst_ring = max(worst_ring, abs(popt[2] / op.omega_eff - 1))
    record_property("detail", f"worst FD {worst_fd:.2e}, worst ringdown {worst_ring:.2e}")
    assert worst_fd < 1e-3
    assert worst_ring < 5e-3


@pytest.mark.acceptance(5, "maximum frequency shift non-decreasing in intracavity power")
def test_shift_monotone_in_power(demo, record_property):
    kappa = demo.optical.kappa
    powers = [15e-6, 19e-6, 23e-6, 29e-6, 33e-6, 42e-6]
    grid = np.arange(-160.0, 5.01, 0.5) * kappa
    rows = spring.spring_sweep(demo, grid, powers, power_kind="intracavity", branch="high")
    shifts = list(spring.max_frequency_shift(rows, demo.mechanical.f_m).values())
    record_property("detail", "shifts " + ", ".join(f"{s / 1e3:.2f}" for s in shifts) + " kHz")
    assert len(shifts) == len(powers)
    assert all(b >= a for a, b in zip(shifts, shifts[1:]))


@pytest.mark.acceptance(6, "sideband powers match time-domain FFT within 1%; sum |J_k|^2 = 1")
def test_bessel_vs_time_domain(record_property):
    mech = build_mechanical_mode(MASS, F_M, 1e4)
    kappa = 2 * mech.omega_m
    cav = _cavity(kappa)
    cfg = DeviceConfig(mech, cav, build_laser(cav, 1e-6, 0.7 * kappa), temperature=0.0)
    w = mech.omega_m
    period = 2 * math.pi / w
    n_per, spp = 16, 64
    worst, worst_sum = 0.0, 0.0
    for beta in (0.1, 0.5, 1.0):
        x_o = beta * w / cav.g_om
        spec = dynamics.bessel_sideband_spectrum(cfg, x_o, 0.0)
        worst_sum = max(worst_sum, abs(spec.completeness() - 1))
        motion = lambda t, x_o=x_o: (-x_o * math.sin(w * t), -x_o * w * math.cos(w * t))
        # the transient decays as exp(-kappa t / 2); 20 periods leave nothing
        traj = dynamics.simulate_trajectory(cfg, duration=(20 + n_per) * period,
                                            dt=period / spp, field_mode="exact",
                                            method="adaptive", prescribed_motion=motion)
        a = traj.field[-n_per * spp - 1:-1]
        t0 = traj.t[-n_per * spp - 1]
        coeff = np.fft.fft(a) / a.size
        lines = spec.field_lines(8)
        total = sum(abs(c) ** 2 for c in lines.values())
        for n, c in lines.items():
            if abs(c) ** 2 <= 1e-6 * total:
                continue
            # a line exp(-i n w t) lands in bin -n * n_per
            b = coeff[(-n * n_per) % a.size] * np.exp(1j * n * w * t0)
            worst = max(worst, abs(abs(b) ** 2 / abs(c) ** 2 - 1))
    record_property("detail", f"worst sideband error {worst:.2e}, completeness {worst_sum:.1e}")
    assert worst < 0.01
    assert worst_sum < 1e-10


@pytest.mark.acceptance(7, "thermal <x^2> = kT/k within 3%; Parseval within 1% on every trace")
def test_equipartition_and_parseval(record_property):
    # runtime ~40 s; Q = 20 keeps the correlation time short so 64 x 2000 periods average well
    mech = build_mechanical_mode(MASS, F_M, 20)
    cav = _cavity(2 * math.pi * 2e9)
    cfg = DeviceConfig(mech, cav, build_laser(cav, 0.0, 0.0), temperature=300.0)
    period = 2 * math.pi / mech.omega_m
    ms, worst_parseval = [], 0.0
    for seed in range(64):
        traj = dynamics.simulate_trajectory(cfg, dynamics.ForceInputs(thermal=True),
                                            duration=2000 * period, dt=period / 40, seed=seed)
        x = traj.x[traj.x.size // 10:]
        ms.append(np.mean(x**2))
        psd = spectral.periodogram(x, 1 / traj.dt, window="boxcar")
        worst_parseval = max(worst_parseval, abs(psd.total_power() / np.mean(x**2) - 1))
    ratio = np.mean(ms) / (K_B * 300.0 / mech.k)
    record_property("detail", f"<x^2>/(kT/k) = {ratio:.4f}, worst Parseval {worst_parseval:.1e}")
    assert abs(ratio - 1) < 0.03
    assert worst_parseval < 0.01


@pytest.mark.acceptance(8, "2 mg step within 5%; 5x-range ramp within 5%; SF drift < 2% per retune")
def test_closed_loop_readout(demo, record_property):
    # runtime ~40 s
    fs = 420e3
    tracker = TrackerConfig(f_min=30e3, f_max=50e3, f_nominal=demo.mechanical.f_m)
    sf = scale_factor(demo)
    step, t_step = 2e-3 * G_STANDARD, 2.0
    _, v, _ = synthesize_oscillator(demo, lambda t: np.where(t >= t_step, step, 0.0),
                                    duration=5.0, fs=fs, thermal=True, seed=1)
    track = track_frequency(v, fs, tracker)
    quiet = track.t + tracker.window_s / 2 <= t_step
    f_ref = float(np.nanmedian(track.f[quiet]))
    a = estimate_acceleration(track.f, sf, f_ref)
    settled = track.t - tracker.window_s / 2 >= t_step
    step_err = abs(np.nanmean(a[settled]) / step - 1)

    span = 5 * sf.linear_range_mps2
    ramp = run_closed_loop(demo, lambda t: span * np.clip((t - 1.5) / 20, 0, 1), duration=23,
                           fs=fs, tracker=tracker, thermal=True, quiet_s=1.5, seed=2)
    ok = ramp.usable()
    ramp_err = np.max(np.abs(ramp.a_est[ok] - ramp.a_true[ok])) / span
    drift = max(abs(after / before - 1) for before, after in ramp.sf_pairs)
    n_ret = int(ramp.retune.sum())
    record_property("detail", f"step error {step_err:.2%}, ramp error {ramp_err:.2%} of span, "
                              f"{n_ret} retunes, SF drift {drift:.2%}")
    assert step_err < 0.05
    assert n_ret >= 4
    assert ramp_err < 0.05
    assert drift < 0.02


@pytest.mark.acceptance(9, "tuned targets: 667 Hz/g within 10%; slope within 10x of 5.91 Hz/nW")
def test_tuned_targets(demo, record_property):
    sf = scale_factor(demo)
    slope = abs(spring.power_sensitivity_slope(demo)) * 1e-9
    record_property("detail", f"{abs(sf.hz_per_g):.1f} Hz/g ({sf.mg_per_hz:.3f} mg/Hz), "
                              f"{slope:.2f} Hz/nW")
    assert abs(abs(sf.hz_per_g) / 667 - 1) < 0.1
    assert abs(sf.mg_per_hz / 1.5 - 1) < 0.1
    assert 5.91 / 10 <= slope <= 5.91 * 10


@pytest.mark.acceptance(10, "every subcommand is byte-identical for identical config and seed")
def test_cli_determinism(demo_path, tmp_path, record_property):
    # runtime ~1 min with the full run parameters of the demo config
    subs = ["simulate", "sweep", "calibrate", "noise", "track", "dynrange", "validate"]
    differing = []
    for sub in subs:
        snaps = []
        for i in range(2):
            out = tmp_path / f"{sub}{i}"
            assert cli.run([sub, "--config", str(demo_path), "--out", str(out),
                            "--seed", "7"]) == cli.EXIT_OK
            man = json.loads((out / f"manifest_{sub}.json").read_text())
            data = {o["file"]: (out / o["file"]).read_bytes() for o in man["outputs"]}
            # wall-clock time and the output path are the only run-dependent fields
            man.pop("runtime_s")
            man.pop("out_dir")
            snaps.append((data, man))
        if snaps[0] != snaps[1]:
            differing.append(sub)
    record_property("detail", f"{len(subs)} subcommands checked, differing: {differing or 'none'}")
    assert not differing
