"""Command-line front end: optomech-accel <subcommand> --config FILE [--out DIR] [--seed N].

Run parameters (durations, grids, sample rates) are read from the optional
``runs`` section of the config file; see docs/config.md for the keys and the
values used when a key is absent. The resolved parameters are written to the
run manifest so every output can be traced back to them.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dynamics, spectral, spring
from .model import G_STANDARD, ConfigError, DeviceConfig, build_mechanical_mode, validate_config
from .readout import (SaturationError, TrackerConfig, estimate_acceleration, ledger_to_json,
                      noise_budget, run_closed_loop, scale_factor, synthesize_oscillator,
                      track_frequency)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

RUN_DEFAULTS = {
    "simulate": {"duration_s": 0.01, "steps_per_period": 40, "thermal": True,
                 "accel_mps2": 0.0, "field_mode": "auto"},
    "sweep": {"detuning_min_kappa": -160.0, "detuning_max_kappa": 5.0,
              "detuning_step_kappa": 0.5, "branch": "high", "power_kind": "intracavity",
              "powers_w": [15e-6, 19e-6, 23e-6, 29e-6, 33e-6, 42e-6]},
    "calibrate": {"q_m": 200.0, "g0_hz": 2.0, "tone_beta": 0.3, "tone_hz": 39200.0,
                  "fs_hz": 131072.0, "n_samples": 532480, "nperseg": 16384,
                  "gain_v_per_rad_s": 1e-3, "noise_floor_v_per_rthz": 0.5},
    "track": {"duration_s": 5.0, "fs_hz": 420000.0, "step_mps2": 0.0196133,
              "step_time_s": 2.5, "window_s": 0.5, "hop_s": 0.25, "band_hz": 10000.0,
              "noise_v_per_rthz": 1e-3, "thermal": True},
    "dynrange": {"ramp_ranges": 5.0, "ramp_s": 20.0, "quiet_s": 1.5, "tail_s": 1.5,
                 "fs_hz": 420000.0, "window_s": 0.5, "hop_s": 0.25, "band_hz": 10000.0,
                 "noise_v_per_rthz": 1e-3, "thermal": True},
    "noise": {},
    "validate": {},
}


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optomech-accel",
                                     description="Optomechanical accelerometer simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    helps = {
        "simulate": "integrate the mechanics and cavity field; write trajectory and photocurrent",
        "sweep": "effective frequency over detuning and power grids",
        "calibrate": "synthesize a calibration measurement and extract g0",
        "noise": "thermal and detector noise-equivalent acceleration",
        "track": "track the oscillation frequency of a 2 mg step and invert to acceleration",
        "dynrange": "closed-loop ramp through the laser-retuning servo",
        "validate": "check a config file",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", default="./out", metavar="DIR")
        p.add_argument("--seed", type=_u64, default=0)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


# --- output helpers ----------------------------------------------------------

def _num(v) -> str:
    return repr(float(v))


def write_table(path: Path, columns: dict, fmt: str, comments: dict | None = None) -> Path:
    """Write equal-length columns as CSV (with ``# key=value`` comment lines) or JSON."""
    path = path.with_suffix("." + fmt)
    if fmt == "csv":
        names = list(columns)
        with open(path, "w", newline="") as fh:
            for k, v in (comments or {}).items():
                fh.write(f"# {k}={v}\n")
            fh.write(",".join(names) + "\n")
            for row in zip(*columns.values()):
                fh.write(",".join(c if isinstance(c, str) else _num(c) for c in row) + "\n")
    else:
        doc = dict(comments or {})
        doc["columns"] = {k: [c if isinstance(c, str) else float(c) for c in v]
                          for k, v in columns.items()}
        _write_json(path, doc)
    return path


def _write_json(path: Path, doc) -> Path:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_params(raw: dict, name: str) -> dict:
    params = copy.deepcopy(RUN_DEFAULTS[name])
    given = (raw.get("runs") or {}).get(name) or {}
    unknown = sorted(set(given) - set(params))
    if unknown:
        raise ConfigError([(f"runs.{name}.{k}", "unknown run parameter") for k in unknown])
    params.update(given)
    return params


# --- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    mech = cfg.mechanical
    dt = 2 * math.pi / mech.omega_m / p["steps_per_period"]
    x0 = dynamics.stable_equilibrium(cfg, p["accel_mps2"])
    traj = dynamics.simulate_trajectory(
        cfg, dynamics.ForceInputs(p["accel_mps2"], p["thermal"]), duration=p["duration_s"],
        dt=dt, seed=seed, x0=x0, field_mode=p["field_mode"])
    # independent stream for the detector noise
    v = dynamics.synthesize_photocurrent(traj, cfg, seed=[seed, 1])
    files = [write_table(out / "trajectory", {
        "t_s": traj.t, "x_m": traj.x, "v_mps": traj.v,
        "re_a": traj.field.real, "im_a": traj.field.imag}, fmt)]
    files.append(write_table(out / "photocurrent", {"t_s": traj.t, "v_volts": v}, fmt))
    print(f"simulated {len(traj.t)} steps, dt = {dt:.4g} s, field mode {traj.meta['field_mode']}")
    return files


def cmd_sweep(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    kappa = cfg.optical.kappa
    n = int(round((p["detuning_max_kappa"] - p["detuning_min_kappa"]) / p["detuning_step_kappa"]))
    grid = kappa * np.linspace(p["detuning_min_kappa"], p["detuning_max_kappa"], n + 1)
    rows = spring.spring_sweep(cfg, grid, p["powers_w"], power_kind=p["power_kind"],
                               branch=p["branch"])
    files = [write_table(out / "sweep", {
        "delta_rad_s": [r.detuning for r in rows], "p_in_w": [r.p_in for r in rows],
        "f_eff_hz": [r.f_eff for r in rows], "stable_flag": [float(r.stable) for r in rows],
        "peak_power": [r.peak_power for r in rows], "tag": [r.tag for r in rows]}, fmt)]
    shifts = spring.max_frequency_shift(rows, cfg.mechanical.f_m)
    files.append(write_table(out / "max_shift", {
        "p_in_w": list(shifts), "max_shift_hz": list(shifts.values())}, fmt))
    for (pk, s), pw in zip(shifts.items(), p["powers_w"]):
        print(f"P = {pw * 1e6:8.3f} uW ({p['power_kind']}): max shift {s:.6g} Hz")
    return files


def cmd_calibrate(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    mech = build_mechanical_mode(cfg.mechanical.mass, cfg.mechanical.f_m, p["q_m"])
    n_th = spectral.thermal_occupancy(mech, cfg.temperature)
    g0 = 2 * math.pi * p["g0_hz"]
    tone = spectral.CalibrationTone.from_beta(p["tone_beta"], 2 * math.pi * p["tone_hz"])
    v = spectral.synthesize_calibration_signal(
        mech, g0, n_th, tone, fs=p["fs_hz"], n_samples=int(p["n_samples"]),
        gain=p["gain_v_per_rad_s"], noise_floor=p["noise_floor_v_per_rthz"], seed=seed)
    res = spectral.calibrate_g0(v, p["fs_hz"], tone, n_th, nperseg=int(p["nperseg"]))
    tr = res.trace
    files = [write_table(out / "psd", {"freq_hz": tr.freqs, "psd": tr.psd}, fmt,
                         {"rbw_hz": repr(tr.rbw)})]
    fit_path = out / "fit.json"
    res.to_json(fit_path, provenance={"input": "synthesized", "seed": seed,
                                      "injected_g0_rad_s": g0, "n_th": n_th})
    files.append(fit_path)
    print(f"g0/2pi = {res.g0.g0_hz:.6g} +- {res.g0.sigma / (2 * math.pi):.3g} Hz "
          f"(injected {p['g0_hz']:g} Hz); mode SNR {res.snr_mode_db:.1f} dB, "
          f"tone SNR {res.snr_tone_db:.1f} dB")
    return files


def cmd_noise(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    nb = noise_budget(cfg)
    sf = scale_factor(cfg)
    doc = {"thermal_force_psd_n2_per_hz": nb.thermal_force_psd,
           "nea_mps2_per_rthz": nb.nea, "nea_ug_per_rthz": nb.nea_ug,
           "displacement_m_per_rthz": nb.displacement,
           "detector_nea_ug_per_rthz": nb.detector_nea_ug,
           "total_nea_ug_per_rthz": nb.total_nea_ug,
           "scale_factor_hz_per_g": sf.hz_per_g, "mg_per_hz": sf.mg_per_hz}
    if fmt == "json":
        files = [_write_json(out / "noise.json", doc)]
    else:
        files = [write_table(out / "noise", {"quantity": list(doc),
                                             "value": [repr(float(v)) for v in doc.values()]}, fmt)]
    print(f"thermal NEA {nb.nea_ug:.4g} ug/rtHz ({nb.displacement * 1e15:.4g} fm/rtHz); "
          f"detector {nb.detector_nea_ug:.4g} ug/rtHz; scale factor {sf.hz_per_g:.5g} Hz/g")
    return files


def _tracker(cfg: DeviceConfig, p: dict) -> TrackerConfig:
    f = cfg.mechanical.f_m
    try:
        f = spring.effective_frequency(cfg).f_eff
    except Exception:
        pass
    half = 0.5 * p["band_hz"]
    return TrackerConfig(window_s=p["window_s"], hop_s=p["hop_s"], f_min=max(f - half, 0.0),
                         f_max=f + half, f_nominal=f)


def cmd_track(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    step, t_step = p["step_mps2"], p["step_time_s"]
    t, v, a = synthesize_oscillator(cfg, lambda t: np.where(t >= t_step, step, 0.0),
                                    duration=p["duration_s"], fs=p["fs_hz"],
                                    noise_density=p["noise_v_per_rthz"], thermal=p["thermal"],
                                    seed=seed)
    trk = _tracker(cfg, p)
    track = track_frequency(v, p["fs_hz"], trk)
    quiet = track.t + 0.5 * trk.window_s <= t_step
    f_ref = float(np.nanmedian(track.f[quiet]))
    a_est = estimate_acceleration(track.f, scale_factor(cfg), f_ref)
    files = [write_table(out / "acceleration", {
        "t_s": track.t, "a_mps2": a_est, "a_g": a_est / G_STANDARD,
        "confidence": track.confidence, "retune_flag": np.zeros_like(track.t)}, fmt)]
    settled = track.t - 0.5 * trk.window_s >= t_step
    if settled.any():
        print(f"step {step / G_STANDARD * 1e3:.4g} mg recovered as "
              f"{np.nanmean(a_est[settled]) / G_STANDARD * 1e3:.4g} mg")
    return files


def cmd_dynrange(cfg: DeviceConfig, p: dict, out: Path, seed: int, fmt: str) -> list[Path]:
    sf = scale_factor(cfg)
    amp = p["ramp_ranges"] * sf.linear_range_mps2
    t0, ramp = p["quiet_s"], p["ramp_s"]
    res = run_closed_loop(cfg, lambda t: amp * np.clip((t - t0) / ramp, 0.0, 1.0),
                          duration=t0 + ramp + p["tail_s"], fs=p["fs_hz"],
                          tracker=_tracker(cfg, p), quiet_s=t0,
                          noise_density=p["noise_v_per_rthz"], thermal=p["thermal"], seed=seed)
    files = [write_table(out / "acceleration", {
        "t_s": res.t, "a_mps2": res.a_est, "a_g": res.a_est / G_STANDARD,
        "confidence": (~res.held).astype(float), "retune_flag": res.retune.astype(float)}, fmt)]
    led = out / "retune_ledger.json"
    ledger_to_json(res.controller.ledger if res.controller else (), led)
    files.append(led)
    ok = res.usable()
    err = np.max(np.abs(res.a_est[ok] - res.a_true[ok])) / amp if ok.any() else math.nan
    print(f"ramp to {amp / G_STANDARD * 1e3:.4g} mg: {int(res.retune.sum())} retunes, "
          f"max error {100 * err:.3g}% of span")
    return files


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "calibrate": cmd_calibrate,
            "noise": cmd_noise, "track": cmd_track, "dynrange": cmd_dynrange}


def _report_config_errors(err: ConfigError) -> None:
    print("config invalid:", file=sys.stderr)
    for path, msg in err.errors:
        print(f"  {path or '<root>'}: {msg}", file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    start = time.perf_counter()
    cfg_path = Path(args.config)
    try:
        text = cfg_path.read_bytes()
        raw = json.loads(text)
        raw = _strip(raw)
        cfg = validate_config(raw)
        params = run_params(raw, args.subcommand)
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        _report_config_errors(ConfigError([("", f"not valid JSON: {e}")]))
        return EXIT_CONFIG
    except ConfigError as e:
        _report_config_errors(e)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.subcommand == "validate":
        print(f"{cfg_path}: ok")
        files = []
    else:
        try:
            files = COMMANDS[args.subcommand](cfg, params, out, args.seed, args.format)
        except (ArithmeticError, ValueError, RuntimeError, SaturationError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_RUNTIME
    manifest = {
        "subcommand": args.subcommand,
        "config_path": str(cfg_path),
        "config_sha256": hashlib.sha256(text).hexdigest(),
        "seed": args.seed,
        "format": args.format,
        "out_dir": str(out),
        "version": __version__,
        "run_params": params,
        "outputs": [{"file": f.name, "sha256": _sha256(f)} for f in files],
        "runtime_s": time.perf_counter() - start,
    }
    _write_json(out / f"manifest_{args.subcommand}.json", manifest)
    return EXIT_OK


def _strip(raw):
    if isinstance(raw, dict):
        return {k: _strip(v) for k, v in raw.items() if not k.startswith("_")}
    if isinstance(raw, list):
        return [_strip(v) for v in raw]
    return raw


def main() -> None:
    sys.exit(run())
