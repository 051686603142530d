import copy
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optomech_accel.model import (HBAR, ConfigError, build_mechanical_mode, build_optical_cavity,
                                  config_to_dict, load_config, save_config, validate_config)

VALID = {
    "mechanical": {"mass_kg": 7.2e-12, "f_m_hz": 41000.0, "q_m": 2e4},
    "optical": {"wavelength_m": 1.55e-6, "tau_0_s": 2e-9, "tau_ex_s": 2e-9,
                "g_om_ghz_per_nm": 87.74},
    "laser": {"power_w": 1e-4, "detuning_rad_s": 1e9},
    "temperature_k": 300.0,
}


def test_mechanical_anchor_values():
    m = build_mechanical_mode(7.2e-12, 41e3, 2e4)
    assert m.x_zpf == pytest.approx(5.33e-15, rel=2e-3)
    assert m.k == pytest.approx(0.478, rel=2e-3)
    # m * omega_m / Q_m
    assert m.b == pytest.approx(9.274e-11, rel=1e-3)
    assert m.zeta == pytest.approx(1 / (2 * 2e4), rel=1e-12)


def test_near_lossless_limit():
    m = build_mechanical_mode(7.2e-12, 41e3, 1e12)
    assert m.b < 1e-17
    assert m.zeta < 1e-12


def test_cavity_lifetimes():
    cav = build_optical_cavity(1.55e-6, 2e-9, 2e-9, 87.74e18)
    assert cav.tau == pytest.approx(1e-9, rel=1e-15)
    assert cav.kappa == pytest.approx(1e9, rel=1e-15)
    assert cav.eta == 0.5
    under = build_optical_cavity(1.55e-6, 2e-9, 1e6, 87.74e18)
    assert under.eta < 1e-14
    assert under.kappa == pytest.approx(1 / 2e-9, rel=1e-12)


def test_g0_near_464_khz():
    m = build_mechanical_mode(7.2e-12, 41e3, 2e4)
    cav = build_optical_cavity(1.55e-6, 2e-9, 2e-9, 87.74e18)
    g0_hz = cav.g0(m) / (2 * math.pi)
    assert abs(g0_hz / 464e3 - 1) < 0.01
    assert cav.g0(m) == cav.g_om * m.x_zpf
    assert cav.g_om_cyclic == pytest.approx(87.74e18, rel=1e-12)


def test_wavelength_warning():
    with pytest.warns(UserWarning):
        build_optical_cavity(1.0e-6, 2e-9, 2e-9, 1e18)


@pytest.mark.parametrize("args", [(0, 41e3, 1e4), (1e-12, -1, 1e4), (1e-12, 41e3, math.nan)])
def test_mechanical_rejects_nonpositive(args):
    with pytest.raises(ConfigError):
        build_mechanical_mode(*args)


@settings(max_examples=200, deadline=None)
@given(m=st.floats(1e-18, 1e-3), f=st.floats(1.0, 1e9), q=st.floats(1.0, 1e9))
def test_zero_point_identity(m, f, q):
    mode = build_mechanical_mode(m, f, q)
    assert mode.x_zpf**2 * 2 * mode.mass * mode.omega_m / HBAR == pytest.approx(1, abs=1e-12)


def test_validate_accepts_reference_document():
    cfg = validate_config(copy.deepcopy(VALID))
    assert cfg.mechanical.mass == 7.2e-12
    assert cfg.optical.g_om_ghz_per_nm == 87.74
    assert cfg.laser.detuning == 1e9


def test_negative_temperature_rejected():
    raw = copy.deepcopy(VALID)
    raw["temperature_k"] = -1
    with pytest.raises(ConfigError) as e:
        validate_config(raw)
    assert ("temperature_k", "temperature must be >= 0") in e.value.errors


def test_missing_field_is_named():
    raw = copy.deepcopy(VALID)
    del raw["optical"]["g_om_ghz_per_nm"]
    with pytest.raises(ConfigError) as e:
        validate_config(raw)
    assert [p for p, _ in e.value.errors] == ["optical.g_om_ghz_per_nm"]


def test_all_errors_reported_together():
    raw = copy.deepcopy(VALID)
    raw["mechanical"]["mass_kg"] = -1
    raw["laser"]["power_w"] = "a lot"
    del raw["optical"]
    with pytest.raises(ConfigError) as e:
        validate_config(raw)
    paths = {p for p, _ in e.value.errors}
    assert paths == {"mechanical.mass_kg", "laser.power_w", "optical"}


def test_bad_gain_curve():
    raw = copy.deepcopy(VALID)
    raw["detector"] = {"gain_curve": [[10, 1], [5, 1]]}
    with pytest.raises(ConfigError):
        validate_config(raw)


finite = st.floats(allow_nan=False, allow_infinity=False)
pos = st.floats(1e-30, 1e30, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(mass=pos, f=pos, q=pos, wl=st.floats(1.4e-6, 1.7e-6), t0=pos, tex=pos, g=finite,
       p=st.floats(0, 1e3), d=st.floats(-1e14, 1e14), temp=st.floats(0, 1e4))
def test_round_trip_bit_exact(tmp_path_factory, mass, f, q, wl, t0, tex, g, p, d, temp):
    raw = {"mechanical": {"mass_kg": mass, "f_m_hz": f, "q_m": q},
           "optical": {"wavelength_m": wl, "tau_0_s": t0, "tau_ex_s": tex, "g_om_ghz_per_nm": g},
           "laser": {"power_w": p, "detuning_rad_s": d}, "temperature_k": temp}
    cfg = validate_config(raw)
    path = tmp_path_factory.mktemp("rt") / "c.json"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert config_to_dict(back) == config_to_dict(cfg)


def test_demo_config_loads_with_comments(demo_path):
    raw = json.loads(demo_path.read_text())
    assert any(k.startswith("_") for k in raw["laser"])
    cfg = load_config(demo_path)
    assert cfg.mechanical.q_m == 2e4
