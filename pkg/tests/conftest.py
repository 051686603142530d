import math
from pathlib import Path

import pytest

from optomech_accel.model import (DeviceConfig, build_laser, build_mechanical_mode,
                                  build_optical_cavity, load_config)

ROOT = Path(__file__).resolve().parents[1]
DEMO_CONFIG = ROOT / "configs" / "device.json"


@pytest.fixture(scope="session")
def demo_path():
    return DEMO_CONFIG


@pytest.fixture(scope="session")
def demo():
    return load_config(DEMO_CONFIG)


def device(mass=7.2e-12, f_m=41e3, q_m=2e4, kappa_over_omega=None, kappa=2 * math.pi * 2e9,
           g_om_hz_per_m=87.74e18, power=0.0, detuning=0.0, temperature=300.0):
    """Critically coupled test device; kappa may be given relative to omega_m."""
    mech = build_mechanical_mode(mass, f_m, q_m)
    if kappa_over_omega is not None:
        kappa = kappa_over_omega * mech.omega_m
    cav = build_optical_cavity(1.55e-6, 2 / kappa, 2 / kappa, g_om_hz_per_m)
    return DeviceConfig(mech, cav, build_laser(cav, power, detuning), temperature)


# --- acceptance report ------------------------------------------------------------
# Tests marked ``acceptance(n, title)`` get one PASS/FAIL line each in the summary;
# they may attach a short measured-value string via ``record_property("detail", ...)``.

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and rep.when == "call":
        detail = (detail + "; " if detail else "") + rep.longrepr.reprcrash.message.splitlines()[0] \
            if hasattr(rep.longrepr, "reprcrash") else detail
    _ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
