import json
from pathlib import Path

import pytest

from epdgscan.plmn import default_mcc_table

ORACLES = Path(__file__).parent / "oracles"


@pytest.fixture(scope="session")
def frozen():
    return json.loads((ORACLES / "frozen.json").read_text())


@pytest.fixture(scope="session")
def mcc_table():
    return default_mcc_table()


def operator(mcc, mnc, home, v4=(), v6=(), dns="full_set", ike=None, **extra):
    """Scenario operator entry with short defaults."""
    d = {"mcc": mcc, "mnc": mnc, "home_country": home, "pool_v4": list(v4), "pool_v6": list(v6),
         "dns_policy": dns, "ike_policy": ike or {"access": "allow_all"}}
    d.update(extra)
    return d


def vantage(vid, country, n, v6=True, v4=True, **extra):
    d = {"id": vid, "country": country}
    if v4:
        d["range_v4"] = f"31.9.{n}.0/24"
    if v6:
        d["range_v6"] = f"2a0b:9:{n:x}::/48"
    d.update(extra)
    return d


def simulate(scenario, out, table=None, ratio=0.10):
    """Run the full campaign against a simulated network and build the report."""
    from epdgscan.report import build_report
    from epdgscan.simnet import spawn
    from epdgscan.vantage import run_campaign, simulated_plan

    with spawn(scenario) as net:
        run_campaign(simulated_plan(scenario, out), net=net)
    return build_report(out, table, ratio)


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one line in the acceptance summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        _ACCEPTANCE[item.nodeid] = (mark.args[0], status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, duration in _ACCEPTANCE.values():
        terminalreporter.write_line(f"{status:4}  {label}  ({duration:.1f}s)")
