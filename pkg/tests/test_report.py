import csv
import io
import json

import pytest

from epdgscan import logs
from epdgscan.classify import CountryStatus
from epdgscan.plmn import MccCountryTable, Region
from epdgscan.report import build_report, export_country_status, render_text, write_report
from epdgscan.simnet import Scenario, spawn
from epdgscan.vantage import run_campaign, simulated_plan

from conftest import operator, vantage


@pytest.fixture(scope="module")
def three_ops(tmp_path_factory):
    """Two European operators (one with an MNC alias sharing its address) and one in Asia."""
    sc = Scenario.from_dict({
        "seed": 8,
        "operators": [
            operator("262", "002", "DE", ["2.0.0.1"], alias_mncs=["009"],
                     ike={"access": "allow_countries", "countries": ["DE"]}),
            operator("208", "01", "FR", ["2.0.1.1", "2.0.1.2"]),
            operator("440", "10", "JP", ["2.0.2.1"]),
        ],
        "vantages": [vantage("de1", "DE", 1), vantage("fr1", "FR", 2), vantage("jp1", "JP", 3)],
    })
    out = tmp_path_factory.mktemp("three")
    with spawn(sc) as net:
        run_campaign(simulated_plan(sc, out), net=net)
    return out


def _row(bundle, region):
    return next(r for r in bundle.regions if r.region is region)


def test_region_rows(three_ops, mcc_table):
    b = build_report(three_ops, mcc_table)
    eu, asia = _row(b, Region.EUROPE), _row(b, Region.ASIA_MIDDLE_EAST)
    # the alias domain is a second domain but not a second address
    assert (eu.discovered.domains, eu.discovered.ips, eu.discovered.countries) == (3, 3, 2)
    assert (eu.responsive.domains, eu.responsive.ips) == (3, 3)
    assert (eu.blocked.domains, eu.blocked.ips, eu.blocked.countries) == (2, 1, 1)
    assert (asia.discovered.domains, asia.discovered.ips, asia.blocked.domains) == (1, 1, 0)
    others = [r for r in b.regions if r.region not in (Region.EUROPE, Region.ASIA_MIDDLE_EAST)]
    assert all((r.discovered.domains, r.responsive.domains, r.blocked.domains) == (0, 0, 0) for r in others)


def test_two_european_operators_count_two_domains(tmp_path, mcc_table):
    sc = Scenario.from_dict({
        "operators": [operator("262", "002", "DE", ["2.0.0.1"]), operator("208", "01", "FR", ["2.0.1.1"]),
                      operator("440", "10", "JP", ["2.0.2.1"])],
        "vantages": [vantage("de1", "DE", 1), vantage("jp1", "JP", 2)],
    })
    with spawn(sc) as net:
        run_campaign(simulated_plan(sc, tmp_path), net=net)
    b = build_report(tmp_path, mcc_table)
    assert _row(b, Region.EUROPE).discovered.domains == 2
    assert _row(b, Region.ASIA_MIDDLE_EAST).discovered.domains == 1


def test_report_is_byte_identical_on_rerun(three_ops, mcc_table, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        write_report(build_report(three_ops, mcc_table), d)
    for name in ("verdicts.csv", "regions.csv", "country_status.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_provenance(three_ops, mcc_table, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("rate: 1\n")
    p = build_report(three_ops, mcc_table, config_path=cfg).provenance
    assert len(p["campaign_id"]) == 16 and len(p["log_digest"]) == 64 and len(p["config_hash"]) == 64
    assert p["geodb_versions"] and p["mcc_table_version"] == mcc_table.version
    assert p["first_record"] <= p["last_record"]
    assert p["records"]["vantage_locations"] == 3


def test_empty_logs_give_zero_rows(tmp_path, mcc_table):
    b = build_report(tmp_path, mcc_table)
    assert len(b.regions) == len(Region)
    assert all(c.countries == c.domains == c.ips == 0 for r in b.regions for c in (r.discovered, r.responsive, r.blocked))
    assert {v.blocked_fraction for v in b.versions.values()} == {None}
    assert set(b.country_status.values()) == {CountryStatus.NO_VOWIFI}
    paths = write_report(b, tmp_path)
    data = json.loads(paths["report_json"].read_text())
    assert data["verdict_csv"] == "verdicts.csv" and data["discrepancies"] == []
    assert paths["verdicts_csv"].read_text().count("\n") == 1
    assert "n/a" in render_text(b)


def test_export_country_status():
    text = export_country_status({"FR": CountryStatus.NO_GEOBLOCKING, "DE": CountryStatus.BLOCKED_DNS})
    assert text == "iso2,status\nDE,blocked_dns\nFR,no_geoblocking\n"
    assert export_country_status({}) == "iso2,status\n"


def test_country_only_in_table_is_no_vowifi(tmp_path):
    table = MccCountryTable({"262": frozenset({"DE"}), "289": frozenset({"AQ"})}, version="t")
    logs.append_jsonl(tmp_path / logs.DNS_LOG, [{
        "domain": "epdg.epc.mnc002.mcc262.pub.3gppnetwork.org", "record_type": "A", "vantage_id": "v",
        "vantage_country": "DE", "timestamp": "t", "cname_chain": [], "answers": ["2.0.0.1"], "outcome": "answers"}])
    rows = list(csv.reader(io.StringIO(export_country_status(build_report(tmp_path, table).country_status))))
    assert rows == [["iso2", "status"], ["AQ", "no_vowifi"], ["DE", "dns_entry_only"]]


def test_version_summary(three_ops, mcc_table):
    v4 = build_report(three_ops, mcc_table).versions[4]
    # the DE operator's two domains are blocked, the FR and JP ones are not
    assert (v4.responsive_domains, v4.blocked_domains) == (4, 2)
    assert v4.blocked_fraction == 0.5
