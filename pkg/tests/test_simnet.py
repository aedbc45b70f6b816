import dataclasses
from collections import Counter

import pytest

from epdgscan.ike import RetryPolicy, probe
from epdgscan.resolver import Outcome, ResolveOptions, Resolver, VantageStamp
from epdgscan.simnet import DnsPolicy, IkePolicy, Scenario, ScenarioError, SimVantage, load_scenario, spawn
from epdgscan.simnet.generate import oracle_suite, planted_population, random_scenario
from epdgscan.simnet.scenario import DNS_POLICIES, IKE_ACCESS, IKE_REPLIES, dump_scenario
from epdgscan.simnet.truth import ExpectedVerdict, ground_truth

from conftest import operator, vantage

DE = "epdg.epc.mnc002.mcc262.pub.3gppnetwork.org"
OPTS = ResolveOptions(timeout_ms=300, attempts=1)


def _resolver(net, vid):
    v = net.vantages[vid]
    return Resolver(net.transport(vid), root_hints=net.root_hints, cache=False,
                    stamp=VantageStamp(vid, v.country, v.public_ip(4) or v.public_ip(6)))


def test_domestic_only_leak_rate(frozen):
    lt = frozen["leak_tolerance"]
    sc = Scenario.from_dict({
        "seed": 21,
        "operators": [operator("262", "002", "DE", ["2.0.0.1"], dns={"kind": "domestic_only", "leak_rate": lt["rate"]})],
        "vantages": [vantage("de1", "DE", 1), vantage("fr1", "FR", 2)],
    })
    with spawn(sc) as net:
        fr = _resolver(net, "fr1")
        outcomes = Counter(fr.resolve(DE, OPTS).outcome for _ in range(lt["queries"]))
        home = {_resolver(net, "de1").resolve(DE, OPTS).outcome for _ in range(20)}
    hits = outcomes[Outcome.ANSWERS]
    assert lt["min_hits"] <= hits <= lt["max_hits"]
    assert abs(hits / lt["queries"] - lt["rate"]) <= lt["tolerance"]
    assert outcomes[Outcome.NXDOMAIN] == lt["queries"] - hits
    assert home == {Outcome.ANSWERS}


def test_domestic_only_drop_times_out():
    sc = Scenario.from_dict({
        "operators": [operator("262", "002", "DE", ["2.0.0.1"], dns={"kind": "domestic_only", "foreign_action": "drop"})],
        "vantages": [vantage("de1", "DE", 1), vantage("fr1", "FR", 2)],
    })
    with spawn(sc) as net:
        obs = _resolver(net, "fr1").resolve(DE, ResolveOptions(timeout_ms=100, attempts=1))
    assert obs.outcome is Outcome.TIMEOUT


def _run(sc):
    """Fixed request sequence; returns everything the endpoints did."""
    fast = RetryPolicy().scaled(0.01)
    with spawn(sc) as net:
        answers = [tuple(_resolver(net, vid).resolve(DE, OPTS).answers) for vid in ("de1", "fr1") for _ in range(15)]
        probes = [(ip, probe(ip, retry=fast, transport=net.transport(vid)).response_kind.value)
                  for ip in ("2.0.0.1", "2.0.0.2", "2.0.0.3") for vid in ("de1", "fr1")]
        traces = [(t.endpoint, t.port, t.vantage_id, t.size) for t in net.traces]
    return answers, probes, Counter(traces)


def _seeded(seed):
    return Scenario.from_dict({
        "seed": seed,
        "operators": [operator("262", "002", "DE", ["2.0.0.1", "2.0.0.2", "2.0.0.3", "2.0.0.4"],
                               dns={"kind": "random_subset", "k": 1},
                               ike={"access": "allow_all", "flaky_rate": 0.5})],
        "vantages": [vantage("de1", "DE", 1), vantage("fr1", "FR", 2)],
    })


def test_same_seed_same_behavior():
    a, b = _run(_seeded(5)), _run(_seeded(5))
    assert a == b


def test_different_seed_changes_random_answers():
    assert _run(_seeded(5))[0] != _run(_seeded(6))[0]


# -- scenario validation -----------------------------------------------------------


@pytest.mark.parametrize("patch, msg", [
    ({"vantages": [vantage("a", "DE", 1), vantage("a", "FR", 2)]}, "unique"),
    ({"vantages": [vantage("a", "DE", 1), vantage("b", "FR", 1)]}, "overlap"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"]), operator("262", "02", "DE", ["2.0.0.1"])]}, "two operators"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"]), operator("262", "01", "DE", ["2.0.0.2"])]}, "share a domain"),
    ({"operators": [operator("262", "01", "DE")]}, "empty address pools"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns="round_robin")]}, "unknown dns policy"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns={"kind": "domestic_only", "leak_rate": 1})]}, "leak_rate"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns={"kind": "cname", "chain": []})]}, "non-empty chain"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns={"kind": "geo_partition"})]}, "partition map"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns={"kind": "geo_partition", "partition": {"*": ["9.9.9.9"]}})]},
     "outside its pools"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], ike={"access": "block"})]}, "unknown ike access"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], ike={"access": "allow_all", "reply": "x"})]}, "reply mode"),
    ({"operators": [operator("262", "01", "DE", ["2.0.0.1"], ike={"access": "allow_all", "flaky_rate": 1.5})]}, "flaky_rate"),
    ({"vantages": [{"id": "x", "country": "DE"}]}, "at least one address range"),
    ({"vantages": [{"id": "x", "country": "DE", "range_v4": "2a0b::/48"}]}, "not IPv4"),
])
def test_invalid_scenarios_are_rejected(patch, msg):
    base = {"operators": [operator("262", "01", "DE", ["2.0.0.1"])], "vantages": [vantage("de1", "DE", 1)]}
    base.update(patch)
    with pytest.raises(ScenarioError, match=msg):
        Scenario.from_dict(base)


def test_nested_cname_rejected():
    inner = DnsPolicy("cname", chain=("a.b.example",))
    with pytest.raises(ScenarioError):
        DnsPolicy("cname", chain=("c.d.example",), inner=inner)


def test_addresses_in_simulator_block_are_refused():
    sc = Scenario.from_dict({"operators": [operator("262", "01", "DE", ["198.18.0.1"])], "vantages": [vantage("de1", "DE", 1)]})
    with pytest.raises(ScenarioError, match="infrastructure"):
        spawn(sc)


def test_short_cname_target_is_refused():
    sc = Scenario.from_dict({"operators": [operator("262", "01", "DE", ["2.0.0.1"], dns={"kind": "cname", "chain": ["x.example"]})],
                             "vantages": [vantage("de1", "DE", 1)]})
    with pytest.raises(ScenarioError, match="three labels"):
        spawn(sc)


@pytest.mark.parametrize("sc", oracle_suite(10) + [planted_population(n_operators=12)], ids=lambda s: s.name)
def test_scenario_round_trip(sc, tmp_path):
    assert Scenario.from_dict(sc.to_dict()) == sc
    path = tmp_path / "s.yaml"
    dump_scenario(sc, path)
    again = load_scenario(path)
    assert again == sc and again.settings == sc.settings


def test_demo_scenario_loads():
    sc = load_scenario("scenarios/demo.yaml")
    assert len(sc.operators) == 4 and {v.country for v in sc.vantages} == {"DE", "HU", "FR", "IN", "US"}


# -- generator coverage --------------------------------------------------------------


def _kinds(suite):
    dns, access, replies = set(), set(), set()
    for sc in suite:
        for op in sc.operators:
            dns |= {op.dns_policy.kind, op.dns_policy.effective.kind}
            policies = [op.ike_policy, op.ike_policy_v6] + [p for _, p in op.ike_overrides]
            access |= {p.access for p in policies if p}
            replies |= {p.reply for p in policies if p}
    return dns, access, replies


def test_oracle_suite_covers_every_policy_arm():
    dns, access, replies = _kinds(oracle_suite())
    assert dns == set(DNS_POLICIES)
    assert access == set(IKE_ACCESS)
    assert replies == set(IKE_REPLIES)


def test_generator_is_seeded():
    assert random_scenario(3, ("jio",)) == random_scenario(3, ("jio",))
    assert random_scenario(3) != random_scenario(4)


def test_planted_population_shares():
    sc = planted_population()
    assert len(sc.operators) == 100
    v4 = sum(op.ike_policy.access != "allow_all" for op in sc.operators)
    v6 = sum(op.ike_policy_for(op.pool_v6[0]).access != "allow_all" for op in sc.operators)
    assert (v4, v6) == (15, 65)


# -- ground truth -------------------------------------------------------------------


def _truth(ops, vantages=None, table=None):
    vantages = vantages or [vantage("de1", "DE", 1), vantage("fr1", "FR", 2), vantage("us1", "US", 3)]
    return ground_truth(Scenario.from_dict({"operators": ops, "vantages": vantages}), table)


def test_truth_full_set_allow_all():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1", "2.0.0.2"])])
    assert t.behaviors[(DE, "A")] == "G1"
    assert t.verdicts[(DE, 4)] == ExpectedVerdict("none")
    assert t.country_status["DE"] == "no_geoblocking"
    assert t.country_status["FR"] == "no_vowifi"


def test_truth_all_but_home_is_global():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1"], ike={"access": "allow_countries", "countries": ["DE"]})])
    assert t.verdicts[(DE, 4)] == ExpectedVerdict("global")
    assert t.country_status["DE"] == "blocked_ike"


def test_truth_continent_denied_is_continental():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1"], ike={"access": "deny_countries", "countries": ["US"]})])
    assert t.verdicts[(DE, 4)] == ExpectedVerdict("continental", ("NA",))


def test_truth_notify_is_responsive_none():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1"], ike={"access": "allow_all", "reply": "notify_no_proposal"})])
    assert t.verdicts[(DE, 4)] == ExpectedVerdict("none")


def test_truth_geo_partition_is_g3():
    t = _truth([operator("405", "857", "IN", ["3.3.3.1", "3.3.3.3"],
                         dns={"kind": "geo_partition", "partition": {"IN": ["3.3.3.1"], "*": ["3.3.3.3"]}})],
               [vantage("in1", "IN", 1), vantage("de1", "DE", 2)])
    d = "epdg.epc.mnc857.mcc405.pub.3gppnetwork.org"
    assert t.behaviors[(d, "A")] == "G3"
    assert t.discovered[(d, 4)] == {"3.3.3.1", "3.3.3.3"}


def test_truth_domestic_only_is_g4_and_unprobed_abroad():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1"], dns="domestic_only")])
    assert t.behaviors[(DE, "A")] == "G4"
    assert t.country_status["DE"] == "blocked_dns"


def test_truth_dual_stack_discrepancy():
    t = _truth([operator("216", "30", "HU", ["2.0.0.1"], ["2a00::1"],
                         ike={"access": "allow_countries", "countries": ["HU"]}, ike_policy_v6="allow_all")],
               [vantage("hu1", "HU", 1), vantage("de1", "DE", 2), vantage("us1", "US", 3)])
    d = "epdg.epc.mnc30.mcc216.pub.3gppnetwork.org"
    assert t.verdicts[(d, 4)].scope == "global" and t.verdicts[(d, 6)].scope == "none"
    assert t.discrepancies == {d: "v6"}


def test_truth_single_country_is_undetermined():
    t = _truth([operator("262", "002", "DE", ["2.0.0.1"])], [vantage("de1", "DE", 1)])
    assert t.behaviors[(DE, "A")] == "undetermined"


def test_truth_rejects_unmeasurable_leak():
    sc = Scenario.from_dict({"operators": [operator("262", "002", "DE", ["2.0.0.1"], dns={"kind": "domestic_only", "leak_rate": 0.1})],
                             "vantages": [vantage("fr1", "FR", 1), vantage("us1", "US", 2)]})
    with pytest.raises(ScenarioError):
        ground_truth(sc)


def test_vantage_declared_country_round_trip():
    v = SimVantage("x", "de", "31.9.1.0/24", declared_country="FR")
    assert v.country == "DE" and SimVantage.from_dict(v.to_dict()) == v
    assert dataclasses.replace(v, range_v4="31.9.1.7/32").public_ip(4) == "31.9.1.7"


def test_ike_policy_allows():
    assert IkePolicy("deny_countries", ("us",)).allows("DE") and not IkePolicy("deny_countries", ("US",)).allows("US")
    assert IkePolicy("allow_countries", ("DE",)).allows("DE") and not IkePolicy("allow_countries", ("DE",)).allows(None)
    assert not IkePolicy("silent").allows("DE")
