"""Expected classifications for a scenario, derived from its policies alone.

Nothing here looks at traffic: behaviors and verdicts follow from which
measured countries each policy serves. The pipeline's output on the same
scenario must match exactly.
"""

from __future__ import annotations

import ipaddress
from collections import defaultdict
from dataclasses import dataclass, field

from ..plmn import MccCountryTable, country_continent, default_mcc_table
from .scenario import Scenario, ScenarioError, SimOperator

BLOCKING = ("countries", "continental", "global")
RANK = {"none": 0, "countries": 1, "continental": 2, "global": 3}


@dataclass(frozen=True)
class ExpectedVerdict:
    scope: str  # none / countries / continental / global / unresponsive
    items: tuple = ()
    partitioned: bool = False


@dataclass
class GroundTruth:
    behaviors: dict = field(default_factory=dict)  # (domain, "A"|"AAAA") -> "G1".."G4" | "undetermined"
    verdicts: dict = field(default_factory=dict)  # (domain, 4|6) -> ExpectedVerdict
    discrepancies: dict = field(default_factory=dict)  # domain -> open stack ("v4", "v6" or None)
    country_status: dict = field(default_factory=dict)  # ISO -> status value
    discovered: dict = field(default_factory=dict)  # (domain, 4|6) -> frozenset of IPs


def _answers(op: SimOperator, country: str, version: int) -> tuple[bool, frozenset, int]:
    """(succeeds, reachable address set, addresses per answer) for one client country."""
    policy = op.dns_policy.effective
    pool = frozenset(op.pool(version))
    if policy.kind == "domestic_only":
        ok = country == op.home_country
        return ok and bool(pool), pool if ok else frozenset(), len(pool)
    if policy.kind == "geo_partition":
        sub = frozenset(ip for ip in policy.subpool_for(country) if ipaddress.ip_address(ip).version == version)
        return bool(sub), sub, min(policy.k, len(sub))
    if policy.kind == "random_subset":
        return bool(pool), pool, min(policy.k, len(pool))
    return bool(pool), pool, len(pool)


def _components(reach: dict[str, frozenset]) -> int:
    groups: list[set] = []
    for ips in reach.values():
        merged = set(ips)
        rest = []
        for g in groups:
            if g & merged:
                merged |= g
            else:
                rest.append(g)
        groups = rest + [merged]
    return len(groups)


def _behavior(op: SimOperator, measured: set[str], home: frozenset, version: int) -> str | None:
    """Expected group, or None when no measured country gets an answer."""
    policy = op.dns_policy.effective
    if policy.kind == "domestic_only" and policy.leak_rate > 0 and op.home_country not in measured and op.pool(version):
        raise ScenarioError(f"{op.plmn}: leaking domestic-only policy without a home vantage is not deterministic")
    per_country = {c: _answers(op, c, version) for c in measured}
    reach = {c: ips for c, (ok, ips, _) in per_country.items() if ok}
    if not reach:
        return None
    if len(measured) < 2:
        return "undetermined"
    succeeding = set(reach)
    if succeeding <= home and measured - home:
        return "G4"
    if _components(reach) >= 2:
        return "G3"
    union = frozenset().union(*reach.values())
    if all(per_country[c][2] >= len(union) for c in reach):
        return "G1"
    return "G2"


def _verdict(op: SimOperator, ips: frozenset, measured: set[str], home: frozenset) -> ExpectedVerdict:
    detail = {}
    for ip in sorted(ips):
        policy = op.ike_policy_for(ip)
        serves = {c for c in measured if policy.allows(c)}
        if serves:
            detail[ip] = frozenset(measured - serves)
    if not detail:
        return ExpectedVerdict("unresponsive")
    blocked = frozenset.intersection(*detail.values())
    foreign = measured - home
    if not blocked:
        return ExpectedVerdict("none", (), any(detail.values()))
    if foreign and foreign <= blocked:
        return ExpectedVerdict("global")
    by_cont = defaultdict(set)
    for c in measured:
        cont = country_continent(c)
        if cont:
            by_cont[cont].add(c)
    conts = tuple(sorted(k for k, cs in by_cont.items() if cs <= blocked))
    if conts:
        return ExpectedVerdict("continental", conts)
    return ExpectedVerdict("countries", tuple(sorted(blocked)))


def ground_truth(scenario: Scenario, mcc_table: MccCountryTable | None = None) -> GroundTruth:
    table = mcc_table or default_mcc_table()
    truth = GroundTruth()
    measured = {4: {v.country for v in scenario.vantages if v.v4}, 6: {v.country for v in scenario.vantages if v.v6}}
    # A lookups go to the resolver infrastructure from every vantage; AAAA only from IPv6-capable ones
    asking = {4: {v.country for v in scenario.vantages}, 6: measured[6]}
    has_entries: set[str] = set()
    responded: set[str] = set()
    ike_blocked: set[str] = set()
    dns_blocked: set[str] = set()
    for op in scenario.operators:
        home = table.get(op.plmn.mcc, frozenset())
        for version, rtype in ((4, "A"), (6, "AAAA")):
            group = _behavior(op, asking[version], home, version)
            if group is None:
                continue
            reachable = frozenset().union(*(_answers(op, c, version)[1] for c in asking[version]))
            verdict = _verdict(op, reachable, measured[version], home) if reachable else None
            for domain in op.domains():
                truth.behaviors[(domain, rtype)] = group
                truth.discovered[(domain, version)] = reachable
                if verdict is not None:
                    truth.verdicts[(domain, version)] = verdict
            has_entries |= home
            if group == "G4":
                dns_blocked |= home
            if verdict is not None and verdict.scope != "unresponsive":
                responded |= home
            if verdict is not None and verdict.scope in BLOCKING:
                ike_blocked |= home
        for domain in op.domains():
            v4, v6 = truth.verdicts.get((domain, 4)), truth.verdicts.get((domain, 6))
            if v4 is None or v6 is None or "unresponsive" in (v4.scope, v6.scope):
                continue
            if (v4.scope, v4.items) != (v6.scope, v6.items):
                r4, r6 = RANK[v4.scope], RANK[v6.scope]
                truth.discrepancies[domain] = "v6" if r4 > r6 else "v4" if r6 > r4 else None
    for country in sorted(table.countries()):
        if country not in has_entries:
            status = "no_vowifi"
        elif country in ike_blocked:
            status = "blocked_ike"
        elif country in dns_blocked:
            status = "blocked_dns"
        elif country not in responded:
            status = "dns_entry_only"
        else:
            status = "no_geoblocking"
        truth.country_status[country] = status
    return truth


def diff(truth: GroundTruth, result) -> list[str]:
    """Differences between expected values and a :class:`~epdgscan.classify.Classification`."""
    out = []
    got_b = {(d, rt.value): b.group.value for (d, rt), b in result.behaviors.items()}
    for key in sorted(set(truth.behaviors) | set(got_b)):
        want, got = truth.behaviors.get(key), got_b.get(key)
        if want != got:
            out.append(f"behavior {key[0]} {key[1]}: expected {want}, got {got}")
    got_v = {}
    for key, v in result.verdicts.items():
        partitioned = any(n.startswith("partitioned") for n in v.notes)
        got_v[key] = ExpectedVerdict(v.scope.kind.value, tuple(v.scope.items), partitioned)
    for key in sorted(set(truth.verdicts) | set(got_v)):
        want, got = truth.verdicts.get(key), got_v.get(key)
        if want != got:
            out.append(f"verdict {key[0]} v{key[1]}: expected {want}, got {got}")
    got_d = {d.domain: d.open_stack for d in result.discrepancies}
    for domain in sorted(set(truth.discrepancies) | set(got_d)):
        if truth.discrepancies.get(domain, "-") != got_d.get(domain, "-"):
            out.append(f"dual-stack {domain}: expected {truth.discrepancies.get(domain, '-')}, got {got_d.get(domain, '-')}")
    got_s = {c: s.value for c, s in result.status.items()}
    for country in sorted(set(truth.country_status) | set(got_s)):
        if truth.country_status.get(country) != got_s.get(country):
            out.append(f"status {country}: expected {truth.country_status.get(country)}, got {got_s.get(country)}")
    return out
