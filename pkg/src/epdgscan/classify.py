"""Turn DNS and IKE logs into behavior groups, blocking verdicts and country states.

Blocking rule: an IP is blocked for a country when the fraction of probes
from that country that got an answer is strictly below ``ratio`` times the
IP's baseline (its responsive fraction at home). Comparisons use exact
rational arithmetic so a fraction sitting exactly on the threshold is never
misread by float rounding.
"""

from __future__ import annotations

import enum
import ipaddress
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .ike.probe import ProbeOutcome, ResponseKind
from .plmn import MccCountryTable, country_continent, default_mcc_table, parse_epdg_fqdn
from .resolver import DnsObservation, Outcome, RecordType

log = logging.getLogger(__name__)

DEFAULT_RATIO = 0.10
MIN_OBSERVATIONS = 20
NOISE_FLOOR = 0.05
FULL_SET_SHARE = 0.90
LOW_CONFIDENCE_NETWORKS = 3


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def vantage_network(ip: str | None) -> str | None:
    """Coarse network identity of a vantage address (/24 or /48)."""
    if not ip:
        return None
    addr = ipaddress.ip_address(ip)
    prefix = 24 if addr.version == 4 else 48
    return str(ipaddress.ip_network(f"{addr}/{prefix}", strict=False))


def home_countries(domain: str, table: MccCountryTable) -> frozenset:
    try:
        plmn, _ = parse_epdg_fqdn(domain)
    except ValueError:
        return frozenset()
    return table.get(plmn.mcc, frozenset())


# -- responsiveness matrix -------------------------------------------------


@dataclass
class Cell:
    responsive: int = 0
    total: int = 0
    networks: set = field(default_factory=set)

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.responsive, self.total)


@dataclass
class ResponsivenessMatrix:
    cells: dict = field(default_factory=dict)  # (domain, ip, country) -> Cell
    home: dict = field(default_factory=dict)  # domain -> frozenset of ISO codes
    skipped: int = 0
    excluded_errors: int = 0

    def fraction(self, domain: str, ip: str, country: str) -> Fraction:
        return self.cells[(domain, ip, country)].fraction

    def domains(self) -> list[str]:
        return sorted({k[0] for k in self.cells})

    def by_ip(self, domain: str, version: int | None = None) -> dict[str, dict[str, Cell]]:
        out: dict[str, dict[str, Cell]] = defaultdict(dict)
        for (d, ip, country), cell in self.cells.items():
            if d == domain and (version is None or ipaddress.ip_address(ip).version == version):
                out[ip][country] = cell
        return dict(out)


def build_matrix(probe_log: Iterable, mcc_table: MccCountryTable | None = None) -> ResponsivenessMatrix:
    """Aggregate probe outcomes per (domain, ip, vantage country).

    Accepts :class:`ProbeOutcome` objects or their dict form. Local-fault
    records are left out of the totals; records without a geolocated
    vantage country or without domains cannot be placed and are skipped.
    """
    table = mcc_table or default_mcc_table()
    m = ResponsivenessMatrix()
    for rec in probe_log:
        if isinstance(rec, dict):
            try:
                rec = ProbeOutcome.from_dict(rec)
            except (TypeError, ValueError):
                m.skipped += 1
                continue
        if rec.response_kind is ResponseKind.ERROR:
            m.excluded_errors += 1
            continue
        if not rec.vantage_country or not rec.domains:
            m.skipped += 1
            continue
        ip = str(ipaddress.ip_address(rec.target_ip))
        for domain in rec.domains:
            cell = m.cells.setdefault((domain, ip, rec.vantage_country), Cell())
            cell.total += 1
            cell.responsive += int(rec.responsive)
            net = vantage_network(rec.vantage_public_ip)
            if net:
                cell.networks.add(net)
            if domain not in m.home:
                m.home[domain] = home_countries(domain, table)
    return m


# -- IKE verdicts ----------------------------------------------------------


class ScopeKind(str, enum.Enum):
    NONE = "none"
    COUNTRIES = "countries"
    CONTINENTAL = "continental"
    GLOBAL = "global"
    UNRESPONSIVE = "unresponsive"


SCOPE_RANK = {ScopeKind.NONE: 0, ScopeKind.COUNTRIES: 1, ScopeKind.CONTINENTAL: 2, ScopeKind.GLOBAL: 3}


@dataclass(frozen=True)
class Scope:
    kind: ScopeKind
    items: tuple = ()

    def __str__(self):
        return self.kind.value + (f"({','.join(self.items)})" if self.items else "")

    @property
    def blocking(self) -> bool:
        return self.kind in (ScopeKind.COUNTRIES, ScopeKind.CONTINENTAL, ScopeKind.GLOBAL)


@dataclass
class BlockingVerdict:
    domain: str
    ip_version: int
    scope: Scope
    per_ip_detail: dict  # ip -> frozenset of blocked countries (responsive IPs only)
    baseline: float | None
    notes: list = field(default_factory=list)
    confidence: str = "normal"
    unresponsive_ips: tuple = ()

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "ip_version": self.ip_version,
            "scope": self.scope.kind.value,
            "scope_items": list(self.scope.items),
            "per_ip_detail": {ip: sorted(c) for ip, c in sorted(self.per_ip_detail.items())},
            "unresponsive_ips": list(self.unresponsive_ips),
            "baseline": self.baseline,
            "notes": list(self.notes),
            "confidence": self.confidence,
        }


def is_blocked(fraction, baseline, ratio=DEFAULT_RATIO) -> bool:
    return _exact(fraction) < _exact(ratio) * _exact(baseline)


def ike_verdict(matrix: ResponsivenessMatrix, domain: str, ip_version: int, ratio=DEFAULT_RATIO) -> BlockingVerdict:
    """Blocking verdict for one domain and address family.

    The domain counts as blocked for a country only when every responsive
    IP behind it is blocked there.
    """
    rows = matrix.by_ip(domain, ip_version)
    if not rows:
        raise ValueError(f"no probe data for {domain} over IPv{ip_version}")
    home = matrix.home.get(domain, frozenset())
    notes: list[str] = []
    detail: dict[str, frozenset] = {}
    unresponsive = []
    baselines = []
    measured: set[str] = set()
    for ip in sorted(rows):
        by_country = rows[ip]
        measured |= set(by_country)
        fractions = {c: cell.fraction for c, cell in by_country.items()}
        best = max(fractions.values())
        if best == 0:
            unresponsive.append(ip)
            continue
        home_cells = [by_country[c] for c in home if c in by_country]
        baseline = None
        if home_cells:
            baseline = Fraction(sum(c.responsive for c in home_cells), sum(c.total for c in home_cells))
        if not baseline:
            why = "unmeasured" if baseline is None else "zero"
            notes.append(f"{ip}: home responsiveness {why}, baseline is the best country")
            baseline = best
        baselines.append(baseline)
        detail[ip] = frozenset(c for c, f in fractions.items() if is_blocked(f, baseline, ratio))

    if not detail:
        return BlockingVerdict(domain, ip_version, Scope(ScopeKind.UNRESPONSIVE), {}, None, notes, "normal", tuple(unresponsive))

    blocked = frozenset.intersection(*detail.values())
    scope = _escalate(blocked, measured, home)
    if scope.kind is ScopeKind.NONE and any(detail.values()):
        notes.append("partitioned: some IPs refuse some countries, but another IP serves each of them")
    confidence = "normal"
    if scope.kind is ScopeKind.COUNTRIES:
        for country in scope.items:
            nets = set()
            for ip in detail:
                cell = rows[ip].get(country)
                if cell is not None:
                    nets |= cell.networks
            if len(nets) < LOW_CONFIDENCE_NETWORKS:
                confidence = "low"
    return BlockingVerdict(
        domain,
        ip_version,
        scope,
        detail,
        float(max(baselines)),
        notes,
        confidence,
        tuple(unresponsive),
    )


def _escalate(blocked: frozenset, measured: set, home: frozenset) -> Scope:
    foreign = measured - home
    if not blocked:
        return Scope(ScopeKind.NONE)
    if foreign and foreign <= blocked:
        return Scope(ScopeKind.GLOBAL)
    by_continent: dict[str, set] = defaultdict(set)
    for c in measured:
        cont = country_continent(c)
        if cont:
            by_continent[cont].add(c)
    continents = sorted(k for k, cs in by_continent.items() if cs <= blocked)
    if continents:
        return Scope(ScopeKind.CONTINENTAL, tuple(continents))
    return Scope(ScopeKind.COUNTRIES, tuple(sorted(blocked)))


def ike_verdicts(matrix: ResponsivenessMatrix, ratio=DEFAULT_RATIO) -> dict[tuple[str, int], BlockingVerdict]:
    pairs = sorted({(d, ipaddress.ip_address(ip).version) for d, ip, _ in matrix.cells})
    return {p: ike_verdict(matrix, p[0], p[1], ratio) for p in pairs}


# -- DNS behavior ----------------------------------------------------------


class BehaviorGroup(str, enum.Enum):
    G1_FULL_SET = "G1"
    G2_SUBSET_NO_BIAS = "G2"
    G3_GEO_PARTITION = "G3"
    G4_DOMESTIC_ONLY = "G4"
    UNDETERMINED = "undetermined"


@dataclass
class DnsBehavior:
    domain: str
    record_type: RecordType
    group: BehaviorGroup
    evidence: dict  # ip -> sorted list of countries that received it
    observations: int
    countries: tuple
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "record_type": self.record_type.value,
            "group": self.group.value,
            "evidence": self.evidence,
            "observations": self.observations,
            "countries": list(self.countries),
            "notes": list(self.notes),
        }


def _components(edges: dict[str, set]) -> int:
    """Connected components of the country-IP graph that contain a country."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for country, ips in edges.items():
        find(("c", country))
        for ip in ips:
            parent[find(("c", country))] = find(("i", ip))
    return len({find(("c", c)) for c in edges})


def dns_behavior(
    domain: str,
    observations: Iterable[DnsObservation],
    home_country,
    *,
    min_observations: int = MIN_OBSERVATIONS,
    noise_floor: float = NOISE_FLOOR,
    full_set_share: float = FULL_SET_SHARE,
) -> DnsBehavior:
    """Assign one of the four answer-behavior groups (or undetermined)."""
    home = frozenset({home_country} if isinstance(home_country, str) else home_country or ())
    obs = [o for o in observations if o.domain == domain and o.vantage_country]
    rtypes = {o.record_type for o in obs}
    if len(rtypes) > 1:
        raise ValueError("dns_behavior expects observations of a single record type")
    rtype = rtypes.pop() if rtypes else RecordType.A
    countries = tuple(sorted({o.vantage_country for o in obs}))
    success = [o for o in obs if o.outcome is Outcome.ANSWERS]
    evidence_sets: dict[str, set] = defaultdict(set)
    edges: dict[str, set] = defaultdict(set)
    for o in success:
        for ip in o.answers:
            evidence_sets[ip].add(o.vantage_country)
            edges[o.vantage_country].add(ip)
    evidence = {ip: sorted(cs) for ip, cs in sorted(evidence_sets.items())}

    def result(group, *notes):
        return DnsBehavior(domain, rtype, group, evidence, len(obs), countries, list(notes))

    if len(obs) < min_observations or len(countries) < 2:
        return result(BehaviorGroup.UNDETERMINED, f"{len(obs)} observations from {len(countries)} countries")
    if not success:
        return result(BehaviorGroup.UNDETERMINED, "no successful answers")

    floor = _exact(noise_floor)
    home_obs = [o for o in obs if o.vantage_country in home]
    foreign_obs = [o for o in obs if o.vantage_country not in home]
    if home_obs and foreign_obs:
        home_rate = Fraction(sum(o.outcome is Outcome.ANSWERS for o in home_obs), len(home_obs))
        foreign_rate = Fraction(sum(o.outcome is Outcome.ANSWERS for o in foreign_obs), len(foreign_obs))
        if home_rate > floor and foreign_rate <= floor:
            return result(BehaviorGroup.G4_DOMESTIC_ONLY, f"foreign success rate {float(foreign_rate):.3f}")

    if _components(edges) >= 2:
        return result(BehaviorGroup.G3_GEO_PARTITION)

    pool = frozenset(evidence_sets)
    full = sum(frozenset(o.answers) == pool for o in success)
    if Fraction(full, len(success)) >= _exact(full_set_share):
        return result(BehaviorGroup.G1_FULL_SET)
    return result(BehaviorGroup.G2_SUBSET_NO_BIAS)


def dns_behaviors(observations: Iterable[DnsObservation], mcc_table: MccCountryTable | None = None, **kw):
    table = mcc_table or default_mcc_table()
    grouped: dict[tuple, list] = defaultdict(list)
    for o in observations:
        grouped[(o.domain, o.record_type)].append(o)
    # a domain that never resolved has no entry to classify
    return {
        key: dns_behavior(key[0], obs, home_countries(key[0], table), **kw)
        for key, obs in sorted(grouped.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
        if any(o.outcome is Outcome.ANSWERS for o in obs)
    }


# -- dual stack and country rollup ----------------------------------------


@dataclass(frozen=True)
class Discrepancy:
    domain: str
    v4: Scope
    v6: Scope
    open_stack: str | None  # "v4", "v6" or None when neither is strictly more open
    note: str

    def to_dict(self) -> dict:
        return {"domain": self.domain, "v4": str(self.v4), "v6": str(self.v6), "open_stack": self.open_stack, "note": self.note}


def dualstack_discrepancy(verdict_v4: BlockingVerdict | None, verdict_v6: BlockingVerdict | None) -> Discrepancy | None:
    if verdict_v4 is None or verdict_v6 is None:
        return None
    if verdict_v4.domain != verdict_v6.domain:
        raise ValueError("verdicts belong to different domains")
    a, b = verdict_v4.scope, verdict_v6.scope
    if a == b or ScopeKind.UNRESPONSIVE in (a.kind, b.kind):
        return None
    ra, rb = SCOPE_RANK[a.kind], SCOPE_RANK[b.kind]
    if ra > rb:
        return Discrepancy(verdict_v4.domain, a, b, "v6", f"IPv6 ({b}) is less restricted than IPv4 ({a})")
    if rb > ra:
        return Discrepancy(verdict_v4.domain, a, b, "v4", f"IPv4 ({a}) is less restricted than IPv6 ({b})")
    return Discrepancy(verdict_v4.domain, a, b, None, f"scopes differ: IPv4 {a}, IPv6 {b}")


class CountryStatus(str, enum.Enum):
    NO_GEOBLOCKING = "no_geoblocking"
    DNS_ENTRY_ONLY = "dns_entry_only"
    BLOCKED_IKE = "blocked_ike"
    BLOCKED_DNS = "blocked_dns"
    NO_VOWIFI = "no_vowifi"


def country_status(
    verdicts: dict,
    behaviors: dict,
    dns_observations: Iterable[DnsObservation],
    mcc_table: MccCountryTable | None = None,
) -> dict[str, CountryStatus]:
    table = mcc_table or default_mcc_table()
    with_entries: set[str] = set()
    for o in dns_observations:
        if o.outcome is Outcome.ANSWERS:
            with_entries |= home_countries(o.domain, table)
    responded: set[str] = set()
    ike_blocked: set[str] = set()
    for v in verdicts.values():
        cs = home_countries(v.domain, table)
        if v.scope.kind is not ScopeKind.UNRESPONSIVE:
            responded |= cs
        if v.scope.blocking:
            ike_blocked |= cs
    dns_blocked: set[str] = set()
    for b in behaviors.values():
        if b.group is BehaviorGroup.G4_DOMESTIC_ONLY:
            dns_blocked |= home_countries(b.domain, table)
    out = {}
    for country in sorted(table.countries()):
        if country not in with_entries:
            out[country] = CountryStatus.NO_VOWIFI
        elif country in ike_blocked:
            out[country] = CountryStatus.BLOCKED_IKE
        elif country in dns_blocked:
            out[country] = CountryStatus.BLOCKED_DNS
        elif country not in responded:
            out[country] = CountryStatus.DNS_ENTRY_ONLY
        else:
            out[country] = CountryStatus.NO_GEOBLOCKING
    return out


# -- everything at once ----------------------------------------------------


CSV_COLUMNS = ("domain", "mcc", "mnc", "ip_version", "behavior_group", "scope", "blocked_regions", "baseline", "confidence")


@dataclass
class Classification:
    verdicts: dict
    behaviors: dict
    discrepancies: list
    status: dict
    matrix: ResponsivenessMatrix
    notes: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        keys = {(d, v) for d, v in self.verdicts}
        keys |= {(d, rt.ip_version) for d, rt in self.behaviors}
        rows = []
        for domain, version in sorted(keys):
            try:
                plmn, _ = parse_epdg_fqdn(domain)
                mcc, mnc = plmn.mcc, plmn.mnc
            except ValueError:
                mcc = mnc = ""
            v = self.verdicts.get((domain, version))
            b = self.behaviors.get((domain, RecordType.A if version == 4 else RecordType.AAAA))
            rows.append(
                {
                    "domain": domain,
                    "mcc": mcc,
                    "mnc": mnc,
                    "ip_version": version,
                    "behavior_group": b.group.value if b else "",
                    "scope": v.scope.kind.value if v else "",
                    "blocked_regions": ";".join(v.scope.items) if v else "",
                    "baseline": "" if v is None or v.baseline is None else f"{v.baseline:.4f}",
                    "confidence": v.confidence if v else "",
                }
            )
        return rows


def classify_logs(
    dns_observations: Iterable[DnsObservation],
    probe_log: Iterable,
    mcc_table: MccCountryTable | None = None,
    ratio=DEFAULT_RATIO,
    **dns_kw,
) -> Classification:
    table = mcc_table or default_mcc_table()
    dns_obs = list(dns_observations)
    matrix = build_matrix(probe_log, table)
    verdicts = ike_verdicts(matrix, ratio)
    behaviors = dns_behaviors(dns_obs, table, **dns_kw)
    discrepancies = []
    notes = []
    for domain in sorted({d for d, _ in verdicts}):
        v4, v6 = verdicts.get((domain, 4)), verdicts.get((domain, 6))
        d = dualstack_discrepancy(v4, v6)
        if d is not None:
            discrepancies.append(d)
        elif (v4 is None) != (v6 is None) and (v4 or v6).scope.blocking:
            notes.append(f"{domain}: only IPv{4 if v4 else 6} measured, dual-stack comparison not possible")
    status = country_status(verdicts, behaviors, dns_obs, table)
    if matrix.skipped:
        notes.append(f"{matrix.skipped} probe records could not be placed and were skipped")
    return Classification(verdicts, behaviors, discrepancies, status, matrix, notes)

