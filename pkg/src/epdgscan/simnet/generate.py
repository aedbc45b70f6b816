"""Seeded random scenarios, plus builders for well-known operator behaviors."""

from __future__ import annotations

import ipaddress
import random

from ..plmn import PlmnId, country_continent
from .scenario import DnsPolicy, IkePolicy, Scenario, SimOperator, SimVantage

# country -> MCC used when an operator is homed there
CATALOG = {
    "DE": "262", "FR": "208", "GB": "234", "NL": "204", "IT": "222", "ES": "214",
    "HU": "216", "SK": "231", "AT": "232", "PL": "260", "SE": "240",
    "US": "310", "CA": "302", "MX": "334", "BR": "724", "AR": "722",
    "IN": "405", "JP": "440", "SG": "525", "TR": "286",
    "AU": "505", "NZ": "530", "ZA": "655", "EG": "602", "KE": "639",
}  # fmt: skip

PATTERNS = ("jio", "vodafone", "hungarian", "slovak", "mixed_country")


class _Alloc:
    """Hands out unique addresses and MNCs within one scenario."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self._v4 = int(ipaddress.IPv4Address("20.0.0.1"))
        self._v6 = int(ipaddress.IPv6Address("2a0a::1"))
        self._mncs: dict[str, set] = {}

    def v4(self, n: int) -> list[str]:
        out = [str(ipaddress.IPv4Address(self._v4 + i)) for i in range(n)]
        self._v4 += n
        return out

    def v6(self, n: int) -> list[str]:
        out = [str(ipaddress.IPv6Address(self._v6 + i)) for i in range(n)]
        self._v6 += n
        return out

    def mnc(self, mcc: str) -> str:
        used = self._mncs.setdefault(mcc, set())
        while True:
            digits = self.rng.choice((2, 3))
            mnc = f"{self.rng.randrange(10 ** digits):0{digits}d}"
            # keep 2- and 3-digit forms of the same number apart (e.g. 04 vs 004)
            if int(mnc) not in {int(m) for m in used}:
                used.add(mnc)
                return mnc


def _vantages(rng: random.Random, countries: list[str], v6_share: float = 0.7) -> list[SimVantage]:
    out = []
    n = 0
    for c in countries:
        for _ in range(rng.choice((1, 1, 2))):
            v6 = rng.random() < v6_share
            v4 = True if not v6 else rng.random() < 0.9
            out.append(
                SimVantage(
                    id=f"{c.lower()}{n}",
                    country=c,
                    range_v4=f"31.0.{n}.0/24" if v4 else None,
                    range_v6=f"2a0b:0:{n:x}::/48" if v6 else None,
                )
            )
            n += 1
    # at least two countries reachable over each family
    for fam in ("v4", "v6"):
        if len({v.country for v in out if getattr(v, fam)}) < 2:
            fixed = []
            for v in out:
                if not getattr(v, fam):
                    i = int(v.id[2:])
                    v = SimVantage(v.id, v.country, v.range_v4 or f"31.0.{i}.0/24", v.range_v6 or f"2a0b:0:{i:x}::/48")
                fixed.append(v)
            out = fixed
    return out


def _random_dns(rng, home, leak_homes, n4, idx) -> DnsPolicy | None:
    """Random DNS policy; None stands for a geo partition, which the caller builds."""
    kind = rng.choice(("full_set", "random_subset", "geo_partition", "domestic_only", "cname"))
    if kind == "random_subset":
        return DnsPolicy("random_subset", k=rng.randint(1, max(1, n4 - 1)), ttl=rng.choice((0, 60)))
    if kind == "geo_partition":
        return None
    if kind == "domestic_only":
        # a leak is only predictable when the home country is measured over both families
        leak = rng.choice((0.0, 0.01)) if home in leak_homes else 0.0
        return DnsPolicy("domestic_only", leak_rate=leak, foreign_action=rng.choice(("nxdomain", "nxdomain", "drop")))
    if kind == "cname":
        inner = rng.choice((DnsPolicy("full_set"), DnsPolicy("random_subset", k=1)))
        chain = (f"epdg.epc.gw{idx}.op{idx}-ims.net",)
        return DnsPolicy("cname", chain=chain, inner=inner, ecs_respected=rng.random() < 0.5)
    return DnsPolicy("full_set")


def _random_ike(rng, home, measured: list[str]) -> IkePolicy:
    foreign = [c for c in measured if c != home]
    flaky = rng.choice((0.0, 0.0, 0.1))
    arm = rng.choice(("allow_all", "deny_countries", "allow_countries", "silent", "notify", "malformed"))
    if arm == "deny_countries":
        picked = rng.sample(foreign, rng.randint(0, len(foreign))) if foreign else []
        extra = rng.sample(sorted(set(CATALOG) - set(measured)), 1)
        return IkePolicy("deny_countries", tuple(picked + extra), flaky_rate=flaky)
    if arm == "allow_countries":
        picked = rng.sample(foreign, rng.randint(0, len(foreign))) if foreign else []
        return IkePolicy("allow_countries", tuple([home] + picked), flaky_rate=flaky)
    if arm == "silent":
        return IkePolicy("silent")
    if arm == "notify":
        return IkePolicy("allow_all", reply="notify_no_proposal", flaky_rate=flaky)
    if arm == "malformed":
        return IkePolicy("allow_all", reply="malformed", flaky_rate=flaky)
    return IkePolicy("allow_all", flaky_rate=flaky)


def random_operator(
    rng: random.Random, alloc: _Alloc, measured: list[str], home: str | None = None, idx: int = 0, leak_homes=None
) -> SimOperator:
    if leak_homes is None:
        leak_homes = set(measured)
    if home is None:
        home = rng.choice(measured) if rng.random() < 0.75 else rng.choice(sorted(set(CATALOG) - set(measured)))
    mcc = CATALOG[home]
    n4 = rng.randint(1, 5)
    pool_v4 = alloc.v4(n4)
    pool_v6 = alloc.v6(rng.randint(1, 3)) if rng.random() < 0.6 else []
    dns = _random_dns(rng, home, leak_homes, n4, idx)
    if dns is None:
        home_sub, rest = alloc.v4(rng.randint(1, 2)), alloc.v4(rng.randint(1, 2))
        home_sub6, rest6 = (alloc.v6(1), alloc.v6(1)) if pool_v6 else ([], [])
        pool_v4, pool_v6 = home_sub + rest, home_sub6 + rest6
        partition = [(home, tuple(home_sub + home_sub6))]
        others = [c for c in measured if c != home]
        if rng.random() < 0.8 or not others:
            partition.append(("*", tuple(rest + rest6)))
        else:
            partition.append((rng.choice(others), tuple(rest + rest6)))
        dns = DnsPolicy("geo_partition", k=rng.choice((1, 2)), partition=tuple(partition))
    ike = _random_ike(rng, home, measured)
    ike_v6 = _random_ike(rng, home, measured) if pool_v6 and rng.random() < 0.3 else None
    alias = ()
    if rng.random() < 0.15:
        alias = (alloc.mnc(mcc),)
    return SimOperator(
        plmn=PlmnId(mcc, alloc.mnc(mcc)),
        home_country=home,
        pool_v4=tuple(pool_v4),
        pool_v6=tuple(pool_v6),
        dns_policy=dns,
        ike_policy=ike,
        ike_policy_v6=ike_v6,
        hosting_country=rng.choice((home, home, "NL", "US")),
        alias_mncs=alias,
        sos=rng.random() < 0.2,
        name=f"op{idx}",
    )


# -- named patterns ----------------------------------------------------------


def jio_operator(alloc: _Alloc, home: str, mnc: str, idx: int = 0) -> SimOperator:
    """Domestic clients get one address, everyone else another; each refuses the other side."""
    domestic, external = alloc.v4(1)[0], alloc.v4(1)[0]
    return SimOperator(
        plmn=PlmnId(CATALOG[home], mnc),
        home_country=home,
        pool_v4=(domestic, external),
        dns_policy=DnsPolicy("geo_partition", k=1, partition=((home, (domestic,)), ("*", (external,)))),
        ike_policy=IkePolicy("allow_all"),
        ike_overrides=((domestic, IkePolicy("allow_countries", (home,))), (external, IkePolicy("deny_countries", (home,)))),
        name=f"jio{idx}",
    )


def vodafone_operator(alloc: _Alloc, home: str, mnc: str, idx: int = 0, leak_rate: float = 0.01) -> SimOperator:
    """CNAME into a provider zone whose server only answers domestic clients, with rare leaks."""
    return SimOperator(
        plmn=PlmnId(CATALOG[home], mnc),
        home_country=home,
        pool_v4=tuple(alloc.v4(2)),
        pool_v6=tuple(alloc.v6(1)),
        dns_policy=DnsPolicy(
            "cname",
            chain=(f"epdg.epc.drz{idx}.vodafone-ip.example",),
            inner=DnsPolicy("domestic_only", leak_rate=leak_rate),
        ),
        name=f"vodafone{idx}",
    )


def hungarian_operator(alloc: _Alloc, home: str, mnc: str, idx: int = 0) -> SimOperator:
    """Foreign clients are refused over IPv4 only; the IPv6 gateway answers everyone."""
    return SimOperator(
        plmn=PlmnId(CATALOG[home], mnc),
        home_country=home,
        pool_v4=tuple(alloc.v4(1)),
        pool_v6=tuple(alloc.v6(1)),
        ike_policy=IkePolicy("allow_countries", (home,)),
        ike_policy_v6=IkePolicy("allow_all"),
        name=f"hungarian{idx}",
    )


def slovak_operator(alloc: _Alloc, home: str, mnc: str, continent_countries, idx: int = 0) -> SimOperator:
    """Everything outside the home continent is refused."""
    return SimOperator(
        plmn=PlmnId(CATALOG[home], mnc),
        home_country=home,
        pool_v4=tuple(alloc.v4(2)),
        ike_policy=IkePolicy("allow_countries", tuple(sorted(set(continent_countries) | {home}))),
        name=f"slovak{idx}",
    )


def _pick_countries(rng: random.Random, required: set[str]) -> list[str]:
    countries = set(required)
    target = rng.randint(max(4, len(countries)), 7)
    pool = sorted(set(CATALOG) - countries)
    while len(countries) < target:
        countries.add(rng.choice(pool))
        pool = sorted(set(pool) - countries)
    if len({country_continent(c) for c in countries}) < 2:
        countries.add(rng.choice([c for c in CATALOG if country_continent(c) != country_continent(next(iter(countries)))]))
    return sorted(countries)


def random_scenario(seed: int, patterns=(), n_random: int | None = None) -> Scenario:
    """A scenario with ``n_random`` random operators plus the named patterns."""
    rng = random.Random(seed)
    alloc = _Alloc(rng)
    required = set()
    homes = {}
    for p in patterns:
        if p == "jio":
            homes[p] = "IN"
        elif p == "vodafone":
            homes[p] = "DE"
        elif p == "hungarian":
            homes[p] = "HU"
        elif p == "slovak":
            homes[p] = "SK"
            required |= {"SK", rng.choice(["DE", "FR", "AT", "PL"])}
            required.add(rng.choice(["US", "JP", "BR", "ZA"]))
        elif p == "mixed_country":
            homes[p] = rng.choice(sorted(CATALOG))
        else:
            raise ValueError(f"unknown pattern {p!r}")
        required.add(homes[p])
    countries = _pick_countries(rng, required)
    vantages = _vantages(rng, countries)
    measured = sorted({v.country for v in vantages})
    dual_homes = {homes[p] for p in ("hungarian", "vodafone") if p in homes}
    # these home vantages must see both stacks
    vantages = [
        SimVantage(v.id, v.country, v.range_v4 or f"31.0.{int(v.id[2:])}.0/24", v.range_v6 or f"2a0b:0:{int(v.id[2:]):x}::/48")
        if v.country in dual_homes
        else v
        for v in vantages
    ]
    leak_homes = {c for c in measured if any(v.v4 for v in vantages if v.country == c) and any(v.v6 for v in vantages if v.country == c)}
    ops = []
    for i, p in enumerate(patterns):
        home = homes[p]
        mnc = alloc.mnc(CATALOG[home])
        if p == "jio":
            ops.append(jio_operator(alloc, home, mnc, i))
        elif p == "vodafone":
            ops.append(vodafone_operator(alloc, home, mnc, i))
        elif p == "hungarian":
            ops.append(hungarian_operator(alloc, home, mnc, i))
        elif p == "slovak":
            eu = [c for c in measured if country_continent(c) == country_continent(home)]
            ops.append(slovak_operator(alloc, home, mnc, eu, i))
        else:
            # two operators of one country with different behavior
            ops.append(random_operator(rng, alloc, measured, home, 100 + i, leak_homes))
            ops.append(random_operator(rng, alloc, measured, home, 200 + i, leak_homes))
    n = rng.randint(1, 4) if n_random is None else n_random
    for i in range(n):
        ops.append(random_operator(rng, alloc, measured, None, i, leak_homes))
    return Scenario(operators=tuple(ops), vantages=tuple(vantages), seed=seed, name=f"random-{seed}")


def oracle_suite(count: int = 50, base_seed: int = 1000) -> list[Scenario]:
    """Scenarios for the pipeline-vs-ground-truth check; named patterns rotate through them."""
    out = []
    for i in range(count):
        patterns = [PATTERNS[i % len(PATTERNS)]]
        if i % 3 == 0:
            patterns.append(PATTERNS[(i + 2) % len(PATTERNS)])
        out.append(random_scenario(base_seed + i, tuple(dict.fromkeys(patterns))))
    return out


def planted_population(seed: int = 7, n_operators: int = 100, v4_blocked: float = 0.15, v6_blocked: float = 0.65) -> Scenario:
    """Dual-stack operators of which exact shares refuse every foreign client per family."""
    rng = random.Random(seed)
    alloc = _Alloc(rng)
    countries = ["DE", "FR", "IN", "US", "BR", "AU"]
    vantages = [SimVantage(f"{c.lower()}{i}", c, f"31.0.{i}.0/24", f"2a0b:0:{i:x}::/48") for i, c in enumerate(countries)]
    n4, n6 = round(n_operators * v4_blocked), round(n_operators * v6_blocked)
    block4 = set(rng.sample(range(n_operators), n4))
    block6 = set(rng.sample(range(n_operators), n6))
    ops = []
    for i in range(n_operators):
        home = countries[i % len(countries)]
        domestic = IkePolicy("allow_countries", (home,))
        ops.append(
            SimOperator(
                plmn=PlmnId(CATALOG[home], alloc.mnc(CATALOG[home])),
                home_country=home,
                pool_v4=tuple(alloc.v4(1)),
                pool_v6=tuple(alloc.v6(1)),
                ike_policy=domestic if i in block4 else IkePolicy("allow_all"),
                ike_policy_v6=domestic if i in block6 else IkePolicy("allow_all"),
                name=f"planted{i}",
            )
        )
    return Scenario(
        operators=tuple(ops),
        vantages=tuple(vantages),
        seed=seed,
        name="planted",
        settings={"stop_after_no_new": 10},
    )
