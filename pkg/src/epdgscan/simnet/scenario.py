"""Scenario description for the simulated network."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..plmn import PlmnId, Variant, epdg_fqdn

DNS_POLICIES = ("full_set", "random_subset", "geo_partition", "domestic_only", "cname")
IKE_ACCESS = ("allow_all", "deny_countries", "allow_countries", "silent")
IKE_REPLIES = ("sa_init", "notify_no_proposal", "malformed")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DnsPolicy:
    kind: str = "full_set"
    k: int = 1
    partition: tuple = ()  # ((country or "*", (ip, ...)), ...)
    leak_rate: float = 0.0
    foreign_action: str = "nxdomain"  # or "drop"
    chain: tuple = ()
    loop: bool = False
    inner: "DnsPolicy | None" = None
    ecs_respected: bool = False
    ttl: int = 60

    def __post_init__(self):
        if self.kind not in DNS_POLICIES:
            raise ScenarioError(f"unknown dns policy {self.kind!r}")
        if not 0 <= self.leak_rate < 1:
            raise ScenarioError("leak_rate must be in [0, 1)")
        if self.foreign_action not in ("nxdomain", "drop"):
            raise ScenarioError("foreign_action must be 'nxdomain' or 'drop'")
        if self.kind == "random_subset" and self.k < 1:
            raise ScenarioError("random_subset needs k >= 1")
        if self.kind == "geo_partition" and not self.partition:
            raise ScenarioError("geo_partition needs a partition map")
        if self.kind == "cname":
            if not self.chain:
                raise ScenarioError("cname policy needs a non-empty chain")
            if self.inner is not None and self.inner.kind == "cname":
                raise ScenarioError("cname policies do not nest")

    @property
    def effective(self) -> "DnsPolicy":
        """Policy that decides the final address answer."""
        if self.kind == "cname":
            return self.inner or DnsPolicy("full_set", ecs_respected=self.ecs_respected)
        return self

    def subpool_for(self, country: str | None) -> tuple:
        table = dict(self.partition)
        if country in table:
            return tuple(table[country])
        return tuple(table.get("*", ()))

    @classmethod
    def from_dict(cls, d: dict | str) -> "DnsPolicy":
        if isinstance(d, str):
            d = {"kind": d}
        d = dict(d)
        if "partition" in d:
            d["partition"] = tuple((k, tuple(v)) for k, v in dict(d["partition"]).items())
        if "chain" in d:
            d["chain"] = tuple(c.lower().rstrip(".") for c in d["chain"])
        if d.get("inner") is not None:
            d["inner"] = cls.from_dict(d["inner"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        defaults = DnsPolicy()
        for name in ("k", "leak_rate", "foreign_action", "loop", "ecs_respected", "ttl"):
            if getattr(self, name) != getattr(defaults, name):
                d[name] = getattr(self, name)
        if self.partition:
            d["partition"] = {k: list(v) for k, v in self.partition}
        if self.chain:
            d["chain"] = list(self.chain)
        if self.inner is not None:
            d["inner"] = self.inner.to_dict()
        return d


@dataclass(frozen=True)
class IkePolicy:
    access: str = "allow_all"
    countries: tuple = ()
    reply: str = "sa_init"
    flaky_rate: float = 0.0

    def __post_init__(self):
        if self.access not in IKE_ACCESS:
            raise ScenarioError(f"unknown ike access policy {self.access!r}")
        if self.reply not in IKE_REPLIES:
            raise ScenarioError(f"unknown ike reply mode {self.reply!r}")
        if not 0 <= self.flaky_rate < 1:
            raise ScenarioError("flaky_rate must be in [0, 1)")
        object.__setattr__(self, "countries", tuple(sorted(c.upper() for c in self.countries)))

    def allows(self, country: str | None) -> bool:
        if self.access == "allow_all":
            return True
        if self.access == "silent":
            return False
        if self.access == "deny_countries":
            return country not in self.countries
        return country in self.countries

    @classmethod
    def from_dict(cls, d: dict | str) -> "IkePolicy":
        if isinstance(d, str):
            d = {"access": d}
        d = dict(d)
        if "countries" in d:
            d["countries"] = tuple(d["countries"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"access": self.access}
        if self.countries:
            d["countries"] = list(self.countries)
        if self.reply != "sa_init":
            d["reply"] = self.reply
        if self.flaky_rate:
            d["flaky_rate"] = self.flaky_rate
        return d


@dataclass(frozen=True)
class SimOperator:
    plmn: PlmnId
    home_country: str
    pool_v4: tuple = ()
    pool_v6: tuple = ()
    dns_policy: DnsPolicy = DnsPolicy()
    ike_policy: IkePolicy = IkePolicy()
    ike_policy_v6: IkePolicy | None = None
    ike_overrides: tuple = ()  # ((ip, IkePolicy), ...)
    hosting_country: str | None = None
    alias_mncs: tuple = ()
    sos: bool = False
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pool_v4", tuple(str(ipaddress.IPv4Address(ip)) for ip in self.pool_v4))
        object.__setattr__(self, "pool_v6", tuple(str(ipaddress.IPv6Address(ip)) for ip in self.pool_v6))
        if not self.pool_v4 and not self.pool_v6:
            raise ScenarioError(f"operator {self.plmn} has empty address pools")
        pool = set(self.pools())
        for key, sub in self.dns_policy.effective.partition:
            extra = set(sub) - pool
            if extra:
                raise ScenarioError(f"partition {key!r} of {self.plmn} lists addresses outside its pools: {sorted(extra)}")

    def pools(self) -> tuple:
        return self.pool_v4 + self.pool_v6

    def pool(self, version: int) -> tuple:
        return self.pool_v4 if version == 4 else self.pool_v6

    @property
    def plmns(self) -> list[PlmnId]:
        return [self.plmn] + [PlmnId(self.plmn.mcc, m) for m in self.alias_mncs]

    def domains(self) -> list[str]:
        out = []
        for p in self.plmns:
            out.append(epdg_fqdn(p, Variant.STANDARD))
            if self.sos:
                out.append(epdg_fqdn(p, Variant.SOS))
        return out

    def ike_policy_for(self, ip: str) -> IkePolicy:
        overrides = dict(self.ike_overrides)
        if ip in overrides:
            return overrides[ip]
        if ipaddress.ip_address(ip).version == 6 and self.ike_policy_v6 is not None:
            return self.ike_policy_v6
        return self.ike_policy

    @classmethod
    def from_dict(cls, d: dict) -> "SimOperator":
        d = dict(d)
        plmn = PlmnId(str(d.pop("mcc")), str(d.pop("mnc")))
        kw = dict(
            plmn=plmn,
            home_country=d.pop("home_country").upper(),
            pool_v4=tuple(d.pop("pool_v4", ())),
            pool_v6=tuple(d.pop("pool_v6", ())),
            dns_policy=DnsPolicy.from_dict(d.pop("dns_policy", "full_set")),
            ike_policy=IkePolicy.from_dict(d.pop("ike_policy", "allow_all")),
        )
        if d.get("ike_policy_v6") is not None:
            kw["ike_policy_v6"] = IkePolicy.from_dict(d.pop("ike_policy_v6"))
        d.pop("ike_policy_v6", None)
        kw["ike_overrides"] = tuple(
            (str(ipaddress.ip_address(ip)), IkePolicy.from_dict(p)) for ip, p in dict(d.pop("ike_overrides", {})).items()
        )
        kw["alias_mncs"] = tuple(str(m) for m in d.pop("alias_mncs", ()))
        kw.update(d)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {"mcc": self.plmn.mcc, "mnc": self.plmn.mnc, "home_country": self.home_country}
        if self.name:
            d["name"] = self.name
        d["pool_v4"] = list(self.pool_v4)
        d["pool_v6"] = list(self.pool_v6)
        d["dns_policy"] = self.dns_policy.to_dict()
        d["ike_policy"] = self.ike_policy.to_dict()
        if self.ike_policy_v6 is not None:
            d["ike_policy_v6"] = self.ike_policy_v6.to_dict()
        if self.ike_overrides:
            d["ike_overrides"] = {ip: p.to_dict() for ip, p in self.ike_overrides}
        if self.hosting_country:
            d["hosting_country"] = self.hosting_country
        if self.alias_mncs:
            d["alias_mncs"] = list(self.alias_mncs)
        if self.sos:
            d["sos"] = True
        return d


@dataclass(frozen=True)
class SimVantage:
    id: str
    country: str
    range_v4: str | None = None
    range_v6: str | None = None
    declared_country: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "country", self.country.upper())
        if self.range_v4 is None and self.range_v6 is None:
            raise ScenarioError(f"vantage {self.id} needs at least one address range")
        if self.range_v4 is not None and ipaddress.ip_network(self.range_v4).version != 4:
            raise ScenarioError(f"vantage {self.id}: range_v4 is not IPv4")
        if self.range_v6 is not None and ipaddress.ip_network(self.range_v6).version != 6:
            raise ScenarioError(f"vantage {self.id}: range_v6 is not IPv6")

    @property
    def v4(self) -> bool:
        return self.range_v4 is not None

    @property
    def v6(self) -> bool:
        return self.range_v6 is not None

    def public_ip(self, version: int) -> str | None:
        rng = self.range_v4 if version == 4 else self.range_v6
        if rng is None:
            return None
        net = ipaddress.ip_network(rng)
        return str(net.network_address + 1) if net.num_addresses > 1 else str(net.network_address)

    @classmethod
    def from_dict(cls, d: dict) -> "SimVantage":
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"id": self.id, "country": self.country}
        for name in ("range_v4", "range_v6", "declared_country"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        return d


@dataclass(frozen=True)
class Scenario:
    operators: tuple
    vantages: tuple
    seed: int = 0
    name: str = "scenario"
    extra_domains: tuple = ()
    settings: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        ids = [v.id for v in self.vantages]
        if len(ids) != len(set(ids)):
            raise ScenarioError("vantage ids must be unique")
        nets = []
        for v in self.vantages:
            nets += [ipaddress.ip_network(r) for r in (v.range_v4, v.range_v6) if r]
        for i, a in enumerate(nets):
            for b in nets[i + 1 :]:
                if a.version == b.version and a.overlaps(b):
                    raise ScenarioError(f"vantage ranges {a} and {b} overlap")
        owner: dict[str, SimOperator] = {}
        for op in self.operators:
            for ip in op.pools():
                if ip in owner and owner[ip] is not op:
                    raise ScenarioError(f"address {ip} is in the pools of two operators; use alias_mncs instead")
                owner[ip] = op
        domains = [d for op in self.operators for d in op.domains()]
        if len(domains) != len(set(domains)):
            raise ScenarioError("two operators share a domain name")

    def domains(self) -> list[str]:
        return [d for op in self.operators for d in op.domains()] + list(self.extra_domains)

    def operator_for_domain(self, domain: str) -> SimOperator | None:
        for op in self.operators:
            if domain in op.domains():
                return op
        return None

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            operators=tuple(SimOperator.from_dict(o) for o in d.get("operators", ())),
            vantages=tuple(SimVantage.from_dict(v) for v in d.get("vantages", ())),
            seed=int(d.get("seed", 0)),
            name=d.get("name", "scenario"),
            extra_domains=tuple(d.get("extra_domains", ())),
            settings=dict(d.get("settings", {})),
        )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "seed": self.seed,
            "operators": [o.to_dict() for o in self.operators],
            "vantages": [v.to_dict() for v in self.vantages],
        }
        if self.extra_domains:
            d["extra_domains"] = list(self.extra_domains)
        if self.settings:
            d["settings"] = dict(self.settings)
        return d


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text("utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a mapping at top level")
    if "scenario" in data:
        data = data["scenario"]
    return Scenario.from_dict(data)


def dump_scenario(scenario: Scenario, path: str | Path):
    Path(path).write_text(yaml.safe_dump(scenario.to_dict(), sort_keys=False), "utf-8")
