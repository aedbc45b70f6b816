"""ePDG domain resolution.

Two modes: iterative (walk down from the root hints, caching delegations)
and authoritative-direct (ask one configured server with RD unset, the way
``dig @server +norec`` would). CNAMEs are chased in both modes and every
resolution is returned as a :class:`DnsObservation`.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import enum
import ipaddress
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable

import dns.edns
import dns.exception
import dns.flags
import dns.message
import dns.name
import dns.rcode
import dns.rdataclass
import dns.rdatatype

from .ecs import ECS_OPTION_CODE, encode_ecs
from .transport import LocalTransport, Transport

log = logging.getLogger(__name__)

ROOT_HINTS = (
    "198.41.0.4",
    "170.247.170.2",
    "192.33.4.12",
    "199.7.91.13",
    "192.203.230.10",
    "192.5.5.241",
    "192.112.36.4",
    "198.97.190.53",
    "192.36.148.17",
    "192.58.128.30",
    "193.0.14.129",
    "199.7.83.42",
    "202.12.27.33",
)

NEGATIVE_TTL_CAP = 60
MAX_REFERRALS = 16
MAX_NS_DEPTH = 3
EDNS_PAYLOAD = 1232


class RecordType(str, enum.Enum):
    A = "A"
    AAAA = "AAAA"

    @property
    def rdtype(self):
        return dns.rdatatype.A if self is RecordType.A else dns.rdatatype.AAAA

    @property
    def ip_version(self) -> int:
        return 4 if self is RecordType.A else 6


class Outcome(str, enum.Enum):
    ANSWERS = "answers"
    NXDOMAIN = "nxdomain"
    NODATA = "nodata"
    TIMEOUT = "timeout"
    SERVFAIL = "servfail"


class Mode(str, enum.Enum):
    ITERATIVE = "iterative"
    AUTHORITATIVE_DIRECT = "authoritative_direct"


@dataclass(frozen=True)
class ResolveOptions:
    record_type: RecordType = RecordType.A
    server: str | None = None
    ecs_subnet: str | None = None
    timeout_ms: int = 2000
    max_cname_depth: int = 8
    attempts: int = 2
    use_cache: bool = True

    def __post_init__(self):
        object.__setattr__(self, "record_type", RecordType(self.record_type))
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_cname_depth < 1:
            raise ValueError("max_cname_depth must be >= 1")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.ecs_subnet is not None:
            ipaddress.ip_network(self.ecs_subnet, strict=False)
        if self.server is not None:
            ipaddress.ip_address(self.server)

    @property
    def mode(self) -> Mode:
        return Mode.ITERATIVE if self.server is None else Mode.AUTHORITATIVE_DIRECT


@dataclass(frozen=True)
class VantageStamp:
    """Who issued a measurement; copied into every record."""

    vantage_id: str = "local"
    vantage_country: str | None = None
    vantage_public_ip: str | None = None
    vantage_declared_country: str | None = None


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


@dataclass
class DnsObservation:
    domain: str
    record_type: RecordType
    vantage_id: str
    vantage_country: str | None
    timestamp: str
    cname_chain: list[str]
    answers: list[str]
    outcome: Outcome
    ecs_sent: str | None = None
    vantage_public_ip: str | None = None
    vantage_declared_country: str | None = None
    diagnostic: str | None = None

    def __post_init__(self):
        self.record_type = RecordType(self.record_type)
        self.outcome = Outcome(self.outcome)
        if (self.outcome is Outcome.ANSWERS) != bool(self.answers):
            raise ValueError("outcome 'answers' iff the answer list is non-empty")
        if len(set(self.cname_chain)) != len(self.cname_chain):
            raise ValueError("cname_chain contains a repeated name")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["record_type"] = self.record_type.value
        d["outcome"] = self.outcome.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DnsObservation":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class PoolEnumerationPolicy:
    max_queries: int = 200
    stop_after_no_new: int = 50

    def __post_init__(self):
        if self.max_queries < 1 or self.stop_after_no_new < 1:
            raise ValueError("pool enumeration limits must be >= 1")


@dataclass
class PoolResult:
    ips: frozenset
    observations: list[DnsObservation] = field(default_factory=list)


def chase_target(observation: DnsObservation) -> str:
    """Last name in the CNAME chain, or the queried domain."""
    if observation.outcome not in (Outcome.ANSWERS, Outcome.NODATA):
        raise ValueError(f"no resolvable target for outcome {observation.outcome.value}")
    return observation.cname_chain[-1] if observation.cname_chain else observation.domain


@dataclass
class _Step:
    outcome: Outcome
    ips: tuple = ()
    chain: tuple = ()
    diagnostic: str | None = None
    ttl: float = 0.0


def _norm(name: str) -> str:
    return name.lower().rstrip(".")


def _is_subdomain(name: str, zone: str) -> bool:
    return zone == "" or name == zone or name.endswith("." + zone)


class Resolver:
    """Thread-safe stub of an iterative resolver with an in-process cache.

    One instance belongs to one vantage point: cached answers depend on where
    the queries came from.
    """

    def __init__(
        self,
        transport: Transport | None = None,
        root_hints: Iterable[str] = ROOT_HINTS,
        port: int = 53,
        cache: bool = True,
        negative_ttl_cap: float = NEGATIVE_TTL_CAP,
        stamp: VantageStamp | None = None,
        clock=time.monotonic,
    ):
        self.transport = transport or LocalTransport()
        self.root_hints = tuple(root_hints)
        self.port = port
        self.cache_enabled = cache
        self.negative_ttl_cap = negative_ttl_cap
        self.stamp = stamp or VantageStamp()
        self._clock = clock
        self._lock = threading.Lock()
        self._answers: dict[tuple, tuple[_Step, float]] = {}
        self._delegations: dict[str, tuple[tuple, float]] = {}
        self.queries_sent = 0

    # -- public operations -------------------------------------------------

    def resolve(self, domain: str, options: ResolveOptions | None = None) -> DnsObservation:
        options = options or ResolveOptions()
        name = _norm(domain)
        started = utc_now()
        chain: list[str] = []
        current = name
        while True:
            step = self._resolve_name(current, options)
            if step.chain:
                looped = False
                for target in step.chain:
                    if target == name or target in chain:
                        looped = True
                        break
                    chain.append(target)
                if looped:
                    step = _Step(Outcome.SERVFAIL, diagnostic=f"CNAME loop at {current}")
                elif len(chain) > options.max_cname_depth:
                    del chain[options.max_cname_depth:]
                    step = _Step(Outcome.SERVFAIL, diagnostic="CNAME chain exceeds max_cname_depth")
                elif step.outcome is not Outcome.ANSWERS:
                    current = chain[-1]
                    continue
            return DnsObservation(
                domain=name,
                record_type=options.record_type,
                vantage_id=self.stamp.vantage_id,
                vantage_country=self.stamp.vantage_country,
                timestamp=started,
                cname_chain=chain,
                answers=list(step.ips) if step.outcome is Outcome.ANSWERS else [],
                outcome=step.outcome,
                ecs_sent=options.ecs_subnet,
                vantage_public_ip=self.stamp.vantage_public_ip,
                vantage_declared_country=self.stamp.vantage_declared_country,
                diagnostic=step.diagnostic,
            )

    def enumerate_pool(
        self,
        domain: str,
        options: ResolveOptions | None = None,
        policy: PoolEnumerationPolicy | None = None,
    ) -> PoolResult:
        """Repeat a query until the answer pool stops growing.

        Servers that hand out one address per response only reveal the full
        pool over many queries; the answer cache is bypassed for that reason.
        """
        options = dataclasses.replace(options or ResolveOptions(), use_cache=False)
        policy = policy or PoolEnumerationPolicy()
        pool: set[str] = set()
        observations = []
        no_new = 0
        for _ in range(policy.max_queries):
            obs = self.resolve(domain, options)
            observations.append(obs)
            fresh = set(obs.answers) - pool
            if fresh:
                pool |= fresh
                no_new = 0
            else:
                no_new += 1
                if no_new >= policy.stop_after_no_new:
                    break
        return PoolResult(frozenset(pool), observations)

    def clear_cache(self):
        with self._lock:
            self._answers.clear()
            self._delegations.clear()

    # -- internals -----------------------------------------------------------

    def _resolve_name(self, name: str, options: ResolveOptions) -> _Step:
        key = (name, options.record_type, options.server, options.ecs_subnet)
        use_cache = self.cache_enabled and options.use_cache
        if use_cache:
            with self._lock:
                hit = self._answers.get(key)
            if hit and hit[1] > self._clock():
                return hit[0]
        step = self._iterate(name, options)
        if use_cache and step.ttl > 0:
            with self._lock:
                self._answers[key] = (step, self._clock() + step.ttl)
        return step

    def _closest_delegation(self, name: str) -> tuple[str, tuple]:
        if self.cache_enabled:
            labels = name.split(".")
            now = self._clock()
            with self._lock:
                for i in range(len(labels)):
                    zone = ".".join(labels[i:])
                    hit = self._delegations.get(zone)
                    if hit and hit[1] > now:
                        return zone, hit[0]
        return "", self.root_hints

    def _iterate(self, name: str, options: ResolveOptions, ns_depth: int = 0) -> _Step:
        if options.server is not None:
            zone, servers = "", (options.server,)
        else:
            zone, servers = self._closest_delegation(name)
        for _ in range(MAX_REFERRALS):
            resp, failure = self._query(name, options, servers)
            if resp is None:
                return failure
            rcode = resp.rcode()
            if rcode == dns.rcode.NXDOMAIN:
                return _Step(Outcome.NXDOMAIN, ttl=self._negative_ttl(resp))
            if rcode != dns.rcode.NOERROR:
                return _Step(Outcome.SERVFAIL, diagnostic=f"rcode {dns.rcode.to_text(rcode)}")
            step = self._extract_answer(resp, name, options.record_type)
            if step is not None:
                return step
            referral = self._extract_referral(resp, name, zone)
            if referral is None:
                return _Step(Outcome.NODATA, ttl=self._negative_ttl(resp))
            new_zone, ns_names, glue, ttl = referral
            addrs = glue or self._resolve_ns(ns_names, options, ns_depth)
            if not addrs:
                return _Step(Outcome.SERVFAIL, diagnostic=f"lame delegation for {new_zone}")
            if self.cache_enabled:
                with self._lock:
                    self._delegations[new_zone] = (tuple(addrs), self._clock() + ttl)
            zone, servers = new_zone, tuple(addrs)
        return _Step(Outcome.SERVFAIL, diagnostic="too many referrals")

    def _resolve_ns(self, ns_names, options, ns_depth) -> list[str]:
        if ns_depth >= MAX_NS_DEPTH:
            return []
        sub = dataclasses.replace(options, record_type=RecordType.A, server=None, ecs_subnet=None)
        for ns in ns_names:
            step = self._iterate(ns, sub, ns_depth + 1)
            if step.outcome is Outcome.ANSWERS:
                return list(step.ips)
        return []

    def _query(self, name: str, options: ResolveOptions, servers) -> tuple[dns.message.Message | None, _Step]:
        q = dns.message.make_query(name, options.record_type.rdtype, use_edns=0, payload=EDNS_PAYLOAD)
        q.flags &= ~dns.flags.RD
        if options.ecs_subnet:
            q.use_edns(0, 0, EDNS_PAYLOAD, options=[dns.edns.GenericOption(ECS_OPTION_CODE, encode_ecs(options.ecs_subnet))])
        wire = q.to_wire()
        timeout = options.timeout_ms / 1000.0
        failure = _Step(Outcome.TIMEOUT, diagnostic="no response")
        chan = self.transport.open_channel()
        try:
            for _ in range(options.attempts):
                for server in servers:
                    self.queries_sent += 1
                    try:
                        chan.sendto(wire, (server, self.port))
                    except OSError as e:
                        failure = _Step(Outcome.SERVFAIL, diagnostic=f"send to {server}: {e}")
                        continue
                    resp, bad = self._await_response(chan, q, timeout)
                    if bad is not None:
                        return None, bad
                    if resp is None:
                        continue
                    if resp.flags & dns.flags.TC:
                        resp = self._tcp_retry(wire, q, server, timeout)
                        if resp is None:
                            return None, _Step(Outcome.SERVFAIL, diagnostic="truncated response, TCP retry failed")
                    return resp, failure
        finally:
            chan.close()
        return None, failure

    def _await_response(self, chan, q, timeout):
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None, None
            got = chan.recv(remaining)
            if got is None:
                return None, None
            data = got[0]
            if len(data) < 2 or int.from_bytes(data[:2], "big") != q.id:
                continue
            try:
                resp = dns.message.from_wire(data)
            except (dns.exception.DNSException, ValueError) as e:
                return None, _Step(Outcome.SERVFAIL, diagnostic=f"malformed response: {e}")
            if not q.is_response(resp):
                continue
            return resp, None

    def _tcp_retry(self, wire, q, server, timeout):
        tcp = getattr(self.transport, "tcp_exchange", None)
        if tcp is None:
            return None
        try:
            data = tcp(wire, (server, self.port), timeout)
            resp = dns.message.from_wire(data)
        except (OSError, dns.exception.DNSException, ValueError):
            return None
        return resp if q.is_response(resp) else None

    def _extract_answer(self, resp, name: str, rtype: RecordType) -> _Step | None:
        current = name
        chain: list[str] = []
        ttls = []
        while True:
            qname = dns.name.from_text(current)
            rrset = resp.get_rrset(resp.answer, qname, dns.rdataclass.IN, rtype.rdtype)
            if rrset is not None and len(rrset):
                ttls.append(rrset.ttl)
                ips = tuple(str(rr.address) for rr in rrset)
                return _Step(Outcome.ANSWERS, ips=ips, chain=tuple(chain), ttl=min(ttls))
            cname = resp.get_rrset(resp.answer, qname, dns.rdataclass.IN, dns.rdatatype.CNAME)
            if cname is None or not len(cname):
                break
            ttls.append(cname.ttl)
            target = _norm(cname[0].target.to_text())
            if target in chain or target == name:
                chain.append(target)
                break
            chain.append(target)
            current = target
        if chain:
            return _Step(Outcome.NODATA, chain=tuple(chain), ttl=min(ttls))
        return None

    def _extract_referral(self, resp, name: str, zone: str):
        for rrset in resp.authority:
            if rrset.rdtype != dns.rdatatype.NS:
                continue
            new_zone = _norm(rrset.name.to_text())
            if new_zone == zone or not _is_subdomain(new_zone, zone) or not _is_subdomain(name, new_zone):
                continue
            ns_names = [_norm(rr.target.to_text()) for rr in rrset]
            glue = []
            for extra in resp.additional:
                if extra.rdtype == dns.rdatatype.A and _norm(extra.name.to_text()) in ns_names:
                    glue.extend(str(rr.address) for rr in extra)
            return new_zone, ns_names, glue, rrset.ttl
        return None

    def _negative_ttl(self, resp) -> float:
        for rrset in resp.authority:
            if rrset.rdtype == dns.rdatatype.SOA and len(rrset):
                return min(rrset.ttl, rrset[0].minimum, self.negative_ttl_cap)
        return 0.0
