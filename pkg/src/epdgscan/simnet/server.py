"""In-process simulated Internet: DNS hierarchy, ePDG responders, echo service.

Every simulated host has a virtual address. Real traffic is UDP on
127.0.0.1; an endpoint table maps virtual (ip, port) pairs to loopback
sockets, and each client channel's loopback port is registered against the
vantage that opened it. That registration is how a server learns the
client's virtual source address and, through the scenario's geolocation
database, its country.
"""

from __future__ import annotations

import errno
import hashlib
import ipaddress
import logging
import random
import select
import selectors
import socket
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import dns.edns
import dns.exception
import dns.flags
import dns.message
import dns.name
import dns.rcode
import dns.rdataclass
import dns.rdatatype
import dns.rrset

from ..ecs import ECS_OPTION_CODE, decode_ecs, encode_ecs
from ..geoloc import GeoDatabase, build_test_db
from ..ike import groups
from ..ike.codec import (
    ExchangeType,
    KePayload,
    MalformedMessage,
    SaPayload,
    build_notify_reply,
    build_sa_init_reply,
    encode_message,
    parse_message,
)
from .scenario import Scenario, ScenarioError, SimOperator, SimVantage

log = logging.getLogger(__name__)

INFRA_NET = ipaddress.ip_network("198.18.0.0/15")
ROOT_IP = "198.18.0.1"
REGISTRY_IP = "198.18.0.2"
ECHO_IP = "198.18.0.3"
ECHO_PORT = 7
DNS_PORT = 53
IKE_PORT = 500
NEGATIVE_TTL = 30


@dataclass(frozen=True)
class TraceEntry:
    time: float
    endpoint: str
    port: int
    vantage_id: str | None
    size: int


def _norm(name: str) -> str:
    return name.lower().rstrip(".")


def _under(name: str, zone: str) -> bool:
    return zone == "" or name == zone or name.endswith("." + zone)


def _parent(name: str) -> str:
    return name.split(".", 1)[1] if "." in name else ""


def _rng(*parts) -> random.Random:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class _Zone:
    """Authoritative zone data of one name server."""

    def __init__(self, origin: str, operator: SimOperator | None = None):
        self.origin = origin
        self.operator = operator


class _DnsServer:
    def __init__(self, vip: str):
        self.vip = vip
        self.zones: dict[str, _Zone] = {}
        self.delegations: dict[str, tuple[str, str]] = {}  # zone -> (ns name, ns vip)

    def closest(self, qname: str):
        best, best_len = None, -1
        for zone, z in self.zones.items():
            if _under(qname, zone) and len(zone) > best_len:
                best, best_len = ("auth", z), len(zone)
        for zone, d in self.delegations.items():
            if _under(qname, zone) and len(zone) > best_len:
                best, best_len = ("ref", (zone, d)), len(zone)
        return best


class _Endpoint:
    def __init__(self, kind: str, vip: str, port: int, handler):
        self.kind = kind
        self.vip = vip
        self.port = port
        self.handler = handler
        self.sock: socket.socket | None = None


class SimNet:
    """Running simulated network for one scenario.

    Use :func:`spawn` (or the context manager) to start it. ``transport(vid)``
    gives a :class:`~epdgscan.transport.Transport` whose traffic appears to
    originate from that vantage.
    """

    def __init__(self, scenario: Scenario, workdir: str | Path | None = None):
        self.scenario = scenario
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="simnet-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.vantages = {v.id: v for v in scenario.vantages}
        self.root_hints = (ROOT_IP,)
        self.echo_addr = (ECHO_IP, ECHO_PORT)
        self.traces: list[TraceEntry] = []
        self._trace_lock = threading.Lock()
        self._nat: dict[int, str] = {}
        self._nat_lock = threading.Lock()
        self._ke_cache: dict[int, bytes] = {}
        self._counters: dict[tuple, int] = {}
        self._endpoints: dict[tuple[str, int], _Endpoint] = {}
        self._by_real: dict[tuple[str, int], tuple[str, int]] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._check_addresses()
        self.geodb_path = self._build_geodb()
        self.geodb = GeoDatabase(self.geodb_path)
        self._build_dns()
        self._build_ike()
        self._add(_Endpoint("echo", ECHO_IP, ECHO_PORT, self._handle_echo))

    # -- construction ------------------------------------------------------

    def _check_addresses(self):
        for op in self.scenario.operators:
            for ip in op.pools():
                if ipaddress.ip_address(ip) in INFRA_NET:
                    raise ScenarioError(f"{ip} collides with the simulator's infrastructure block {INFRA_NET}")
        for v in self.scenario.vantages:
            if v.range_v4 and ipaddress.ip_network(v.range_v4).overlaps(INFRA_NET):
                raise ScenarioError(f"vantage {v.id} range collides with {INFRA_NET}")

    def _build_geodb(self) -> Path:
        rows = []
        for v in self.scenario.vantages:
            for r in (v.range_v4, v.range_v6):
                if r:
                    rows.append((r, v.country, v.country))
        for op in self.scenario.operators:
            hosting = op.hosting_country or op.home_country
            for ip in op.pools():
                rows.append((ip, hosting, hosting))
        path = self.workdir / "geo.mmdb"
        build_test_db(rows, path, database_type=f"simnet-{self.scenario.name}")
        return path

    def _build_dns(self):
        root = _DnsServer(ROOT_IP)
        root.zones[""] = _Zone("")
        registry = _DnsServer(REGISTRY_IP)
        servers = [root, registry]
        base = int(INFRA_NET.network_address) + 256
        for i, op in enumerate(self.scenario.operators):
            srv = _DnsServer(str(ipaddress.IPv4Address(base + i)))
            # epdg.epc.<zone> and sos.epdg.epc.<zone>
            served = {".".join(d.split(".")[3 if d.startswith("sos.") else 2 :]) for d in op.domains()}
            for name in op.dns_policy.chain:
                if name.count(".") < 2:
                    raise ScenarioError(f"CNAME target {name!r} needs at least three labels")
                served.add(_parent(name))
            for zone in served:
                srv.zones[zone] = _Zone(zone, op)
                ns = (f"ns.{zone}", srv.vip)
                top = ".".join(zone.split(".")[-2:])
                if top == zone:
                    self._delegate(root, zone, ns)
                else:
                    self._delegate(root, top, (f"ns.{top}", REGISTRY_IP))
                    registry.zones.setdefault(top, _Zone(top))
                    self._delegate(registry, zone, ns)
            servers.append(srv)
        for srv in servers:
            self._add(_Endpoint("dns", srv.vip, DNS_PORT, lambda data, v, s=srv: self._handle_dns(s, data, v)))

    @staticmethod
    def _delegate(parent: _DnsServer, zone: str, ns: tuple[str, str]):
        old = parent.delegations.get(zone)
        if old is not None and old != ns:
            raise ScenarioError(f"zone {zone} is delegated to two different servers")
        if zone in parent.zones:
            raise ScenarioError(f"zone {zone} is both served and delegated by {parent.vip}")
        parent.delegations[zone] = ns

    def _build_ike(self):
        for op in self.scenario.operators:
            for ip in op.pools():
                self._add(_Endpoint("ike", ip, IKE_PORT, lambda data, v, o=op, a=ip: self._handle_ike(o, a, data, v)))

    def _add(self, ep: _Endpoint):
        key = (ep.vip, ep.port)
        if key in self._endpoints:
            raise ScenarioError(f"two simulated endpoints at {ep.vip}:{ep.port}")
        self._endpoints[key] = ep

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "SimNet":
        sel = selectors.DefaultSelector()
        try:
            for ep in self._endpoints.values():
                s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                s.bind(("127.0.0.1", 0))
                s.setblocking(False)
                ep.sock = s
                self._by_real[s.getsockname()] = (ep.vip, ep.port)
                sel.register(s, selectors.EVENT_READ, ep)
        except OSError:
            self._close_sockets()
            sel.close()
            raise
        self._selector = sel
        self._thread = threading.Thread(target=self._serve, name="simnet", daemon=True)
        self._thread.start()
        return self

    def close(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
            self._selector.close()
        self._close_sockets()
        self.geodb.close()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def _close_sockets(self):
        for ep in self._endpoints.values():
            if ep.sock is not None:
                ep.sock.close()
                ep.sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _serve(self):
        while not self._stop.is_set():
            for key, _ in self._selector.select(timeout=0.05):
                ep: _Endpoint = key.data
                try:
                    data, (host, port) = ep.sock.recvfrom(65535)
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError as e:
                    log.debug("simnet recv on %s failed: %s", ep.vip, e)
                    continue
                with self._nat_lock:
                    vid = self._nat.get(port)
                vantage = self.vantages.get(vid) if vid else None
                with self._trace_lock:
                    self.traces.append(TraceEntry(time.monotonic(), ep.vip, ep.port, vid, len(data)))
                try:
                    reply = ep.handler(data, vantage)
                except Exception:  # a handler bug must not kill the whole network
                    log.exception("simnet handler for %s:%d failed", ep.vip, ep.port)
                    continue
                if reply:
                    try:
                        ep.sock.sendto(reply, (host, port))
                    except OSError as e:
                        log.debug("simnet reply to %s failed: %s", port, e)

    # -- client side -------------------------------------------------------

    def transport(self, vantage_id: str) -> "SimTransport":
        if vantage_id not in self.vantages:
            raise KeyError(f"unknown vantage {vantage_id!r}")
        return SimTransport(self, self.vantages[vantage_id])

    def _register(self, port: int, vid: str):
        with self._nat_lock:
            self._nat[port] = vid

    def _unregister(self, port: int):
        with self._nat_lock:
            self._nat.pop(port, None)

    def _real(self, vaddr: tuple[str, int]):
        ep = self._endpoints.get((str(ipaddress.ip_address(vaddr[0])), vaddr[1]))
        return None if ep is None or ep.sock is None else ep.sock.getsockname()

    def trace_for(self, ip: str, port: int | None = None) -> list[TraceEntry]:
        ip = str(ipaddress.ip_address(ip))
        with self._trace_lock:
            return [t for t in self.traces if t.endpoint == ip and (port is None or t.port == port)]

    def add_silent_endpoint(self, ip: str, port: int = IKE_PORT):
        """Register a black-hole endpoint (records traffic, never answers). Call before start()."""
        self._add(_Endpoint("silent", str(ipaddress.ip_address(ip)), port, lambda data, v: None))

    def _next(self, *key) -> random.Random:
        n = self._counters.get(key, 0)
        self._counters[key] = n + 1
        return _rng(self.scenario.seed, n, *key)

    def _country(self, ip: str | None) -> str | None:
        return self.geodb.lookup(ip).country if ip else None

    # -- handlers ----------------------------------------------------------

    def _handle_echo(self, data: bytes, vantage: SimVantage | None) -> bytes | None:
        if vantage is None:
            return None
        return (vantage.public_ip(4) or vantage.public_ip(6)).encode()

    def _handle_ike(self, op: SimOperator, ip: str, data: bytes, vantage: SimVantage | None) -> bytes | None:
        if vantage is None:
            return None
        try:
            msg = parse_message(data)
        except MalformedMessage:
            return None
        if msg.exchange_type != ExchangeType.IKE_SA_INIT or msg.is_response:
            return None
        if not msg.find(SaPayload) or not msg.find(KePayload):
            return None
        policy = op.ike_policy_for(ip)
        client = vantage.public_ip(ipaddress.ip_address(ip).version)
        rng = self._next("ike", ip, vantage.id)
        if policy.flaky_rate and rng.random() < policy.flaky_rate:
            return None
        if not policy.allows(self._country(client)):
            return None
        if policy.reply == "sa_init":
            group = msg.find(KePayload)[0].dh_group
            if group not in self._ke_cache:
                self._ke_cache[group] = groups.generate_public_value(group, rng)
            return encode_message(build_sa_init_reply(msg, rng, self._ke_cache[group]))
        wire = encode_message(build_notify_reply(msg))
        if policy.reply == "malformed":
            # header is intact (so the reply correlates) but the length lies
            return wire[:24] + (len(wire) + 64).to_bytes(4, "big") + wire[28:32]
        return wire

    def _handle_dns(self, srv: _DnsServer, data: bytes, vantage: SimVantage | None) -> bytes | None:
        try:
            query = dns.message.from_wire(data)
        except (dns.exception.DNSException, ValueError):
            return None
        if query.flags & dns.flags.QR or len(query.question) != 1:
            return None
        q = query.question[0]
        qname = _norm(q.name.to_text())
        resp = dns.message.make_response(query)
        resp.flags &= ~dns.flags.RA
        hit = srv.closest(qname)
        if hit is None:
            resp.set_rcode(dns.rcode.REFUSED)
        elif hit[0] == "ref":
            zone, (ns_name, ns_vip) = hit[1]
            resp.authority.append(dns.rrset.from_text(zone + ".", 86400, "IN", "NS", ns_name + "."))
            resp.additional.append(dns.rrset.from_text(ns_name + ".", 86400, "IN", "A", ns_vip))
        else:
            resp.flags |= dns.flags.AA
            if not self._answer(srv, hit[1], query, qname, q.rdtype, vantage, resp):
                return None
        try:
            return resp.to_wire(max_size=query.payload if query.edns >= 0 else 512)
        except dns.exception.TooBig:
            resp.answer.clear()
            resp.flags |= dns.flags.TC
            return resp.to_wire()

    def _soa(self, zone: _Zone):
        origin = zone.origin + "." if zone.origin else "."
        mname = f"ns.{origin}" if zone.origin else "a.root-servers.simnet."
        rname = f"hostmaster.{origin}" if zone.origin else "hostmaster.simnet."
        return dns.rrset.from_text(origin, NEGATIVE_TTL, "IN", "SOA", f"{mname} {rname} 1 3600 600 86400 {NEGATIVE_TTL}")

    def _answer(self, srv, zone: _Zone, query, qname: str, rdtype, vantage, resp) -> bool:
        """Fill an authoritative response; False means drop the query."""
        op = zone.operator
        if zone.origin and qname == f"ns.{zone.origin}":
            if rdtype == dns.rdatatype.A:
                resp.answer.append(dns.rrset.from_text(qname + ".", 86400, "IN", "A", srv.vip))
            else:
                resp.authority.append(self._soa(zone))
            return True
        policy = op.dns_policy if op else None
        if op is None or (qname not in op.domains() and qname not in policy.chain):
            resp.set_rcode(dns.rcode.NXDOMAIN)
            resp.authority.append(self._soa(zone))
            return True
        ecs = self._ecs(query)
        client_ip = vantage.public_ip(4) or vantage.public_ip(6) if vantage else None
        effective = policy.effective
        if ecs is not None and effective.ecs_respected:
            client_ip = str(ipaddress.ip_network(ecs[0]).network_address)
            resp.use_edns(0, 0, 1232, options=[dns.edns.GenericOption(ECS_OPTION_CODE, encode_ecs(ecs[0], int(ecs[0].split("/")[1])))])
        elif ecs is not None:
            resp.use_edns(0, 0, 1232, options=[dns.edns.GenericOption(ECS_OPTION_CODE, encode_ecs(ecs[0], 0))])

        # walk the CNAME chain as far as this server is authoritative
        current = qname
        seen = {current}
        chain = policy.chain if policy.kind == "cname" else ()
        while True:
            if current in op.domains():
                target = chain[0] if chain else None
            else:
                i = chain.index(current)
                target = chain[i + 1] if i + 1 < len(chain) else (chain[0] if policy.loop else None)
            if target is None:
                break
            resp.answer.append(dns.rrset.from_text(current + ".", policy.ttl, "IN", "CNAME", target + "."))
            if target in seen or srv.closest(target) is None or srv.closest(target)[0] != "auth":
                return True
            seen.add(target)
            current = target

        if rdtype not in (dns.rdatatype.A, dns.rdatatype.AAAA):
            resp.authority.append(self._soa(zone))
            return True
        version = 4 if rdtype == dns.rdatatype.A else 6
        vid = vantage.id if vantage else None
        rng = self._next("dns", srv.vip, vid, qname, version)
        decision = self._decide(op, effective, version, self._country(client_ip), rng)
        if decision == "drop":
            return False
        if decision == "nxdomain":
            resp.answer.clear()
            resp.set_rcode(dns.rcode.NXDOMAIN)
            resp.authority.append(self._soa(zone))
        elif not decision:
            resp.authority.append(self._soa(zone))
        else:
            rtype = "A" if version == 4 else "AAAA"
            resp.answer.append(dns.rrset.from_text(current + ".", effective.ttl, "IN", rtype, *decision))
        return True

    @staticmethod
    def _ecs(query):
        for opt in query.options:
            if opt.otype == ECS_OPTION_CODE:
                try:
                    return decode_ecs(opt.to_wire())
                except ValueError:
                    return None
        return None

    @staticmethod
    def _decide(op: SimOperator, policy, version: int, country: str | None, rng: random.Random):
        """Address answer for one query: list of IPs, "nxdomain" or "drop"."""
        pool = list(op.pool(version))
        kind = policy.kind
        if kind == "full_set":
            return pool
        if kind == "random_subset":
            return rng.sample(pool, min(policy.k, len(pool))) if pool else []
        if kind == "geo_partition":
            sub = policy.subpool_for(country)
            if not sub:
                return "nxdomain"
            mine = [ip for ip in sub if ipaddress.ip_address(ip).version == version]
            return rng.sample(mine, min(policy.k, len(mine))) if mine else []
        if kind == "domestic_only":
            if country == op.home_country or rng.random() < policy.leak_rate:
                return pool
            return "drop" if policy.foreign_action == "drop" else "nxdomain"
        raise ScenarioError(f"unhandled dns policy {kind}")


class SimChannel:
    """Client socket whose datagrams appear to come from one vantage."""

    def __init__(self, net: SimNet, vantage: SimVantage):
        self.net = net
        self.vantage = vantage
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.setblocking(False)
        self._port = self._sock.getsockname()[1]
        net._register(self._port, vantage.id)

    def sendto(self, data: bytes, addr) -> None:
        dest = ipaddress.ip_address(addr[0])
        # simulator infrastructure (DNS, echo) is reachable from every vantage
        if dest not in INFRA_NET and self.vantage.public_ip(dest.version) is None:
            version = dest.version
            raise OSError(errno.ENETUNREACH, f"vantage {self.vantage.id} has no IPv{version} connectivity")
        real = self.net._real(addr)
        if real is None:
            return  # nothing lives there; the datagram vanishes
        self._sock.sendto(data, real)

    def recv(self, timeout: float):
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            ready, _, _ = select.select([self._sock], [], [], remaining)
            if not ready:
                return None
            try:
                data, real = self._sock.recvfrom(65535)
            except BlockingIOError:
                continue
            vaddr = self.net._by_real.get(real)
            if vaddr is not None:
                return data, vaddr

    def close(self) -> None:
        self.net._unregister(self._port)
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SimTransport:
    def __init__(self, net: SimNet, vantage: SimVantage):
        self.net = net
        self.vantage = vantage

    def open_channel(self, source_port: int | None = None) -> SimChannel:
        return SimChannel(self.net, self.vantage)


def spawn(scenario: Scenario, workdir: str | Path | None = None) -> SimNet:
    """Build and start the simulated network; call ``close()`` when done."""
    net = SimNet(scenario, workdir)
    try:
        return net.start()
    except Exception:
        net.close()
        raise
