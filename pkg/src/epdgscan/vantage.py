"""Vantage points and measurement campaigns.

A campaign runs its phases (DNS discovery, pool enumeration, IKE probing)
in order. Within a phase, vantages work in parallel and each vantage spreads
its targets over a bounded thread pool. All results go to append-only JSONL
logs in the output directory; ``progress.jsonl`` remembers which
(round, phase, vantage, target) units are done so a rerun only does what is
missing.
"""

from __future__ import annotations

import concurrent.futures as cf
import enum
import ipaddress
import json
import logging
import random
import shlex
import subprocess
import sys
import threading
import time
import urllib.request
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import yaml

from . import logs
from .geoloc import AddressKind, GeoDatabase, classify_address
from .ike.codec import IkeSaInitConfig
from .ike.probe import IKE_PORT, ProbeError, RetryPolicy, error_outcome, probe
from .resolver import (
    ROOT_HINTS,
    Outcome,
    PoolEnumerationPolicy,
    RecordType,
    ResolveOptions,
    Resolver,
    VantageStamp,
    utc_now,
)
from .transport import LocalTransport

log = logging.getLogger(__name__)

MAX_IN_VANTAGE = 64
DEFAULT_ECHO_URL = "https://api.ipify.org"


class PlanError(ValueError):
    pass


class CampaignError(RuntimeError):
    pass


class VantageUnusable(Exception):
    pass


class DriverKind(str, enum.Enum):
    LOCAL = "local"
    EXTERNAL_EXEC = "external_exec"
    SIMULATED = "simulated"


@dataclass(frozen=True)
class VantagePoint:
    id: str
    declared_country: str | None = None
    v4: bool = True
    v6: bool = False
    driver: DriverKind = DriverKind.LOCAL
    command: str | None = None  # ExternalExec wrapper, must contain "{cmd}"
    echo_url: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "driver", DriverKind(self.driver))
        if not (self.v4 or self.v6):
            raise PlanError(f"vantage {self.id}: at least one IP version must be supported")
        if self.driver is DriverKind.EXTERNAL_EXEC and (not self.command or "{cmd}" not in self.command):
            raise PlanError(f"vantage {self.id}: external_exec needs a command template containing {{cmd}}")
        if self.declared_country:
            object.__setattr__(self, "declared_country", self.declared_country.upper())

    def supports(self, version: int) -> bool:
        return self.v4 if version == 4 else self.v6


class PhaseKind(str, enum.Enum):
    DNS_DISCOVERY = "dns_discovery"
    POOL_ENUMERATION = "pool_enumeration"
    IKE_PROBING = "ike_probing"


@dataclass(frozen=True)
class Phase:
    kind: PhaseKind
    record_type: RecordType | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PhaseKind(self.kind))
        if self.kind is PhaseKind.IKE_PROBING:
            object.__setattr__(self, "record_type", None)
        else:
            object.__setattr__(self, "record_type", RecordType(self.record_type or "A"))

    @property
    def key(self) -> str:
        return self.kind.value + (f":{self.record_type.value}" if self.record_type else "")


DEFAULT_PHASES = (
    Phase(PhaseKind.DNS_DISCOVERY, RecordType.A),
    Phase(PhaseKind.DNS_DISCOVERY, RecordType.AAAA),
    Phase(PhaseKind.POOL_ENUMERATION, RecordType.A),
    Phase(PhaseKind.POOL_ENUMERATION, RecordType.AAAA),
    Phase(PhaseKind.IKE_PROBING),
)


@dataclass(frozen=True)
class DnsSettings:
    server: str | None = None
    timeout_ms: int = 2000
    attempts: int = 2
    ecs_subnet: str | None = None
    max_cname_depth: int = 8

    def options(self, rtype: RecordType) -> ResolveOptions:
        return ResolveOptions(
            record_type=rtype,
            server=self.server,
            ecs_subnet=self.ecs_subnet,
            timeout_ms=self.timeout_ms,
            max_cname_depth=self.max_cname_depth,
            attempts=self.attempts,
        )


@dataclass(frozen=True)
class CampaignPlan:
    vantages: tuple
    targets: tuple
    out_dir: Path
    phases: tuple = DEFAULT_PHASES
    rounds: int = 1
    vantage_parallelism: int = 8
    in_vantage_parallelism: int = 16
    per_country_per_round: int | None = None
    rate: float | None = 10.0
    per_target_spacing: float = 60.0
    dns: DnsSettings = DnsSettings()
    pool: PoolEnumerationPolicy = PoolEnumerationPolicy()
    retry: RetryPolicy = RetryPolicy()
    ike: IkeSaInitConfig = IkeSaInitConfig()
    ike_port: int = IKE_PORT
    root_hints: tuple = ROOT_HINTS
    geodb: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "vantages", tuple(self.vantages))
        object.__setattr__(self, "targets", tuple(t.lower().rstrip(".") for t in self.targets))
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise PlanError("a campaign needs at least one phase")
        if not self.vantages:
            raise PlanError("a campaign needs at least one vantage")
        ids = [v.id for v in self.vantages]
        if len(ids) != len(set(ids)):
            raise PlanError("vantage ids must be unique")
        if self.rounds < 1:
            raise PlanError("rounds must be >= 1")
        if not 1 <= self.in_vantage_parallelism <= MAX_IN_VANTAGE:
            raise PlanError(f"in-vantage parallelism must be between 1 and {MAX_IN_VANTAGE}")
        if self.vantage_parallelism < 1:
            raise PlanError("vantage parallelism must be >= 1")
        if self.per_country_per_round is not None and self.per_country_per_round < 1:
            raise PlanError("per_country_per_round must be >= 1")


# -- plan files --------------------------------------------------------------


def _phase_from(item) -> Phase:
    if isinstance(item, str):
        kind, _, rt = item.partition(":")
        return Phase(kind, rt or None)
    if isinstance(item, dict) and len(item) == 1:
        (kind, rt), = item.items()
        return Phase(kind, rt)
    raise PlanError(f"cannot read phase {item!r}")


def plan_from_dict(d: dict, base_dir: Path | None = None, **overrides) -> CampaignPlan:
    """Build a plan from the structured config (see README for the schema)."""
    base_dir = base_dir or Path.cwd()
    try:
        vantages = tuple(VantagePoint(**v) for v in d.get("vantages", ()))
        targets = list(d.get("targets", ()))
        if d.get("targets_file"):
            path = base_dir / d["targets_file"]
            targets += [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        caps = d.get("caps", {})
        ike = d.get("ike", {})
        kw = dict(
            vantages=vantages,
            targets=tuple(targets),
            out_dir=Path(d.get("out", "out")),
            rounds=int(d.get("rounds", 1)),
            vantage_parallelism=int(caps.get("vantages", 8)),
            in_vantage_parallelism=int(caps.get("per_vantage", 16)),
            per_country_per_round=caps.get("per_country_per_round"),
            rate=d.get("rate", 10.0),
            per_target_spacing=float(d.get("per_target_spacing", 60.0)),
            dns=DnsSettings(**d.get("dns", {})),
            pool=PoolEnumerationPolicy(**d.get("pool", {})),
            retry=RetryPolicy(**{k: tuple(v) if k == "backoff" else v for k, v in ike.get("retry", {}).items()}),
            ike=IkeSaInitConfig(**{k: v for k, v in ike.items() if k in ("dh_group_for_ke", "nonce_length", "source_port")}),
            ike_port=int(ike.get("port", IKE_PORT)),
            root_hints=tuple(d.get("root_hints", ROOT_HINTS)),
            geodb=d.get("geodb"),
            seed=int(d.get("seed", 0)),
        )
        if "phases" in d:
            kw["phases"] = tuple(_phase_from(p) for p in d["phases"])
    except (TypeError, ValueError, OSError) as e:
        raise PlanError(str(e)) from e
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return CampaignPlan(**kw)


def load_plan(path: str | Path, **overrides) -> CampaignPlan:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text("utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise PlanError(f"cannot read plan {path}: {e}") from e
    if not isinstance(data, dict):
        raise PlanError(f"{path}: expected a mapping")
    return plan_from_dict(data.get("campaign", data), path.parent, **overrides)


# -- drivers -----------------------------------------------------------------


@dataclass(frozen=True)
class Location:
    public_ip: str
    geolocated_country: str | None
    declared_country: str | None
    geodb_version: str | None = None

    def stamp(self, vantage_id: str) -> VantageStamp:
        return VantageStamp(vantage_id, self.geolocated_country, self.public_ip, self.declared_country)


def _check_public(ip: str) -> str:
    try:
        cls = classify_address(ip)
    except ValueError:
        raise VantageUnusable(f"echo endpoint returned {ip!r}, not an IP address") from None
    if cls.kind is not AddressKind.PUBLIC_ROUTABLE:
        raise VantageUnusable(f"public address {ip} is {cls.kind.value}; no public route")
    return str(ipaddress.ip_address(ip))


class Driver:
    """How a vantage reaches the network."""

    def public_ip(self) -> str:
        raise NotImplementedError

    def run_job(self, job: dict) -> Iterator[tuple[str, list[dict]]]:
        raise NotImplementedError


class LocalDriver(Driver):
    def __init__(self, vantage: VantagePoint, transport=None):
        self.vantage = vantage
        self.transport = transport or LocalTransport()

    def public_ip(self) -> str:
        url = self.vantage.echo_url or DEFAULT_ECHO_URL
        try:
            with urllib.request.urlopen(url, timeout=10) as resp:
                text = resp.read(256).decode("ascii", "replace").strip()
        except (OSError, ValueError) as e:
            raise VantageUnusable(f"echo endpoint {url} unreachable: {e}") from e
        return _check_public(text)

    def run_job(self, job: dict):
        return execute_job(job, self.transport)


class SimulatedDriver(Driver):
    def __init__(self, vantage: VantagePoint, net):
        self.vantage = vantage
        self.net = net
        self.transport = net.transport(vantage.id)

    def public_ip(self) -> str:
        chan = self.transport.open_channel()
        try:
            chan.sendto(b"whoami", self.net.echo_addr)
            got = chan.recv(2.0)
        except OSError as e:
            raise VantageUnusable(f"echo endpoint unreachable: {e}") from e
        finally:
            chan.close()
        if got is None:
            raise VantageUnusable("echo endpoint did not answer")
        return _check_public(got[0].decode())

    def run_job(self, job: dict):
        return execute_job(job, self.transport)


class ExternalExecDriver(Driver):
    """Runs each unit of work in a child process started through a wrapper.

    The wrapper (for example ``ip netns exec vpn-de {cmd}``) decides where
    the traffic leaves; the child is this package's ``worker`` command.
    """

    def __init__(self, vantage: VantagePoint, python: str = sys.executable):
        self.vantage = vantage
        self.python = python

    def _argv(self) -> list[str]:
        inner = shlex.join([self.python, "-m", "epdgscan", "worker"])
        return shlex.split(self.vantage.command.format(cmd=inner))

    def _run(self, job: dict) -> Iterator[dict]:
        proc = subprocess.Popen(
            self._argv(), stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True
        )
        try:
            proc.stdin.write(json.dumps(job))
            proc.stdin.close()
            for line in proc.stdout:
                if line.strip():
                    yield json.loads(line)
        finally:
            proc.stdout.close()
            err = proc.stderr.read()
            proc.stderr.close()
            code = proc.wait()
        if code != 0:
            raise VantageUnusable(f"worker exited with {code}: {err.strip()[-500:]}")

    def public_ip(self) -> str:
        job = {"kind": "locate", "echo_url": self.vantage.echo_url or DEFAULT_ECHO_URL}
        for msg in self._run(job):
            if "error" in msg:
                raise VantageUnusable(msg["error"])
            return _check_public(msg["public_ip"])
        raise VantageUnusable("worker returned no address")

    def run_job(self, job: dict):
        for msg in self._run(job):
            yield msg["target"], msg["records"]


def make_driver(vantage: VantagePoint, net=None) -> Driver:
    if vantage.driver is DriverKind.SIMULATED:
        if net is None:
            raise PlanError(f"vantage {vantage.id} is simulated but no simulated network is running")
        return SimulatedDriver(vantage, net)
    if vantage.driver is DriverKind.EXTERNAL_EXEC:
        return ExternalExecDriver(vantage)
    return LocalDriver(vantage)


def self_locate(vantage: VantagePoint, driver: Driver, geodb: GeoDatabase | None) -> Location:
    ip = driver.public_ip()
    country = geodb.lookup(ip).country if geodb is not None else None
    return Location(ip, country, vantage.declared_country, geodb.version if geodb else None)


# -- job execution (shared by in-process drivers and the worker) -------------


class TokenBucket:
    def __init__(self, rate: float | None, burst: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = max(burst, 1.0)
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self):
        if not self.rate:
            return
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self._sleep(wait)


def job_stamp(job: dict) -> VantageStamp:
    return VantageStamp(**job["stamp"])


def execute_job(job: dict, transport) -> Iterator[tuple[str, list[dict]]]:
    """Run one phase for one vantage; yields (target, records) in target order."""
    kind = job["kind"]
    stamp = job_stamp(job)
    targets = job["targets"]
    workers = max(1, min(int(job.get("parallelism", 1)), MAX_IN_VANTAGE))

    if kind in ("discovery", "enumeration"):
        resolver = Resolver(transport, root_hints=job.get("root_hints", ROOT_HINTS), stamp=stamp)
        dns = DnsSettings(**job.get("dns", {}))
        options = dns.options(RecordType(job["record_type"]))
        pool = PoolEnumerationPolicy(**job.get("pool", {}))

        def work(domain):
            if kind == "discovery":
                return [resolver.resolve(domain, options).to_dict()]
            return [o.to_dict() for o in resolver.enumerate_pool(domain, options, pool).observations]

        keys = targets
    elif kind == "probe":
        retry = RetryPolicy(**{k: tuple(v) if k == "backoff" else v for k, v in job.get("retry", {}).items()})
        config = IkeSaInitConfig(**job.get("ike", {}))
        port = int(job.get("port", IKE_PORT))
        bucket = TokenBucket(job.get("rate"))
        not_before = job.get("not_before", {})

        def work(item):
            ip, domains = item
            delay = not_before.get(ip, 0) - time.time()
            if delay > 0:
                time.sleep(delay)
            bucket.acquire()
            try:
                return [probe(ip, config, retry, transport=transport, port=port, stamp=stamp, domains=domains).to_dict()]
            except ProbeError as e:
                return [error_outcome(ip, port, stamp, e, domains).to_dict()]

        keys = [t[0] for t in targets]
    else:
        raise ValueError(f"unknown job kind {kind!r}")

    with cf.ThreadPoolExecutor(max_workers=workers) as pool_ex:
        futures = [pool_ex.submit(work, t) for t in targets]
        for key, fut in zip(keys, futures):
            yield key, fut.result()


def worker_main(stdin=sys.stdin, stdout=sys.stdout) -> int:
    """Child side of :class:`ExternalExecDriver`: JSON job in, JSONL out."""
    job = json.load(stdin)
    if job["kind"] == "locate":
        try:
            ip = LocalDriver(VantagePoint("worker", echo_url=job["echo_url"])).public_ip()
            stdout.write(json.dumps({"public_ip": ip}) + "\n")
        except VantageUnusable as e:
            stdout.write(json.dumps({"error": str(e)}) + "\n")
        return 0
    for target, records in execute_job(job, LocalTransport()):
        stdout.write(json.dumps({"target": target, "records": records}) + "\n")
        stdout.flush()
    return 0


# -- campaign ----------------------------------------------------------------


@dataclass
class CampaignResult:
    out_dir: Path
    usable: dict = field(default_factory=dict)  # (round, vantage id) -> bool
    notes: list = field(default_factory=list)
    units_run: int = 0
    units_skipped: int = 0

    @property
    def partial(self) -> bool:
        return not all(self.usable.values())


def schedule_round(plan: CampaignPlan, rnd: int) -> list[VantagePoint]:
    """Vantages used in a round.

    With ``per_country_per_round`` set, vantages sharing a declared country
    take turns: each country's list is shuffled once (seeded) and rotated by
    the round number.
    """
    if plan.per_country_per_round is None:
        return list(plan.vantages)
    by_country = defaultdict(list)
    for v in plan.vantages:
        by_country[v.declared_country or v.id].append(v)
    chosen = []
    for country, vs in sorted(by_country.items()):
        order = list(vs)
        random.Random(f"{plan.seed}:{country}").shuffle(order)
        k = min(plan.per_country_per_round, len(order))
        start = (rnd * k) % len(order)
        chosen += [order[(start + i) % len(order)] for i in range(k)]
    return [v for v in plan.vantages if v in chosen]


class Campaign:
    def __init__(self, plan: CampaignPlan, net=None, geodb: GeoDatabase | None = None, driver_factory: Callable | None = None):
        self.plan = plan
        self.net = net
        self.out = plan.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        if geodb is None and net is not None:
            geodb = net.geodb
        if geodb is None and plan.geodb:
            geodb = GeoDatabase(plan.geodb)
        self.geodb = geodb
        self._driver_factory = driver_factory or (lambda v: make_driver(v, net))
        self._drivers: dict[str, Driver] = {}
        self._done = self._load_progress()
        self._located: dict[tuple[int, str], Location | None] = {}
        self._locate_lock = threading.Lock()
        self._last_probe: dict[tuple[str, str], float] = {}
        self.result = CampaignResult(self.out)

    # progress bookkeeping

    def _load_progress(self) -> set:
        return {(r["round"], r["phase"], r["vantage"], r["target"]) for r in logs.JsonlReader(self.out / logs.PROGRESS_LOG)}

    def _driver(self, v: VantagePoint) -> Driver:
        if v.id not in self._drivers:
            self._drivers[v.id] = self._driver_factory(v)
        return self._drivers[v.id]

    def _location(self, rnd: int, v: VantagePoint) -> Location | None:
        key = (rnd, v.id)
        with self._locate_lock:
            if key in self._located:
                return self._located[key]
        try:
            loc = self_locate(v, self._driver(v), self.geodb)
            rec = {"round": rnd, "vantage": v.id, "public_ip": loc.public_ip, "geolocated_country": loc.geolocated_country,
                   "declared_country": loc.declared_country, "geodb_version": loc.geodb_version, "timestamp": utc_now()}
            if loc.declared_country and loc.geolocated_country and loc.declared_country != loc.geolocated_country:
                rec["note"] = "declared and geolocated country differ"
        except VantageUnusable as e:
            loc = None
            rec = {"round": rnd, "vantage": v.id, "error": str(e), "timestamp": utc_now()}
            log.warning("vantage %s unusable in round %d: %s", v.id, rnd, e)
        logs.append_jsonl(self.out / logs.VANTAGE_LOG, [rec])
        with self._locate_lock:
            self._located[key] = loc
            self.result.usable[key] = loc is not None
        return loc

    # target derivation from the logs written so far

    def _dns_log(self):
        return logs.read_dns_log(self.out / logs.DNS_LOG)

    def _discovered_domains(self, rtype: RecordType) -> list[str]:
        found = {o.domain for o in self._dns_log() if o.record_type is rtype and o.outcome is Outcome.ANSWERS}
        return [t for t in self.plan.targets if t in found]

    def _probe_targets(self) -> list[tuple[str, list[str]]]:
        owners: dict[str, set] = defaultdict(set)
        skipped = set()
        for o in self._dns_log():
            for ip in o.answers:
                ip = str(ipaddress.ip_address(ip))
                if classify_address(ip).kind is AddressKind.PUBLIC_ROUTABLE:
                    owners[ip].add(o.domain)
                else:
                    skipped.add(ip)
        if skipped:
            self._note(f"{len(skipped)} non-public answer addresses were not probed")
        key = lambda ip: (ipaddress.ip_address(ip).version, int(ipaddress.ip_address(ip)))
        return [(ip, sorted(owners[ip])) for ip in sorted(owners, key=key)]

    def _note(self, text: str):
        if text not in self.result.notes:
            self.result.notes.append(text)

    # running

    def run(self) -> CampaignResult:
        for rnd in range(self.plan.rounds):
            active = schedule_round(self.plan, rnd)
            for phase in self.plan.phases:
                self._run_phase(rnd, phase, active)
            if active and not any(self.result.usable.get((rnd, v.id), True) for v in active):
                raise CampaignError(f"round {rnd}: no usable vantage")
        return self.result

    def _targets_for(self, phase: Phase):
        if phase.kind is PhaseKind.DNS_DISCOVERY:
            return [(t, t) for t in self.plan.targets]
        if phase.kind is PhaseKind.POOL_ENUMERATION:
            return [(t, t) for t in self._discovered_domains(phase.record_type)]
        return [(ip, (ip, domains)) for ip, domains in self._probe_targets()]

    def _run_phase(self, rnd: int, phase: Phase, active: list[VantagePoint]):
        targets = self._targets_for(phase)
        jobs = []
        for v in active:
            if phase.record_type is RecordType.AAAA and not v.v6:
                self._note(f"{phase.key} skipped for {v.id}: no IPv6 support")
                continue
            mine = [(k, t) for k, t in targets if (rnd, phase.key, v.id, k) not in self._done]
            if phase.kind is PhaseKind.IKE_PROBING:
                unsupported = [k for k, _ in mine if not v.supports(ipaddress.ip_address(k).version)]
                if unsupported:
                    self._note(f"{v.id} cannot reach IPv{ipaddress.ip_address(unsupported[0]).version} targets; skipped")
                mine = [(k, t) for k, t in mine if v.supports(ipaddress.ip_address(k).version)]
            self.result.units_skipped += len(targets) - len(mine)
            if mine:
                jobs.append((v, mine))
        if not jobs:
            return
        with cf.ThreadPoolExecutor(max_workers=min(self.plan.vantage_parallelism, len(jobs))) as ex:
            futures = [ex.submit(self._run_vantage_phase, rnd, phase, v, mine) for v, mine in jobs]
            for f in futures:
                f.result()

    def _job(self, phase: Phase, loc: Location, vid: str, mine) -> dict:
        plan = self.plan
        stamp = loc.stamp(vid)
        job = {
            "stamp": {"vantage_id": stamp.vantage_id, "vantage_country": stamp.vantage_country,
                      "vantage_public_ip": stamp.vantage_public_ip, "vantage_declared_country": stamp.vantage_declared_country},
            "parallelism": plan.in_vantage_parallelism,
            "targets": [t for _, t in mine],
        }
        if phase.kind is PhaseKind.IKE_PROBING:
            job.update(
                kind="probe",
                retry={"max_attempts": plan.retry.max_attempts, "backoff": list(plan.retry.backoff), "final_wait": plan.retry.final_wait},
                ike={"dh_group_for_ke": plan.ike.dh_group_for_ke, "nonce_length": plan.ike.nonce_length, "source_port": plan.ike.source_port},
                port=plan.ike_port,
                rate=plan.rate,
                not_before={ip: self._last_probe[(vid, ip)] + plan.per_target_spacing
                            for ip, _ in mine if (vid, ip) in self._last_probe},
            )
        else:
            job.update(
                kind="discovery" if phase.kind is PhaseKind.DNS_DISCOVERY else "enumeration",
                record_type=phase.record_type.value,
                root_hints=list(self.net.root_hints if self.net is not None else plan.root_hints),
                dns={k: getattr(plan.dns, k) for k in ("server", "timeout_ms", "attempts", "ecs_subnet", "max_cname_depth")},
                pool={"max_queries": plan.pool.max_queries, "stop_after_no_new": plan.pool.stop_after_no_new},
            )
        return job

    def _run_vantage_phase(self, rnd: int, phase: Phase, v: VantagePoint, mine):
        loc = self._location(rnd, v)
        if loc is None:
            return
        log_name = logs.PROBE_LOG if phase.kind is PhaseKind.IKE_PROBING else logs.DNS_LOG
        try:
            for target, records in self._driver(v).run_job(self._job(phase, loc, v.id, mine)):
                logs.append_jsonl(self.out / log_name, records)
                logs.append_jsonl(self.out / logs.PROGRESS_LOG, [{"round": rnd, "phase": phase.key, "vantage": v.id, "target": target}])
                if phase.kind is PhaseKind.IKE_PROBING:
                    self._last_probe[(v.id, target)] = time.time()
                self.result.units_run += 1
        except VantageUnusable as e:
            log.warning("vantage %s failed during %s: %s", v.id, phase.key, e)
            with self._locate_lock:
                self.result.usable[(rnd, v.id)] = False
            logs.append_jsonl(self.out / logs.VANTAGE_LOG, [{"round": rnd, "vantage": v.id, "error": str(e), "phase": phase.key}])


def run_campaign(plan: CampaignPlan, net=None, geodb: GeoDatabase | None = None) -> CampaignResult:
    return Campaign(plan, net=net, geodb=geodb).run()


def simulated_plan(scenario, out_dir, **overrides) -> CampaignPlan:
    """Campaign over every vantage and domain of a simnet scenario.

    Timing defaults are shrunk for loopback speed; ``scenario.settings`` and
    ``overrides`` can change any plan field.
    """
    settings = dict(scenario.settings)
    vantages = tuple(
        VantagePoint(v.id, v.declared_country or v.country, v4=v.v4, v6=v.v6, driver=DriverKind.SIMULATED)
        for v in scenario.vantages
    )
    scale = float(settings.pop("backoff_scale", 0.05))
    kw = dict(
        vantages=vantages,
        targets=tuple(scenario.domains()),
        out_dir=Path(out_dir),
        rate=None,
        per_target_spacing=0.0,
        dns=DnsSettings(timeout_ms=int(settings.pop("dns_timeout_ms", 250)), attempts=int(settings.pop("dns_attempts", 3))),
        pool=PoolEnumerationPolicy(
            max_queries=int(settings.pop("max_queries", 200)), stop_after_no_new=int(settings.pop("stop_after_no_new", 20))
        ),
        retry=RetryPolicy().scaled(scale),
        seed=scenario.seed,
        vantage_parallelism=int(settings.pop("vantage_parallelism", 8)),
        in_vantage_parallelism=int(settings.pop("in_vantage_parallelism", 8)),
    )
    if settings:
        raise PlanError(f"unknown scenario settings: {sorted(settings)}")
    kw.update(overrides)
    return CampaignPlan(**kw)
