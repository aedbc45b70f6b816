"""Send IKE_SA_INIT requests to an ePDG and record whether it answers."""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import logging
import time
from dataclasses import dataclass, field

from ..resolver import VantageStamp, utc_now
from ..transport import LocalTransport, Transport
from .codec import (
    IkeSaInitConfig,
    MalformedMessage,
    NotifyPayload,
    SaPayload,
    build_sa_init,
    parse_header,
    parse_message,
)

log = logging.getLogger(__name__)

IKE_PORT = 500


@dataclass(frozen=True)
class RetryPolicy:
    """Attempt count and the waits between consecutive attempts.

    ``backoff[i]`` is how long to wait for an answer after attempt ``i+1``
    before retransmitting; the last attempt waits ``final_wait`` (defaults to
    the last backoff value).
    """

    max_attempts: int = 5
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    final_wait: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "backoff", tuple(float(b) for b in self.backoff))
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if not self.backoff or any(b <= 0 for b in self.backoff):
            raise ValueError("backoff values must be positive")
        if any(b2 < b1 for b1, b2 in zip(self.backoff, self.backoff[1:])):
            raise ValueError("backoff schedule must be non-decreasing")

    def waits(self) -> list[float]:
        out = []
        for i in range(self.max_attempts - 1):
            out.append(self.backoff[min(i, len(self.backoff) - 1)])
        last = self.final_wait if self.final_wait is not None else self.backoff[-1]
        out.append(last)
        return out

    def scaled(self, factor: float) -> "RetryPolicy":
        fw = None if self.final_wait is None else self.final_wait * factor
        return RetryPolicy(self.max_attempts, tuple(b * factor for b in self.backoff), fw)


class ResponseKind(str, enum.Enum):
    SA_INIT_REPLY = "sa_init_reply"
    NOTIFY = "notify"
    MALFORMED = "malformed"
    SILENT = "silent"
    ERROR = "error"


RESPONSIVE_KINDS = frozenset({ResponseKind.SA_INIT_REPLY, ResponseKind.NOTIFY, ResponseKind.MALFORMED})


class ProbeError(Exception):
    """Local failure (socket could not be opened or used); says nothing about the target."""


@dataclass
class ProbeOutcome:
    target_ip: str
    target_port: int
    vantage_id: str
    vantage_country: str | None
    vantage_public_ip: str | None
    attempts: int
    responsive: bool
    response_kind: ResponseKind
    timestamp: str
    rtt_ms: float | None = None
    notify_type: int | None = None
    vantage_declared_country: str | None = None
    domains: list[str] = field(default_factory=list)
    error: str | None = None
    ignored_replies: int = 0

    def __post_init__(self):
        self.response_kind = ResponseKind(self.response_kind)
        if self.responsive != (self.response_kind in RESPONSIVE_KINDS):
            raise ValueError(f"responsive={self.responsive} contradicts response_kind={self.response_kind.value}")

    @property
    def ip_version(self) -> int:
        return ipaddress.ip_address(self.target_ip).version

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["response_kind"] = self.response_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeOutcome":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _classify_reply(data: bytes, spi: bytes) -> tuple[ResponseKind, int | None] | None:
    """Kind of a reply datagram, or None if it does not belong to this probe."""
    try:
        header = parse_header(data)
    except MalformedMessage:
        return None
    if header.initiator_spi != spi:
        return None
    try:
        msg = parse_message(data)
    except MalformedMessage:
        return ResponseKind.MALFORMED, None
    if msg.find(SaPayload):
        return ResponseKind.SA_INIT_REPLY, None
    notifies = msg.find(NotifyPayload)
    if notifies:
        return ResponseKind.NOTIFY, notifies[0].notify_type
    return ResponseKind.MALFORMED, None


def probe(
    target_ip: str,
    config: IkeSaInitConfig | None = None,
    retry: RetryPolicy | None = None,
    *,
    transport: Transport | None = None,
    port: int = IKE_PORT,
    stamp: VantageStamp | None = None,
    seed: int | None = None,
    domains=(),
) -> ProbeOutcome:
    """Probe one ePDG address.

    The same request is retransmitted until something answers or the retry
    policy is exhausted. Any correlated reply, including an error Notify,
    counts as responsive. Raises :class:`ProbeError` on local socket faults.
    """
    config = config or IkeSaInitConfig()
    retry = retry or RetryPolicy()
    transport = transport or LocalTransport()
    stamp = stamp or VantageStamp()
    target = ipaddress.ip_address(target_ip)
    wire, request = build_sa_init(config, seed)
    started = utc_now()
    base = dict(
        target_ip=str(target),
        target_port=port,
        vantage_id=stamp.vantage_id,
        vantage_country=stamp.vantage_country,
        vantage_public_ip=stamp.vantage_public_ip,
        vantage_declared_country=stamp.vantage_declared_country,
        timestamp=started,
        domains=sorted(domains),
    )
    ignored = 0
    try:
        chan = transport.open_channel(source_port=config.source_port)
    except OSError as e:
        raise ProbeError(f"cannot open socket: {e}") from e
    try:
        for attempt, wait in enumerate(retry.waits(), 1):
            sent_at = time.monotonic()
            try:
                chan.sendto(wire, (str(target), port))
            except OSError as e:
                raise ProbeError(f"send to {target}:{port} failed: {e}") from e
            deadline = sent_at + wait
            while (remaining := deadline - time.monotonic()) > 0:
                try:
                    got = chan.recv(remaining)
                except OSError as e:
                    raise ProbeError(f"receive failed: {e}") from e
                if got is None:
                    break
                data, addr = got
                verdict = None
                if ipaddress.ip_address(addr[0]) == target:
                    verdict = _classify_reply(data, request.initiator_spi)
                if verdict is None:
                    ignored += 1
                    log.debug("ignoring uncorrelated datagram from %s", addr)
                    continue
                kind, ntype = verdict
                return ProbeOutcome(
                    **base,
                    attempts=attempt,
                    responsive=True,
                    response_kind=kind,
                    notify_type=ntype,
                    rtt_ms=round((time.monotonic() - sent_at) * 1000, 3),
                    ignored_replies=ignored,
                )
        return ProbeOutcome(
            **base,
            attempts=retry.max_attempts,
            responsive=False,
            response_kind=ResponseKind.SILENT,
            ignored_replies=ignored,
        )
    finally:
        chan.close()


def error_outcome(target_ip: str, port: int, stamp: VantageStamp, err: Exception, domains=()) -> ProbeOutcome:
    """Log record for a probe that failed locally; excluded from responsiveness totals."""
    return ProbeOutcome(
        target_ip=target_ip,
        target_port=port,
        vantage_id=stamp.vantage_id,
        vantage_country=stamp.vantage_country,
        vantage_public_ip=stamp.vantage_public_ip,
        vantage_declared_country=stamp.vantage_declared_country,
        attempts=0,
        responsive=False,
        response_kind=ResponseKind.ERROR,
        timestamp=utc_now(),
        domains=sorted(domains),
        error=str(err),
    )
