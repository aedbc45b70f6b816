"""IKEv2 message encoding and tolerant parsing (header, SA, KE, Nonce, Notify)."""

from __future__ import annotations

import enum
import random
import struct
from dataclasses import dataclass, field
from typing import Union

from . import groups

HEADER_LEN = 28
IKE_VERSION = 0x20

FLAG_INITIATOR = 0x08
FLAG_VERSION = 0x10
FLAG_RESPONSE = 0x20


class ExchangeType(enum.IntEnum):
    IKE_SA_INIT = 34
    IKE_AUTH = 35
    CREATE_CHILD_SA = 36
    INFORMATIONAL = 37


class PayloadType(enum.IntEnum):
    NONE = 0
    SA = 33
    KE = 34
    NONCE = 40
    NOTIFY = 41
    SK = 46


class TransformType(enum.IntEnum):
    ENCR = 1
    PRF = 2
    INTEG = 3
    DH = 4
    ESN = 5


class NotifyType(enum.IntEnum):
    UNSUPPORTED_CRITICAL_PAYLOAD = 1
    INVALID_SYNTAX = 7
    NO_PROPOSAL_CHOSEN = 14
    INVALID_KE_PAYLOAD = 17
    COOKIE = 16390


ENCR_3DES = 3
ENCR_AES_CBC = 12
ENCR_AES_GCM_16 = 20
PRF_HMAC_SHA1 = 2
PRF_HMAC_SHA2_256 = 5
AUTH_HMAC_SHA1_96 = 2
AUTH_HMAC_SHA2_256_128 = 12
AEAD_ENCRYPTION = frozenset({14, 15, 16, 18, 19, 20})

ATTR_KEY_LENGTH = 14
PROTO_IKE = 1


class MalformedMessage(ValueError):
    """Datagram that is not a well-formed IKEv2 message.

    ``data`` keeps the raw bytes; ``header`` is set when the 28-byte header
    itself was valid and only the payload chain failed to parse.
    """

    def __init__(self, reason: str, data: bytes, header: "IkeHeader | None" = None):
        super().__init__(reason)
        self.reason = reason
        self.data = data
        self.header = header


@dataclass(frozen=True)
class IkeHeader:
    initiator_spi: bytes
    responder_spi: bytes
    next_payload: int
    major_version: int
    minor_version: int
    exchange_type: int
    flags: int
    message_id: int
    length: int


@dataclass(frozen=True)
class Transform:
    transform_type: int
    transform_id: int
    key_length: int | None = None
    attributes: bytes = b""


@dataclass(frozen=True)
class Proposal:
    number: int
    protocol_id: int
    transforms: tuple[Transform, ...]
    spi: bytes = b""


@dataclass(frozen=True)
class SaPayload:
    proposals: tuple[Proposal, ...]


@dataclass(frozen=True)
class KePayload:
    dh_group: int
    data: bytes


@dataclass(frozen=True)
class NoncePayload:
    data: bytes


@dataclass(frozen=True)
class NotifyPayload:
    notify_type: int
    protocol_id: int = 0
    spi: bytes = b""
    data: bytes = b""


@dataclass(frozen=True)
class OtherPayload:
    payload_type: int
    data: bytes
    critical: bool = False


Payload = Union[SaPayload, KePayload, NoncePayload, NotifyPayload, OtherPayload]


@dataclass(frozen=True)
class IkeMessage:
    initiator_spi: bytes
    responder_spi: bytes
    exchange_type: int
    is_response: bool
    is_initiator: bool
    message_id: int
    payloads: tuple[Payload, ...] = field(default_factory=tuple)
    minor_version: int = 0

    def find(self, kind):
        return [p for p in self.payloads if isinstance(p, kind)]

    @property
    def notify_types(self) -> list[int]:
        return [p.notify_type for p in self.find(NotifyPayload)]


# -- encoding --------------------------------------------------------------


def _payload_type(p: Payload) -> int:
    if isinstance(p, SaPayload):
        return PayloadType.SA
    if isinstance(p, KePayload):
        return PayloadType.KE
    if isinstance(p, NoncePayload):
        return PayloadType.NONCE
    if isinstance(p, NotifyPayload):
        return PayloadType.NOTIFY
    return p.payload_type


def _encode_transform(t: Transform, last: bool) -> bytes:
    attrs = b""
    if t.key_length is not None:
        attrs += struct.pack("!HH", 0x8000 | ATTR_KEY_LENGTH, t.key_length)
    attrs += t.attributes
    return struct.pack("!BBHBBH", 0 if last else 3, 0, 8 + len(attrs), t.transform_type, 0, t.transform_id) + attrs


def _encode_proposal(p: Proposal, last: bool) -> bytes:
    body = b"".join(_encode_transform(t, i == len(p.transforms) - 1) for i, t in enumerate(p.transforms))
    head = struct.pack(
        "!BBHBBBB", 0 if last else 2, 0, 8 + len(p.spi) + len(body), p.number, p.protocol_id, len(p.spi), len(p.transforms)
    )
    return head + p.spi + body


def _encode_body(p: Payload) -> bytes:
    if isinstance(p, SaPayload):
        return b"".join(_encode_proposal(pr, i == len(p.proposals) - 1) for i, pr in enumerate(p.proposals))
    if isinstance(p, KePayload):
        return struct.pack("!HH", p.dh_group, 0) + p.data
    if isinstance(p, NoncePayload):
        return p.data
    if isinstance(p, NotifyPayload):
        return struct.pack("!BBH", p.protocol_id, len(p.spi), p.notify_type) + p.spi + p.data
    return p.data


def encode_message(msg: IkeMessage) -> bytes:
    chunks = []
    types = [_payload_type(p) for p in msg.payloads]
    for i, p in enumerate(msg.payloads):
        body = _encode_body(p)
        nxt = types[i + 1] if i + 1 < len(types) else PayloadType.NONE
        critical = 0x80 if isinstance(p, OtherPayload) and p.critical else 0
        chunks.append(struct.pack("!BBH", nxt, critical, 4 + len(body)) + body)
    payload_bytes = b"".join(chunks)
    flags = (FLAG_RESPONSE if msg.is_response else 0) | (FLAG_INITIATOR if msg.is_initiator else 0)
    header = struct.pack(
        "!8s8sBBBBII",
        msg.initiator_spi,
        msg.responder_spi,
        types[0] if types else PayloadType.NONE,
        IKE_VERSION | msg.minor_version,
        msg.exchange_type,
        flags,
        msg.message_id,
        HEADER_LEN + len(payload_bytes),
    )
    return header + payload_bytes


# -- parsing ---------------------------------------------------------------


def parse_header(data: bytes) -> IkeHeader:
    if len(data) < HEADER_LEN:
        raise MalformedMessage(f"datagram of {len(data)} bytes is shorter than the IKE header", data)
    ispi, rspi, nxt, ver, exch, flags, msgid, length = struct.unpack("!8s8sBBBBII", data[:HEADER_LEN])
    header = IkeHeader(ispi, rspi, nxt, ver >> 4, ver & 0x0F, exch, flags, msgid, length)
    if header.major_version != 2:
        raise MalformedMessage(f"unsupported IKE major version {header.major_version}", data)
    return header


def _parse_attributes(raw: bytes) -> tuple[int | None, bytes]:
    key_length = None
    rest = b""
    off = 0
    while off < len(raw):
        if off + 4 > len(raw):
            raise ValueError("truncated transform attribute")
        atype, val = struct.unpack("!HH", raw[off : off + 4])
        if atype & 0x8000:
            if (atype & 0x7FFF) == ATTR_KEY_LENGTH and key_length is None:
                key_length = val
            else:
                rest += raw[off : off + 4]
            off += 4
        else:
            end = off + 4 + val
            if end > len(raw):
                raise ValueError("truncated TLV transform attribute")
            rest += raw[off:end]
            off = end
    return key_length, rest


def _parse_sa(body: bytes) -> SaPayload:
    proposals = []
    off = 0
    while off < len(body):
        if off + 8 > len(body):
            raise ValueError("truncated proposal header")
        last, _, plen, num, proto, spi_size, ntrans = struct.unpack("!BBHBBBB", body[off : off + 8])
        if plen < 8 or off + plen > len(body):
            raise ValueError("bad proposal length")
        pend = off + plen
        spi = body[off + 8 : off + 8 + spi_size]
        toff = off + 8 + spi_size
        transforms = []
        for _ in range(ntrans):
            if toff + 8 > pend:
                raise ValueError("truncated transform")
            _tlast, _, tlen, ttype, _, tid = struct.unpack("!BBHBBH", body[toff : toff + 8])
            if tlen < 8 or toff + tlen > pend:
                raise ValueError("bad transform length")
            key_length, attrs = _parse_attributes(body[toff + 8 : toff + tlen])
            transforms.append(Transform(ttype, tid, key_length, attrs))
            toff += tlen
        proposals.append(Proposal(num, proto, tuple(transforms), spi))
        off = pend
        if last == 0:
            break
    return SaPayload(tuple(proposals))


def _parse_body(ptype: int, body: bytes, critical: bool) -> Payload:
    if ptype == PayloadType.SA:
        return _parse_sa(body)
    if ptype == PayloadType.KE:
        if len(body) < 4:
            raise ValueError("truncated KE payload")
        group, _ = struct.unpack("!HH", body[:4])
        return KePayload(group, body[4:])
    if ptype == PayloadType.NONCE:
        return NoncePayload(body)
    if ptype == PayloadType.NOTIFY:
        if len(body) < 4:
            raise ValueError("truncated Notify payload")
        proto, spi_size, ntype = struct.unpack("!BBH", body[:4])
        if 4 + spi_size > len(body):
            raise ValueError("Notify SPI overruns payload")
        return NotifyPayload(ntype, proto, body[4 : 4 + spi_size], body[4 + spi_size :])
    return OtherPayload(ptype, body, critical)


def parse_message(data: bytes) -> IkeMessage:
    """Parse an IKEv2 datagram.

    Raises :class:`MalformedMessage` (carrying the raw bytes) when the header
    is short, the version is not 2.x, or the payload chain is inconsistent.
    Unknown payload types come back as :class:`OtherPayload`.
    """
    header = parse_header(data)
    if header.length < HEADER_LEN or header.length > len(data):
        raise MalformedMessage(f"length field {header.length} does not match datagram of {len(data)} bytes", data, header)
    payloads = []
    nxt = header.next_payload
    off = HEADER_LEN
    while nxt != PayloadType.NONE:
        if off + 4 > header.length:
            raise MalformedMessage("truncated generic payload header", data, header)
        following, crit, plen = struct.unpack("!BBH", data[off : off + 4])
        if plen < 4 or off + plen > header.length:
            raise MalformedMessage(f"payload length {plen} out of bounds", data, header)
        body = data[off + 4 : off + plen]
        try:
            payloads.append(_parse_body(nxt, body, bool(crit & 0x80)))
        except ValueError as e:
            raise MalformedMessage(f"payload type {nxt}: {e}", data, header) from None
        off += plen
        if nxt == PayloadType.SK:
            # the chain continues inside the encrypted body
            break
        nxt = following
    return IkeMessage(
        initiator_spi=header.initiator_spi,
        responder_spi=header.responder_spi,
        exchange_type=header.exchange_type,
        is_response=bool(header.flags & FLAG_RESPONSE),
        is_initiator=bool(header.flags & FLAG_INITIATOR),
        message_id=header.message_id,
        payloads=tuple(payloads),
        minor_version=header.minor_version,
    )


# -- IKE_SA_INIT construction ---------------------------------------------


@dataclass(frozen=True)
class TransformSet:
    """One proposal: every listed algorithm is offered as an alternative."""

    encryption: tuple[tuple[int, int | None], ...]
    prf: tuple[int, ...]
    integrity: tuple[int, ...]
    dh_groups: tuple[int, ...]

    def to_proposal(self, number: int) -> Proposal:
        transforms = [Transform(TransformType.ENCR, eid, klen) for eid, klen in self.encryption]
        transforms += [Transform(TransformType.PRF, t) for t in self.prf]
        transforms += [Transform(TransformType.INTEG, t) for t in self.integrity]
        transforms += [Transform(TransformType.DH, t) for t in self.dh_groups]
        return Proposal(number, PROTO_IKE, tuple(transforms))

    @classmethod
    def from_proposal(cls, proposal: Proposal) -> "TransformSet":
        by_type: dict[int, list] = {t: [] for t in TransformType}
        for t in proposal.transforms:
            if t.transform_type == TransformType.ENCR:
                by_type[TransformType.ENCR].append((t.transform_id, t.key_length))
            elif t.transform_type in by_type:
                by_type[t.transform_type].append(t.transform_id)
        return cls(
            tuple(by_type[TransformType.ENCR]),
            tuple(by_type[TransformType.PRF]),
            tuple(by_type[TransformType.INTEG]),
            tuple(by_type[TransformType.DH]),
        )


DEFAULT_PROPOSALS = (
    TransformSet(
        encryption=((ENCR_AES_CBC, 128), (ENCR_AES_CBC, 256)),
        prf=(PRF_HMAC_SHA1, PRF_HMAC_SHA2_256),
        integrity=(AUTH_HMAC_SHA1_96, AUTH_HMAC_SHA2_256_128),
        dh_groups=(2, 14),
    ),
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IkeSaInitConfig:
    proposals: tuple[TransformSet, ...] = DEFAULT_PROPOSALS
    dh_group_for_ke: int = 14
    nonce_length: int = 32
    source_port: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.proposals:
            raise ConfigError("proposals must be non-empty")
        if len(self.proposals) > 255:
            raise ConfigError("at most 255 proposals fit in an SA payload")
        for ts in self.proposals:
            if not ts.encryption or not ts.prf or not ts.dh_groups:
                raise ConfigError("every proposal needs encryption, PRF and DH transforms")
            if not ts.integrity and not all(eid in AEAD_ENCRYPTION for eid, _ in ts.encryption):
                raise ConfigError("non-AEAD encryption requires an integrity transform")
            if len(ts.encryption) + len(ts.prf) + len(ts.integrity) + len(ts.dh_groups) > 255:
                raise ConfigError("at most 255 transforms fit in a proposal")
        if not 16 <= self.nonce_length <= 256:
            raise ConfigError("nonce_length must be between 16 and 256 bytes")
        if not any(self.dh_group_for_ke in ts.dh_groups for ts in self.proposals):
            raise ConfigError(f"dh_group_for_ke {self.dh_group_for_ke} is not offered in any proposal")
        if self.dh_group_for_ke not in groups.SUPPORTED_GROUPS:
            raise ConfigError(f"dh_group_for_ke {self.dh_group_for_ke} is not a supported group")
        if self.source_port is not None and not 0 < self.source_port < 65536:
            raise ConfigError("source_port out of range")


def _rng(seed) -> random.Random:
    return random.Random(seed) if seed is not None else random.SystemRandom()


def build_sa_init(config: IkeSaInitConfig | None = None, seed: int | None = None) -> tuple[bytes, IkeMessage]:
    """Encode an IKE_SA_INIT request: SA, KE and Nonce payloads.

    With ``seed`` the SPI, nonce and DH private value are reproducible.
    """
    config = config or IkeSaInitConfig()
    config.validate()
    rng = _rng(seed)
    spi = bytes(rng.getrandbits(8) for _ in range(8))
    if spi == bytes(8):
        spi = b"\x00" * 7 + b"\x01"
    msg = IkeMessage(
        initiator_spi=spi,
        responder_spi=bytes(8),
        exchange_type=ExchangeType.IKE_SA_INIT,
        is_response=False,
        is_initiator=True,
        message_id=0,
        payloads=(
            SaPayload(tuple(ts.to_proposal(i + 1) for i, ts in enumerate(config.proposals))),
            KePayload(config.dh_group_for_ke, groups.generate_public_value(config.dh_group_for_ke, rng)),
            NoncePayload(bytes(rng.getrandbits(8) for _ in range(config.nonce_length))),
        ),
    )
    return encode_message(msg), msg


def config_from_message(msg: IkeMessage, source_port: int | None = None) -> IkeSaInitConfig:
    """Recover the config an IKE_SA_INIT request was built from.

    The source port is not on the wire, so the caller passes it back in.
    """
    sa, ke, nonce = msg.find(SaPayload), msg.find(KePayload), msg.find(NoncePayload)
    if not (sa and ke and nonce):
        raise ValueError("not an IKE_SA_INIT request: SA, KE and Nonce payloads are required")
    return IkeSaInitConfig(
        proposals=tuple(TransformSet.from_proposal(p) for p in sa[0].proposals),
        dh_group_for_ke=ke[0].dh_group,
        nonce_length=len(nonce[0].data),
        source_port=source_port,
    )


def build_sa_init_reply(request: IkeMessage, rng: random.Random, public_value: bytes | None = None) -> IkeMessage:
    """Responder's answer accepting the first offered proposal.

    ``public_value`` skips the modular exponentiation, which a simulated
    responder answering thousands of probes can do without.
    """
    sa = request.find(SaPayload)[0]
    first = sa.proposals[0]
    chosen = []
    seen = set()
    for t in first.transforms:
        if t.transform_type not in seen:
            seen.add(t.transform_type)
            chosen.append(t)
    ke = request.find(KePayload)[0]
    return IkeMessage(
        initiator_spi=request.initiator_spi,
        responder_spi=bytes(rng.getrandbits(8) for _ in range(8)),
        exchange_type=ExchangeType.IKE_SA_INIT,
        is_response=True,
        is_initiator=False,
        message_id=request.message_id,
        payloads=(
            SaPayload((Proposal(first.number, first.protocol_id, tuple(chosen)),)),
            KePayload(ke.dh_group, public_value or groups.generate_public_value(ke.dh_group, rng)),
            NoncePayload(bytes(rng.getrandbits(8) for _ in range(32))),
        ),
    )


def build_notify_reply(request: IkeMessage, notify_type: int = NotifyType.NO_PROPOSAL_CHOSEN) -> IkeMessage:
    return IkeMessage(
        initiator_spi=request.initiator_spi,
        responder_spi=bytes(8),
        exchange_type=request.exchange_type,
        is_response=True,
        is_initiator=False,
        message_id=request.message_id,
        payloads=(NotifyPayload(int(notify_type)),),
    )
