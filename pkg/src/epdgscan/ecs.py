"""EDNS Client Subnet option (EDNS0 option code 8) encoding."""

from __future__ import annotations

import ipaddress
import struct

ECS_OPTION_CODE = 8
FAMILY_IPV4 = 1
FAMILY_IPV6 = 2


def encode_ecs(subnet: str, scope_prefix: int = 0) -> bytes:
    """Option payload for ``subnet`` (e.g. ``"104.154.0.0/24"``).

    Host bits are cleared and the address is cut to ceil(prefix/8) bytes,
    as required for the option to be accepted by authoritative servers.
    """
    net = ipaddress.ip_network(subnet, strict=False)
    family = FAMILY_IPV4 if net.version == 4 else FAMILY_IPV6
    nbytes = (net.prefixlen + 7) // 8
    addr = net.network_address.packed[:nbytes]
    return struct.pack("!HBB", family, net.prefixlen, scope_prefix) + addr


def decode_ecs(data: bytes) -> tuple[str, int]:
    """Return ``(cidr, scope_prefix)``; raises ``ValueError`` on bad input."""
    if len(data) < 4:
        raise ValueError("ECS option shorter than 4 bytes")
    family, source, scope = struct.unpack("!HBB", data[:4])
    addr = data[4:]
    if family == FAMILY_IPV4:
        width, cls = 4, ipaddress.IPv4Address
    elif family == FAMILY_IPV6:
        width, cls = 16, ipaddress.IPv6Address
    else:
        raise ValueError(f"unknown ECS address family {family}")
    if source > width * 8:
        raise ValueError(f"source prefix {source} too long for family {family}")
    if len(addr) != (source + 7) // 8:
        raise ValueError("ECS address length does not match source prefix")
    full = cls(addr + b"\x00" * (width - len(addr)))
    net = ipaddress.ip_network(f"{full}/{source}", strict=False)
    if net.network_address != full:
        raise ValueError("ECS address has bits set beyond the source prefix")
    return str(net), scope
