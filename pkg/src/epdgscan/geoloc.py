"""IP-to-country lookup and special-purpose address detection.

Lookups read MaxMind-format (``.mmdb``) databases, e.g. GeoLite2-Country.
``build_test_db`` turns a small ``cidr,country[,registered_country]`` CSV into
such a database for the simulator and for tests.
"""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
from dataclasses import dataclass
from pathlib import Path

import maxminddb

NAT64_PREFIX = ipaddress.ip_network("64:ff9b::/96")
V4_COMPAT_PREFIX = ipaddress.ip_network("::/96")


class GeoDbError(Exception):
    pass


@dataclass(frozen=True)
class GeoInfo:
    country: str | None
    registered_country: str | None
    source_db_version: str


class GeoDatabase:
    def __init__(self, path: str | Path):
        self.path = str(path)
        try:
            self._reader = maxminddb.open_database(self.path)
            meta = self._reader.metadata()
        except (OSError, ValueError, maxminddb.InvalidDatabaseError) as e:
            raise GeoDbError(f"cannot load geolocation database {self.path}: {e}") from e
        self.version = f"{meta.database_type}@{meta.build_epoch}"

    def lookup(self, ip: str) -> GeoInfo:
        try:
            rec = self._reader.get(ip)
        except maxminddb.InvalidDatabaseError as e:
            raise GeoDbError(f"corrupt database {self.path}: {e}") from e
        except ValueError:
            # IPv6 address against an IPv4-only database
            rec = None
        rec = rec or {}
        return GeoInfo(_iso(rec.get("country")), _iso(rec.get("registered_country")), self.version)

    def close(self):
        self._reader.close()


def _iso(section) -> str | None:
    if isinstance(section, dict):
        code = section.get("iso_code")
        return code.upper() if code else None
    return None


def lookup(ip: str, db: GeoDatabase) -> GeoInfo:
    return db.lookup(ip)


class AddressKind(str, enum.Enum):
    PUBLIC_ROUTABLE = "public_routable"
    LOOPBACK = "loopback"
    PRIVATE_OR_RESERVED = "private_or_reserved"
    NAT64 = "nat64"
    V4_COMPATIBLE_V6 = "v4_compatible_v6"


@dataclass(frozen=True)
class AddressClass:
    kind: AddressKind
    embedded_ipv4: str | None = None


def classify_address(ip: str) -> AddressClass:
    addr = ipaddress.ip_address(ip)
    if addr.is_loopback:
        return AddressClass(AddressKind.LOOPBACK)
    if addr.version == 6:
        if addr in NAT64_PREFIX:
            return AddressClass(AddressKind.NAT64, str(ipaddress.IPv4Address(int(addr) & 0xFFFFFFFF)))
        if addr in V4_COMPAT_PREFIX and not addr.is_unspecified:
            # ::a.b.c.d (deprecated); ::1 was handled as loopback above
            return AddressClass(AddressKind.V4_COMPATIBLE_V6, str(ipaddress.IPv4Address(int(addr))))
    if not addr.is_global or addr.is_multicast:
        return AddressClass(AddressKind.PRIVATE_OR_RESERVED)
    return AddressClass(AddressKind.PUBLIC_ROUTABLE)


def embed_ipv4(kind: AddressKind, ipv4: str) -> str:
    """Inverse of the embedded-address extraction in :func:`classify_address`."""
    v4 = int(ipaddress.IPv4Address(ipv4))
    if kind is AddressKind.NAT64:
        return str(ipaddress.IPv6Address(int(NAT64_PREFIX.network_address) | v4))
    if kind is AddressKind.V4_COMPATIBLE_V6:
        return str(ipaddress.IPv6Address(v4))
    raise ValueError(f"{kind.value} addresses carry no embedded IPv4")


def read_geo_csv(text: str) -> list[tuple[str, str | None, str | None]]:
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or row[0].strip().startswith("#") or row[0].strip().lower() == "cidr":
            continue
        cidr = row[0].strip()
        try:
            ipaddress.ip_network(cidr)
        except ValueError as e:
            raise GeoDbError(f"line {lineno}: {e}") from None
        country = row[1].strip().upper() if len(row) > 1 and row[1].strip() else None
        registered = row[2].strip().upper() if len(row) > 2 and row[2].strip() else None
        rows.append((cidr, country, registered))
    return rows


def build_test_db(rows, path: str | Path, database_type: str = "epdgscan-test-country") -> Path:
    """Write an MMDB file from ``(cidr, country, registered_country)`` rows.

    ``rows`` may also be CSV text. Nested networks are allowed; the most
    specific one wins at lookup time.
    """
    from mmdb_writer import MMDBWriter
    from netaddr import IPSet

    if isinstance(rows, str):
        rows = read_geo_csv(rows)
    writer = MMDBWriter(
        ip_version=6,
        database_type=database_type,
        languages=["en"],
        description={"en": "test geolocation database"},
        ipv4_compatible=True,
    )
    # the writer lets later inserts overwrite earlier ones, so go from
    # shortest to longest prefix
    ordered = sorted(rows, key=lambda r: ipaddress.ip_network(r[0]).prefixlen + (96 if ":" not in r[0] else 0))
    for cidr, country, registered in ordered:
        record = {}
        if country:
            record["country"] = {"iso_code": country}
        if registered:
            record["registered_country"] = {"iso_code": registered}
        if record:
            writer.insert_network(IPSet([cidr]), record)
    path = Path(path)
    writer.to_db_file(str(path))
    return path
