import ipaddress

import pytest
from hypothesis import given, settings, strategies as st

from epdgscan.geoloc import (
    AddressKind,
    GeoDatabase,
    GeoDbError,
    build_test_db,
    classify_address,
    embed_ipv4,
    lookup,
    read_geo_csv,
)


@pytest.fixture(scope="module")
def lpm_db(tmp_path_factory, frozen):
    rows = [tuple(r) for r in frozen["lpm_rows"]]
    return GeoDatabase(build_test_db(rows, tmp_path_factory.mktemp("geo") / "lpm.mmdb"))


def test_lookup_matches_brute_force_oracle(lpm_db, frozen):
    for case in frozen["lpm_expectations"]:
        info = lookup(case["ip"], lpm_db)
        assert (info.country, info.registered_country) == (case["country"], case["registered_country"]), case["ip"]


def test_registered_country_only(lpm_db):
    info = lpm_db.lookup("10.1.2.200")
    assert info.country is None and info.registered_country == "NL"


def test_unknown_and_loopback_are_absent(lpm_db):
    for ip in ("127.0.0.1", "11.0.0.1", "::1"):
        info = lpm_db.lookup(ip)
        assert info.country is None and info.registered_country is None
    assert lpm_db.lookup("127.0.0.1").source_db_version == lpm_db.version


def test_row_order_does_not_matter(tmp_path, frozen):
    rows = [tuple(r) for r in reversed(frozen["lpm_rows"])]
    db = GeoDatabase(build_test_db(rows, tmp_path / "rev.mmdb"))
    for case in frozen["lpm_expectations"]:
        assert db.lookup(case["ip"]).country == case["country"]


def test_csv_input(tmp_path):
    db = GeoDatabase(build_test_db("cidr,country,registered\n31.0.0.0/24,IN,\n# note\n2a0b::/48,,DE\n", tmp_path / "c.mmdb"))
    assert db.lookup("31.0.0.9").country == "IN"
    assert db.lookup("2a0b::5").registered_country == "DE"
    with pytest.raises(GeoDbError):
        read_geo_csv("not-a-cidr,DE\n")


def test_corrupt_database_fails_at_load(tmp_path):
    bad = tmp_path / "bad.mmdb"
    bad.write_bytes(b"\x00" * 64)
    with pytest.raises(GeoDbError):
        GeoDatabase(bad)
    with pytest.raises(GeoDbError):
        GeoDatabase(tmp_path / "missing.mmdb")


@pytest.mark.parametrize(
    "ip, kind, embedded",
    [
        ("127.0.0.9", AddressKind.LOOPBACK, None),
        ("127.0.0.1", AddressKind.LOOPBACK, None),
        ("::1", AddressKind.LOOPBACK, None),
        ("64:ff9b::c000:201", AddressKind.NAT64, "192.0.2.1"),
        ("::c000:201", AddressKind.V4_COMPATIBLE_V6, "192.0.2.1"),
        ("203.0.113.7", AddressKind.PRIVATE_OR_RESERVED, None),
        ("10.1.2.3", AddressKind.PRIVATE_OR_RESERVED, None),
        ("fe80::1", AddressKind.PRIVATE_OR_RESERVED, None),
        ("224.0.0.5", AddressKind.PRIVATE_OR_RESERVED, None),
        ("2.2.2.2", AddressKind.PUBLIC_ROUTABLE, None),
        ("2a00:1450::1", AddressKind.PUBLIC_ROUTABLE, None),
    ],
)
def test_classify_address(ip, kind, embedded):
    c = classify_address(ip)
    assert c.kind is kind and c.embedded_ipv4 == embedded


@given(st.one_of(st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address), st.integers(0, 2**128 - 1).map(ipaddress.IPv6Address)))
def test_classification_is_a_partition(addr):
    c = classify_address(str(addr))
    assert c.kind in AddressKind
    assert (c.embedded_ipv4 is not None) == (c.kind in (AddressKind.NAT64, AddressKind.V4_COMPATIBLE_V6))


@given(st.integers(0, 2**32 - 1).map(lambda i: str(ipaddress.IPv4Address(i))))
def test_nat64_round_trip(v4):
    v6 = embed_ipv4(AddressKind.NAT64, v4)
    c = classify_address(v6)
    assert c.kind is AddressKind.NAT64 and embed_ipv4(c.kind, c.embedded_ipv4) == v6


@given(st.integers(2, 2**32 - 1).map(lambda i: str(ipaddress.IPv4Address(i))))
def test_v4_compatible_round_trip(v4):
    v6 = embed_ipv4(AddressKind.V4_COMPATIBLE_V6, v4)
    c = classify_address(v6)
    assert c.kind is AddressKind.V4_COMPATIBLE_V6 and embed_ipv4(c.kind, c.embedded_ipv4) == str(ipaddress.ip_address(v6))


def _brute_force(rows, ip):
    addr, best = ipaddress.ip_address(ip), None
    for cidr, country in rows:
        net = ipaddress.ip_network(cidr)
        if addr.version == net.version and addr in net and (best is None or net.prefixlen > best[0]):
            best = (net.prefixlen, country)
    return best[1] if best else None


@settings(max_examples=15, deadline=None)
@given(st.data())
def test_random_nested_prefixes(tmp_path_factory, data):
    countries = st.sampled_from(["DE", "FR", "IN", "US"])
    rows = {}
    for _ in range(data.draw(st.integers(1, 8))):
        prefix = data.draw(st.integers(8, 28))
        base = data.draw(st.integers(0, 255)) << 24 | data.draw(st.integers(0, 2**24 - 1))
        net = ipaddress.ip_network((base, prefix), strict=False)
        if net.is_global:
            rows[str(net)] = data.draw(countries)
    rows = sorted(rows.items())
    db = GeoDatabase(build_test_db([(c, k, None) for c, k in rows], tmp_path_factory.mktemp("h") / "r.mmdb"))
    for cidr, _ in rows:
        net = ipaddress.ip_network(cidr)
        for ip in (net.network_address, net.broadcast_address, net.network_address + net.num_addresses // 2):
            assert db.lookup(str(ip)).country == _brute_force(rows, str(ip))
