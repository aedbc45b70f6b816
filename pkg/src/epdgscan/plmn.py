"""PLMN identifiers, standardized ePDG domain names and MCC lookup tables."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

EPDG_SUFFIX = "pub.3gppnetwork.org"

_MCC_RE = re.compile(r"^[0-9]{3}$")
_MNC_RE = re.compile(r"^[0-9]{2,3}$")
_FQDN_RE = re.compile(
    r"^(?P<sos>sos\.)?epdg\.epc\.mnc(?P<mnc>[0-9]{2,3})\.mcc(?P<mcc>[0-9]{3})\.pub\.3gppnetwork\.org\.?$"
)


@dataclass(frozen=True, order=True)
class PlmnId:
    """Mobile network identity.

    The MNC keeps its digit count: ``PlmnId("640", "04")`` and
    ``PlmnId("640", "004")`` are different networks as far as DNS is
    concerned.
    """

    mcc: str
    mnc: str

    def __post_init__(self):
        if not isinstance(self.mcc, str) or not _MCC_RE.match(self.mcc):
            raise ValueError(f"MCC must be exactly 3 decimal digits, got {self.mcc!r}")
        if not isinstance(self.mnc, str) or not _MNC_RE.match(self.mnc):
            raise ValueError(f"MNC must be 2 or 3 decimal digits, got {self.mnc!r}")

    def __str__(self):
        return self.mcc + self.mnc


class Variant(str, enum.Enum):
    STANDARD = "standard"
    SOS = "sos"


class Region(enum.Enum):
    """Geographic zone encoded in the first MCC digit."""

    TEST_NETWORKS = "0"
    UNSPECIFIED = "1"
    EUROPE = "2"
    NORTH_AMERICA_CARIBBEAN = "3"
    ASIA_MIDDLE_EAST = "4"
    AUSTRALIA_OCEANIA = "5"
    AFRICA = "6"
    SOUTH_CENTRAL_AMERICA = "7"
    WORLDWIDE = "9"

    @property
    def digit(self) -> str:
        return self.value

    @property
    def label(self) -> str:
        return _REGION_LABELS[self]


_REGION_LABELS = {
    Region.TEST_NETWORKS: "Test networks",
    Region.UNSPECIFIED: "Unspecified",
    Region.EUROPE: "Europe",
    Region.NORTH_AMERICA_CARIBBEAN: "North America & Caribbean",
    Region.ASIA_MIDDLE_EAST: "Asia, Middle East",
    Region.AUSTRALIA_OCEANIA: "Australia, Oceania",
    Region.AFRICA: "Africa",
    Region.SOUTH_CENTRAL_AMERICA: "South & Central America",
    Region.WORLDWIDE: "Worldwide",
}


def epdg_fqdn(plmn: PlmnId, variant: Variant | str = Variant.STANDARD) -> str:
    variant = Variant(variant)
    name = f"epdg.epc.mnc{plmn.mnc}.mcc{plmn.mcc}.{EPDG_SUFFIX}"
    if variant is Variant.SOS:
        return "sos." + name
    return name


def parse_epdg_fqdn(name: str) -> tuple[PlmnId, Variant]:
    """Inverse of :func:`epdg_fqdn`; raises ``ValueError`` for other names."""
    m = _FQDN_RE.match(name.lower())
    if not m:
        raise ValueError(f"not a standardized ePDG domain: {name!r}")
    variant = Variant.SOS if m.group("sos") else Variant.STANDARD
    return PlmnId(m.group("mcc"), m.group("mnc")), variant


def enumerate_all(variant: Variant | str = Variant.STANDARD) -> Iterator[tuple[PlmnId, str]]:
    """Yield every MCC/MNC combination with its domain name.

    Order: MCC ascending, then all two-digit MNCs, then all three-digit MNCs.
    """
    variant = Variant(variant)
    prefix = "sos.epdg.epc.mnc" if variant is Variant.SOS else "epdg.epc.mnc"
    mncs = [f"{i:02d}" for i in range(100)] + [f"{i:03d}" for i in range(1000)]
    for m in range(1000):
        mcc = f"{m:03d}"
        tail = f".mcc{mcc}.{EPDG_SUFFIX}"
        for mnc in mncs:
            yield PlmnId(mcc, mnc), prefix + mnc + tail


def count_all() -> int:
    return 1000 * (100 + 1000)


def mcc_region(mcc: str) -> Region:
    if not _MCC_RE.match(mcc):
        raise ValueError(f"MCC must be exactly 3 decimal digits, got {mcc!r}")
    first = mcc[0]
    if first == "8":
        return Region.UNSPECIFIED
    return Region(first)


class MccCountryTable(Mapping[str, frozenset]):
    """MCC -> set of ISO 3166-1 alpha-2 codes, read from a plain-text file.

    Lines look like ``262,DE`` or ``234,GB,GG,IM,JE``; a bare MCC means the
    code exists but belongs to no country (test networks, worldwide ranges).
    """

    def __init__(self, entries: Mapping[str, frozenset], version: str = "unknown"):
        self._entries = dict(entries)
        self.version = version

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "MccCountryTable":
        entries: dict[str, frozenset] = {}
        version = "unknown"
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if line.startswith("#"):
                m = re.match(r"#\s*version:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            mcc, codes = fields[0], [f.upper() for f in fields[1:] if f]
            if not _MCC_RE.match(mcc):
                raise ValueError(f"{source}:{lineno}: bad MCC {mcc!r}")
            for code in codes:
                if not re.match(r"^[A-Z]{2}$", code):
                    raise ValueError(f"{source}:{lineno}: bad ISO code {code!r}")
            if mcc[0] in "09":
                codes = []
            entries[mcc] = entries.get(mcc, frozenset()) | frozenset(codes)
        return cls(entries, version)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "MccCountryTable":
        if path is None:
            text = resources.files("epdgscan.data").joinpath("mcc_table.csv").read_text("utf-8")
            return cls.parse(text, "mcc_table.csv")
        return cls.parse(Path(path).read_text("utf-8"), str(path))

    def __getitem__(self, mcc: str) -> frozenset:
        return self._entries[mcc]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def countries(self) -> set[str]:
        out: set[str] = set()
        for codes in self._entries.values():
            out |= codes
        return out

    def mccs_for(self, country: str) -> list[str]:
        return sorted(m for m, codes in self._entries.items() if country in codes)


def plmn_countries(mcc: str, table: MccCountryTable) -> frozenset:
    """Countries an MCC is assigned to; unknown MCCs give an empty set."""
    return table.get(mcc, frozenset())


_DEFAULT_TABLE: MccCountryTable | None = None


def default_mcc_table() -> MccCountryTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = MccCountryTable.load()
    return _DEFAULT_TABLE


def load_continents(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        text = resources.files("epdgscan.data").joinpath("continents.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        iso, continent = (f.strip() for f in line.split(","))
        out[iso.upper()] = continent.upper()
    return out


_CONTINENTS: dict[str, str] | None = None


def country_continent(iso: str) -> str | None:
    global _CONTINENTS
    if _CONTINENTS is None:
        _CONTINENTS = load_continents()
    return _CONTINENTS.get(iso.upper())
