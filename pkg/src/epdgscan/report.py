"""Summary tables and exports computed from the campaign logs.

Everything here is a pure function of the log files, so running the report
twice on unchanged logs writes byte-identical output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import logs
from .classify import CSV_COLUMNS, Classification, CountryStatus, ScopeKind, classify_logs
from .plmn import MccCountryTable, Region, default_mcc_table, mcc_region, parse_epdg_fqdn
from .resolver import Outcome

REGION_ORDER = list(Region)


@dataclass(frozen=True)
class Counts:
    countries: int = 0
    domains: int = 0
    ips: int = 0


@dataclass
class RegionRow:
    region: Region
    discovered: Counts
    responsive: Counts
    blocked: Counts

    def flat(self) -> dict:
        d = {"region": self.region.value, "label": self.region.label}
        for stage in ("discovered", "responsive", "blocked"):
            c = getattr(self, stage)
            d.update({f"{stage}_countries": c.countries, f"{stage}_domains": c.domains, f"{stage}_ips": c.ips})
        return d


@dataclass
class VersionSummary:
    ip_version: int
    responsive_domains: int
    blocked_domains: int

    @property
    def blocked_fraction(self) -> float | None:
        return self.blocked_domains / self.responsive_domains if self.responsive_domains else None


@dataclass
class ReportBundle:
    regions: list
    versions: dict
    country_status: dict
    classification: Classification
    provenance: dict = field(default_factory=dict)
    verdict_csv: str | None = None

    def to_dict(self) -> dict:
        return {
            "regions": [r.flat() for r in self.regions],
            "versions": {
                str(v.ip_version): {
                    "responsive_domains": v.responsive_domains,
                    "blocked_domains": v.blocked_domains,
                    "blocked_fraction": v.blocked_fraction,
                }
                for v in self.versions.values()
            },
            "country_status": {c: s.value for c, s in sorted(self.country_status.items())},
            "discrepancies": [d.to_dict() for d in self.classification.discrepancies],
            "notes": list(self.classification.notes),
            "verdict_csv": self.verdict_csv,
            "provenance": self.provenance,
        }


def _mcc_of(domain: str) -> str | None:
    try:
        return parse_epdg_fqdn(domain)[0].mcc
    except ValueError:
        return None


def render_region_table(dns_observations, classification: Classification, mcc_table: MccCountryTable) -> list[RegionRow]:
    """Per-MCC-region counts of discovered, responsive and blocked ePDGs.

    An address that shows up for several domains of the same MCC counts once.
    """
    discovered: dict[Region, dict] = {r: {"c": set(), "d": set(), "i": set()} for r in REGION_ORDER}
    responsive = {r: {"c": set(), "d": set(), "i": set()} for r in REGION_ORDER}
    blocked = {r: {"c": set(), "d": set(), "i": set()} for r in REGION_ORDER}

    def add(bucket, domain, ips=()):
        mcc = _mcc_of(domain)
        if mcc is None:
            return
        b = bucket[mcc_region(mcc)]
        b["d"].add(domain)
        b["c"] |= mcc_table.get(mcc, frozenset())
        b["i"] |= {(mcc, ip) for ip in ips}

    for o in dns_observations:
        if o.outcome is Outcome.ANSWERS:
            add(discovered, o.domain, o.answers)
    for (domain, _), v in classification.verdicts.items():
        if v.scope.kind is not ScopeKind.UNRESPONSIVE:
            add(responsive, domain, v.per_ip_detail)
        if v.scope.blocking:
            add(blocked, domain, v.per_ip_detail)

    def counts(b):
        return Counts(len(b["c"]), len(b["d"]), len(b["i"]))

    return [RegionRow(r, counts(discovered[r]), counts(responsive[r]), counts(blocked[r])) for r in REGION_ORDER]


def version_summary(classification: Classification) -> dict[int, VersionSummary]:
    out = {}
    for version in (4, 6):
        vs = [v for (d, ver), v in classification.verdicts.items() if ver == version]
        resp = [v for v in vs if v.scope.kind is not ScopeKind.UNRESPONSIVE]
        out[version] = VersionSummary(version, len(resp), sum(v.scope.blocking for v in resp))
    return out


def _digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        h.update(p.name.encode())
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()


def provenance(out_dir: Path, mcc_table: MccCountryTable, config_path: str | Path | None = None) -> dict:
    vantage_recs = logs.read_jsonl(out_dir / logs.VANTAGE_LOG)
    dns_recs = logs.read_jsonl(out_dir / logs.DNS_LOG)
    probe_recs = logs.read_jsonl(out_dir / logs.PROBE_LOG)
    stamps = sorted(r["timestamp"] for r in dns_recs + probe_recs if r.get("timestamp"))
    return {
        "campaign_id": _digest([out_dir / logs.VANTAGE_LOG, out_dir / logs.PROGRESS_LOG])[:16],
        "log_digest": _digest([out_dir / logs.DNS_LOG, out_dir / logs.PROBE_LOG]),
        "config_hash": _digest([config_path]) if config_path else None,
        "geodb_versions": sorted({r["geodb_version"] for r in vantage_recs if r.get("geodb_version")}),
        "mcc_table_version": mcc_table.version,
        "first_record": stamps[0] if stamps else None,
        "last_record": stamps[-1] if stamps else None,
        "records": {"dns": len(dns_recs), "probes": len(probe_recs), "vantage_locations": len(vantage_recs)},
    }


def build_report(
    out_dir: str | Path,
    mcc_table: MccCountryTable | None = None,
    ratio=0.10,
    config_path: str | Path | None = None,
) -> ReportBundle:
    out_dir = Path(out_dir)
    table = mcc_table or default_mcc_table()
    dns_obs = logs.read_dns_log(out_dir / logs.DNS_LOG)
    probes = logs.read_probe_log(out_dir / logs.PROBE_LOG)
    cls = classify_logs(dns_obs, probes, table, ratio)
    return ReportBundle(
        regions=render_region_table(dns_obs, cls, table),
        versions=version_summary(cls),
        country_status=cls.status,
        classification=cls,
        provenance=provenance(out_dir, table, config_path),
    )


def export_country_status(status: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iso2", "status"])
    for country in sorted(status):
        value = status[country]
        w.writerow([country, value.value if isinstance(value, CountryStatus) else value])
    return buf.getvalue()


def verdict_csv(classification: Classification) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(classification.rows())
    return buf.getvalue()


def region_csv(rows: list[RegionRow]) -> str:
    buf = io.StringIO()
    flat = [r.flat() for r in rows]
    w = csv.DictWriter(buf, fieldnames=list(flat[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(flat)
    return buf.getvalue()


def render_text(bundle: ReportBundle) -> str:
    lines = [f"{'region':<28} {'discovered c/d/ip':>18} {'responsive c/d/ip':>18} {'blocked c/d/ip':>16}"]
    for r in bundle.regions:
        cells = [f"{c.countries}/{c.domains}/{c.ips}" for c in (r.discovered, r.responsive, r.blocked)]
        lines.append(f"{r.region.value + ' ' + r.region.label:<28} {cells[0]:>18} {cells[1]:>18} {cells[2]:>16}")
    for v in bundle.versions.values():
        frac = "n/a" if v.blocked_fraction is None else f"{100 * v.blocked_fraction:.1f}%"
        lines.append(f"IPv{v.ip_version}: {v.blocked_domains} of {v.responsive_domains} responsive domains geoblocked ({frac})")
    return "\n".join(lines) + "\n"


def write_report(bundle: ReportBundle, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "verdicts_csv": out_dir / "verdicts.csv",
        "regions_csv": out_dir / "regions.csv",
        "country_status_csv": out_dir / "country_status.csv",
        "report_json": out_dir / "report.json",
    }
    bundle.verdict_csv = paths["verdicts_csv"].name
    paths["verdicts_csv"].write_text(verdict_csv(bundle.classification), "utf-8")
    paths["regions_csv"].write_text(region_csv(bundle.regions), "utf-8")
    paths["country_status_csv"].write_text(export_country_status(bundle.country_status), "utf-8")
    paths["report_json"].write_text(json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8")
    return paths
