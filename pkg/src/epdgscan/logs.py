"""Append-only JSONL logs shared by every pipeline stage."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Iterable, Iterator

from .ike.probe import ProbeOutcome
from .resolver import DnsObservation

log = logging.getLogger(__name__)

DNS_LOG = "dns.jsonl"
PROBE_LOG = "probes.jsonl"
PROGRESS_LOG = "progress.jsonl"
VANTAGE_LOG = "vantages.jsonl"

_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _locks_guard:
        return _locks.setdefault(key, threading.Lock())


def append_jsonl(path: str | Path, records: Iterable[dict]):
    """Append records as one write under a per-file lock."""
    path = Path(path)
    lines = "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)
    if not lines:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path), path.open("a", encoding="utf-8") as fh:
        fh.write(lines)


class JsonlReader:
    """Iterate a JSONL file, skipping (and counting) lines that do not parse."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.bad_lines = 0

    def __iter__(self) -> Iterator[dict]:
        if not self.path.exists():
            return
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    self.bad_lines += 1
                    log.warning("%s:%d: unparseable line skipped", self.path, lineno)
                    continue
                if not isinstance(rec, dict):
                    self.bad_lines += 1
                    continue
                yield rec


def read_jsonl(path: str | Path) -> list[dict]:
    return list(JsonlReader(path))


def read_dns_log(path: str | Path) -> list[DnsObservation]:
    out = []
    for rec in JsonlReader(path):
        try:
            out.append(DnsObservation.from_dict(rec))
        except (TypeError, ValueError, KeyError) as e:
            log.warning("skipping malformed DNS record: %s", e)
    return out


def read_probe_log(path: str | Path) -> list[ProbeOutcome]:
    out = []
    for rec in JsonlReader(path):
        try:
            out.append(ProbeOutcome.from_dict(rec))
        except (TypeError, ValueError, KeyError) as e:
            log.warning("skipping malformed probe record: %s", e)
    return out
