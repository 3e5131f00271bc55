"""Parse award, repository and GRI-derived exports into canonical records.

Three input shapes are handled:

* yearly NSF award files, either XML (one ``<Award>`` element per award) or
  delimited text;
* a PAR export, where each repeating element (author, award) of a record
  sits on its own row and rows sharing an ``osti_id`` form one record;
* a CHORUS All Report converted to delimited text, with award numbers
  packed into a semicolon-separated grant field.

Dirty rows are counted and skipped rather than aborting the parse. Every
parser returns a :class:`RecordSet`, a plain list carrying a
:class:`ParseStats` so callers can audit what was dropped.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping, Union

from .errors import SchemaMismatch, UnreadableInput
from .identifiers import extract_nsf_award_ids, normalize_doi, validate_award_id

ByteSource = Union[bytes, str, os.PathLike, IO[bytes]]


class Instrument(str, Enum):
    STANDARD = "Standard"
    CONTINUING = "Continuing"
    FELLOWSHIP = "Fellowship"
    OTHER = "Other"


KEPT_INSTRUMENTS = frozenset({Instrument.STANDARD, Instrument.CONTINUING, Instrument.FELLOWSHIP})


class Source(str, Enum):
    PAR = "Par"
    CHORUS = "Chorus"


@dataclass(frozen=True)
class AwardRecord:
    award_id: str
    effective_date: date
    effective_year: int
    instrument: Instrument
    title: str = ""
    directorate: str | None = None

    def __post_init__(self):
        if not validate_award_id(self.award_id):
            raise ValueError(f"award_id must be seven digits: {self.award_id!r}")
        if self.effective_year != self.effective_date.year:
            raise ValueError("effective_year does not match effective_date")


@dataclass(frozen=True)
class ParRecord:
    osti_id: str
    doi_raw: str
    doi: str | None
    award_ids: frozenset[str]
    publication_year: int | None
    entry_date: date | None = None
    authors: tuple[str, ...] = ()

    @property
    def reference_year(self) -> int | None:
        if self.publication_year is not None:
            return self.publication_year
        return self.entry_date.year if self.entry_date else None


@dataclass(frozen=True)
class ChorusRecord:
    doi: str
    grant_field_raw: str
    extracted_award_ids: frozenset[str]
    online_date: date | None
    publication_date: date | None
    publication_year: int

    @property
    def award_ids(self) -> frozenset[str]:
        return self.extracted_award_ids

    @property
    def reference_year(self) -> int:
        return self.publication_year


@dataclass(frozen=True, order=True)
class DoiAwardPair:
    doi: str
    award_id: str
    source: Source
    # Joined from the source record so analytics can date each reference.
    publication_year: int | None = field(default=None, compare=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.award_id, self.doi)


@dataclass
class ParseStats:
    rows_read: int = 0
    rows_used: int = 0
    skipped: Counter = field(default_factory=Counter)
    notes: Counter = field(default_factory=Counter)
    flagged: list[str] = field(default_factory=list)

    @property
    def rows_skipped(self) -> int:
        return sum(self.skipped.values())

    def skip(self, reason: str) -> None:
        self.skipped[reason] += 1

    def as_dict(self) -> dict[str, Any]:
        return {
            "rows_read": self.rows_read,
            "rows_used": self.rows_used,
            "rows_skipped": self.rows_skipped,
            "skipped": dict(sorted(self.skipped.items())),
            "notes": dict(sorted(self.notes.items())),
            "flagged": list(self.flagged),
        }


class RecordSet(list):
    """A list of parsed records plus the counters gathered while parsing."""

    def __init__(self, items: Iterable = (), stats: Any = None):
        super().__init__(items)
        self.stats = stats if stats is not None else ParseStats()


# --------------------------------------------------------------------------
# header aliases

DEFAULT_HEADER_ALIASES: dict[str, dict[str, list[str]]] = {
    "awards": {
        "award_id": ["Award - AwardID", "AwardID", "Award_ID", "AwardNumber", "award_id"],
        "effective_date": ["Award - AwardEffectiveDate", "AwardEffectiveDate", "StartDate", "effective_date"],
        "instrument": ["Award - AwardInstrument - Value", "AwardInstrument", "instrument"],
        "title": ["Award - AwardTitle", "AwardTitle", "Title", "title"],
        "directorate": [
            "Award - Organization - Directorate - LongName",
            "Directorate",
            "NSFDirectorate",
            "directorate",
        ],
    },
    "par": {
        "osti_id": ["result - osti_id", "osti_id"],
        "doi": ["result - doi", "DOI", "doi"],
        "award_id": ["Award_ID", "result - award_id", "award_id"],
        "author": ["result - author - author_lname", "author_lname", "author"],
        "publication_year": ["result - publication_date", "result - publication_year", "publication_year"],
        "entry_date": ["result - entry_date", "entry_date"],
    },
    "chorus": {
        "doi": ["DOI", "doi", "Article DOI"],
        "grant_id": ["GRANT ID", "Grant ID", "grant_id"],
        "online_date": ["Online Publication Date", "Online Date", "online_date"],
        "publication_date": ["Publication Date", "Print Publication Date", "publication_date"],
    },
}

REQUIRED_COLUMNS = {
    "awards": ("award_id", "effective_date", "instrument"),
    "par": ("osti_id", "doi", "award_id", "author"),
    "chorus": ("doi", "grant_id", "online_date", "publication_date"),
}


def load_header_aliases(path: str | os.PathLike | None = None) -> dict[str, dict[str, list[str]]]:
    """Defaults overlaid with a user-edited JSON alias table.

    User aliases for a field are tried before the defaults.
    """
    table = {kind: {k: list(v) for k, v in fields.items()} for kind, fields in DEFAULT_HEADER_ALIASES.items()}
    if path is None:
        return table
    with open(path, encoding="utf-8") as fh:
        user = json.load(fh)
    for kind, fields in user.items():
        bucket = table.setdefault(kind, {})
        for name, aliases in fields.items():
            if isinstance(aliases, str):
                aliases = [aliases]
            bucket[name] = list(aliases) + [a for a in bucket.get(name, []) if a not in aliases]
    return table


def _norm_header(name: str) -> str:
    return re.sub(r"\s+", " ", name.replace("﻿", "")).strip().lower()


def _resolve_columns(header: list[str], kind: str, aliases: Mapping[str, Mapping[str, list[str]]]) -> dict[str, int]:
    index = {}
    for i, name in enumerate(header):
        index.setdefault(_norm_header(name), i)
    resolved = {}
    for canonical, names in aliases[kind].items():
        for alias in names:
            if _norm_header(alias) in index:
                resolved[canonical] = index[_norm_header(alias)]
                break
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in resolved]
    if missing:
        raise SchemaMismatch(f"{kind} input lacks required column(s): {', '.join(missing)}")
    return resolved


# --------------------------------------------------------------------------
# low-level helpers

_ISO_DATE = re.compile(r"(\d{4})-(\d{1,2})-(\d{1,2})(?:[T ][0-9:.+\-Z]*)?")
_US_DATE = re.compile(r"(\d{1,2})/(\d{1,2})/(\d{4})")
_YEAR = re.compile(r"(\d{4})")


def parse_date(text: str | None) -> date | None:
    """ISO ``YYYY-MM-DD`` or US ``MM/DD/YYYY``; anything else gives None."""
    if not text:
        return None
    text = text.strip()
    try:
        if m := _ISO_DATE.fullmatch(text):
            return date(int(m[1]), int(m[2]), int(m[3]))
        if m := _US_DATE.fullmatch(text):
            return date(int(m[3]), int(m[1]), int(m[2]))
    except ValueError:
        return None
    return None


def parse_year(text: str | None) -> int | None:
    if not text:
        return None
    text = text.strip()
    if _YEAR.fullmatch(text):
        return int(text)
    d = parse_date(text)
    return d.year if d else None


def classify_instrument(text: str | None) -> Instrument:
    t = (text or "").lower()
    if "continuing" in t:
        return Instrument.CONTINUING
    if "standard" in t:
        return Instrument.STANDARD
    if "fellowship" in t:
        return Instrument.FELLOWSHIP
    return Instrument.OTHER


def _open_binary(source: ByteSource) -> IO[bytes]:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, "rb")
        except OSError as exc:
            raise UnreadableInput(str(exc)) from exc
    return source


def _iter_csv(source: ByteSource) -> Iterator[list[str]]:
    stream = _open_binary(source)
    text = io.TextIOWrapper(stream, encoding="utf-8-sig", newline="")
    try:
        yield from csv.reader(text)
    except (UnicodeDecodeError, csv.Error, OSError) as exc:
        raise UnreadableInput(f"cannot read delimited input: {exc}") from exc
    finally:
        text.detach()
        if isinstance(source, (str, os.PathLike)):
            stream.close()


def _cell(row: list[str], cols: dict[str, int], name: str) -> str:
    i = cols.get(name)
    if i is None or i >= len(row):
        return ""
    return row[i].strip()


def _numeric_key(value: str) -> tuple:
    return (0, int(value), value) if value.isdigit() else (1, 0, value)


# --------------------------------------------------------------------------
# awards


def _award_from_fields(fields: Mapping[str, str], stats: ParseStats) -> AwardRecord | None:
    award_id = fields.get("award_id", "").strip()
    if not validate_award_id(award_id):
        stats.skip("bad_award_id")
        return None
    effective = parse_date(fields.get("effective_date"))
    if effective is None:
        stats.skip("bad_date")
        return None
    instrument = classify_instrument(fields.get("instrument"))
    if instrument not in KEPT_INSTRUMENTS:
        stats.skip("excluded_instrument")
        return None
    return AwardRecord(
        award_id=award_id,
        effective_date=effective,
        effective_year=effective.year,
        instrument=instrument,
        title=fields.get("title", "").strip(),
        directorate=(fields.get("directorate") or "").strip() or None,
    )


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child_text(elem: ET.Element, *path: str) -> str | None:
    node = elem
    for name in path:
        node = next((c for c in node if _local(c.tag) == name), None)
        if node is None:
            return None
    return (node.text or "").strip()


def _iter_award_xml(source: ByteSource, stats: ParseStats) -> Iterator[dict[str, str]]:
    stream = _open_binary(source)
    parser = ET.XMLPullParser(events=("end",))
    seen_content = False
    try:
        while True:
            chunk = stream.read(1 << 16)
            if chunk:
                seen_content = seen_content or bool(chunk.strip())
                parser.feed(chunk)
            elif seen_content:
                parser.close()
            for _event, elem in parser.read_events():
                if _local(elem.tag) != "Award":
                    continue
                fields = {
                    "award_id": _child_text(elem, "AwardID"),
                    "effective_date": _child_text(elem, "AwardEffectiveDate"),
                    "instrument": _child_text(elem, "AwardInstrument", "Value"),
                    "title": _child_text(elem, "AwardTitle") or "",
                    "directorate": _child_text(elem, "Organization", "Directorate", "LongName") or "",
                }
                missing = [k for k in REQUIRED_COLUMNS["awards"] if fields[k] is None]
                if missing:
                    raise SchemaMismatch(f"<Award> element lacks: {', '.join(missing)}")
                elem.clear()
                yield fields
            if not chunk:
                break
    except ET.ParseError as exc:
        raise UnreadableInput(f"malformed award XML: {exc}") from exc
    except OSError as exc:
        raise UnreadableInput(str(exc)) from exc
    finally:
        if isinstance(source, (str, os.PathLike)):
            stream.close()


class AwardFormat(str, Enum):
    XML_YEARLY = "XmlYearly"
    CSV_YEARLY = "CsvYearly"


def parse_nsf_awards(
    source: ByteSource,
    format: AwardFormat | str = AwardFormat.CSV_YEARLY,
    aliases: Mapping | None = None,
) -> RecordSet:
    """Parse yearly award downloads, keeping standard, continuing and fellowship awards.

    Other instruments are counted under ``skipped["excluded_instrument"]``.
    """
    fmt = AwardFormat(format)
    aliases = aliases or DEFAULT_HEADER_ALIASES
    stats = ParseStats()
    records: dict[str, AwardRecord] = {}

    if fmt is AwardFormat.XML_YEARLY:
        rows: Iterable[Mapping[str, str]] = _iter_award_xml(source, stats)
    else:
        rows = _iter_award_csv(source, aliases)

    for fields in rows:
        stats.rows_read += 1
        record = _award_from_fields(fields, stats)
        if record is None:
            continue
        if record.award_id in records:
            stats.notes["duplicate_award_id"] += 1
        else:
            records[record.award_id] = record
        stats.rows_used += 1

    return RecordSet(sorted(records.values(), key=lambda r: r.award_id), stats)


def _iter_award_csv(source: ByteSource, aliases: Mapping) -> Iterator[dict[str, str]]:
    rows = _iter_csv(source)
    header = next(rows, None)
    if header is None:
        return
    cols = _resolve_columns(header, "awards", aliases)
    for row in rows:
        if not any(cell.strip() for cell in row):
            continue
        yield {name: _cell(row, cols, name) for name in cols}


# --------------------------------------------------------------------------
# PAR export


def parse_par_export(source: ByteSource, aliases: Mapping | None = None) -> RecordSet:
    """Collapse a row-per-repeating-element PAR export into one record per osti_id.

    Authors and award IDs are unioned across a record's rows. When rows of
    one record disagree on the raw DOI, the record is flagged and the value
    that repairs (lexicographically first among equals) is kept, so the
    result does not depend on row order.
    """
    aliases = aliases or DEFAULT_HEADER_ALIASES
    stats = ParseStats()
    groups: dict[str, dict[str, Any]] = {}

    rows = _iter_csv(source)
    header = next(rows, None)
    if header is None:
        return RecordSet([], stats)
    cols = _resolve_columns(header, "par", aliases)

    for row in rows:
        if not any(cell.strip() for cell in row):
            continue
        stats.rows_read += 1
        osti_id = _cell(row, cols, "osti_id")
        if not osti_id:
            stats.skip("missing_osti_id")
            continue
        stats.rows_used += 1
        g = groups.setdefault(
            osti_id, {"dois": set(), "awards": set(), "authors": set(), "years": set(), "entries": set()}
        )
        if doi_raw := _cell(row, cols, "doi"):
            g["dois"].add(doi_raw)
        if award := _cell(row, cols, "award_id"):
            for part in award.split(";"):
                part = part.strip()
                if validate_award_id(part):
                    g["awards"].add(part)
                elif part:
                    stats.notes["invalid_award_id"] += 1
        if author := _cell(row, cols, "author"):
            g["authors"].add(author)
        if (year := parse_year(_cell(row, cols, "publication_year"))) is not None:
            g["years"].add(year)
        if (entry := parse_date(_cell(row, cols, "entry_date"))) is not None:
            g["entries"].add(entry)

    records = []
    for osti_id in sorted(groups, key=_numeric_key):
        g = groups[osti_id]
        outcomes = {raw: normalize_doi(raw) for raw in g["dois"]}
        if len(outcomes) > 1:
            stats.notes["conflicting_doi"] += 1
            stats.flagged.append(osti_id)
        doi_raw = min(outcomes, key=lambda raw: (not outcomes[raw].ok, raw)) if outcomes else ""
        repaired = outcomes[doi_raw].result if doi_raw else None
        if doi_raw and repaired is None:
            stats.notes["unrepairable_doi"] += 1
        elif repaired is not None and repaired != doi_raw:
            stats.notes["repaired_doi"] += 1
        records.append(
            ParRecord(
                osti_id=osti_id,
                doi_raw=doi_raw,
                doi=repaired,
                award_ids=frozenset(g["awards"]),
                publication_year=min(g["years"]) if g["years"] else None,
                entry_date=min(g["entries"]) if g["entries"] else None,
                authors=tuple(sorted(g["authors"])),
            )
        )
    return RecordSet(records, stats)


# --------------------------------------------------------------------------
# CHORUS All Report


def _merge_grant_fields(*fields: str) -> str:
    seen: dict[str, None] = {}
    for value in fields:
        for segment in value.split(";"):
            segment = segment.strip()
            if segment:
                seen.setdefault(segment, None)
    return "; ".join(seen)


def parse_chorus_all_report(source: ByteSource, aliases: Mapping | None = None) -> RecordSet:
    """Parse a delimited All Report, one record per normalized DOI.

    Rows without a usable date are skipped under ``no_usable_date``; rows whose
    DOI cannot be repaired are skipped under ``bad_doi``.
    """
    aliases = aliases or DEFAULT_HEADER_ALIASES
    stats = ParseStats()
    merged: dict[str, dict[str, Any]] = {}

    rows = _iter_csv(source)
    header = next(rows, None)
    if header is None:
        return RecordSet([], stats)
    cols = _resolve_columns(header, "chorus", aliases)

    for row in rows:
        if not any(cell.strip() for cell in row):
            continue
        stats.rows_read += 1
        outcome = normalize_doi(_cell(row, cols, "doi"))
        if not outcome.ok:
            stats.skip("bad_doi")
            continue
        online = parse_date(_cell(row, cols, "online_date"))
        published = parse_date(_cell(row, cols, "publication_date"))
        if online is None and published is None:
            stats.skip("no_usable_date")
            continue
        stats.rows_used += 1
        grant = _cell(row, cols, "grant_id")
        entry = merged.get(outcome.result)
        if entry is None:
            merged[outcome.result] = {"grant": _merge_grant_fields(grant), "online": online, "published": published}
            continue
        stats.notes["merged_duplicate_doi"] += 1
        entry["grant"] = _merge_grant_fields(entry["grant"], grant)
        entry["online"] = min(filter(None, (entry["online"], online)), default=None)
        entry["published"] = min(filter(None, (entry["published"], published)), default=None)

    records = []
    for doi in sorted(merged):
        e = merged[doi]
        earliest = min(d for d in (e["online"], e["published"]) if d is not None)
        records.append(
            ChorusRecord(
                doi=doi,
                grant_field_raw=e["grant"],
                extracted_award_ids=frozenset(extract_nsf_award_ids(e["grant"])),
                online_date=e["online"],
                publication_date=e["published"],
                publication_year=earliest.year,
            )
        )
    return RecordSet(records, stats)


# --------------------------------------------------------------------------
# pairs


def explode_pairs(records: Iterable[ParRecord | ChorusRecord], source: Source | str) -> RecordSet:
    """One (doi, award) pair per award reference, deduplicated and sorted.

    Records with no normalized DOI or no award IDs contribute nothing; the
    counts of such records are in ``stats``.
    """
    source = Source(source)
    stats: Counter = Counter()
    pairs: dict[tuple[str, str], DoiAwardPair] = {}
    for record in records:
        stats["records"] += 1
        if not record.doi:
            stats["dropped_no_doi"] += 1
            continue
        if not record.award_ids:
            stats["dropped_no_award_ids"] += 1
            continue
        year = record.reference_year
        for award_id in record.award_ids:
            key = (record.doi, award_id)
            previous = pairs.get(key)
            if previous is not None:
                if year is not None and (previous.publication_year is None or year < previous.publication_year):
                    pairs[key] = dataclasses.replace(previous, publication_year=year)
                continue
            pairs[key] = DoiAwardPair(record.doi, award_id, source, year)
    stats["pairs"] = len(pairs)
    return RecordSet(sorted(pairs.values()), stats)


# --------------------------------------------------------------------------
# JSON Lines


def _encode(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, (frozenset, set)):
        return sorted(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def record_to_dict(record: Any) -> dict[str, Any]:
    return {f.name: _encode(getattr(record, f.name)) for f in dataclasses.fields(record)}


def _opt_date(value: str | None) -> date | None:
    return date.fromisoformat(value) if value else None


_DECODERS = {
    "AwardRecord": lambda d: AwardRecord(
        award_id=d["award_id"],
        effective_date=date.fromisoformat(d["effective_date"]),
        effective_year=d["effective_year"],
        instrument=Instrument(d["instrument"]),
        title=d.get("title", ""),
        directorate=d.get("directorate"),
    ),
    "ParRecord": lambda d: ParRecord(
        osti_id=d["osti_id"],
        doi_raw=d["doi_raw"],
        doi=d.get("doi"),
        award_ids=frozenset(d.get("award_ids", ())),
        publication_year=d.get("publication_year"),
        entry_date=_opt_date(d.get("entry_date")),
        authors=tuple(d.get("authors", ())),
    ),
    "ChorusRecord": lambda d: ChorusRecord(
        doi=d["doi"],
        grant_field_raw=d["grant_field_raw"],
        extracted_award_ids=frozenset(d.get("extracted_award_ids", ())),
        online_date=_opt_date(d.get("online_date")),
        publication_date=_opt_date(d.get("publication_date")),
        publication_year=d["publication_year"],
    ),
    "DoiAwardPair": lambda d: DoiAwardPair(
        doi=d["doi"], award_id=d["award_id"], source=Source(d["source"]), publication_year=d.get("publication_year")
    ),
}


def write_jsonl(records: Iterable[Any], path: str | os.PathLike) -> int:
    """Write dataclass records one JSON object per line; returns the count."""
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False, sort_keys=False))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | os.PathLike, kind: type | str) -> list[Any]:
    decode = _DECODERS[kind if isinstance(kind, str) else kind.__name__]
    with open(path, encoding="utf-8") as fh:
        return [decode(json.loads(line)) for line in fh if line.strip()]
