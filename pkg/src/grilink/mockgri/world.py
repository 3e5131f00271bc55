"""Fixture worlds and the request router that serves them.

A :class:`FixtureWorld` describes everything the five remote surfaces know:
the article index (Crossref-shaped), the link index (ScholeXplorer-shaped),
the dataset index (DataCite-shaped), the researcher index (ORCID search
shaped) and a PAR-like HTML search. :class:`MockGri` turns a world into
deterministic responses; it is used both by the HTTP server and, without
sockets, by :class:`WorldTransport`.

All services share one host and are distinguished by the first path
segment (``/crossref``, ``/scholix``, ``/datacite``, ``/orcid``, ``/par``);
below that segment the paths are the ones in the production endpoint
templates.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import html
import io
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping
from urllib.parse import parse_qs, unquote, urlsplit

from ..errors import FixtureInvalid
from ..identifiers import normalize_doi, validate_award_id
from ..transport import Response, ServiceConfig, DEFAULT_SERVICES

WORLDS_DIR = Path(__file__).with_name("worlds")

DEFAULT_BANDS = {"not_linked": [225_500, 226_000], "linked": [269_500, 274_500]}
SERVICE_NAMES = ("crossref", "scholix", "datacite", "orcid", "par")


@dataclass
class FixtureWorld:
    funder: dict[str, str] = field(
        default_factory=lambda: {"identifier": "10.13039/100000001", "name": "National Science Foundation"}
    )
    awards: list[dict[str, Any]] = field(default_factory=list)
    articles: list[dict[str, Any]] = field(default_factory=list)
    dataset_links: list[dict[str, str]] = field(default_factory=list)
    datasets: dict[str, dict[str, Any]] = field(default_factory=dict)
    author_links: list[dict[str, str]] = field(default_factory=list)
    par_records: list[dict[str, Any]] = field(default_factory=list)
    par_linkage: list[list[str]] = field(default_factory=list)
    page_lengths: dict[str, int] = field(default_factory=dict)
    bands: dict[str, list[int]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_BANDS.items()})
    fail_every: int = 0
    ground_truth: dict[str, Any] = field(default_factory=dict)
    description: str = ""

    # -- persistence ------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FixtureWorld":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise FixtureInvalid(f"unknown world keys: {sorted(unknown)}")
        world = cls(**data)
        world.validate()
        return world

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FixtureWorld":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise FixtureInvalid(f"cannot load world {path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def builtin(cls, name: str) -> "FixtureWorld":
        return cls.load(WORLDS_DIR / f"{name}.json")

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def save(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    def validate(self) -> None:
        nl, ln = self.bands.get("not_linked"), self.bands.get("linked")
        if not (nl and ln and nl[0] <= nl[1] < ln[0] <= ln[1]):
            raise FixtureInvalid(f"bands must be ordered and disjoint: {self.bands}")
        for a in self.awards:
            if not validate_award_id(str(a.get("award_id", ""))):
                raise FixtureInvalid(f"bad award id in world: {a.get('award_id')!r}")
        for art in self.articles:
            if not normalize_doi(art.get("doi")).ok:
                raise FixtureInvalid(f"article DOI does not normalize: {art.get('doi')!r}")
        for pair in self.par_linkage:
            if len(pair) != 2 or not validate_award_id(pair[0]):
                raise FixtureInvalid(f"bad linkage pair {pair!r}")
        for key, length in self.page_lengths.items():
            if "|" not in key or int(length) < 0:
                raise FixtureInvalid(f"bad page length entry {key!r}")

    # -- derived views ----------------------------------------------------

    def linked_pairs(self) -> set[tuple[str, str]]:
        pairs = {(a, normalize_doi(d).result or d) for a, d in self.par_linkage}
        for rec in self.par_records:
            outcome = normalize_doi(rec.get("doi_raw"))
            if not outcome.ok:
                continue
            for award in set(rec.get("award_ids", ())) | set(rec.get("connected_awards", ())):
                pairs.add((award, outcome.result))
        return pairs

    def write_inputs(self, directory: str | os.PathLike, *, award_format: str = "xml") -> dict[str, Path]:
        """Write the award download and the PAR export this world implies."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        if award_format == "xml":
            paths["awards"] = directory / "awards.xml"
            paths["awards"].write_text(awards_xml(self.awards), encoding="utf-8")
        else:
            paths["awards"] = directory / "awards.csv"
            paths["awards"].write_text(awards_csv(self.awards), encoding="utf-8")
        paths["par"] = directory / "par_export.csv"
        paths["par"].write_text(par_export_csv(self.par_records), encoding="utf-8")
        return paths


def _us_date(iso: str) -> str:
    y, m, d = iso.split("-")
    return f"{m}/{d}/{y}"


def awards_xml(awards: Iterable[Mapping[str, Any]]) -> str:
    out = ['<?xml version="1.0" encoding="UTF-8"?>', "<rootTag>"]
    for a in awards:
        out.append(
            "<Award>"
            f"<AwardTitle>{html.escape(a.get('title', ''))}</AwardTitle>"
            f"<AwardEffectiveDate>{_us_date(a['effective_date'])}</AwardEffectiveDate>"
            f"<AwardInstrument><Value>{html.escape(a['instrument'])}</Value></AwardInstrument>"
            f"<AwardID>{a['award_id']}</AwardID>"
            f"<Organization><Directorate><LongName>{html.escape(a.get('directorate', ''))}</LongName>"
            "</Directorate></Organization>"
            "</Award>"
        )
    out.append("</rootTag>")
    return "\n".join(out) + "\n"


def awards_csv(awards: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["AwardID", "AwardTitle", "AwardEffectiveDate", "AwardInstrument", "Directorate"])
    for a in awards:
        w.writerow([a["award_id"], a.get("title", ""), _us_date(a["effective_date"]), a["instrument"],
                    a.get("directorate", "")])
    return buf.getvalue()


PAR_EXPORT_COLUMNS = [
    "result - osti_id",
    "result - doi",
    "Award_ID",
    "result - author - author_lname",
    "result - title",
    "result - publication_date",
    "result - entry_date",
]


def par_export_csv(records: Iterable[Mapping[str, Any]]) -> str:
    """One row per repeating element, with authors and awards in parallel columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PAR_EXPORT_COLUMNS)
    for rec in records:
        authors = list(rec.get("authors", ())) or [""]
        awards = sorted(rec.get("award_ids", ())) or [""]
        for i in range(max(len(authors), len(awards))):
            w.writerow(
                [
                    rec["osti_id"],
                    rec.get("doi_raw", ""),
                    awards[i] if i < len(awards) else "",
                    authors[i] if i < len(authors) else "",
                    rec.get("title", ""),
                    rec.get("publication_year", ""),
                    rec.get("entry_date", ""),
                ]
            )
    return buf.getvalue()


# --------------------------------------------------------------------------
# page rendering

_PAGE_HEAD = (
    "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\">"
    "<title>Search Results | Public Access Repository</title>"
    "<link rel=\"stylesheet\" href=\"/static/par.css\"></head>\n<body>"
    "<header class=\"site-header\"><nav><a href=\"/\">Home</a> <a href=\"/search\">Search</a> "
    "<a href=\"/about\">About</a></nav></header>\n<main>"
)
_PAGE_TAIL = "</main>\n<footer class=\"site-footer\">Public Access Repository</footer></body></html>\n"


def _filler(key: str, n: int) -> str:
    if n <= 0:
        return ""
    seed = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return (seed * (n // len(seed) + 1))[:n]


def _band_length(key: str, band: list[int]) -> int:
    lo, hi = band
    h = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
    return lo + h % (hi - lo + 1)


def _result_item(rec: Mapping[str, Any], doi: str) -> str:
    return (
        f'<li class="search-result"><a href="/biblio/{html.escape(str(rec.get("osti_id", "")))}">'
        f'{html.escape(rec.get("title", "") or doi)}</a> <span class="doi">{html.escape(doi)}</span></li>'
    )


def render_search_page(items: list[str], *, pad_key: str = "", target: int | None = None) -> bytes:
    """A PAR-like page: constant frame, result list, deterministic padding to ``target`` bytes."""
    body = _PAGE_HEAD + f'<ul id="search-results" data-count="{len(items)}">' + "".join(items) + "</ul>"
    if target is None:
        return (body + _PAGE_TAIL).encode("utf-8")
    base = (body + "<!--  -->" + _PAGE_TAIL).encode("utf-8")
    pad = target - len(base)
    if pad < 0:
        raise FixtureInvalid(f"page content exceeds target length {target}")
    return (body + "<!-- " + _filler(pad_key, pad) + " -->" + _PAGE_TAIL).encode("utf-8")


def _jdump(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _encode_cursor(offset: int) -> str:
    return base64.urlsafe_b64encode(f"offset:{offset}".encode()).decode().rstrip("=")


def _decode_cursor(cursor: str) -> int | None:
    if cursor in ("", "*"):
        return 0
    try:
        padded = cursor + "=" * (-len(cursor) % 4)
        text = base64.urlsafe_b64decode(padded.encode()).decode()
        return int(text.split(":", 1)[1]) if text.startswith("offset:") else None
    except (ValueError, UnicodeDecodeError):
        return None


def _date_parts(iso: str | None):
    if not iso:
        return None
    return {"date-parts": [[int(x) for x in iso.split("-")]]}


class MockGri:
    """Deterministic responder for a :class:`FixtureWorld`. Thread-safe; read-only after init."""

    def __init__(self, world: FixtureWorld):
        world.validate()
        self.world = world
        self.request_log: list[str] = []
        self._lock = threading.Lock()
        self._count = 0

        self._articles = sorted(
            ({**a, "doi": normalize_doi(a["doi"]).result} for a in world.articles), key=lambda a: a["doi"]
        )
        self._links: dict[str, list[dict]] = {}
        for link in world.dataset_links:
            self._links.setdefault(normalize_doi(link["article_doi"]).result, []).append(link)
        self._authors: dict[str, list[str]] = {}
        for link in world.author_links:
            self._authors.setdefault(normalize_doi(link["article_doi"]).result, []).append(link["orcid"])
        self._datasets = {normalize_doi(k).result or k: v for k, v in world.datasets.items()}
        self._linked = world.linked_pairs()
        self._par_by_doi: dict[str, list[dict]] = {}
        for rec in world.par_records:
            outcome = normalize_doi(rec.get("doi_raw"))
            if outcome.ok:
                self._par_by_doi.setdefault(outcome.result, []).append(rec)

    # -- public entry points ----------------------------------------------

    def handle(self, target: str) -> tuple[int, dict[str, str], bytes]:
        """Answer a GET for ``target`` (path plus optional query)."""
        with self._lock:
            self._count += 1
            count = self._count
            self.request_log.append(target)
        if self.world.fail_every and count % self.world.fail_every == 0:
            return 503, {"Content-Type": "text/plain"}, b"service unavailable"
        parts = urlsplit(target)
        segments = parts.path.split("/")
        query = {k: v[0] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        if len(segments) < 2:
            return self._not_found()
        service, rest = segments[1], segments[2:]
        handler = getattr(self, f"_{service}", None)
        if service not in SERVICE_NAMES or handler is None:
            return self._not_found()
        return handler(rest, query)

    def search_counts(self, award_id: str) -> tuple[int, int]:
        simple = advanced = 0
        for rec in self.world.par_records:
            in_field = award_id in rec.get("award_ids", ())
            if in_field or award_id in rec.get("connected_awards", ()):
                simple += 1
            if in_field:
                advanced += 1
        return simple, advanced

    def probe_length(self, award_id: str, doi: str) -> int:
        return len(self._probe_page(award_id, doi))

    # -- services -----------------------------------------------------------

    @staticmethod
    def _not_found():
        return 404, {"Content-Type": "application/json"}, _jdump({"status": "error", "message": "not found"})

    @staticmethod
    def _json(obj):
        return 200, {"Content-Type": "application/json"}, _jdump(obj)

    def _funder_matches(self, funder_id: str, entry: Mapping) -> bool:
        ident = self.world.funder["identifier"]
        fid = str(entry.get("id") or "")
        return bool(fid) and fid == ident and funder_id in (ident, ident.rsplit("/", 1)[-1])

    def _crossref(self, rest, query):
        # /funders/{funder_id}/works
        if len(rest) != 3 or rest[0] != "funders" or rest[2] != "works":
            return self._not_found()
        funder_id = unquote(rest[1])
        ident = self.world.funder["identifier"]
        if funder_id not in (ident, ident.rsplit("/", 1)[-1]):
            return self._not_found()
        try:
            rows = int(query.get("rows", "20"))
        except ValueError:
            return 400, {}, b"bad rows"
        offset = _decode_cursor(query.get("cursor", "*"))
        if offset is None or rows <= 0:
            return 400, {}, b"bad cursor"
        lo_year = hi_year = None
        for part in filter(None, query.get("filter", "").split(",")):
            name, _, value = part.partition(":")
            if name == "from-pub-date":
                lo_year = int(value[:4])
            elif name == "until-pub-date":
                hi_year = int(value[:4])

        selected = []
        for art in self._articles:
            if not any(self._funder_matches(funder_id, f) for f in art.get("funders", ())):
                continue
            dates = [d for d in (art.get("online_date"), art.get("publication_date")) if d]
            year = int(min(dates)[:4]) if dates else None
            if lo_year is not None and (year is None or year < lo_year):
                continue
            if hi_year is not None and (year is None or year > hi_year):
                continue
            selected.append(art)

        page = selected[offset: offset + rows]
        items = []
        for art in page:
            item = {
                "DOI": art["doi"],
                "title": [art.get("title", "")],
                "container-title": [art.get("journal", "")],
                "publisher": art.get("publisher", ""),
                "funder": [
                    {k: v for k, v in (("name", f.get("name")), ("DOI", f.get("id")), ("award", f.get("awards", [])))
                     if v is not None}
                    for f in art.get("funders", ())
                ],
                "type": "journal-article",
            }
            if art.get("online_date"):
                item["published-online"] = _date_parts(art["online_date"])
            if art.get("publication_date"):
                item["published-print"] = _date_parts(art["publication_date"])
            items.append(item)
        message = {"items": items, "items-per-page": rows, "total-results": len(selected)}
        if offset + rows < len(selected):
            message["next-cursor"] = _encode_cursor(offset + rows)
        return self._json({"status": "ok", "message-type": "work-list", "message": message})

    def _scholix(self, rest, query):
        # /v2/Links?sourcePid=...
        if rest != ["v2", "Links"]:
            return self._not_found()
        doi = normalize_doi(query.get("sourcePid", "")).result
        results = []
        for link in self._links.get(doi, ()):
            results.append(
                {
                    "LinkProvider": [{"name": link.get("provider", "")}],
                    "RelationshipType": {"Name": "References"},
                    "source": {"Identifier": [{"ID": doi, "IDScheme": "doi"}], "Type": "publication"},
                    "target": {"Identifier": [{"ID": link["dataset_doi"], "IDScheme": "doi"}], "Type": "dataset"},
                }
            )
        return self._json({"currentPage": 0, "totalLinks": len(results), "totalPages": 1, "result": results})

    def _datacite(self, rest, query):
        # /dois/{doi}
        if len(rest) != 2 or rest[0] != "dois":
            return self._not_found()
        doi = normalize_doi(unquote(rest[1])).result
        meta = self._datasets.get(doi)
        if meta is None:
            return self._not_found()
        if meta.get("malformed"):
            return 200, {"Content-Type": "application/json"}, b'{"data": {"attributes": '
        attrs = {
            "doi": doi,
            "titles": [{"title": meta.get("title", "")}],
            "publisher": meta.get("repository", ""),
            "publicationYear": meta.get("publication_year"),
            "types": {"resourceTypeGeneral": "Dataset"},
        }
        return self._json({"data": {"id": doi, "type": "dois", "attributes": attrs}})

    def _orcid(self, rest, query):
        # /v3.0/search/?q=doi-self:{doi}
        if rest[:2] != ["v3.0", "search"]:
            return self._not_found()
        q = query.get("q", "")
        if not q.startswith("doi-self:"):
            return 400, {}, b"unsupported query"
        doi = normalize_doi(q[len("doi-self:"):].strip('"')).result
        orcids = sorted(set(self._authors.get(doi, ())))
        result = [
            {"orcid-identifier": {"uri": f"https://orcid.org/{o}", "path": o, "host": "orcid.org"}} for o in orcids
        ]
        return self._json({"num-found": len(result), "result": result or None})

    def _par(self, rest, query):
        # /search/term:{award}[/identifier:{doi}] or /search/award_ids:{award}
        if not rest or rest[0] != "search" or len(rest) not in (2, 3):
            return self._not_found()
        head = unquote(rest[1])
        kind, _, award_id = head.partition(":")
        html_headers = {"Content-Type": "text/html; charset=utf-8"}
        if len(rest) == 3:
            ident_kind, _, doi = unquote(rest[2]).partition(":")
            if kind != "term" or ident_kind != "identifier":
                return self._not_found()
            return 200, html_headers, self._probe_page(award_id, doi)
        if kind == "term":
            recs = [r for r in self.world.par_records
                    if award_id in r.get("award_ids", ()) or award_id in r.get("connected_awards", ())]
        elif kind == "award_ids":
            recs = [r for r in self.world.par_records if award_id in r.get("award_ids", ())]
        else:
            return self._not_found()
        items = [_result_item(r, normalize_doi(r.get("doi_raw")).result or r.get("doi_raw", "")) for r in recs]
        return 200, html_headers, render_search_page(items)

    def _probe_page(self, award_id: str, doi: str) -> bytes:
        doi = normalize_doi(doi).result or doi
        key = f"{award_id}|{doi}"
        linked = (award_id, doi) in self._linked
        items = []
        if linked:
            recs = self._par_by_doi.get(doi) or [{"osti_id": "", "title": doi}]
            items = [_result_item(recs[0], doi)]
        target = self.world.page_lengths.get(key)
        if target is None:
            target = _band_length(key, self.world.bands["linked" if linked else "not_linked"])
        return render_search_page(items, pad_key=key, target=int(target))


class WorldTransport:
    """A transport that answers from a :class:`MockGri` in-process, no sockets."""

    def __init__(self, world: FixtureWorld | MockGri):
        self.mock = world if isinstance(world, MockGri) else MockGri(world)

    def get(self, url: str) -> Response:
        parts = urlsplit(url)
        target = parts.path + (f"?{parts.query}" if parts.query else "")
        status, headers, body = self.mock.handle(target)
        return Response(status, body, headers, url)


def mock_services(base_url: str, **overrides: Any) -> dict[str, ServiceConfig]:
    """Production endpoint templates pointed at a mock host."""
    services = {}
    for name in SERVICE_NAMES:
        default = DEFAULT_SERVICES[name]
        settings = {
            "templates": dict(default.templates),
            "rate": None,
            "max_in_flight": default.max_in_flight,
            "retries": default.retries,
            "backoff": 0.0,
        }
        settings.update(overrides)
        services[name] = ServiceConfig(base_url=f"{base_url.rstrip('/')}/{name}", **settings)
    return services
