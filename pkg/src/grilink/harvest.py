"""Follow the GRI data journey for one funder and assemble the three reports.

The journey: query the article index by funder (A, B), resolve dataset links
for every article DOI (D), enrich each dataset from the dataset index (E),
and look up researcher IDs attached to each article (F, G). The results are
folded into an All Report (one row per article), an Author Report (one row
per article and ORCID iD) and a Dataset Report (one row per article and
dataset link).

Response shapes follow the public Crossref, ScholeXplorer v2, DataCite and
ORCID search APIs closely enough that the same parsers work against the live
services and the local mock.
"""

from __future__ import annotations

import csv
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import MalformedResponse, NotFound
from .identifiers import is_valid_orcid, normalize_doi, normalize_orcid
from .transport import Service

log = logging.getLogger(__name__)

NSF_FUNDER_ID = "10.13039/100000001"
DEFAULT_FUNDER_PREFIXES = {NSF_FUNDER_ID: "NSF", "National Science Foundation": "NSF"}

ALL_REPORT_COLUMNS = [
    "DOI",
    "Title",
    "Journal",
    "Publisher",
    "Online Publication Date",
    "Publication Date",
    "Funder Name",
    "GRANT ID",
    "Dataset DOIs",
    "ORCIDs",
]
AUTHOR_REPORT_COLUMNS = ["DOI", "ORCID", "Title", "Journal"]
DATASET_REPORT_COLUMNS = ["Dataset DOI", "Article DOI", "Title", "Repository", "Publication Year", "Link Provider"]


@dataclass(frozen=True)
class FunderQuery:
    funder_identifier: str
    funder_name: str = ""
    date_window: tuple[int, int] | None = None
    page_cursor: str | None = None

    def __post_init__(self):
        if not self.funder_identifier:
            raise ValueError("funder_identifier must be non-empty")


@dataclass(frozen=True)
class FunderEntry:
    name: str
    funder_id: str | None
    awards: tuple[str, ...] = ()


@dataclass(frozen=True)
class ArticleMeta:
    doi: str
    title: str = ""
    journal: str = ""
    publisher: str = ""
    online_date: date | None = None
    publication_date: date | None = None
    funder_entries: tuple[FunderEntry, ...] = ()


@dataclass(frozen=True)
class DatasetLink:
    article_doi: str
    dataset_doi: str
    link_provider: str = ""

    def __post_init__(self):
        if self.article_doi == self.dataset_doi:
            raise ValueError("a dataset link cannot point at its own article")


@dataclass(frozen=True)
class DatasetMeta:
    doi: str
    title: str
    repository: str
    publication_year: int | None


@dataclass(frozen=True)
class AuthorLink:
    article_doi: str
    orcid: str

    def __post_init__(self):
        if not is_valid_orcid(self.orcid):
            raise ValueError(f"invalid ORCID iD: {self.orcid!r}")


# --------------------------------------------------------------------------
# fetchers


def _date_parts(obj) -> date | None:
    try:
        parts = obj["date-parts"][0]
    except (KeyError, IndexError, TypeError):
        return None
    if not parts or parts[0] is None:
        return None
    try:
        return date(int(parts[0]), int(parts[1]) if len(parts) > 1 else 1, int(parts[2]) if len(parts) > 2 else 1)
    except (ValueError, TypeError):
        return None


def _first(value) -> str:
    if isinstance(value, list):
        return str(value[0]) if value else ""
    return "" if value is None else str(value)


def _article_from_item(item: Mapping) -> ArticleMeta | None:
    outcome = normalize_doi(item.get("DOI"))
    if not outcome.ok:
        return None
    funders = []
    for entry in item.get("funder") or ():
        fid = entry.get("DOI")
        funders.append(
            FunderEntry(
                name=str(entry.get("name") or ""),
                funder_id=str(fid) if fid else None,
                awards=tuple(str(a) for a in entry.get("award") or ()),
            )
        )
    return ArticleMeta(
        doi=outcome.result,
        title=_first(item.get("title")),
        journal=_first(item.get("container-title")),
        publisher=str(item.get("publisher") or ""),
        online_date=_date_parts(item.get("published-online")),
        publication_date=_date_parts(item.get("published-print")),
        funder_entries=tuple(funders),
    )


def fetch_articles_by_funder(
    q: FunderQuery, service: Service, *, rows: int = 100, stats: Counter | None = None
) -> tuple[list[ArticleMeta], str | None]:
    """Fetch one page of articles acknowledging the funder.

    Returns the page and the cursor for the next one (None when exhausted).
    Items whose DOI cannot be normalized are dropped and counted.
    """
    stats = stats if stats is not None else Counter()
    flt = ""
    if q.date_window:
        flt = f"from-pub-date:{q.date_window[0]},until-pub-date:{q.date_window[1]}"
    response = service.get(
        "works_by_funder", funder_id=q.funder_identifier, rows=rows, cursor=q.page_cursor or "*", filter=flt
    )
    if response.status == 404:
        return [], None
    if response.status != 200:
        raise MalformedResponse(f"unexpected HTTP {response.status} from {response.url}")
    payload = response.json()
    try:
        message = payload["message"]
        items = message["items"]
    except (KeyError, TypeError) as exc:
        raise MalformedResponse(f"no message.items in {response.url}") from exc
    if not isinstance(items, list):
        raise MalformedResponse(f"message.items is not a list in {response.url}")

    articles = []
    for item in items:
        if not isinstance(item, Mapping) or "DOI" not in item:
            raise MalformedResponse(f"work without DOI in {response.url}")
        article = _article_from_item(item)
        if article is None:
            stats["unrepairable_article_doi"] += 1
            continue
        articles.append(article)
    stats["articles"] += len(articles)

    cursor = message.get("next-cursor")
    if not items or len(items) < rows:
        cursor = None
    return articles, cursor


def fetch_all_articles(q: FunderQuery, service: Service, *, rows: int = 100,
                       stats: Counter | None = None) -> list[ArticleMeta]:
    """Follow cursors to exhaustion; the union is deduplicated by DOI."""
    seen: dict[str, ArticleMeta] = {}
    cursor = q.page_cursor
    pages = 0
    while True:
        page, cursor = fetch_articles_by_funder(
            FunderQuery(q.funder_identifier, q.funder_name, q.date_window, cursor), service, rows=rows, stats=stats
        )
        pages += 1
        for article in page:
            if article.doi in seen:
                seen[article.doi] = merge_articles(seen[article.doi], article)
            else:
                seen[article.doi] = article
        if cursor is None:
            break
    log.debug("fetched %d articles in %d pages", len(seen), pages)
    return [seen[doi] for doi in sorted(seen)]


def fetch_dataset_links(article_doi: str, service: Service, *, stats: Counter | None = None) -> list[DatasetLink]:
    stats = stats if stats is not None else Counter()
    response = service.get("links", doi=article_doi)
    if response.status == 404:
        return []
    if response.status != 200:
        raise MalformedResponse(f"unexpected HTTP {response.status} from {response.url}")
    payload = response.json()
    results = payload.get("result") if isinstance(payload, Mapping) else None
    if results is None:
        results = []
    if not isinstance(results, list):
        raise MalformedResponse(f"result is not a list in {response.url}")

    links: dict[str, DatasetLink] = {}
    for entry in results:
        try:
            identifiers = entry["target"]["Identifier"]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"link without target identifiers in {response.url}") from exc
        providers = entry.get("LinkProvider") or []
        provider = str(providers[0].get("name", "")) if providers else ""
        for ident in identifiers:
            if str(ident.get("IDScheme", "")).lower() != "doi":
                continue
            outcome = normalize_doi(ident.get("ID"))
            if not outcome.ok or outcome.result == article_doi:
                stats["unusable_dataset_doi"] += 1
                continue
            if outcome.result in links:
                stats["duplicate_dataset_link"] += 1
                continue
            links[outcome.result] = DatasetLink(article_doi, outcome.result, provider)
    return [links[d] for d in sorted(links)]


def fetch_dataset_meta(dataset_doi: str, service: Service) -> DatasetMeta:
    response = service.get("doi", doi=dataset_doi)
    if response.status == 404:
        raise NotFound(dataset_doi)
    if response.status != 200:
        raise MalformedResponse(f"unexpected HTTP {response.status} from {response.url}")
    payload = response.json()
    try:
        attrs = payload["data"]["attributes"]
        titles = attrs.get("titles") or []
        title = str(titles[0].get("title", "")) if titles else ""
        publisher = attrs.get("publisher") or ""
        if isinstance(publisher, Mapping):
            publisher = publisher.get("name", "")
        year = attrs.get("publicationYear")
        year = int(year) if year not in (None, "") else None
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise MalformedResponse(f"unexpected dataset payload from {response.url}") from exc
    return DatasetMeta(dataset_doi, title, str(publisher), year)


def fetch_author_ids(article_doi: str, service: Service, *, stats: Counter | None = None) -> list[AuthorLink]:
    """ORCID iDs publicly attached to the article; checksum failures are dropped and counted."""
    stats = stats if stats is not None else Counter()
    response = service.get("search", doi=article_doi)
    if response.status == 404:
        return []
    if response.status != 200:
        raise MalformedResponse(f"unexpected HTTP {response.status} from {response.url}")
    payload = response.json()
    if not isinstance(payload, Mapping):
        raise MalformedResponse(f"unexpected ORCID payload from {response.url}")
    found = set()
    for entry in payload.get("result") or ():
        try:
            path = entry["orcid-identifier"]["path"]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"ORCID result without identifier in {response.url}") from exc
        orcid = normalize_orcid(path)
        if orcid is None or not is_valid_orcid(orcid):
            stats["invalid_orcid"] += 1
            continue
        found.add(orcid)
    return [AuthorLink(article_doi, o) for o in sorted(found)]


# --------------------------------------------------------------------------
# reports


def merge_articles(a: ArticleMeta, b: ArticleMeta) -> ArticleMeta:
    """Union the funder entries of two views of one DOI."""
    entries = list(a.funder_entries)
    for entry in b.funder_entries:
        if entry not in entries:
            entries.append(entry)
    return ArticleMeta(
        doi=a.doi,
        title=a.title or b.title,
        journal=a.journal or b.journal,
        publisher=a.publisher or b.publisher,
        online_date=min(filter(None, (a.online_date, b.online_date)), default=None),
        publication_date=min(filter(None, (a.publication_date, b.publication_date)), default=None),
        funder_entries=tuple(entries),
    )


def pack_grants(entries: Iterable[FunderEntry], prefixes: Mapping[str, str] | None = None) -> str:
    """Render funder awards in the ``NSF:ABC-1234567; ...`` convention."""
    prefixes = DEFAULT_FUNDER_PREFIXES if prefixes is None else prefixes
    packed: list[str] = []
    for entry in entries:
        prefix = prefixes.get(entry.funder_id or "") or prefixes.get(entry.name) or entry.name
        for award in entry.awards:
            award = award.replace(";", ",").strip()
            if not award:
                continue
            value = f"{prefix}:{award}" if prefix else award
            if value not in packed:
                packed.append(value)
    return "; ".join(packed)


@dataclass
class Reports:
    all_report: list[dict[str, str]] = field(default_factory=list)
    author_report: list[dict[str, str]] = field(default_factory=list)
    dataset_report: list[dict[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def row_counts(self) -> tuple[int, int, int]:
        return len(self.all_report), len(self.author_report), len(self.dataset_report)


def _iso(d: date | None) -> str:
    return d.isoformat() if d else ""


def build_reports(
    articles: Sequence[ArticleMeta],
    dataset_links: Sequence[DatasetLink],
    dataset_meta: Mapping[str, DatasetMeta],
    author_links: Sequence[AuthorLink],
    *,
    funder_prefixes: Mapping[str, str] | None = None,
) -> Reports:
    """Fold harvested pieces into All, Author and Dataset reports.

    Links that reference an article outside ``articles`` are reported in
    ``warnings`` and left out. Articles seen more than once (e.g. under two
    funder identifiers) become one row with their funder entries unioned.
    """
    by_doi: dict[str, ArticleMeta] = {}
    for article in articles:
        by_doi[article.doi] = merge_articles(by_doi[article.doi], article) if article.doi in by_doi else article

    reports = Reports()
    datasets_for: dict[str, set[str]] = {}
    orcids_for: dict[str, set[str]] = {}

    for link in sorted(set(dataset_links), key=lambda l: (l.dataset_doi, l.article_doi)):
        if link.article_doi not in by_doi:
            reports.warnings.append(f"dangling dataset link {link.dataset_doi} -> unknown article {link.article_doi}")
            continue
        datasets_for.setdefault(link.article_doi, set()).add(link.dataset_doi)
        meta = dataset_meta.get(link.dataset_doi)
        if meta is None:
            reports.warnings.append(f"no metadata for dataset {link.dataset_doi}")
        reports.dataset_report.append(
            {
                "Dataset DOI": link.dataset_doi,
                "Article DOI": link.article_doi,
                "Title": meta.title if meta else "",
                "Repository": meta.repository if meta else "",
                "Publication Year": str(meta.publication_year) if meta and meta.publication_year else "",
                "Link Provider": link.link_provider,
            }
        )

    for link in sorted(set(author_links), key=lambda l: (l.article_doi, l.orcid)):
        article = by_doi.get(link.article_doi)
        if article is None:
            reports.warnings.append(f"dangling author link {link.orcid} -> unknown article {link.article_doi}")
            continue
        orcids_for.setdefault(link.article_doi, set()).add(link.orcid)
        reports.author_report.append(
            {"DOI": link.article_doi, "ORCID": link.orcid, "Title": article.title, "Journal": article.journal}
        )

    for doi in sorted(by_doi):
        article = by_doi[doi]
        names = []
        for entry in article.funder_entries:
            if entry.name and entry.name not in names:
                names.append(entry.name)
        reports.all_report.append(
            {
                "DOI": doi,
                "Title": article.title,
                "Journal": article.journal,
                "Publisher": article.publisher,
                "Online Publication Date": _iso(article.online_date),
                "Publication Date": _iso(article.publication_date),
                "Funder Name": "; ".join(names),
                "GRANT ID": pack_grants(article.funder_entries, funder_prefixes),
                "Dataset DOIs": "; ".join(sorted(datasets_for.get(doi, ()))),
                "ORCIDs": "; ".join(sorted(orcids_for.get(doi, ()))),
            }
        )
    return reports


def write_report(rows: Sequence[Mapping[str, str]], columns: Sequence[str], path: str | os.PathLike) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
    return len(rows)


REPORT_FILES = {
    "all_report": ("all_report.csv", ALL_REPORT_COLUMNS),
    "author_report": ("author_report.csv", AUTHOR_REPORT_COLUMNS),
    "dataset_report": ("dataset_report.csv", DATASET_REPORT_COLUMNS),
}


def write_reports(reports: Reports, directory: str | os.PathLike) -> dict[str, Path]:
    directory = Path(directory)
    written = {}
    for attr, (name, columns) in REPORT_FILES.items():
        path = directory / name
        write_report(getattr(reports, attr), columns, path)
        written[attr] = path
    return written


# --------------------------------------------------------------------------
# orchestration


@dataclass
class HarvestResult:
    articles: list[ArticleMeta]
    dataset_links: list[DatasetLink]
    dataset_meta: dict[str, DatasetMeta]
    author_links: list[AuthorLink]
    reports: Reports
    stats: Counter


def harvest(
    query: FunderQuery,
    services: Mapping[str, Service],
    *,
    rows: int = 100,
    funder_prefixes: Mapping[str, str] | None = None,
) -> HarvestResult:
    """Run the whole journey against ``services`` (keys: crossref, scholix, datacite, orcid).

    Each service is used sequentially, which keeps at most one request in
    flight per service.
    """
    stats: Counter = Counter()
    articles = fetch_all_articles(query, services["crossref"], rows=rows, stats=stats)

    links: list[DatasetLink] = []
    authors: list[AuthorLink] = []
    for article in articles:
        links.extend(fetch_dataset_links(article.doi, services["scholix"], stats=stats))
        authors.extend(fetch_author_ids(article.doi, services["orcid"], stats=stats))

    meta: dict[str, DatasetMeta] = {}
    for dataset_doi in sorted({l.dataset_doi for l in links}):
        try:
            meta[dataset_doi] = fetch_dataset_meta(dataset_doi, services["datacite"])
        except NotFound:
            stats["dataset_not_found"] += 1
        except MalformedResponse:
            stats["dataset_malformed"] += 1

    reports = build_reports(articles, links, meta, authors, funder_prefixes=funder_prefixes)
    stats["dataset_links"] = len(links)
    stats["author_links"] = len(authors)
    stats["warnings"] = len(reports.warnings)
    return HarvestResult(articles, links, meta, authors, reports, stats)


def funder_coverage_history(totals: Mapping[int, tuple[int, int]]) -> list[tuple[int, float]]:
    """Percentage of articles carrying funder metadata, per year.

    ``totals`` maps year to ``(with_funder_metadata, total)``; years with a
    zero total are left out.
    """
    history = []
    for year in sorted(totals):
        with_meta, total = totals[year]
        if not 0 <= with_meta <= total:
            raise ValueError(f"{year}: need 0 <= with_funder_meta <= total, got {with_meta}/{total}")
        if total == 0:
            continue
        history.append((year, 100.0 * with_meta / total))
    return history
