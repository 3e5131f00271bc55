"""Seeded synthetic worlds with planted ground truth."""

from __future__ import annotations

import random
from datetime import date, timedelta
from typing import Mapping

from ..errors import InvalidMix
from ..identifiers import orcid_check_digit
from .world import DEFAULT_BANDS, FixtureWorld

DEFAULT_MIX = {"ChorusOnly": 30.0, "Both": 6.0, "ParOnly": 8.0, "NoReference": 56.0}
_MIX_ALIASES = {"None": "NoReference"}

KEPT_INSTRUMENT_TEXT = ("Standard Grant", "Continuing Grant", "Fellowship Award")
EXCLUDED_INSTRUMENT_TEXT = ("Cooperative Agreement", "Contract", "Interagency Agreement")
DIRECTORATES = (
    ("Directorate For Geosciences", "OCE"),
    ("Direct For Mathematical & Physical Scien", "CHE"),
    ("Directorate For Engineering", "CBET"),
    ("Direct For Biological Sciences", "DEB"),
    ("Direct For Computer & Info Scie & Enginr", "CNS"),
)
PUBLISHERS = (
    ("10.1002", "Wiley", "Limnology and Oceanography"),
    ("10.1016", "Elsevier BV", "Harmful Algae"),
    ("10.1029", "American Geophysical Union (AGU)", "Geophysical Research Letters"),
    ("10.1038", "Springer Science and Business Media LLC", "Scientific Reports"),
    ("10.1093", "Oxford University Press (OUP)", "Toxicological Sciences"),
    ("10.5194", "Copernicus GmbH", "Atmospheric Chemistry and Physics"),
)
REPOSITORIES = (("10.5061", "Dryad"), ("10.5281", "Zenodo"), ("10.26008", "BCO-DMO"))
SURNAMES = (
    "Reginato", "Neubig", "Majure", "Roux", "Dang", "Poulos", "Coleman", "Sullivan", "Okafor", "Lindqvist",
    "Nakamura", "Herrera", "Kowalski", "Abara", "Fischer", "Moreau", "Singh", "Tanaka", "Walsh", "Yilmaz",
)

# Each repairable class turns a clean DOI into a raw value that normalizes back to it.
REPAIRABLE_INJECTIONS = (
    lambda d: "https://doi.org/" + d,
    lambda d: "https://doi.org/https://doi.org/" + d,
    lambda d: "-" + d,
    lambda d: ": " + d,
    lambda d: ".doi.org/" + d,
    lambda d: "//doi.org/" + d,
    lambda d: "-†" + d,
    lambda d: ",Ää,Ää" + d,
    lambda d: "tp://dx.doi.org/" + d,
    lambda d: d.upper(),
    lambda d: " " + d + " ",
)
UNREPAIRABLE_VALUES = (
    ".2021.107607 0888-3270",
    "/j.jfranklin.2021.04.001",
    "OE.26.025534",
    "RG.2.2.17468.74883",
    "s00222-020-00962-x",
    "Remote Power Side-Channel Attacks on BNN Accelerators in FPGAs",
)


def normalize_mix(mix: Mapping[str, float] | None) -> dict[str, float]:
    if mix is None:
        return dict(DEFAULT_MIX)
    out = {k: 0.0 for k in DEFAULT_MIX}
    for key, value in mix.items():
        key = _MIX_ALIASES.get(key, key)
        if key not in out:
            raise InvalidMix(f"unknown category {key!r} in mix")
        if value < 0:
            raise InvalidMix(f"negative share for {key}")
        out[key] = float(value)
    if abs(sum(out.values()) - 100.0) > 1e-6:
        raise InvalidMix(f"mix percentages sum to {sum(out.values())}, not 100")
    return out


def largest_remainder(shares: Mapping[str, float], total: int) -> dict[str, int]:
    """Integer counts summing to ``total`` in proportion to ``shares`` (percentages)."""
    exact = {k: v * total / 100.0 for k, v in shares.items()}
    counts = {k: int(v) for k, v in exact.items()}
    short = total - sum(counts.values())
    order = sorted(exact, key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:short]:
        counts[k] += 1
    return counts


def _random_orcid(rng: random.Random, *, valid: bool = True) -> str:
    base = "0000000" + "".join(str(rng.randrange(10)) for _ in range(8))
    check = orcid_check_digit(base)
    if not valid:
        check = "0" if check != "0" else "1"
    digits = base + check
    return "-".join(digits[i:i + 4] for i in range(0, 16, 4))


def _random_date(rng: random.Random, year: int) -> date:
    return date(year, rng.randint(1, 12), rng.randint(1, 28))


def generate_world(
    seed: int,
    *,
    n_awards: int = 1000,
    n_dois: int = 3000,
    mix: Mapping[str, float] | None = None,
    injection_rate: float = 0.1,
    first_year: int = 2008,
    last_year: int = 2021,
    excluded_fraction: float = 0.05,
    unnumbered_fraction: float = 0.05,
    dataset_fraction: float = 0.1,
    link_probability: float = 0.5,
    fail_every: int = 0,
) -> FixtureWorld:
    """Build a reproducible world whose award categories and linkage are known.

    ``n_dois`` counts every NSF-funded article in the article index,
    including the ``unnumbered_fraction`` that carry no award number.
    """
    shares = normalize_mix(mix)
    if not 0.0 <= injection_rate <= 1.0:
        raise ValueError("injection_rate must be within [0, 1]")
    rng = random.Random(seed)
    counts = largest_remainder(shares, n_awards)

    n_excluded = round(n_awards * excluded_fraction)
    ids = [f"{n:07d}" for n in rng.sample(range(10_000_000), n_awards + n_excluded)]
    categories: dict[str, str] = {}
    pool = ids[:n_awards]
    rng.shuffle(pool)
    cursor = 0
    for name in DEFAULT_MIX:
        for award_id in pool[cursor: cursor + counts[name]]:
            categories[award_id] = name
        cursor += counts[name]

    awards = []
    effective: dict[str, int] = {}
    for i, award_id in enumerate(ids):
        year = rng.randint(first_year, last_year)
        effective[award_id] = year
        directorate, _ = rng.choice(DIRECTORATES)
        excluded = i >= n_awards
        awards.append(
            {
                "award_id": award_id,
                "effective_date": _random_date(rng, year).isoformat(),
                "instrument": rng.choice(EXCLUDED_INSTRUMENT_TEXT if excluded else KEPT_INSTRUMENT_TEXT),
                "title": f"Collaborative Research: study {award_id}",
                "directorate": directorate,
            }
        )
    awards.sort(key=lambda a: a["award_id"])
    code_for = {a["award_id"]: next(c for d, c in DIRECTORATES if d == a["directorate"]) for a in awards}

    chorus_awards = sorted(a for a, c in categories.items() if c in ("ChorusOnly", "Both"))
    n_unnumbered = round(n_dois * unnumbered_fraction)
    n_numbered = n_dois - n_unnumbered
    if chorus_awards and n_numbered < len(chorus_awards):
        raise InvalidMix(f"{len(chorus_awards)} CHORUS-referenced awards need at least that many numbered DOIs")
    if not chorus_awards:
        n_unnumbered, n_numbered = n_dois, 0

    primary = list(chorus_awards) + [rng.choice(chorus_awards) for _ in range(n_numbered - len(chorus_awards))]
    rng.shuffle(primary)

    def grant_string(award_id: str) -> str:
        style = rng.random()
        if style < 0.5:
            return f"{code_for[award_id]}-{award_id}"
        if style < 0.75:
            return award_id
        if style < 0.9:
            return f"{code_for[award_id]} {award_id}"
        return f"{code_for[award_id]}{award_id}"

    articles = []
    article_awards: dict[str, list[str]] = {}
    article_year: dict[str, int] = {}
    used_dois: set[str] = set()

    def new_doi(prefix: str) -> str:
        while True:
            doi = f"{prefix}/art.{rng.randrange(16**8):08x}"
            if doi not in used_dois:
                used_dois.add(doi)
                return doi

    for i in range(n_numbered + n_unnumbered):
        prefix, publisher, journal = rng.choice(PUBLISHERS)
        doi = new_doi(prefix)
        if i < n_numbered:
            award_ids = [primary[i]]
            if rng.random() < 0.15:
                extra = rng.choice(chorus_awards)
                if extra not in award_ids:
                    award_ids.append(extra)
            if n_excluded and rng.random() < 0.02:
                award_ids.append(rng.choice(ids[n_awards:]))
            base_year = min(effective[a] for a in award_ids)
            offset = rng.choices(range(-1, 8), weights=(2, 12, 18, 18, 15, 12, 10, 8, 5))[0]
            year = base_year + offset
            nsf_awards = [grant_string(a) for a in award_ids]
        else:
            award_ids = []
            year = rng.randint(first_year, last_year + 2)
            nsf_awards = rng.choice(([], ["Dissertation Completion Fellowship"]))
        online = _random_date(rng, year)
        printed = online + timedelta(days=rng.randint(20, 150))
        shape = rng.random()
        article = {
            "doi": doi,
            "title": f"Findings {doi.rsplit('.', 1)[-1]}",
            "journal": journal,
            "publisher": publisher,
            "online_date": online.isoformat() if shape < 0.9 else None,
            "publication_date": printed.isoformat() if shape > 0.1 else None,
            "funders": [{"name": "National Science Foundation", "id": "10.13039/100000001", "awards": nsf_awards}],
        }
        if rng.random() < 0.2:
            article["funders"].append(
                {"name": "National Institutes of Health", "id": "10.13039/100000002",
                 "awards": [f"R01GM{rng.randrange(10**6):06d}"]}
            )
        articles.append(article)
        article_awards[doi] = award_ids
        article_year[doi] = online.year if shape < 0.9 else printed.year

    # PAR side: Both awards get at least one linked CHORUS article carrying the
    # award number; ParOnly awards get repository-only articles.
    by_award: dict[str, list[str]] = {}
    for doi, award_ids in article_awards.items():
        for a in award_ids:
            by_award.setdefault(a, []).append(doi)

    par_records = []
    osti = iter(range(10_000_000, 99_999_999, 7))

    def raw_doi(doi: str) -> str:
        if rng.random() < injection_rate:
            return rng.choice(REPAIRABLE_INJECTIONS)(doi)
        return doi

    def authors() -> list[str]:
        return sorted(rng.sample(SURNAMES, rng.randint(1, 5)))

    def par_record(doi: str, award_ids: list[str], connected: list[str], year: int) -> dict:
        return {
            "osti_id": str(next(osti)),
            "doi_raw": raw_doi(doi),
            "award_ids": sorted(award_ids),
            "connected_awards": sorted(connected),
            "authors": authors(),
            "publication_year": year,
            "entry_date": _random_date(rng, max(2015, min(year + 1, 2023))).isoformat(),
            "title": f"Findings {doi.rsplit('.', 1)[-1]}",
        }

    record_for: dict[str, dict] = {}
    for award_id in sorted(a for a, c in categories.items() if c == "Both"):
        dois = sorted(by_award[award_id])
        chosen = [rng.choice(dois)] + [d for d in dois if rng.random() < link_probability]
        for n, doi in enumerate(dict.fromkeys(chosen)):
            rec = record_for.get(doi)
            if rec is None:
                rec = record_for[doi] = par_record(doi, [], [], article_year[doi])
                par_records.append(rec)
            in_field = n == 0 or rng.random() < 0.7
            target = rec["award_ids"] if in_field else rec["connected_awards"]
            if award_id not in rec["award_ids"] and award_id not in target:
                target.append(award_id)
                target.sort()

    for award_id in sorted(a for a, c in categories.items() if c == "ParOnly"):
        for _ in range(rng.randint(1, 3)):
            prefix = rng.choice(PUBLISHERS)[0]
            doi = new_doi(prefix)
            year = effective[award_id] + rng.randint(0, 5)
            par_records.append(par_record(doi, [award_id], [], year))

    referenced_par = sorted(a for a, c in categories.items() if c in ("Both", "ParOnly"))
    if referenced_par and injection_rate > 0:
        for value in UNREPAIRABLE_VALUES:
            rec = par_record("10.0000/placeholder", [rng.choice(referenced_par)], [], rng.randint(first_year, last_year))
            rec["doi_raw"] = value
            par_records.append(rec)

    par_records.sort(key=lambda r: int(r["osti_id"]))

    # Dataset and researcher links.
    dataset_links, datasets, author_links = [], {}, []
    for article in articles:
        doi = article["doi"]
        if rng.random() < dataset_fraction:
            for _ in range(rng.randint(1, 2)):
                prefix, repo = rng.choice(REPOSITORIES)
                ds = f"{prefix}/ds.{rng.randrange(16**6):06x}"
                datasets[ds] = {"title": f"Data for {doi}", "repository": repo,
                                "publication_year": int(article_year[doi])}
                link = {"article_doi": doi, "dataset_doi": ds, "provider": repo}
                dataset_links.append(link)
                if rng.random() < 0.2:
                    dataset_links.append(dict(link))
        for _ in range(rng.choices((0, 1, 2, 3), weights=(3, 3, 2, 1))[0]):
            author_links.append({"article_doi": doi, "orcid": _random_orcid(rng, valid=rng.random() > 0.03)})

    world = FixtureWorld(
        awards=awards,
        articles=articles,
        dataset_links=dataset_links,
        datasets=datasets,
        author_links=author_links,
        par_records=par_records,
        bands={k: list(v) for k, v in DEFAULT_BANDS.items()},
        fail_every=fail_every,
        description=f"generated seed={seed} awards={n_awards} dois={n_dois}",
    )
    linked = world.linked_pairs()
    chorus_pairs = sorted((a, d) for d, award_ids in article_awards.items() for a in award_ids)
    world.ground_truth = {
        "seed": seed,
        "mix": shares,
        "category_counts": counts,
        "categories": dict(sorted(categories.items())),
        "chorus_pairs": len(chorus_pairs),
        "chorus_pairs_in_universe": sum(1 for a, _ in chorus_pairs if a in categories),
        "linked_chorus_pairs": sum(1 for p in chorus_pairs if p in linked and p[0] in categories),
        "dataset_links": len({(l["article_doi"], l["dataset_doi"]) for l in dataset_links}),
    }
    world.validate()
    return world
