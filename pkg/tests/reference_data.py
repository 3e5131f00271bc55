"""Ratio-preserving desk-scale fixtures built from published aggregate counts.

Each builder scales a large published count down to a small synthetic set
whose proportions round to the same percentages.
"""

from __future__ import annotations

import csv
import io
from datetime import date

from grilink.ingest import AwardRecord, DoiAwardPair, Instrument, Source
from grilink.mockgri.generate import largest_remainder

# Awards referenced by source, out of 211,012 standard/continuing/fellowship awards.
AWARDS_TOTAL = 211_012
AWARDS_PAR_REFERENCED = 30_297
AWARDS_CHORUS_REFERENCED = 75_594
AWARDS_BOTH = 13_407
AWARDS_NEITHER = 118_528

PAR_WITH_AWARD_NUMBERS = (134_807, 186_526)
CHORUS_WITH_AWARD_NUMBERS = (280_432, 412_441)


def scaled(part: int, whole: int, size: int) -> int:
    return round(part * size / whole)


def par_export_fixture(size: int = 1000) -> bytes:
    """A PAR export of ``size`` records with the published share carrying award IDs."""
    with_ids = scaled(*PAR_WITH_AWARD_NUMBERS, size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["result - osti_id", "result - doi", "Award_ID", "result - author - author_lname",
                "result - publication_date"])
    for i in range(size):
        osti = str(10_000_000 + i)
        doi = f"10.5555/par.{i}"
        if i < with_ids:
            # Two rows for some records: repeated osti_id with a second author.
            w.writerow([osti, doi, f"{1_000_000 + i:07d}", "Smith", "2019"])
            if i % 3 == 0:
                w.writerow([osti, doi, "", "Jones", "2019"])
        else:
            w.writerow([osti, doi, "", "Smith", "2019"])
    return buf.getvalue().encode("utf-8")


def chorus_report_fixture(size: int = 1000) -> bytes:
    """A CHORUS All Report of ``size`` articles with the published share carrying NSF award numbers."""
    with_ids = scaled(*CHORUS_WITH_AWARD_NUMBERS, size)
    no_number = ("NSF:ACLS:Dissertation Completion Fellowship", "", "NIH:R01 LM010730", "NSF:SGH16B008")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["DOI", "GRANT ID", "Online Publication Date", "Publication Date"])
    for i in range(size):
        grant = f"NSF:CHE-{2_000_000 + i:07d}" if i < with_ids else no_number[i % len(no_number)]
        w.writerow([f"10.5555/ch.{i}", grant, "2019-03-01", "2019-06-01"])
    return buf.getvalue().encode("utf-8")


def award_split_fixture(size: int = 1000):
    """Universe and pairs whose category counts scale the published award split."""
    shares = {
        "Both": 100 * AWARDS_BOTH / AWARDS_TOTAL,
        "ParOnly": 100 * (AWARDS_PAR_REFERENCED - AWARDS_BOTH) / AWARDS_TOTAL,
        "ChorusOnly": 100 * (AWARDS_CHORUS_REFERENCED - AWARDS_BOTH) / AWARDS_TOTAL,
        "NoReference": 100 * AWARDS_NEITHER / AWARDS_TOTAL,
    }
    counts = largest_remainder(shares, size)
    universe, par, chorus = [], [], []
    n = 0
    for name in ("Both", "ParOnly", "ChorusOnly", "NoReference"):
        for _ in range(counts[name]):
            award_id = f"{3_000_000 + n:07d}"
            universe.append(AwardRecord(award_id, date(2016, 9, 1), 2016, Instrument.STANDARD))
            if name in ("Both", "ChorusOnly"):
                chorus.append(DoiAwardPair(f"10.5555/c.{n}", award_id, Source.CHORUS, 2018))
            if name in ("Both", "ParOnly"):
                par.append(DoiAwardPair(f"10.5555/p.{n}", award_id, Source.PAR, 2019))
            n += 1
    # Extraction false positives: pairs naming awards outside the universe.
    chorus.append(DoiAwardPair("10.5555/c.fp", "9999999", Source.CHORUS, 2018))
    return universe, par, chorus, counts


# Per-year PAR coverage of CHORUS DOIs: 2000-2016 average 25%, 2017-2023 average 64%.
EARLY_YEARS = range(2000, 2017)
LATE_YEARS = range(2017, 2024)
EARLY_LINKED = [22, 28] * 8 + [25]
LATE_LINKED = [60, 68, 61, 67, 62, 66, 64]


def coverage_shift_linkage(pairs_per_year: int = 100):
    """(award, effective_year, [(doi, linked)]) rows planting the two period averages."""
    rows = []
    n = 0
    for years, linked in ((EARLY_YEARS, EARLY_LINKED), (LATE_YEARS, LATE_LINKED)):
        for year, k in zip(years, linked):
            award_id = f"{4_000_000 + year:07d}"
            dois = []
            for i in range(pairs_per_year):
                dois.append((f"10.5555/y{year}.{i}", i < k))
                n += 1
            rows.append((award_id, year, dois))
    return rows


# Cumulative history of the 2014 cohort (1,000 awards). Each group is
# (count, first CHORUS offset, first PAR offset); None means never.
COHORT_2014 = [
    (350, 2, None),
    (54, 1, 3),
    (6, None, 2),
    (80, 4, None),
    (4, 4, 4),
    (85, 6, None),
    (1, None, 7),
    (10, 5, 7),
    (410, None, None),
]
# Published rounded percentages for that cohort.
COHORT_2014_K3_NOREF = 59
COHORT_2014_K4 = {"NoReference": 51, "ChorusOnly": 43, "Both": 6, "ParOnly": 1}
COHORT_2014_K7 = {"NoReference": 41, "ChorusOnly": 52, "Both": 7, "ParOnly": 1}

# The 2018 cohort (100 awards) observed in 2021, plus later events that the
# snapshot must ignore.
COHORT_2018 = [
    (36, None, None),
    (7, 1, None),
    (40, 2, 1),
    (17, None, 2),
]
COHORT_2018_LATE = [(10, 5, None)]  # taken from the 36 NoReference awards
COHORT_2018_OBS2021 = {"NoReference": 36, "ChorusOnly": 7, "Both": 40, "ParOnly": 17}


def cohort_pairs(cohort: int, groups, *, late=(), first_id: int = 5_000_000):
    """Universe plus PAR and CHORUS pairs realising the given first-reference offsets."""
    universe, par, chorus = [], [], []
    n = first_id
    ids_without_refs = []
    for count, chorus_k, par_k in groups:
        for _ in range(count):
            award_id = f"{n:07d}"
            n += 1
            universe.append(AwardRecord(award_id, date(cohort, 7, 1), cohort, Instrument.CONTINUING))
            if chorus_k is not None:
                chorus.append(DoiAwardPair(f"10.5555/{award_id}.c", award_id, Source.CHORUS, cohort + chorus_k))
                # a later second article must not change the first-reference year
                chorus.append(DoiAwardPair(f"10.5555/{award_id}.c2", award_id, Source.CHORUS, cohort + chorus_k + 2))
            if par_k is not None:
                par.append(DoiAwardPair(f"10.5555/{award_id}.p", award_id, Source.PAR, cohort + par_k))
            if chorus_k is None and par_k is None:
                ids_without_refs.append(award_id)
    for count, chorus_k, par_k in late:
        for award_id in ids_without_refs[:count]:
            if chorus_k is not None:
                chorus.append(DoiAwardPair(f"10.5555/{award_id}.late", award_id, Source.CHORUS, cohort + chorus_k))
        ids_without_refs = ids_without_refs[count:]
    return universe, par, chorus
