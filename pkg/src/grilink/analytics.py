"""Coverage measures comparing the award universe, the repository and the GRI.

Everything here is a pure function of its inputs. Percentages are computed
from exact integer counts and only rounded for presentation, with
half-up rounding so that 0.5 cases do not flip with banker's rounding.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import EmptyInput
from .ingest import AwardRecord, DoiAwardPair, RecordSet, Source
from .probe import Classification, ProbeResult


class Category(str, Enum):
    CHORUS_ONLY = "ChorusOnly"
    BOTH = "Both"
    PAR_ONLY = "ParOnly"
    NO_REFERENCE = "NoReference"


CATEGORIES = (Category.CHORUS_ONLY, Category.BOTH, Category.PAR_ONLY, Category.NO_REFERENCE)
_SLUG = {
    Category.CHORUS_ONLY: "chorus_only",
    Category.BOTH: "both",
    Category.PAR_ONLY: "par_only",
    Category.NO_REFERENCE: "no_reference",
}


def round_half_up(value: float, ndigits: int = 0) -> float:
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def fmt_pct(value: float) -> str:
    return f"{round_half_up(value, 1):.1f}"


def category_for(in_chorus: bool, in_par: bool) -> Category:
    if in_chorus and in_par:
        return Category.BOTH
    if in_chorus:
        return Category.CHORUS_ONLY
    if in_par:
        return Category.PAR_ONLY
    return Category.NO_REFERENCE


# --------------------------------------------------------------------------
# award partition


@dataclass(frozen=True)
class AwardReferenceClass:
    award_id: str
    category: Category
    first_reference_year_chorus: int | None = None
    first_reference_year_par: int | None = None

    def __post_init__(self):
        expected = category_for(
            self.first_reference_year_chorus is not None, self.first_reference_year_par is not None
        )
        if expected is not self.category:
            raise ValueError(f"{self.award_id}: category {self.category.value} contradicts reference years")


def _first_years(
    pairs: Iterable[DoiAwardPair], effective: Mapping[str, int], stats: Counter, label: str
) -> dict[str, int]:
    first: dict[str, int] = {}
    for pair in pairs:
        if pair.award_id not in effective:
            stats[f"ignored_{label}_pairs"] += 1
            continue
        year = pair.publication_year
        if year is None:
            stats[f"undated_{label}_pairs"] += 1
            year = effective[pair.award_id]
        if pair.award_id not in first or year < first[pair.award_id]:
            first[pair.award_id] = year
    return first


def classify_awards(
    universe: Sequence[AwardRecord],
    par_pairs: Iterable[DoiAwardPair],
    chorus_pairs: Iterable[DoiAwardPair],
) -> RecordSet:
    """Partition the award universe by where the awards are referenced.

    Pairs naming an award outside the universe are counted and ignored:
    they are extraction false positives. Undated pairs count as a reference
    in the award's effective year.
    """
    effective = {a.award_id: a.effective_year for a in universe}
    if len(effective) != len(universe):
        raise ValueError("award IDs in the universe must be unique")
    stats: Counter = Counter()
    first_chorus = _first_years(chorus_pairs, effective, stats, "chorus")
    first_par = _first_years(par_pairs, effective, stats, "par")
    classes = []
    for award_id in sorted(effective):
        fc = first_chorus.get(award_id)
        fp = first_par.get(award_id)
        classes.append(AwardReferenceClass(award_id, category_for(fc is not None, fp is not None), fc, fp))
    return RecordSet(classes, stats)


@dataclass(frozen=True)
class CoverageSummary:
    total_awards: int
    counts: Mapping[Category, int]

    def __post_init__(self):
        if sum(self.counts.get(c, 0) for c in CATEGORIES) != self.total_awards:
            raise ValueError("category counts do not sum to total_awards")

    def exact_percentage(self, category: Category) -> float:
        return pct(self.counts.get(category, 0), self.total_awards)

    @property
    def percentages(self) -> dict[Category, float]:
        return {c: round_half_up(self.exact_percentage(c), 1) for c in CATEGORIES}

    @property
    def par_referenced(self) -> int:
        return self.counts.get(Category.PAR_ONLY, 0) + self.counts.get(Category.BOTH, 0)

    @property
    def chorus_referenced(self) -> int:
        return self.counts.get(Category.CHORUS_ONLY, 0) + self.counts.get(Category.BOTH, 0)

    @property
    def par_referenced_pct(self) -> float:
        return round_half_up(pct(self.par_referenced, self.total_awards), 1)

    @property
    def chorus_referenced_pct(self) -> float:
        return round_half_up(pct(self.chorus_referenced, self.total_awards), 1)

    def row(self) -> dict[str, Any]:
        row: dict[str, Any] = {"total_awards": self.total_awards}
        for c in CATEGORIES:
            row[_SLUG[c]] = self.counts.get(c, 0)
        for c in CATEGORIES:
            row[f"pct_{_SLUG[c]}"] = fmt_pct(self.exact_percentage(c))
        row["par_referenced"] = self.par_referenced
        row["chorus_referenced"] = self.chorus_referenced
        row["pct_par_referenced"] = fmt_pct(pct(self.par_referenced, self.total_awards))
        row["pct_chorus_referenced"] = fmt_pct(pct(self.chorus_referenced, self.total_awards))
        return row


def summarize(classes: Sequence[AwardReferenceClass]) -> CoverageSummary:
    if not classes:
        raise EmptyInput("no award classes to summarize")
    counts = Counter(c.category for c in classes)
    return CoverageSummary(len(classes), {c: counts.get(c, 0) for c in CATEGORIES})


# --------------------------------------------------------------------------
# DOI coverage from probes

_PRIORITY = {
    Classification.LINKED: 0,
    Classification.NOT_LINKED: 1,
    Classification.AMBIGUOUS: 2,
    Classification.FAILED: 3,
}


def _best_probe(probe_results: Iterable[ProbeResult]) -> dict[tuple[str, str], Classification]:
    best: dict[tuple[str, str], Classification] = {}
    for r in probe_results:
        current = best.get(r.key)
        if current is None or _PRIORITY[r.classification] < _PRIORITY[current]:
            best[r.key] = r.classification
    return best


@dataclass(frozen=True)
class DoiCoverage:
    found_in_par: int
    chorus_only: int
    untested: int
    ambiguous: int = 0
    failed: int = 0
    not_probed: int = 0

    @property
    def total(self) -> int:
        return self.found_in_par + self.chorus_only + self.untested

    def row(self) -> dict[str, Any]:
        return {
            "found_in_par": self.found_in_par,
            "chorus_only": self.chorus_only,
            "untested": self.untested,
            "ambiguous": self.ambiguous,
            "failed": self.failed,
            "not_probed": self.not_probed,
            "total": self.total,
            "pct_found_in_par": fmt_pct(pct(self.found_in_par, self.total)),
        }


def _tally(keys: Iterable[tuple[str, str]], best: Mapping[tuple[str, str], Classification]) -> Counter:
    tally: Counter = Counter()
    for key in keys:
        c = best.get(key)
        if c is Classification.LINKED:
            tally["found_in_par"] += 1
        elif c is Classification.NOT_LINKED:
            tally["chorus_only"] += 1
        else:
            tally["untested"] += 1
            tally["ambiguous" if c is Classification.AMBIGUOUS else "failed" if c is Classification.FAILED else "not_probed"] += 1
    return tally


def doi_coverage(chorus_pairs: Iterable[DoiAwardPair], probe_results: Iterable[ProbeResult]) -> DoiCoverage:
    """Split CHORUS pairs into found in PAR, CHORUS only, and untested.

    Ambiguous and failed probes count as untested and are broken out
    separately.
    """
    keys = sorted({p.key for p in chorus_pairs})
    t = _tally(keys, _best_probe(probe_results))
    return DoiCoverage(
        t["found_in_par"], t["chorus_only"], t["untested"], t["ambiguous"], t["failed"], t["not_probed"]
    )


@dataclass(frozen=True)
class YearCoverage:
    effective_year: int
    found_in_par: int
    chorus_only: int
    untested: int

    @property
    def total(self) -> int:
        return self.found_in_par + self.chorus_only + self.untested

    @property
    def pct_found_in_par(self) -> float:
        return pct(self.found_in_par, self.total)

    def row(self) -> dict[str, Any]:
        return {
            "effective_year": self.effective_year,
            "found_in_par": self.found_in_par,
            "chorus_only": self.chorus_only,
            "untested": self.untested,
            "total": self.total,
            "pct_found_in_par": fmt_pct(self.pct_found_in_par),
            "pct_chorus_only": fmt_pct(pct(self.chorus_only, self.total)),
            "pct_untested": fmt_pct(pct(self.untested, self.total)),
        }


@dataclass(frozen=True)
class PeriodAverage:
    start_year: int
    end_year: int
    years: int
    mean_pct_found_in_par: float
    pooled_pct_found_in_par: float

    def row(self) -> dict[str, Any]:
        return {
            "start_year": self.start_year,
            "end_year": self.end_year,
            "years": self.years,
            "mean_pct_found_in_par": fmt_pct(self.mean_pct_found_in_par),
            "pooled_pct_found_in_par": fmt_pct(self.pooled_pct_found_in_par),
        }


@dataclass
class TemporalCoverage:
    years: list[YearCoverage]
    periods: list[PeriodAverage]
    unknown_award_pairs: int = 0


def temporal_doi_coverage(
    chorus_pairs: Iterable[DoiAwardPair],
    effective_years: Mapping[str, int],
    probe_results: Iterable[ProbeResult],
    periods: Sequence[tuple[int, int]] = (),
) -> TemporalCoverage:
    """DOI coverage grouped by the effective year of the award.

    Period averages are the unweighted mean of the yearly PAR percentages
    over years with data (the pooled ratio is reported alongside).
    """
    best = _best_probe(probe_results)
    by_year: dict[int, list[tuple[str, str]]] = defaultdict(list)
    unknown = 0
    for key in sorted({p.key for p in chorus_pairs}):
        year = effective_years.get(key[0])
        if year is None:
            unknown += 1
            continue
        by_year[year].append(key)

    rows = []
    for year in sorted(by_year):
        t = _tally(by_year[year], best)
        rows.append(YearCoverage(year, t["found_in_par"], t["chorus_only"], t["untested"]))

    averages = []
    for start, end in periods:
        inside = [r for r in rows if start <= r.effective_year <= end and r.total]
        mean = sum(r.pct_found_in_par for r in inside) / len(inside) if inside else 0.0
        pooled = pct(sum(r.found_in_par for r in inside), sum(r.total for r in inside))
        averages.append(PeriodAverage(start, end, len(inside), mean, pooled))
    return TemporalCoverage(rows, averages, unknown)


# --------------------------------------------------------------------------
# cumulative reference history


@dataclass(frozen=True)
class AwardEvents:
    award_id: str
    effective_year: int
    events: frozenset[tuple[Source, int]] = frozenset()


def reference_events(
    universe: Sequence[AwardRecord],
    par_pairs: Iterable[DoiAwardPair],
    chorus_pairs: Iterable[DoiAwardPair],
) -> list[AwardEvents]:
    """Per award, the set of (source, publication year) reference events."""
    effective = {a.award_id: a.effective_year for a in universe}
    events: dict[str, set[tuple[Source, int]]] = {a: set() for a in effective}
    for pairs, source in ((par_pairs, Source.PAR), (chorus_pairs, Source.CHORUS)):
        for p in pairs:
            if p.award_id not in effective:
                continue
            year = p.publication_year if p.publication_year is not None else effective[p.award_id]
            events[p.award_id].add((source, year))
    return [AwardEvents(a, effective[a], frozenset(events[a])) for a in sorted(effective)]


@dataclass
class CumulativeMatrix:
    """Category counts per (effective-year cohort, years after effective date).

    Cell (e, k) classifies each award of cohort e using only the reference
    events dated no later than e + k. Events dated before the effective year
    count at k = 0; ``clamped_events`` records how many were moved.
    """

    cohorts: list[int]
    offsets: dict[int, int]
    counts: dict[tuple[int, int], dict[Category, int]]
    totals: dict[int, int]
    clamped_events: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def cell_counts(self, cohort: int, k: int) -> dict[Category, int]:
        if cohort not in self.offsets or not 0 <= k <= self.offsets[cohort]:
            raise KeyError(f"no cell ({cohort}, {k})")
        return self.counts[(cohort, k)]

    def percentages(self, cohort: int, k: int) -> dict[Category, float]:
        counts = self.cell_counts(cohort, k)
        return {c: pct(counts[c], self.totals[cohort]) for c in CATEGORIES}

    def rounded(self, cohort: int, k: int, ndigits: int = 1) -> dict[Category, float]:
        return {c: round_half_up(v, ndigits) for c, v in self.percentages(cohort, k).items()}

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for e in self.cohorts:
            for k in range(self.offsets[e] + 1):
                counts = self.counts[(e, k)]
                row: dict[str, Any] = {"effective_year": e, "years_after": k, "awards": self.totals[e]}
                for c in CATEGORIES:
                    row[_SLUG[c]] = counts[c]
                for c in CATEGORIES:
                    row[f"pct_{_SLUG[c]}"] = fmt_pct(pct(counts[c], self.totals[e]))
                out.append(row)
        return out


def cumulative_matrix(awards: Sequence[AwardEvents], *, last_year: int | None = None) -> CumulativeMatrix:
    """Build the cumulative category matrix.

    With ``last_year`` each cohort's row runs to ``last_year - e`` and later
    events are ignored; without it every row runs to the largest observed
    offset.
    """
    first: dict[str, tuple[int | None, int | None]] = {}
    clamped = 0
    max_seen = 0
    for a in awards:
        fc = fp = None
        for source, year in a.events:
            if last_year is not None and year > last_year:
                continue
            k = year - a.effective_year
            if k < 0:
                clamped += 1
                k = 0
            max_seen = max(max_seen, k)
            if source is Source.CHORUS:
                fc = k if fc is None else min(fc, k)
            else:
                fp = k if fp is None else min(fp, k)
        first[a.award_id] = (fc, fp)

    by_cohort: dict[int, list[str]] = defaultdict(list)
    for a in awards:
        if last_year is not None and a.effective_year > last_year:
            continue
        by_cohort[a.effective_year].append(a.award_id)

    cohorts = sorted(by_cohort)
    offsets = {e: (last_year - e if last_year is not None else max_seen) for e in cohorts}
    counts: dict[tuple[int, int], dict[Category, int]] = {}
    for e in cohorts:
        for k in range(offsets[e] + 1):
            cell = {c: 0 for c in CATEGORIES}
            for award_id in by_cohort[e]:
                fc, fp = first[award_id]
                cell[category_for(fc is not None and fc <= k, fp is not None and fp <= k)] += 1
            counts[(e, k)] = cell
    return CumulativeMatrix(
        cohorts=cohorts,
        offsets=offsets,
        counts=counts,
        totals={e: len(by_cohort[e]) for e in cohorts},
        clamped_events=clamped,
        metadata={
            "pre_award_events": "clamped to years_after 0",
            "clamped_events": clamped,
            "reference_date": "publication year for both sources",
            "last_year": last_year,
        },
    )


def snapshot_distribution(matrix: CumulativeMatrix, observation_year: int) -> dict[int, dict[Category, float]]:
    """Category percentages of every cohort as seen in one calendar year."""
    snapshot = {}
    for e in matrix.cohorts:
        if e > observation_year:
            continue
        k = observation_year - e
        if k > matrix.offsets[e]:
            raise ValueError(f"matrix row {e} stops at {matrix.offsets[e]} years, need {k}")
        snapshot[e] = matrix.percentages(e, k)
    return snapshot


# --------------------------------------------------------------------------
# field completeness


@dataclass(frozen=True)
class Completeness:
    present: int
    total: int

    @property
    def percentage(self) -> int:
        return int(round_half_up(pct(self.present, self.total)))


def _present(value: Any) -> bool:
    if value is None:
        return False
    if isinstance(value, str):
        return bool(value.strip())
    try:
        return len(value) > 0
    except TypeError:
        return bool(value)


def field_completeness(records: Iterable[Any], selector: Callable[[Any], Any]) -> Completeness:
    present = total = 0
    for record in records:
        total += 1
        if _present(selector(record)):
            present += 1
    return Completeness(present, total)
