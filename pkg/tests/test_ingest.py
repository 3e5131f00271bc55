from __future__ import annotations

import csv
import io
import json
import random
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grilink.errors import SchemaMismatch, UnreadableInput
from grilink.ingest import (
    AwardFormat,
    AwardRecord,
    ChorusRecord,
    DoiAwardPair,
    Instrument,
    ParRecord,
    Source,
    explode_pairs,
    load_header_aliases,
    parse_chorus_all_report,
    parse_date,
    parse_year,
    parse_nsf_awards,
    parse_par_export,
    read_jsonl,
    write_jsonl,
)
from grilink.mockgri import FixtureWorld
from grilink.mockgri.world import awards_csv, awards_xml, par_export_csv

AWARDS = [
    {"award_id": "1314642", "effective_date": "2013-09-01", "instrument": "Standard Grant", "title": "A"},
    {"award_id": "1750000", "effective_date": "2018-02-15", "instrument": "Continuing Grant", "title": "B"},
    {"award_id": "1937000", "effective_date": "2019-08-01", "instrument": "Fellowship Award", "title": "C"},
    {"award_id": "1600000", "effective_date": "2016-07-01", "instrument": "Cooperative Agreement", "title": "D"},
    {"award_id": "1600001", "effective_date": "2016-07-01", "instrument": "Contract", "title": "E"},
]

CHORUS_HEADER = ["DOI", "GRANT ID", "Online Publication Date", "Publication Date"]


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


@pytest.mark.parametrize("fmt, render", [(AwardFormat.XML_YEARLY, awards_xml), (AwardFormat.CSV_YEARLY, awards_csv)])
def test_awards_keep_three_instruments(fmt, render):
    records = parse_nsf_awards(render(AWARDS).encode(), fmt)
    assert [r.award_id for r in records] == ["1314642", "1750000", "1937000"]
    assert records.stats.rows_read == 5
    assert records.stats.skipped["excluded_instrument"] == 2
    assert records.stats.rows_read == records.stats.rows_used + records.stats.rows_skipped
    first = records[0]
    assert first.effective_date == date(2013, 9, 1) and first.effective_year == 2013
    assert first.instrument is Instrument.STANDARD


def test_awards_empty_inputs():
    assert list(parse_nsf_awards(b"", AwardFormat.XML_YEARLY)) == []
    assert list(parse_nsf_awards(b"", AwardFormat.CSV_YEARLY)) == []


def test_awards_malformed_xml_is_unreadable():
    with pytest.raises(UnreadableInput):
        parse_nsf_awards(b"<rootTag><Award><AwardID>1234567", AwardFormat.XML_YEARLY)


def test_awards_missing_path_is_unreadable(tmp_path):
    with pytest.raises(UnreadableInput):
        parse_nsf_awards(tmp_path / "absent.csv", AwardFormat.CSV_YEARLY)


def test_awards_csv_missing_column():
    with pytest.raises(SchemaMismatch, match="instrument"):
        parse_nsf_awards(_csv(["AwardID", "AwardEffectiveDate"], [["1234567", "01/01/2015"]]), "CsvYearly")


def test_bad_ids_and_dates_are_skipped():
    data = _csv(
        ["AwardID", "AwardEffectiveDate", "AwardInstrument"],
        [["123", "01/01/2015", "Standard Grant"], ["1234567", "someday", "Standard Grant"],
         ["7654321", "2015-03-04", "Standard Grant"], ["7654321", "2015-03-04", "Standard Grant"]],
    )
    records = parse_nsf_awards(data, AwardFormat.CSV_YEARLY)
    assert [r.award_id for r in records] == ["7654321"]
    assert records.stats.skipped == {"bad_award_id": 1, "bad_date": 1}
    assert records.stats.notes["duplicate_award_id"] == 1


def test_user_aliases_take_precedence(tmp_path):
    table = tmp_path / "aliases.json"
    table.write_text(json.dumps({"awards": {"award_id": "Grant Number"}}))
    aliases = load_header_aliases(table)
    assert aliases["awards"]["award_id"][0] == "Grant Number"
    data = _csv(["Grant Number", "AwardEffectiveDate", "AwardInstrument"], [["1234567", "1/2/2020", "Standard Grant"]])
    assert parse_nsf_awards(data, AwardFormat.CSV_YEARLY, aliases)[0].award_id == "1234567"


def test_parse_date_forms():
    assert parse_date("09/01/2013") == date(2013, 9, 1)
    assert parse_date("2013-09-01T00:00:00Z") == date(2013, 9, 1)
    assert parse_date("2013") is None
    assert parse_year("2013") == 2013
    assert parse_date("") is None
    assert parse_date("13/45/2013") is None


# ---------------------------------------------------------------- PAR export


@pytest.fixture(scope="module")
def par_rows_bytes():
    world = FixtureWorld.builtin("par_rows")
    return par_export_csv(world.par_records).encode(), world


def test_repeated_author_rows_collapse(par_rows_bytes):
    data, world = par_rows_bytes
    records = {r.osti_id: r for r in parse_par_export(data)}
    assert len(records) == len(world.par_records)
    assert len(records["10021311"].authors) == 4
    assert len(records["10021525"].authors) == 9
    raw_rows = data.decode().strip().splitlines()[1:]
    assert sum(1 for row in raw_rows if row.startswith(("10021311,", "10021525,"))) == 13


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_par_collapse_ignores_row_order(rnd):
    world = FixtureWorld.builtin("par_rows")
    text = par_export_csv(world.par_records)
    header, *rows = text.strip().splitlines()
    baseline = list(parse_par_export(text.encode()))
    rnd.shuffle(rows)
    shuffled = "\n".join([header, *rows]) + "\n"
    assert list(parse_par_export(shuffled.encode())) == baseline


def test_par_awards_union_and_conflicting_doi():
    header = ["result - osti_id", "result - doi", "Award_ID", "result - author - author_lname", "result - publication_date"]
    rows = [
        ["100", "https://doi.org/10.1234/AB", "1111111", "Ng", "2019"],
        ["100", "10.1234/ab", "2222222;3333333", "Li", "2019"],
        ["101", "not a doi", "1111111", "", "2020"],
        ["101", "10.5555/zz", "", "", "2020"],
        ["", "10.5555/orphan", "1111111", "", "2020"],
    ]
    for order in (rows, list(reversed(rows))):
        records = parse_par_export(_csv(header, order))
        by_id = {r.osti_id: r for r in records}
        assert by_id["100"].award_ids == {"1111111", "2222222", "3333333"}
        assert by_id["100"].doi == "10.1234/ab"
        assert by_id["100"].authors == ("Li", "Ng")
        assert by_id["101"].doi == "10.5555/zz"
        assert sorted(records.stats.flagged) == ["100", "101"]
        assert records.stats.skipped["missing_osti_id"] == 1
        assert records.stats.rows_read == 5


def test_par_record_without_year_falls_back_to_entry_date():
    header = ["result - osti_id", "result - doi", "Award_ID", "result - author - author_lname", "result - entry_date"]
    (record,) = parse_par_export(_csv(header, [["7", "10.1234/q", "1234567", "X", "2018-05-02"]]))
    assert record.publication_year is None
    assert record.reference_year == 2018


def test_par_empty_and_missing_columns():
    assert list(parse_par_export(b"")) == []
    with pytest.raises(SchemaMismatch):
        parse_par_export(_csv(["result - osti_id"], [["1"]]))


# ---------------------------------------------------------------- CHORUS


def test_chorus_duplicate_rows_merge_grant_fields():
    rows = [
        ["10.1016/J.X.2019.1", "NSF:ABC-1234567", "2019-03-01", "2019-06-01"],
        ["https://doi.org/10.1016/j.x.2019.1", "1839012", "", "2019-05-01"],
    ]
    (record,) = parse_chorus_all_report(_csv(CHORUS_HEADER, rows))
    assert record.doi == "10.1016/j.x.2019.1"
    assert record.award_ids == {"1234567", "1839012"}
    assert record.online_date == date(2019, 3, 1)
    assert record.publication_date == date(2019, 5, 1)
    assert record.publication_year == 2019


def test_chorus_skips_rows_without_dates_or_doi():
    rows = [["10.1234/nodate", "1234567", "", ""], ["", "1234567", "2019-01-01", ""], ["10.1234/ok", "", "", "2020-04-01"]]
    records = parse_chorus_all_report(_csv(CHORUS_HEADER, rows))
    assert [r.doi for r in records] == ["10.1234/ok"]
    assert records.stats.skipped == {"bad_doi": 1, "no_usable_date": 1}
    assert records.stats.rows_read == records.stats.rows_used + records.stats.rows_skipped


def test_chorus_year_is_earliest_date():
    rows = [["10.1234/a", "1234567", "2020-12-30", "2021-02-01"]]
    assert parse_chorus_all_report(_csv(CHORUS_HEADER, rows))[0].publication_year == 2020


# ---------------------------------------------------------------- pairs


def test_explode_multi_award_chorus_record():
    grant = "1234567; 2345678; 3456789; 4567890"
    record = ChorusRecord("10.1016/j.hal.2019.101728", grant, frozenset({"1234567", "2345678", "3456789", "4567890"}),
                          None, date(2019, 12, 1), 2019)
    pairs = explode_pairs([record], Source.CHORUS)
    assert len(pairs) == 4
    assert {p.doi for p in pairs} == {"10.1016/j.hal.2019.101728"}


def test_explode_award_with_three_dois():
    records = [
        ParRecord(str(i), f"10.1234/{i}", f"10.1234/{i}", frozenset({"1314642"}), 2015 + i) for i in range(3)
    ]
    pairs = explode_pairs(records, "Par")
    assert [p.award_id for p in pairs] == ["1314642"] * 3
    assert all(p.source is Source.PAR for p in pairs)


def test_explode_drops_and_dedups():
    records = [
        ParRecord("1", "", None, frozenset({"1234567"}), 2019),
        ParRecord("2", "10.1234/a", "10.1234/a", frozenset(), 2019),
        ParRecord("3", "10.1234/b", "10.1234/b", frozenset({"1234567"}), 2020),
        ParRecord("4", "10.1234/b", "10.1234/b", frozenset({"1234567"}), 2018),
    ]
    pairs = explode_pairs(records, Source.PAR)
    assert pairs == [DoiAwardPair("10.1234/b", "1234567", Source.PAR)]
    assert pairs[0].publication_year == 2018
    assert pairs.stats["dropped_no_doi"] == 1 and pairs.stats["dropped_no_award_ids"] == 1


def test_explode_empty():
    assert list(explode_pairs([], Source.PAR)) == []


# ---------------------------------------------------------------- JSON Lines


def test_jsonl_round_trip(tmp_path):
    awards = [AwardRecord("1234567", date(2015, 1, 2), 2015, Instrument.CONTINUING, "T", None)]
    par = [ParRecord("9", "x", "10.1/1", frozenset({"1234567", "7654321"}), None, date(2016, 1, 1), ("A", "B"))]
    chorus = [ChorusRecord("10.1234/c", "1234567", frozenset({"1234567"}), None, date(2017, 1, 1), 2017)]
    pairs = [DoiAwardPair("10.1234/c", "1234567", Source.CHORUS, 2017)]
    for records in (awards, par, chorus, pairs):
        path = tmp_path / f"{type(records[0]).__name__}.jsonl"
        assert write_jsonl(records, path) == 1
        back = read_jsonl(path, type(records[0]))
        assert back == records
        assert back[0].__dict__ == records[0].__dict__


def test_award_record_validates():
    with pytest.raises(ValueError):
        AwardRecord("12345", date(2015, 1, 1), 2015, Instrument.STANDARD)
    with pytest.raises(ValueError):
        AwardRecord("1234567", date(2015, 1, 1), 2016, Instrument.STANDARD)


def test_randomized_award_balance():
    rnd = random.Random(7)
    instruments = ["Standard Grant", "Continuing Grant", "Fellowship Award", "Cooperative Agreement"]
    awards = [
        {"award_id": f"{1000000 + i}", "effective_date": f"20{10 + i % 10}-01-15", "instrument": rnd.choice(instruments)}
        for i in range(200)
    ]
    records = parse_nsf_awards(awards_xml(awards).encode(), AwardFormat.XML_YEARLY)
    kept = sum(1 for a in awards if a["instrument"] != "Cooperative Agreement")
    assert len(records) == kept
    assert records.stats.rows_read == 200 == records.stats.rows_used + records.stats.rows_skipped


def test_us_date_becomes_year():
    xml = awards_xml([{"award_id": "1400001", "effective_date": "2014-08-15", "instrument": "Standard Grant"}])
    assert "08/15/2014" in xml
    (record,) = parse_nsf_awards(xml.encode(), AwardFormat.XML_YEARLY)
    assert record.instrument is Instrument.STANDARD and record.effective_year == 2014


def test_par_row_without_award_cell():
    header = ["result - osti_id", "result - doi", "Award_ID", "result - author - author_lname"]
    (record,) = parse_par_export(_csv(header, [["5", "10.1234/q", "", "Kim"]]))
    assert record.award_ids == frozenset()
    assert list(explode_pairs([record], Source.PAR)) == []


def test_chorus_publication_date_only():
    (record,) = parse_chorus_all_report(_csv(CHORUS_HEADER, [["10.1234/p", "1234567", "", "2020-01-10"]]))
    assert record.publication_year == 2020


def test_explode_multi_award_record():
    awards = frozenset({"1840381", "1314642", "0911031", "0430724"})
    record = ChorusRecord("10.1016/j.hal.2019.101728", "; ".join(sorted(awards)), awards, None, date(2019, 12, 1), 2019)
    pairs = explode_pairs([record], Source.CHORUS)
    assert {p.award_id for p in pairs} == awards


par_records = st.builds(
    lambda i, doi, awards: ParRecord(str(i), doi or "", doi, frozenset(awards), 2020),
    st.integers(0, 50),
    st.one_of(st.none(), st.sampled_from(["10.1234/a", "10.1234/b", "10.1234/c"])),
    st.sets(st.sampled_from(["1111111", "2222222", "3333333"]), max_size=3),
)


@given(st.lists(par_records, max_size=20))
def test_pair_count_bound(records):
    pairs = explode_pairs(records, Source.PAR)
    assert len(pairs) <= sum(len(r.award_ids) for r in records)
    assert len({(p.doi, p.award_id) for p in pairs}) == len(pairs)
    assert pairs == sorted(pairs)
