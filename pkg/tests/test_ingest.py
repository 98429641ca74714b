from datetime import date

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dprisk.exceptions import InputError, SchemaError
from dprisk.ingest import (
    PensionEvent,
    RawSpell,
    assemble_observations,
    label_outcome,
    load_inputs,
    merge_spell_frame,
    merge_spells,
    month_index,
    parse_employment,
    parse_persons,
    parse_spells,
    write_inputs,
)
from oracles import to_date, union_find_merge


def spells(*pairs, pid="p1"):
    return [RawSpell(pid, date.fromisoformat(a), date.fromisoformat(b)) for a, b in pairs]


# -- parsing -----------------------------------------------------------------


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_three_valid_spells_parse(tmp_path):
    path = write(tmp_path, "spells.csv",
                 "person_id,start_date,end_date\na,2016-01-01,2016-01-03\na,2016-02-01,2016-02-01\nb,2017-05-05,2017-06-01\n")
    df = parse_spells(path)
    assert len(df) == 3
    assert df["start_date"].dt.year.tolist() == [2016, 2016, 2017]


def test_end_before_start_names_line(tmp_path):
    path = write(tmp_path, "spells.csv",
                 "person_id,start_date,end_date\na,2016-01-01,2016-01-03\na,2016-02-05,2016-02-01\n")
    with pytest.raises(InputError, match=r"spells.csv: line 3, column 'end_date'"):
        parse_spells(path)


def test_bad_gender_is_rejected(tmp_path):
    path = write(tmp_path, "persons.csv", "person_id,gender,birth_year\na,M,1970\nb,X,1980\n")
    with pytest.raises(InputError, match=r"line 3, column 'gender'"):
        parse_persons(path)


def test_malformed_date(tmp_path):
    path = write(tmp_path, "spells.csv", "person_id,start_date,end_date\na,2016-13-01,2016-01-03\n")
    with pytest.raises(InputError, match=r"line 2, column 'start_date'.*ISO-8601"):
        parse_spells(path)


def test_duplicate_employment_rows(tmp_path):
    path = write(tmp_path, "employment.csv",
                 "person_id,year,employer_id,occupation_code,personal_oa_year\n"
                 "a,2016,E1,2221,2040\na,2016,E2,2221,2040\n")
    with pytest.raises(InputError, match="duplicate employment row"):
        parse_employment(path)


def test_missing_column_is_schema_error(tmp_path):
    path = write(tmp_path, "persons.csv", "person_id,birth_year\na,1970\n")
    with pytest.raises(SchemaError, match="gender"):
        parse_persons(path)


def test_roundtrip_through_csv(tmp_path, small_synth):
    write_inputs(small_synth.tables, tmp_path)
    again = load_inputs(tmp_path)
    for a, b in zip(small_synth.tables, again):
        pd.testing.assert_frame_equal(a.reset_index(drop=True), b, check_dtype=False)


# -- spell merging -----------------------------------------------------------


def test_back_to_back_spells_merge():
    out = merge_spells(spells(("2016-01-10", "2016-01-14"), ("2016-01-15", "2016-01-20")))
    assert [(m.start_date, m.end_date, m.length_days) for m in out] == [
        (date(2016, 1, 10), date(2016, 1, 20), 11)
    ]


def test_year_boundary_blocks_merge():
    out = merge_spells(spells(("2016-12-20", "2017-01-10"), ("2017-01-11", "2017-01-15")))
    assert [m.initiation_year for m in out] == [2016, 2017]


def test_transitive_merge():
    out = merge_spells(spells(("2016-03-01", "2016-03-10"), ("2016-03-05", "2016-03-20"),
                              ("2016-03-21", "2016-03-25")))
    assert len(out) == 1 and out[0].length_days == 25


def test_gap_of_one_day_does_not_merge():
    out = merge_spells(spells(("2016-01-01", "2016-01-05"), ("2016-01-07", "2016-01-09")))
    assert len(out) == 2


def test_empty_merge():
    assert merge_spells([]) == []


spell_sets = st.lists(
    st.tuples(st.integers(0, 1500), st.integers(0, 40)), min_size=0, max_size=12
)


@settings(max_examples=200, deadline=None)
@given(spell_sets)
def test_merge_matches_union_find(raw):
    pairs = [(to_date(s), to_date(s + d)) for s, d in raw]
    got = [(m.start_date, m.end_date) for m in merge_spells(RawSpell("p", a, b) for a, b in pairs)]
    assert sorted(got) == union_find_merge(pairs)


@settings(max_examples=100, deadline=None)
@given(spell_sets, st.randoms(use_true_random=False))
def test_frame_merge_matches_python_merge(raw, rnd):
    rows = [(rnd.choice("ab"), to_date(s), to_date(s + d)) for s, d in raw]
    frame = pd.DataFrame(rows, columns=["person_id", "start_date", "end_date"])
    frame["start_date"] = pd.to_datetime(frame["start_date"])
    frame["end_date"] = pd.to_datetime(frame["end_date"])
    vec = merge_spell_frame(frame)
    expected = []
    for pid in sorted({r[0] for r in rows}):
        for m in merge_spells(RawSpell(p, a, b) for p, a, b in rows if p == pid):
            expected.append((pid, m.start_date, m.end_date, m.length_days))
    got = [(r.person_id, r.start_date.date(), r.end_date.date(), int(r.length_days)) for r in vec.itertuples()]
    assert sorted(got) == sorted(expected)


# -- outcome -----------------------------------------------------------------


def event(kind, first, last, pid="p1"):
    return PensionEvent(pid, kind, month_index(first), month_index(last))


def test_outcome_inside_window():
    assert label_outcome(2016, [event("dp_full", "2018-05", "2019-12")]) is True


def test_outcome_after_window():
    assert label_outcome(2016, [event("dp_full", "2020-01", "2020-06")]) is False


def test_outcome_unknown_when_window_unobserved():
    assert label_outcome(2021, [], observed_through=2022) is None


def test_oa_events_do_not_count():
    assert label_outcome(2016, [event("oa", "2017-01", "2020-12")]) is False


# -- assembly ----------------------------------------------------------------


def base_tables(factory, **extra):
    persons = [("p1", "F", 1966), ("p2", "M", 1970)] + extra.pop("persons", [])
    employment = [("p1", 2018, "E1", "2221", 2031), ("p2", 2018, "E1", "2221", 2035)]
    employment += extra.pop("employment", [])
    return factory(persons=persons, employment=employment, **extra)


def test_oa_eligible_rows_are_excluded(tables_factory):
    t = base_tables(tables_factory, persons=[("p3", "M", 1953)],
                    employment=[("p3", 2018, "E1", "2221", 2018)])
    obs = assemble_observations(t, [2018], observed_through=2021)
    assert "p3" not in set(obs["person_id"])


def test_full_dp_in_december_excludes(tables_factory):
    t = base_tables(tables_factory, pensions=[("p1", "dp_full", "2018-06", "2019-03")])
    obs = assemble_observations(t, [2018], observed_through=2021)
    assert obs["person_id"].tolist() == ["p2"]


def test_rehab_in_december_does_not_exclude(tables_factory):
    t = base_tables(tables_factory, pensions=[("p1", "rehab_benefit", "2018-06", "2019-03")])
    obs = assemble_observations(t, [2018], observed_through=2021)
    row = obs.set_index("person_id").loc["p1"]
    assert row["previous_dp_flag"] == 1 and row["years_since_dp"] == 0
    assert bool(row["outcome"]) is True


def test_prior_long_spell_history(tables_factory):
    t = base_tables(tables_factory, spells=[("p1", "2016-02-01", "2016-04-15")])
    obs = assemble_observations(t, [2018], observed_through=2021).set_index("person_id")
    assert obs.loc["p1", "prior_60plus_flag"] == 1
    assert obs.loc["p1", "years_since_60plus"] == 2
    assert obs.loc["p2", "prior_60plus_flag"] == 0
    assert pd.isna(obs.loc["p2", "years_since_60plus"])


def test_same_year_spells_fill_bands(tables_factory):
    t = base_tables(tables_factory, spells=[
        ("p1", "2018-01-01", "2018-01-03"),
        ("p1", "2018-03-01", "2018-03-07"),
        ("p1", "2018-05-01", "2018-05-12"),
        ("p1", "2018-07-01", "2018-08-30"),
    ])
    row = assemble_observations(t, [2018], observed_through=2021).set_index("person_id").loc["p1"]
    assert [row[c] for c in ("n_0_4", "n_5_9", "n_10_14", "n_60plus")] == [1, 1, 1, 1]
    assert row["annual_sa_days"] == 3 + 7 + 12 + 61
    assert row["days_beyond_60"] == 1


def test_missing_person_record(tables_factory):
    t = base_tables(tables_factory, employment=[("ghost", 2018, "E1", "2221", 2040)])
    with pytest.raises(InputError, match="ghost"):
        assemble_observations(t, [2018])


def test_outcome_missing_past_observation_horizon(tables_factory):
    t = base_tables(tables_factory, pensions=[("p2", "oa", "2035-01", "2036-12")])
    obs = assemble_observations(t, [2018], observed_through=2020)
    assert obs["outcome"].isna().all()


def test_age_and_oa_fraction(tables_factory):
    obs = assemble_observations(base_tables(tables_factory), [2018], observed_through=2021).set_index("person_id")
    assert obs.loc["p1", "age"] == 52
    assert obs.loc["p1", "oa_fraction"] == 0.0
    assert obs.loc["p1", "female"] == 1


def test_synthetic_observations_have_unique_keys(small_synth):
    obs = small_synth.observations
    assert not obs.duplicated(["person_id", "year"]).any()
    assert (obs["age"] >= 17).all()
    assert np.all(obs["personal_oa_year"] > obs["year"])
