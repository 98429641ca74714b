"""Register extracts -> person-year observations.

Four CSV inputs (persons, spells, employment, pensions) are parsed into
DataFrames, sickness-absence spells are concatenated, and one observation per
employed person-year is assembled with its history fields and outcome label.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .exceptions import InputError, SchemaError
from .features import BAND_COLUMNS, band_of, employer_gini_map, oa_fraction_array

logger = logging.getLogger(__name__)

DP_KINDS = ("dp_full", "dp_partial", "rehab_benefit", "rehab_allowance")
FULL_DP_KINDS = ("dp_full", "dp_partial")
BENEFIT_KINDS = DP_KINDS + ("oa",)
GENDER_CODES = ("M", "F")
HISTORY_CAP_YEARS = 10
MIN_AGE = 17

SCHEMAS = {
    "persons": ("person_id", "gender", "birth_year"),
    "spells": ("person_id", "start_date", "end_date"),
    "employment": ("person_id", "year", "employer_id", "occupation_code", "personal_oa_year"),
    "pensions": ("person_id", "benefit_kind", "first_month", "last_month"),
}

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_index(text_or_year, month: int | None = None) -> int:
    """Months since year 0: ``month_index("2018-05") == 2018 * 12 + 4``."""
    if month is not None:
        return int(text_or_year) * 12 + int(month) - 1
    m = _MONTH_RE.match(str(text_or_year))
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(f"not a YYYY-MM month: {text_or_year!r}")
    return int(m.group(1)) * 12 + int(m.group(2)) - 1


def format_month(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


@dataclass(frozen=True)
class RawSpell:
    person_id: str
    start_date: date
    end_date: date

    def __post_init__(self):
        if self.end_date < self.start_date:
            raise InputError(f"spell of {self.person_id} ends before it starts")


@dataclass(frozen=True)
class MergedSpell:
    person_id: str
    start_date: date
    end_date: date

    @property
    def length_days(self) -> int:
        return (self.end_date - self.start_date).days + 1

    @property
    def initiation_year(self) -> int:
        return self.start_date.year


@dataclass(frozen=True)
class PensionEvent:
    person_id: str
    benefit_kind: str
    first_month: int
    last_month: int

    def __post_init__(self):
        if self.benefit_kind not in BENEFIT_KINDS:
            raise InputError(f"unknown benefit kind {self.benefit_kind!r}")
        if self.last_month < self.first_month:
            raise InputError(f"pension event of {self.person_id} ends before it starts")


class InputTables(NamedTuple):
    persons: pd.DataFrame
    spells: pd.DataFrame
    employment: pd.DataFrame
    pensions: pd.DataFrame


# -- parsing -----------------------------------------------------------------


def _fail(path, row_pos: int, column: str, message: str):
    # header is line 1
    raise InputError(f"{path}: line {row_pos + 2}, column {column!r}: {message}")


def _read_table(path, kind: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, header row required") from None
    missing = [c for c in SCHEMAS[kind] if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}; expected {','.join(SCHEMAS[kind])}")
    df = df[list(SCHEMAS[kind])].copy()
    for col in df.columns:
        df[col] = df[col].str.strip()
    for col in df.columns:
        blank = (df[col] == "").to_numpy()
        if blank.any():
            _fail(path, int(np.argmax(blank)), col, "empty value")
    return df.reset_index(drop=True)


def _parse_int(df, col, path) -> pd.Series:
    values = pd.to_numeric(df[col], errors="coerce")
    bad = (values.isna() | (values != values.round())).to_numpy()
    if bad.any():
        pos = int(np.argmax(bad))
        _fail(path, pos, col, f"not an integer: {df[col].iloc[pos]!r}")
    return values.astype(np.int64)


def _parse_date(df, col, path) -> pd.Series:
    values = pd.to_datetime(df[col], format="%Y-%m-%d", errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        pos = int(np.argmax(bad))
        _fail(path, pos, col, f"not an ISO-8601 date: {df[col].iloc[pos]!r}")
    return values


def _parse_month(df, col, path) -> pd.Series:
    parts = df[col].str.extract(_MONTH_RE.pattern)
    year = pd.to_numeric(parts[0], errors="coerce")
    month = pd.to_numeric(parts[1], errors="coerce")
    bad = (year.isna() | month.isna() | (month < 1) | (month > 12)).to_numpy()
    if bad.any():
        pos = int(np.argmax(bad))
        _fail(path, pos, col, f"not a YYYY-MM month: {df[col].iloc[pos]!r}")
    return (year * 12 + month - 1).astype(np.int64)


def _check_enum(df, col, allowed, path):
    bad = (~df[col].isin(allowed)).to_numpy()
    if bad.any():
        pos = int(np.argmax(bad))
        _fail(path, pos, col, f"{df[col].iloc[pos]!r} not one of {', '.join(allowed)}")


def parse_persons(path) -> pd.DataFrame:
    df = _read_table(path, "persons")
    _check_enum(df, "gender", GENDER_CODES, path)
    df["birth_year"] = _parse_int(df, "birth_year", path)
    dup = df["person_id"].duplicated().to_numpy()
    if dup.any():
        pos = int(np.argmax(dup))
        _fail(path, pos, "person_id", f"duplicate person {df['person_id'].iloc[pos]!r}")
    return df


def parse_spells(path) -> pd.DataFrame:
    df = _read_table(path, "spells")
    df["start_date"] = _parse_date(df, "start_date", path)
    df["end_date"] = _parse_date(df, "end_date", path)
    bad = (df["end_date"] < df["start_date"]).to_numpy()
    if bad.any():
        _fail(path, int(np.argmax(bad)), "end_date", "end_date before start_date")
    return df


def parse_employment(path) -> pd.DataFrame:
    df = _read_table(path, "employment")
    df["year"] = _parse_int(df, "year", path)
    df["personal_oa_year"] = _parse_int(df, "personal_oa_year", path)
    dup = df.duplicated(["person_id", "year"]).to_numpy()
    if dup.any():
        pos = int(np.argmax(dup))
        _fail(
            path, pos, "year",
            f"duplicate employment row for person {df['person_id'].iloc[pos]!r} in {df['year'].iloc[pos]}",
        )
    return df


def parse_pensions(path) -> pd.DataFrame:
    df = _read_table(path, "pensions")
    _check_enum(df, "benefit_kind", BENEFIT_KINDS, path)
    df["first_month"] = _parse_month(df, "first_month", path)
    df["last_month"] = _parse_month(df, "last_month", path)
    bad = (df["last_month"] < df["first_month"]).to_numpy()
    if bad.any():
        _fail(path, int(np.argmax(bad)), "last_month", "last_month before first_month")
    return df


def parse_inputs(persons_path, spells_path, employment_path, pensions_path) -> InputTables:
    tables = InputTables(
        parse_persons(persons_path),
        parse_spells(spells_path),
        parse_employment(employment_path),
        parse_pensions(pensions_path),
    )
    logger.info(
        "parsed %d persons, %d spells, %d employment rows, %d pension events",
        *(len(t) for t in tables),
    )
    return tables


def load_inputs(directory) -> InputTables:
    d = Path(directory)
    return parse_inputs(*(d / f"{name}.csv" for name in SCHEMAS))


def write_inputs(tables: InputTables, directory) -> dict[str, Path]:
    """Write the four tables in the CSV schemas ``parse_inputs`` reads."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spells = tables.spells.copy()
    for col in ("start_date", "end_date"):
        spells[col] = pd.to_datetime(spells[col]).dt.strftime("%Y-%m-%d")
    pensions = tables.pensions.copy()
    for col in ("first_month", "last_month"):
        pensions[col] = [format_month(int(m)) for m in pensions[col]]
    frames = {
        "persons": tables.persons,
        "spells": spells,
        "employment": tables.employment,
        "pensions": pensions,
    }
    paths = {}
    for name, frame in frames.items():
        paths[name] = d / f"{name}.csv"
        frame[list(SCHEMAS[name])].to_csv(paths[name], index=False, lineterminator="\n")
    return paths


# -- spell concatenation -----------------------------------------------------


def merge_spells(spells: Iterable[RawSpell]) -> list[MergedSpell]:
    """Concatenate one person's overlapping or back-to-back spells.

    Only spells starting in the same calendar year are joined; the result is
    sorted by start date.
    """
    ordered = sorted(spells, key=lambda s: (s.start_date.year, s.start_date, s.end_date))
    merged: list[MergedSpell] = []
    for s in ordered:
        if merged:
            last = merged[-1]
            if (
                last.initiation_year == s.start_date.year
                and (s.start_date - last.end_date).days <= 1
            ):
                if s.end_date > last.end_date:
                    merged[-1] = MergedSpell(last.person_id, last.start_date, s.end_date)
                continue
        merged.append(MergedSpell(s.person_id, s.start_date, s.end_date))
    return sorted(merged, key=lambda m: (m.start_date, m.end_date))


def _days(col: pd.Series) -> np.ndarray:
    return col.to_numpy().astype("datetime64[D]").astype(np.int64)


def spell_blocks(spells: pd.DataFrame) -> tuple[pd.DataFrame, np.ndarray]:
    """Sort raw spells and label each with the merged spell it belongs to.

    Returns the sorted frame (original index kept) and the block id per row.
    """
    df = spells[["person_id", "start_date", "end_date"]].copy()
    df["initiation_year"] = df["start_date"].dt.year
    df = df.sort_values(["person_id", "initiation_year", "start_date", "end_date"], kind="mergesort")
    if df.empty:
        return df, np.zeros(0, dtype=np.int64)
    group = df.groupby(["person_id", "initiation_year"], sort=False).ngroup().to_numpy()
    start = _days(df["start_date"])
    end = _days(df["end_date"])
    reach = pd.Series(end).groupby(group).cummax().to_numpy()
    first_in_group = np.r_[True, group[1:] != group[:-1]]
    prev_reach = np.r_[0, reach[:-1]]
    new_block = first_in_group | (start > prev_reach + 1)
    return df, np.cumsum(new_block) - 1


def merge_spell_frame(spells: pd.DataFrame) -> pd.DataFrame:
    """Vectorised ``merge_spells`` over every person in ``spells``."""
    df, block = spell_blocks(spells)
    cols = ["person_id", "start_date", "end_date", "length_days", "initiation_year"]
    if df.empty:
        return pd.DataFrame(columns=cols)
    out = (
        df.assign(_block=block)
        .groupby("_block", sort=True)
        .agg(
            person_id=("person_id", "first"),
            start_date=("start_date", "min"),
            end_date=("end_date", "max"),
            initiation_year=("initiation_year", "first"),
        )
        .reset_index(drop=True)
    )
    out["length_days"] = _days(out["end_date"]) - _days(out["start_date"]) + 1
    return out[cols]


# -- outcome -----------------------------------------------------------------


def label_outcome(
    year: int,
    events: Iterable[PensionEvent],
    observed_through: int | None = None,
    kinds: Iterable[str] = DP_KINDS,
) -> bool | None:
    """DP outcome for an observation in ``year``.

    True when any event of ``kinds`` has a paid month in Jan ``year+1`` ..
    Dec ``year+3``. Returns None when pension data end (``observed_through``,
    last fully observed calendar year) before the window does.
    """
    if observed_through is not None and year + 3 > observed_through:
        return None
    lo, hi = month_index(year + 1, 1), month_index(year + 3, 12)
    kinds = set(kinds)
    return any(
        e.benefit_kind in kinds and e.first_month <= hi and e.last_month >= lo for e in events
    )


# -- observations ------------------------------------------------------------


OBSERVATION_FIELDS = (
    "person_id", "year", "age", "gender", "female", "occupation_code", "employer_id",
    "personal_oa_year", "oa_fraction", *BAND_COLUMNS, "n_spells", "longest_spell_days",
    "days_beyond_60", "annual_sa_days", "prior_60plus_flag", "years_since_60plus",
    "previous_dp_flag", "years_since_dp", "employer_gini", "outcome",
)


def infer_observed_through(pensions: pd.DataFrame) -> int | None:
    if pensions.empty:
        return None
    return int(max(pensions["first_month"].max(), pensions["last_month"].max()) // 12)


def spell_summary(merged: pd.DataFrame, year: int) -> pd.DataFrame:
    """Per-person band counts and day totals for spells initiated in ``year``."""
    cur = merged[merged["initiation_year"] == year]
    columns = [*BAND_COLUMNS, "n_spells", "longest_spell_days", "annual_sa_days"]
    if cur.empty:
        return pd.DataFrame(columns=columns, index=pd.Index([], name="person_id"), dtype=np.int64)
    lengths = cur["length_days"].to_numpy(np.int64)
    onehot = np.zeros((len(cur), len(BAND_COLUMNS)), dtype=np.int64)
    onehot[np.arange(len(cur)), band_of(lengths)] = 1
    frame = pd.DataFrame(onehot, columns=list(BAND_COLUMNS), index=cur["person_id"].to_numpy())
    frame["n_spells"] = 1
    frame["annual_sa_days"] = lengths
    sums = frame.groupby(level=0).sum()
    sums["longest_spell_days"] = pd.Series(lengths, index=frame.index).groupby(level=0).max()
    sums.index.name = "person_id"
    return sums[columns]


def assemble_observations(
    tables: InputTables,
    years: Iterable[int] | None = None,
    *,
    merged: pd.DataFrame | None = None,
    gini_map: pd.DataFrame | None = None,
    observed_through: int | None = None,
    outcome_kinds: Iterable[str] = DP_KINDS,
    exclusion_kinds: Iterable[str] = FULL_DP_KINDS,
) -> pd.DataFrame:
    """One row per employed person-year, after exclusions.

    Rows are dropped when the person is already eligible for old-age pension
    (``personal_oa_year <= year``) or a DP of ``exclusion_kinds`` is paid for
    December of the year. ``outcome`` is a nullable boolean; it is missing when
    the three following years are not covered by pension data.
    """
    persons, spells, employment, pensions = tables
    if years is None:
        years = sorted(employment["year"].unique())
    if merged is None:
        merged = merge_spell_frame(spells)
    if gini_map is None:
        gini_map = employer_gini_map(merged, employment)
    if observed_through is None:
        observed_through = infer_observed_through(pensions)
    outcome_kinds = tuple(outcome_kinds)
    exclusion_kinds = tuple(exclusion_kinds)

    missing = sorted(set(employment["person_id"]) - set(persons["person_id"]))
    if missing:
        raise InputError(
            f"{len(missing)} employed persons missing from persons table: " + ", ".join(missing[:20])
        )
    people = persons.set_index("person_id")
    long_spells = merged[merged["length_days"] >= 60]
    dp_events = pensions[pensions["benefit_kind"].isin(outcome_kinds)]
    excl_events = pensions[pensions["benefit_kind"].isin(exclusion_kinds)]

    parts = []
    for year in years:
        year = int(year)
        emp = employment[employment["year"] == year]
        emp = emp[emp["personal_oa_year"] > year]
        dec = month_index(year, 12)
        on_dp = excl_events.loc[
            (excl_events["first_month"] <= dec) & (excl_events["last_month"] >= dec), "person_id"
        ]
        emp = emp[~emp["person_id"].isin(set(on_dp))]
        obs = emp[["person_id", "year", "employer_id", "occupation_code", "personal_oa_year"]].copy()
        obs["gender"] = people.loc[obs["person_id"], "gender"].to_numpy()
        obs["female"] = (obs["gender"] == "F").astype(np.int64)
        obs["age"] = year - people.loc[obs["person_id"], "birth_year"].to_numpy()
        young = obs["age"] < MIN_AGE
        if young.any():
            logger.warning("%d rows under age %d in %d dropped", int(young.sum()), MIN_AGE, year)
            obs = obs[~young]
        obs["oa_fraction"] = oa_fraction_array(obs["personal_oa_year"], year)

        summary = spell_summary(merged, year).reindex(obs["person_id"]).fillna(0).astype(np.int64)
        for col in summary.columns:
            obs[col] = summary[col].to_numpy()
        obs["days_beyond_60"] = np.maximum(obs["longest_spell_days"] - 60, 0)

        last60 = long_spells.loc[long_spells["initiation_year"] < year].groupby("person_id")["initiation_year"].max()
        last60 = last60.reindex(obs["person_id"]).to_numpy(dtype=float)
        obs["prior_60plus_flag"] = (~np.isnan(last60)).astype(np.int64)
        obs["years_since_60plus"] = pd.array(year - last60, dtype="Int64")

        paid = dp_events[dp_events["first_month"] <= dec]
        last_paid = np.minimum(paid["last_month"].to_numpy() // 12, year)
        last_dp = pd.Series(last_paid, index=paid["person_id"].to_numpy()).groupby(level=0).max()
        last_dp = last_dp.reindex(obs["person_id"]).to_numpy(dtype=float)
        obs["previous_dp_flag"] = (~np.isnan(last_dp)).astype(np.int64)
        obs["years_since_dp"] = pd.array(np.minimum(year - last_dp, HISTORY_CAP_YEARS), dtype="Int64")

        if observed_through is not None and year + 3 > observed_through:
            obs["outcome"] = pd.array([pd.NA] * len(obs), dtype="boolean")
        else:
            lo, hi = month_index(year + 1, 1), month_index(year + 3, 12)
            hit = dp_events.loc[(dp_events["first_month"] <= hi) & (dp_events["last_month"] >= lo), "person_id"]
            obs["outcome"] = pd.array(obs["person_id"].isin(set(hit)).to_numpy(), dtype="boolean")
        parts.append(obs)

    if parts:
        obs = pd.concat(parts, ignore_index=True)
    else:
        obs = pd.DataFrame(columns=[c for c in OBSERVATION_FIELDS if c != "employer_gini"])
    obs = obs.merge(gini_map.rename(columns={"gini": "employer_gini"}), on=["employer_id", "year"], how="left")
    obs["employer_gini"] = obs["employer_gini"].fillna(0.0)
    obs = obs.sort_values(["person_id", "year"], kind="mergesort").reset_index(drop=True)
    return obs[list(OBSERVATION_FIELDS)]


def read_observations(path) -> pd.DataFrame:
    """Reload an observation table written with ``DataFrame.to_csv``."""
    df = pd.read_csv(
        path,
        dtype={"person_id": str, "employer_id": str, "occupation_code": str, "gender": str},
    )
    missing = [c for c in OBSERVATION_FIELDS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    for col in ("years_since_60plus", "years_since_dp"):
        df[col] = df[col].astype("Int64")
    df["outcome"] = df["outcome"].astype("boolean")
    return df
