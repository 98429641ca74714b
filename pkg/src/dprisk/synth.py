"""Seeded synthetic register extracts with model-driven DP outcomes.

Covariates (demographics, employment, sickness-absence spells, earlier
pensions) are drawn from simple configurable distributions. Outcomes are then
simulated year by year from a logistic model: a person whose draw is positive
gets a DP event in the third following year and leaves the data after that
observation year, so labels rebuilt from the emitted pension events equal the
drawn ones.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import InputError
from .features import OccupationRiskMap, employer_gini_map, feature_frame
from .glm import CoefficientSet, load_table1, predict
from .ingest import (
    DP_KINDS,
    InputTables,
    assemble_observations,
    merge_spell_frame,
    month_index,
    write_inputs,
)

logger = logging.getLogger(__name__)

OUTCOME_KIND_WEIGHTS = {"dp_full": 0.35, "dp_partial": 0.2, "rehab_benefit": 0.3, "rehab_allowance": 0.15}

# ISCO-08-like unit codes; two per latent risk class
_DEFAULT_CODES = (
    "2310", "2261", "2422", "2330", "2341", "2611", "2142", "2636", "3412", "2359",
    "2221", "7100", "2352", "5322", "2634", "3258", "5321", "4110", "9112", "5311",
)


@dataclass(frozen=True)
class Occupation:
    code: str
    weight: float
    risk_class: int
    spell_multiplier: float


def default_occupations() -> tuple[Occupation, ...]:
    occs = []
    for i, code in enumerate(_DEFAULT_CODES):
        cls = i // 2 + 1
        occs.append(Occupation(code, 1.0, cls, round(0.4 * 1.25 ** (cls - 1), 6)))
    return tuple(occs)


@dataclass
class SynthConfig:
    n_persons: int = 50_000
    first_year: int = 2016
    last_year: int = 2021
    female_share: float = 0.759
    age_mean: float = 42.0
    age_sd: float = 11.0
    entrant_age_mean: float = 32.0
    min_age: int = 18
    max_start_age: int = 63
    max_employment_age: int = 69
    late_entry_prob: float = 0.15
    exit_prob: float = 0.03
    employer_switch_prob: float = 0.03
    oa_ages: tuple[int, ...] = (63, 64, 65, 66, 67, 68)
    oa_age_weights: tuple[float, ...] = (0.15, 0.25, 0.25, 0.15, 0.1, 0.1)
    occupations: tuple[Occupation, ...] = field(default_factory=default_occupations)
    n_employers: int = 21
    employer_sigma_range: tuple[float, float] = (0.7, 1.35)
    spell_rate: float = 1.8
    spell_rate_age_slope: float = 0.01
    frailty_shape: float = 1.5
    short_spell_log_mean: float = 0.7
    long_spell_rate: float = 0.02
    long_spell_range: tuple[int, int] = (30, 150)
    split_prob: float = 0.05
    overlap_prob: float = 0.02
    prior_dp_share: float = 0.04
    prior_dp_december_share: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.occupations = tuple(
            o if isinstance(o, Occupation) else Occupation(**o) for o in self.occupations
        )
        if not self.occupations:
            raise InputError("synthetic config needs at least one occupation")
        if self.n_employers < 1:
            raise InputError("synthetic config needs at least one employer")
        if self.n_persons < 0 or self.last_year < self.first_year:
            raise InputError("invalid person count or year range")
        w = np.array([o.weight for o in self.occupations], dtype=float)
        if (w < 0).any() or w.sum() <= 0:
            raise InputError("occupation weights must be non-negative with a positive sum")
        if len(self.oa_ages) != len(self.oa_age_weights):
            raise InputError("oa_ages and oa_age_weights differ in length")

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.last_year + 1))

    @property
    def observed_through(self) -> int:
        return self.last_year + 3

    def latent_risk_map(self) -> OccupationRiskMap:
        return OccupationRiskMap({o.code: o.risk_class for o in self.occupations})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occupations"] = [asdict(o) for o in self.occupations]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("oa_ages", "oa_age_weights", "employer_sigma_range", "long_spell_range"):
            if key in d:
                d[key] = tuple(d[key])
        if "occupations" in d:
            d["occupations"] = tuple(Occupation(**o) if isinstance(o, dict) else o for o in d["occupations"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown synthetic config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class SynthOutput:
    tables: InputTables
    observations: pd.DataFrame
    manifest: dict


def _normalised(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def _persons(cfg: SynthConfig, rng) -> pd.DataFrame:
    n = cfg.n_persons
    ids = np.array([f"P{i:07d}" for i in range(1, n + 1)], dtype=object)
    female = rng.random(n) < cfg.female_share
    late = rng.random(n) < cfg.late_entry_prob
    entry = np.where(late, rng.integers(cfg.first_year + 1, cfg.last_year + 1, n) if cfg.last_year > cfg.first_year else cfg.first_year, cfg.first_year)
    age_mean = np.where(late, cfg.entrant_age_mean, cfg.age_mean)
    age_at_entry = np.clip(np.rint(rng.normal(age_mean, cfg.age_sd)), cfg.min_age, cfg.max_start_age).astype(int)
    birth = entry - age_at_entry
    oa_age = rng.choice(np.asarray(cfg.oa_ages), size=n, p=_normalised(cfg.oa_age_weights))
    return pd.DataFrame({
        "person_id": ids,
        "gender": np.where(female, "F", "M"),
        "birth_year": birth.astype(np.int64),
        "_entry": entry,
        "_oa_year": birth + oa_age,
        "_frailty": rng.gamma(cfg.frailty_shape, 1.0 / cfg.frailty_shape, n),
        "_occ": rng.choice(len(cfg.occupations), size=n, p=_normalised([o.weight for o in cfg.occupations])),
        "_employer": rng.integers(0, cfg.n_employers, n),
    })


def _employment(cfg: SynthConfig, people: pd.DataFrame, rng) -> pd.DataFrame:
    n = len(people)
    years = np.array(cfg.years)
    # exit after a geometric number of years
    stay = rng.geometric(cfg.exit_prob, n) if cfg.exit_prob > 0 else np.full(n, 10**6)
    last = np.minimum(people["_entry"].to_numpy() + stay - 1, cfg.last_year)
    last = np.minimum(last, people["birth_year"].to_numpy() + cfg.max_employment_age)
    idx, yr = np.nonzero(
        (years[None, :] >= people["_entry"].to_numpy()[:, None]) & (years[None, :] <= last[:, None])
    )
    year = years[yr]
    employer = people["_employer"].to_numpy()[idx].copy()
    switch = rng.random(len(idx)) < cfg.employer_switch_prob
    employer[switch] = rng.integers(0, cfg.n_employers, int(switch.sum()))
    codes = np.array([o.code for o in cfg.occupations], dtype=object)
    return pd.DataFrame({
        "person_id": people["person_id"].to_numpy()[idx],
        "year": year.astype(np.int64),
        "employer_id": np.array([f"E{e + 1:03d}" for e in range(cfg.n_employers)], dtype=object)[employer],
        "occupation_code": codes[people["_occ"].to_numpy()[idx]],
        "personal_oa_year": people["_oa_year"].to_numpy()[idx].astype(np.int64),
        "_pidx": idx,
    })


def _spells(cfg: SynthConfig, people: pd.DataFrame, emp: pd.DataFrame, rng) -> pd.DataFrame:
    sigmas = np.linspace(*cfg.employer_sigma_range, cfg.n_employers)
    emp_sigma = sigmas[emp["employer_id"].str[1:].astype(int).to_numpy() - 1]
    pidx = emp["_pidx"].to_numpy()
    age = emp["year"].to_numpy() - people["birth_year"].to_numpy()[pidx]
    mult = np.array([o.spell_multiplier for o in cfg.occupations])[people["_occ"].to_numpy()[pidx]]
    frailty = people["_frailty"].to_numpy()[pidx]
    age_factor = np.maximum(0.2, 1.0 + cfg.spell_rate_age_slope * (age - 43))
    lam = cfg.spell_rate * mult * frailty * age_factor
    n_short = rng.poisson(lam)
    n_long = (rng.random(len(emp)) < np.minimum(1.0, cfg.long_spell_rate * mult * frailty * age_factor)).astype(int)

    rows = np.repeat(np.arange(len(emp)), n_short)
    z = rng.standard_normal(len(rows))
    short_len = np.ceil(np.exp(cfg.short_spell_log_mean + emp_sigma[rows] * z)).astype(np.int64)
    lrows = np.repeat(np.arange(len(emp)), n_long)
    long_len = rng.integers(cfg.long_spell_range[0], cfg.long_spell_range[1] + 1, len(lrows))
    rows = np.concatenate([rows, lrows])
    length = np.clip(np.concatenate([short_len, long_len]), 1, 365)

    year = emp["year"].to_numpy()[rows]
    jan1 = (year - 1970).astype("datetime64[Y]").astype("datetime64[D]")
    ndays = np.where((year % 4 == 0) & ((year % 100 != 0) | (year % 400 == 0)), 366, 365)
    start = jan1 + rng.integers(0, ndays).astype("timedelta64[D]")
    end = start + (length - 1).astype("timedelta64[D]")
    pid = emp["person_id"].to_numpy()[rows]

    # continuation certificates: split a spell into two back-to-back records
    split = (rng.random(len(rows)) < cfg.split_prob) & (length >= 2)
    cut = start[split] + (rng.integers(1, length[split])).astype("timedelta64[D]")
    extra_start, extra_end, extra_pid = [cut], [end[split]], [pid[split]]
    end = end.copy()
    end[split] = cut - np.timedelta64(1, "D")
    # overlapping duplicate reports
    dup = rng.random(len(rows)) < cfg.overlap_prob
    shift = rng.integers(0, 3, int(dup.sum())).astype("timedelta64[D]")
    extra_start.append(start[dup] + shift)
    extra_end.append(np.maximum(end[dup], start[dup] + shift))
    extra_pid.append(pid[dup])

    out = pd.DataFrame({
        "person_id": np.concatenate([pid, *extra_pid]),
        "start_date": pd.to_datetime(np.concatenate([start, *extra_start])),
        "end_date": pd.to_datetime(np.concatenate([end, *extra_end])),
    })
    return out.sort_values(["person_id", "start_date", "end_date"], kind="mergesort").reset_index(drop=True)


def _prior_pensions(cfg: SynthConfig, people: pd.DataFrame, rng) -> pd.DataFrame:
    """Earlier DP/rehabilitation spells, all ending by December of the first year."""
    n = len(people)
    has = rng.random(n) < cfg.prior_dp_share
    idx = np.flatnonzero(has)
    k = len(idx)
    kinds = rng.choice(list(OUTCOME_KIND_WEIGHTS), size=k, p=_normalised(list(OUTCOME_KIND_WEIGHTS.values())))
    dec_first = month_index(cfg.first_year, 12)
    covers_dec = (rng.random(k) < cfg.prior_dp_december_share) & np.isin(kinds, ("dp_full", "dp_partial"))
    last = np.where(
        covers_dec,
        dec_first,
        month_index(cfg.first_year - 10, 1) + rng.integers(0, 12 * 11 - 1, k),
    )
    first = np.maximum(last - rng.integers(0, 24, k), month_index(cfg.first_year - 11, 1))
    return pd.DataFrame({
        "person_id": people["person_id"].to_numpy()[idx],
        "benefit_kind": kinds,
        "first_month": first.astype(np.int64),
        "last_month": last.astype(np.int64),
    })


def _oa_pensions(cfg: SynthConfig, people: pd.DataFrame) -> pd.DataFrame:
    horizon = cfg.observed_through
    oa = people["_oa_year"].to_numpy()
    idx = np.flatnonzero(oa <= horizon)
    return pd.DataFrame({
        "person_id": people["person_id"].to_numpy()[idx],
        "benefit_kind": "oa",
        "first_month": (oa[idx] * 12).astype(np.int64),
        "last_month": np.full(len(idx), month_index(horizon, 12), dtype=np.int64),
    })


def simulate_outcomes(
    observations: pd.DataFrame,
    coefficients: CoefficientSet,
    risk_map: OccupationRiskMap,
    rng,
    observed_through: int | None = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Bernoulli outcomes from the model plus matching DP events.

    Each positive row gets one pension event starting in the third year after
    the observation (inside its outcome window but outside the windows of the
    person's earlier rows). Returns the labelled observations and the events.
    """
    rng = np.random.default_rng(rng)
    X = feature_frame(observations, risk_map.lookup(observations["occupation_code"]), observations["employer_gini"])
    p = predict(X, coefficients)
    y = rng.random(len(observations)) < p
    labelled = observations.copy()
    labelled["outcome"] = pd.array(y, dtype="boolean")
    pos = labelled[y]
    k = len(pos)
    kinds = rng.choice(list(OUTCOME_KIND_WEIGHTS), size=k, p=_normalised(list(OUTCOME_KIND_WEIGHTS.values())))
    first = (pos["year"].to_numpy() + 3) * 12 + rng.integers(0, 12, k)
    last = first + rng.integers(0, 36, k)
    if observed_through is not None:
        last = np.minimum(last, month_index(observed_through, 12))
    events = pd.DataFrame({
        "person_id": pos["person_id"].to_numpy(),
        "benefit_kind": kinds,
        "first_month": first.astype(np.int64),
        "last_month": last.astype(np.int64),
    })
    return labelled, events


def generate(
    config: SynthConfig | None = None,
    out_dir=None,
    coefficients: CoefficientSet | None = None,
) -> SynthOutput:
    """Draw a synthetic population; optionally write the four input CSVs and a manifest."""
    cfg = config or SynthConfig()
    coefficients = coefficients or load_table1()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)]
    r_people, r_emp, r_spells, r_pens, r_out = streams

    people = _persons(cfg, r_people)
    emp = _employment(cfg, people, r_emp)
    spells = _spells(cfg, people, emp, r_spells)
    history = pd.concat([_prior_pensions(cfg, people, r_pens), _oa_pensions(cfg, people)], ignore_index=True)
    persons = people[["person_id", "gender", "birth_year"]]
    risk_map = cfg.latent_risk_map()

    merged = merge_spell_frame(spells)
    censor = pd.Series(np.iinfo(np.int64).max, index=persons["person_id"].to_numpy())
    spell_year = spells["start_date"].dt.year.to_numpy()
    labelled, outcome_events = [], []
    for year in cfg.years:
        # persons with a positive outcome earlier are gone from year onwards
        active_emp = emp[(emp["year"] == year) & (censor.reindex(emp["person_id"]).to_numpy() >= year)]
        if active_emp.empty:
            continue
        active_ids = set(active_emp["person_id"])
        m_year = merged[(merged["initiation_year"] == year) & merged["person_id"].isin(active_ids)]
        gmap = employer_gini_map(m_year, active_emp)
        tables = InputTables(persons, spells, active_emp[["person_id", "year", "employer_id", "occupation_code", "personal_oa_year"]], history)
        obs = assemble_observations(
            tables, [year], merged=merged[merged["person_id"].isin(active_ids)], gini_map=gmap,
            observed_through=cfg.observed_through,
        )
        obs, events = simulate_outcomes(obs, coefficients, risk_map, r_out, cfg.observed_through)
        censor.loc[events["person_id"].to_numpy()] = year
        labelled.append(obs)
        outcome_events.append(events)

    keep_emp = emp["year"].to_numpy() <= censor.reindex(emp["person_id"]).to_numpy()
    keep_spells = spell_year <= censor.reindex(spells["person_id"]).to_numpy()
    employment = emp.loc[keep_emp, ["person_id", "year", "employer_id", "occupation_code", "personal_oa_year"]]
    pensions = pd.concat([history, *outcome_events], ignore_index=True)
    pensions = pensions.sort_values(["person_id", "first_month", "benefit_kind"], kind="mergesort")
    out_tables = InputTables(
        persons.reset_index(drop=True),
        spells[keep_spells].reset_index(drop=True),
        employment.reset_index(drop=True),
        pensions.reset_index(drop=True),
    )
    observations = (
        pd.concat(labelled, ignore_index=True).sort_values(["person_id", "year"], kind="mergesort").reset_index(drop=True)
        if labelled else pd.DataFrame()
    )
    manifest = {
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "config": cfg.to_dict(),
        "observed_through": cfg.observed_through,
        "row_counts": {name: len(t) for name, t in zip(InputTables._fields, out_tables)},
        "observations": len(observations),
        "outcome_prevalence": float(observations["outcome"].mean()) if len(observations) else None,
    }
    if out_dir is not None:
        paths = write_inputs(out_tables, out_dir)
        manifest["files"] = {name: _sha256(p) for name, p in paths.items()}
        Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("generated %d persons, %d observations", len(persons), len(observations))
    return SynthOutput(out_tables, observations, manifest)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


__all__ = ["Occupation", "SynthConfig", "SynthOutput", "generate", "simulate_outcomes", "DP_KINDS"]
