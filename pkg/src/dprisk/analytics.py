"""Employer-facing outputs built on scored person-year observations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import check_frame
from .exceptions import InputError
from .features import OccupationRiskMap, employer_gini_map, feature_frame, lookup_gini
from .glm import CoefficientSet, predict
from .ingest import InputTables, assemble_observations, merge_spell_frame, spell_blocks

logger = logging.getLogger(__name__)

DEFAULT_AGE_BANDS = {"17+": 17, "55+": 55}
DEFAULT_MIN_CELL = 30
MAX_THRESHOLD_DAYS = 365
CRITICAL_MIN_AGE = 45
SCENARIO_BANDS = {"1-5": (1, 5), "6-30": (6, 30), "31+": (31, None)}


def score_population(
    observations: pd.DataFrame,
    coefficients: CoefficientSet,
    risk_map: OccupationRiskMap,
    gini_map: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Predicted three-year DP probability per observation, sorted by person and year."""
    cols = ["person_id", "year", "probability"]
    if observations.empty:
        return pd.DataFrame(columns=cols)
    obs = observations.sort_values(["person_id", "year"], kind="mergesort")
    X = feature_frame(obs, risk_map.lookup(obs["occupation_code"]), lookup_gini(obs, gini_map))
    out = obs[["person_id", "year"]].reset_index(drop=True)
    out["probability"] = predict(X, coefficients)
    return out


def _with_observation_fields(scored: pd.DataFrame, observations, fields) -> pd.DataFrame:
    need = [f for f in fields if f not in scored.columns]
    if not need:
        return scored
    if observations is None:
        raise InputError(f"scored set lacks {', '.join(need)}; pass the observations")
    return scored.merge(observations[["person_id", "year", *need]], on=["person_id", "year"], how="left")


def risk_table(
    scored: pd.DataFrame,
    observations: pd.DataFrame | None = None,
    age_bands: dict[str, int] = DEFAULT_AGE_BANDS,
    min_cell: int = DEFAULT_MIN_CELL,
) -> pd.DataFrame:
    """Mean predicted risk and expected DPs by occupation and age band.

    Each band ``label -> minimum age`` is cumulative ("55+" includes everyone
    aged 55 or over). A ``Total`` row per band covers the whole population;
    occupation cells with fewer than ``min_cell`` employees have their risk
    figures masked.
    """
    df = _with_observation_fields(scored, observations, ["occupation_code", "age"])
    rows = []
    for label, min_age in age_bands.items():
        sub = df[df["age"] >= min_age]
        g = sub.groupby("occupation_code", sort=True)["probability"]
        cell = pd.DataFrame({"n": g.size(), "mean_risk": g.mean(), "expected_dps": g.sum()}).reset_index()
        cell["age_band"] = label
        rows.append(cell)
        rows.append(pd.DataFrame({
            "occupation_code": ["Total"], "age_band": [label], "n": [len(sub)],
            "mean_risk": [sub["probability"].mean() if len(sub) else np.nan],
            "expected_dps": [sub["probability"].sum()],
        }))
    out = pd.concat(rows, ignore_index=True)[["occupation_code", "age_band", "n", "mean_risk", "expected_dps"]]
    masked = (out["n"] < min_cell) & (out["occupation_code"] != "Total")
    out["suppressed"] = masked
    out.loc[masked, ["mean_risk", "expected_dps"]] = np.nan
    return out


def flag_highest_decile(
    scored: pd.DataFrame,
    years=None,
    share: float = 0.10,
    by: str | None = None,
) -> pd.Series:
    """Boolean flag for the top ``share`` of probabilities in the pooled years.

    Exactly ceil(share * n) rows are flagged per pool; ties are broken by
    probability descending, then person_id and year ascending. Rows outside
    ``years`` are never flagged. ``by`` pools within groups of that column
    (e.g. ``employer_id``) instead of globally.
    """
    check_frame(scored, ["person_id", "year", "probability"], "scored")
    flags = pd.Series(False, index=scored.index)
    pool = scored if years is None else scored[scored["year"].isin(list(years))]
    groups = [pool] if by is None else [g for _, g in pool.groupby(by, sort=True)]
    for g in groups:
        if g.empty:
            continue
        k = math.ceil(share * len(g) - 1e-9)
        order = g.assign(_neg=-g["probability"]).sort_values(["_neg", "person_id", "year"], kind="mergesort")
        flags.loc[order.index[:k]] = True
    return flags


@dataclass
class CriticalDurationResult:
    occupation_code: str
    eligible_n: int
    threshold_days: int | None
    objective_value: float
    crossing_count: int
    crossing_highest_risk_count: int
    status: str = "ok"

    @property
    def share(self) -> float:
        return self.crossing_highest_risk_count / self.crossing_count if self.crossing_count else float("nan")


def critical_threshold(days, flags, max_days: int = MAX_THRESHOLD_DAYS):
    """Scan t = 1..max_days; return (t, objective, crossing, flagged) or None.

    objective(t) = flagged_crossing * (flagged_crossing / crossing) where
    crossing counts employees with at least t accrued days. Ties go to the
    smallest t; None when no t has a positive objective.
    """
    d = np.minimum(np.asarray(days, dtype=np.int64), max_days)
    f = np.asarray(flags, dtype=bool)
    total = np.bincount(d, minlength=max_days + 1)
    hits = np.bincount(d[f], minlength=max_days + 1)
    # counts of d >= t for t = 0..max_days
    crossing = np.cumsum(total[::-1])[::-1][1:]
    flagged = np.cumsum(hits[::-1])[::-1][1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        objective = np.where(crossing > 0, flagged * (flagged / np.maximum(crossing, 1)), 0.0)
    i = int(np.argmax(objective))
    if objective[i] <= 0:
        return None
    return i + 1, float(objective[i]), int(crossing[i]), int(flagged[i])


def eligible_for_critical_duration(observations: pd.DataFrame) -> pd.Series:
    """Age 45+, no DP history and no 60+ day spell in the year."""
    return (
        (observations["age"] >= CRITICAL_MIN_AGE)
        & (observations["previous_dp_flag"] == 0)
        & (observations["n_60plus"] == 0)
    )


def critical_duration(frame: pd.DataFrame, occupation_code=None) -> CriticalDurationResult:
    """Critical annual SA-day threshold for one occupation (or all rows).

    ``frame`` needs observation fields plus a boolean ``top_decile_flag``.
    """
    df = frame if occupation_code is None else frame[frame["occupation_code"] == occupation_code]
    df = df[eligible_for_critical_duration(df)]
    label = "ALL" if occupation_code is None else str(occupation_code)
    n_flagged = int(df["top_decile_flag"].sum())
    if n_flagged == 0:
        return CriticalDurationResult(label, len(df), None, 0.0, 0, 0, "no highest-risk employees among eligibles")
    found = critical_threshold(df["annual_sa_days"], df["top_decile_flag"])
    if found is None:
        return CriticalDurationResult(label, len(df), None, 0.0, 0, 0, "no highest-risk employee has sickness-absence days")
    t, obj, crossing, flagged = found
    return CriticalDurationResult(label, len(df), t, obj, crossing, flagged)


def critical_duration_table(frame: pd.DataFrame) -> pd.DataFrame:
    results = [critical_duration(frame, code) for code in sorted(frame["occupation_code"].unique())]
    results.append(critical_duration(frame))
    return pd.DataFrame({
        "occupation_code": [r.occupation_code for r in results],
        "eligible_n": [r.eligible_n for r in results],
        "threshold_days": pd.array([r.threshold_days for r in results], dtype="Int64"),
        "objective": [r.objective_value for r in results],
        "components": [
            f"crossing={r.crossing_count};highest_risk={r.crossing_highest_risk_count};"
            f"share={r.share:.6g};status={r.status}"
            for r in results
        ],
    })


# -- scenarios ---------------------------------------------------------------


@dataclass
class ScenarioSpec:
    bands: tuple[str, ...]
    reduction: float
    cost_per_sa_day: float
    avg_employer_dp_cost: float
    replications: int = 10
    seed: int = 0
    age_min: int | None = None
    age_max: int | None = None

    def __post_init__(self):
        if isinstance(self.bands, str):
            self.bands = (self.bands,)
        self.bands = tuple(self.bands)
        unknown = [b for b in self.bands if b not in SCENARIO_BANDS]
        if unknown or not self.bands:
            raise InputError(f"scenario bands must be from {list(SCENARIO_BANDS)}, got {list(self.bands)}")
        if not 0.0 <= self.reduction <= 1.0:
            raise InputError("reduction must lie in [0, 1]")
        if self.replications < 1:
            raise InputError("replications must be at least 1")

    def contains(self, lengths) -> np.ndarray:
        lengths = np.asarray(lengths)
        hit = np.zeros(lengths.shape, dtype=bool)
        for b in self.bands:
            lo, hi = SCENARIO_BANDS[b]
            hit |= (lengths >= lo) & (lengths <= (hi if hi is not None else np.inf))
        return hit


@dataclass
class ScenarioResult:
    relative_dp_risk_change: float
    delta_expected_dps: float
    delta_direct_sa_cost: float
    delta_pension_payments: float
    baseline_expected_dps: float = 0.0
    removed_spells: float = 0.0
    removed_days: float = 0.0
    notice: str = ""
    replicates: list = field(default_factory=list)


def _population_mask(obs: pd.DataFrame, spec: ScenarioSpec) -> np.ndarray:
    m = np.ones(len(obs), dtype=bool)
    if spec.age_min is not None:
        m &= obs["age"].to_numpy() >= spec.age_min
    if spec.age_max is not None:
        m &= obs["age"].to_numpy() <= spec.age_max
    return m


def run_scenario(
    tables: InputTables,
    spec: ScenarioSpec,
    coefficients: CoefficientSet,
    risk_map: OccupationRiskMap,
    years=None,
) -> ScenarioResult:
    """Effect of removing a share of sickness-absence spells in given bands.

    Candidate spells are raw spells initiated in ``years`` (default: the last
    employment year) by persons in the scored population whose merged spell
    length falls in ``spec.bands``. Each replication removes
    floor(reduction * n) of them plus one more with probability equal to the
    fractional part, rebuilds observations (bands, day totals, employer Gini)
    and rescores. Deltas are averaged over replications.
    """
    if years is None:
        years = [int(tables.employment["year"].max())]
    years = [int(y) for y in years]
    merged = merge_spell_frame(tables.spells)
    emp_years = tables.employment[tables.employment["year"].isin(years)]
    base_obs = assemble_observations(
        tables, years, merged=merged, gini_map=employer_gini_map(merged, emp_years)
    )
    pop = base_obs[_population_mask(base_obs, spec)]
    keys = pop[["person_id", "year"]]
    base_p = score_population(pop, coefficients, risk_map)["probability"].to_numpy()
    base_sum = float(base_p.sum())
    base_days = float(pop["annual_sa_days"].sum())

    raw, block = spell_blocks(tables.spells)
    blen = (
        pd.Series(raw["end_date"].to_numpy()).groupby(block).transform("max").to_numpy().astype("datetime64[D]")
        - pd.Series(raw["start_date"].to_numpy()).groupby(block).transform("min").to_numpy().astype("datetime64[D]")
    ).astype(np.int64) + 1
    in_pop = pd.MultiIndex.from_frame(raw[["person_id", "initiation_year"]]).isin(
        pd.MultiIndex.from_frame(keys)
    )
    candidates = raw.index[in_pop & spec.contains(blen)].sort_values()
    n_cand = len(candidates)

    if n_cand == 0 or spec.reduction == 0.0:
        notice = "no spells in the selected bands" if n_cand == 0 else ""
        if notice:
            logger.warning("scenario %s: %s", spec.bands, notice)
        return ScenarioResult(0.0, 0.0, 0.0, 0.0, base_sum, notice=notice)

    other_years = merged[~merged["initiation_year"].isin(years)]
    target_spells = tables.spells[tables.spells["start_date"].dt.year.isin(years)]
    streams = np.random.SeedSequence(spec.seed).spawn(spec.replications)
    replicates = []
    for stream in streams:
        rng = np.random.default_rng(stream)
        x = spec.reduction * n_cand
        k = int(math.floor(x)) + int(rng.random() < x - math.floor(x))
        k = min(k, n_cand)
        drop = rng.choice(candidates.to_numpy(), size=k, replace=False)
        new_target = merge_spell_frame(target_spells.drop(index=drop))
        new_merged = pd.concat([other_years, new_target], ignore_index=True)
        new_obs = assemble_observations(
            tables._replace(spells=tables.spells.drop(index=drop)),
            years,
            merged=new_merged,
            gini_map=employer_gini_map(new_target, emp_years),
        )
        new_pop = keys.merge(new_obs, on=["person_id", "year"], how="left")
        new_p = score_population(new_pop, coefficients, risk_map)["probability"].to_numpy()
        delta = float(new_p.sum()) - base_sum
        removed_days = base_days - float(new_pop["annual_sa_days"].sum())
        replicates.append({"removed_spells": k, "removed_days": removed_days, "delta_expected_dps": delta})

    rep = pd.DataFrame(replicates)
    delta = float(rep["delta_expected_dps"].mean())
    removed_days = float(rep["removed_days"].mean())
    return ScenarioResult(
        relative_dp_risk_change=delta / base_sum if base_sum > 0 else 0.0,
        delta_expected_dps=delta,
        delta_direct_sa_cost=-removed_days * spec.cost_per_sa_day,
        delta_pension_payments=delta * spec.avg_employer_dp_cost,
        baseline_expected_dps=base_sum,
        removed_spells=float(rep["removed_spells"].mean()),
        removed_days=removed_days,
        replicates=replicates,
    )


def spell_free_scores(observations: pd.DataFrame, coefficients, risk_map) -> pd.DataFrame:
    """Scores with every same-year spell field zeroed (spell-removal reference)."""
    obs = observations.copy()
    for col in ("n_0_4", "n_5_9", "n_10_14", "n_15_29", "n_30_44", "n_45_59", "n_60plus",
                "n_spells", "longest_spell_days", "days_beyond_60", "annual_sa_days"):
        obs[col] = 0
    return score_population(obs, coefficients, risk_map)
