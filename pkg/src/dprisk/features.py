"""Model terms: spell-length bands, employer Gini, occupation risk classes.

The 30 terms of the disability-pension model are fixed; ``TERMS`` holds them
in coefficient-file order and ``FeatureBuilder`` turns person-year
observations into that design matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frame, check_no_missing
from .exceptions import InputError

logger = logging.getLogger(__name__)

YEAR_ORIGIN = 2015

# (column, shortest, longest) in days; None means open-ended
SPELL_BANDS = (
    ("n_0_4", 0, 4),
    ("n_5_9", 5, 9),
    ("n_10_14", 10, 14),
    ("n_15_29", 15, 29),
    ("n_30_44", 30, 44),
    ("n_45_59", 45, 59),
    ("n_60plus", 60, None),
)
BAND_COLUMNS = tuple(b[0] for b in SPELL_BANDS)
_BAND_EDGES = np.array([b[1] for b in SPELL_BANDS[1:]])

MAIN_EFFECTS = (
    "intercept",
    "year_counter",
    "oa_eligible",
    "prior_60plus",
    "previous_dp",
    "female",
    "age_43_53",
    "age",
    "days_beyond_60",
    "n_15_29",
    "n_30_44",
    "n_45_59",
    "n_60plus",
)
INTERACTIONS = (
    "year_counter:age",
    "prior_60plus:years_since_60plus",
    "previous_dp:years_since_dp",
    "female:days_beyond_60",
    "female:n_15_29",
    "female:n_45_59",
    "female:n_60plus",
    "n_0_4:age_ge_31",
    "n_0_4:age_le_30",
    "n_0_4:age_43_53",
    "age_43_53:n_30_44",
    "age:n_5_9",
    "age:n_10_14",
    "age:n_30_44",
    "age:n_60plus",
    "age:risk_class",
    "age:n_0_4:gini",
)
TERMS = MAIN_EFFECTS + INTERACTIONS

# Predictor names as printed in published coefficient tables.
TERM_LABELS = {
    "intercept": "Intercept",
    "year_counter": "Year",
    "oa_eligible": "Eligible for OA pension",
    "prior_60plus": "SA spell (60+ days): 1",
    "previous_dp": "Previous DP: 1",
    "female": "Gender: female",
    "age_43_53": "Age 43-53 yrs.: 1",
    "age": "Age",
    "days_beyond_60": "Number of 60+ SA days",
    "n_15_29": "SA spells (15-29 days)",
    "n_30_44": "SA spells (30-44 days)",
    "n_45_59": "SA spells (45-59 days)",
    "n_60plus": "SA spells (60+ days)",
    "year_counter:age": "Year*Age",
    "prior_60plus:years_since_60plus": "SA spell (60+ days): 1*Years since 60+ SA spell",
    "previous_dp:years_since_dp": "Previous DP*Years since SA",
    "female:days_beyond_60": "Gender: female*Number of 60+ SA days",
    "female:n_15_29": "Gender: female*SA spells (15-29 days)",
    "female:n_45_59": "Gender: female*SA spells (45-59 days)",
    "female:n_60plus": "Gender: female*SA spells (60+ days)",
    "n_0_4:age_ge_31": "SA spells (0-4 days)*Age <31 yrs.: 0",
    "n_0_4:age_le_30": "SA spells (0-4 days)*Age <31 yrs.: 1",
    "n_0_4:age_43_53": "SA spells (0-4 days)*Age 43-53 yrs.: 1",
    "age_43_53:n_30_44": "Age 43-53 yrs.: 1*SA spells (30-44 days)",
    "age:n_5_9": "Age*SA spells (5-9 days)",
    "age:n_10_14": "Age*SA spells (10-14 days)",
    "age:n_30_44": "Age*SA spells (30-44 days)",
    "age:n_60plus": "Age*SA spells (60+ days)",
    "age:risk_class": "Age*Occupation risk class",
    "age:n_0_4:gini": "Age*SA spells (0-4 days)*Employer SA duration distribution",
}

# Columns of an observation frame that feature construction reads.
OBSERVATION_COLUMNS = (
    "year",
    "age",
    "female",
    "occupation_code",
    "oa_fraction",
    "prior_60plus_flag",
    "years_since_60plus",
    "previous_dp_flag",
    "years_since_dp",
    "days_beyond_60",
    *BAND_COLUMNS,
)


@dataclass(frozen=True)
class SpellBucketCounts:
    counts: tuple[int, ...]
    days_beyond_60: int

    def as_dict(self) -> dict[str, int]:
        out = dict(zip(BAND_COLUMNS, self.counts))
        out["days_beyond_60"] = self.days_beyond_60
        return out


def band_of(length):
    """Index into ``SPELL_BANDS`` for one spell length or an array of them."""
    return np.searchsorted(_BAND_EDGES, length, side="right")


def bucket_spells(lengths) -> SpellBucketCounts:
    """Count same-year merged spells per length band.

    ``days_beyond_60`` looks only at the single longest spell.
    """
    lengths = np.asarray(list(lengths), dtype=int)
    if lengths.size == 0:
        return SpellBucketCounts((0,) * len(SPELL_BANDS), 0)
    counts = np.bincount(band_of(lengths), minlength=len(SPELL_BANDS))
    return SpellBucketCounts(
        tuple(int(c) for c in counts), int(max(0, lengths.max() - 60))
    )


def gini(durations) -> float:
    """Gini coefficient of a list of spell lengths (0 for empty or single-valued)."""
    x = np.sort(np.asarray(list(durations), dtype=float))
    n = x.size
    if n == 0:
        return 0.0
    if (x < 0).any():
        raise InputError("durations must be non-negative")
    total = x.sum()
    if total == 0:
        return 0.0
    rank = np.arange(1, n + 1)
    return float(np.dot(2 * rank - n - 1, x) / (n * total))


def grouped_gini(frame: pd.DataFrame, keys: list[str], value: str) -> pd.DataFrame:
    """Vectorised ``gini`` per group of ``frame``; returns ``keys`` + ``gini``."""
    if frame.empty:
        return pd.DataFrame({**{k: frame[k] for k in keys}, "gini": pd.Series(dtype=float)})
    df = frame[keys + [value]].sort_values(keys + [value], kind="mergesort")
    grp = df.groupby(keys, sort=False)
    n = grp[value].transform("size").to_numpy(float)
    rank = grp.cumcount().to_numpy(float) + 1
    x = df[value].to_numpy(float)
    df = df.assign(_w=(2 * rank - n - 1) * x)
    agg = df.groupby(keys, sort=True).agg(_num=("_w", "sum"), _tot=(value, "sum"), _n=(value, "size"))
    den = (agg["_n"] * agg["_tot"]).to_numpy(float)
    g = np.divide(agg["_num"].to_numpy(float), den, out=np.zeros(len(agg)), where=den > 0)
    return agg.assign(gini=g)[["gini"]].reset_index()


def employer_gini_map(merged_spells: pd.DataFrame, employment: pd.DataFrame) -> pd.DataFrame:
    """Gini of merged spell lengths per (employer, year).

    A spell counts for the employer a person is recorded with in the spell's
    initiation year. Employer-years with no spells get 0.
    """
    emp = employment[["person_id", "year", "employer_id"]]
    spells = merged_spells.rename(columns={"initiation_year": "year"})[
        ["person_id", "year", "length_days"]
    ]
    joined = spells.merge(emp, on=["person_id", "year"], how="inner")
    g = grouped_gini(joined, ["employer_id", "year"], "length_days")
    all_pairs = emp[["employer_id", "year"]].drop_duplicates()
    out = all_pairs.merge(g, on=["employer_id", "year"], how="left")
    n_empty = int(out["gini"].isna().sum())
    if n_empty:
        logger.info("%d employer-years without spells; gini set to 0", n_empty)
    out["gini"] = out["gini"].fillna(0.0)
    return out.sort_values(["employer_id", "year"], kind="mergesort").reset_index(drop=True)


def oa_fraction(personal_oa_year: int, observation_year: int) -> Fraction:
    """Nearness of old-age pension eligibility: 1, 2/3, 1/3 or 0."""
    lead = personal_oa_year - observation_year
    if lead <= 0:
        raise InputError(
            f"person already eligible for old-age pension in {observation_year} "
            f"(eligibility year {personal_oa_year}); such rows must be excluded"
        )
    return Fraction(max(0, 4 - lead), 3) if lead <= 3 else Fraction(0)


def oa_fraction_array(personal_oa_year, observation_year) -> np.ndarray:
    lead = np.asarray(personal_oa_year) - np.asarray(observation_year)
    if (lead <= 0).any():
        raise InputError("old-age eligible rows present; exclude them before computing oa_fraction")
    return np.where(lead <= 3, (4 - lead) / 3.0, 0.0)


@dataclass
class OccupationRiskMap:
    """Occupation code -> risk class (1 = lowest observed DP rate)."""

    classes: dict[str, int]
    rates: dict[str, float] = field(default_factory=dict)
    default_class: int = 5

    def lookup(self, codes) -> np.ndarray:
        codes = pd.Series(codes, dtype=object)
        mapped = codes.map(self.classes)
        unseen = mapped.isna()
        if unseen.any():
            logger.warning(
                "%d rows with unseen occupation codes (%s); using class %d",
                int(unseen.sum()),
                ", ".join(sorted(set(codes[unseen].astype(str)))[:5]),
                self.default_class,
            )
        return mapped.fillna(self.default_class).to_numpy(dtype=float)

    def to_frame(self) -> pd.DataFrame:
        codes = sorted(self.classes)
        return pd.DataFrame(
            {
                "occupation_code": codes,
                "observed_rate": [self.rates.get(c, np.nan) for c in codes],
                "risk_class": [self.classes[c] for c in codes],
            }
        )

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def read_csv(cls, path, default_class: int = 5) -> "OccupationRiskMap":
        df = pd.read_csv(path, dtype={"occupation_code": str})
        check_frame(df, ["occupation_code", "observed_rate", "risk_class"], str(path))
        return cls(
            classes=dict(zip(df["occupation_code"], df["risk_class"].astype(int))),
            rates=dict(zip(df["occupation_code"], df["observed_rate"].astype(float))),
            default_class=default_class,
        )


def build_risk_map(occupation_codes, outcomes, n_classes: int = 10, default_class: int = 5) -> OccupationRiskMap:
    """Group occupations into ``n_classes`` ordered risk classes.

    Occupations are sorted by observed outcome rate (ties by code) and cut into
    classes of roughly equal person-year weight; each occupation gets the class
    containing the midpoint of its cumulative weight interval.
    """
    df = pd.DataFrame({"code": pd.Series(occupation_codes, dtype=object).astype(str).to_numpy(),
                       "y": np.asarray(outcomes, dtype=float)})
    stats = df.groupby("code").agg(rate=("y", "mean"), n=("y", "size")).reset_index()
    if len(stats) < n_classes:
        raise InputError(
            f"only {len(stats)} distinct occupations for {n_classes} risk classes; "
            "pass a smaller n_classes"
        )
    stats = stats.sort_values(["rate", "code"], kind="mergesort")
    w = stats["n"].to_numpy(float)
    mid = (np.cumsum(w) - w / 2) / w.sum()
    cls = np.minimum(np.floor(mid * n_classes).astype(int) + 1, n_classes)
    return OccupationRiskMap(
        classes=dict(zip(stats["code"], cls.tolist())),
        rates=dict(zip(stats["code"], stats["rate"].astype(float))),
        default_class=default_class,
    )


def feature_frame(obs: pd.DataFrame, risk_class, gini_values) -> pd.DataFrame:
    """Expand observations into the 30 model terms (rows aligned with ``obs``)."""
    age = obs["age"].to_numpy(float)
    year = obs["year"].to_numpy(float) - YEAR_ORIGIN
    female = obs["female"].to_numpy(float)
    prior = obs["prior_60plus_flag"].to_numpy(float)
    prev = obs["previous_dp_flag"].to_numpy(float)
    # years-since values are only meaningful when the flag is set
    ys60 = np.where(prior > 0, pd.to_numeric(obs["years_since_60plus"]).fillna(0).to_numpy(float), 0.0)
    ysdp = np.where(prev > 0, pd.to_numeric(obs["years_since_dp"]).fillna(0).to_numpy(float), 0.0)
    f43 = ((age >= 43) & (age <= 53)).astype(float)
    young = (age <= 30).astype(float)
    b = {c: obs[c].to_numpy(float) for c in BAND_COLUMNS}
    d60 = obs["days_beyond_60"].to_numpy(float)
    risk = np.asarray(risk_class, dtype=float)
    g = np.asarray(gini_values, dtype=float)

    cols = {
        "intercept": np.ones(len(obs)),
        "year_counter": year,
        "oa_eligible": obs["oa_fraction"].to_numpy(float),
        "prior_60plus": prior,
        "previous_dp": prev,
        "female": female,
        "age_43_53": f43,
        "age": age,
        "days_beyond_60": d60,
        "n_15_29": b["n_15_29"],
        "n_30_44": b["n_30_44"],
        "n_45_59": b["n_45_59"],
        "n_60plus": b["n_60plus"],
        "year_counter:age": year * age,
        "prior_60plus:years_since_60plus": prior * ys60,
        "previous_dp:years_since_dp": prev * ysdp,
        "female:days_beyond_60": female * d60,
        "female:n_15_29": female * b["n_15_29"],
        "female:n_45_59": female * b["n_45_59"],
        "female:n_60plus": female * b["n_60plus"],
        "n_0_4:age_ge_31": b["n_0_4"] * (1.0 - young),
        "n_0_4:age_le_30": b["n_0_4"] * young,
        "n_0_4:age_43_53": b["n_0_4"] * f43,
        "age_43_53:n_30_44": f43 * b["n_30_44"],
        "age:n_5_9": age * b["n_5_9"],
        "age:n_10_14": age * b["n_10_14"],
        "age:n_30_44": age * b["n_30_44"],
        "age:n_60plus": age * b["n_60plus"],
        "age:risk_class": age * risk,
        "age:n_0_4:gini": age * b["n_0_4"] * g,
    }
    return pd.DataFrame(cols, index=obs.index, columns=list(TERMS))


def lookup_gini(obs: pd.DataFrame, gini_map: pd.DataFrame | None) -> np.ndarray:
    """Employer Gini per observation, from ``gini_map`` or the ``employer_gini`` column."""
    if gini_map is None:
        if "employer_gini" not in obs.columns:
            raise InputError("observations lack employer_gini and no gini map was given")
        return obs["employer_gini"].to_numpy(float)
    keyed = obs[["employer_id", "year"]].merge(
        gini_map[["employer_id", "year", "gini"]], on=["employer_id", "year"], how="left"
    )
    g = keyed["gini"]
    if g.isna().any():
        logger.warning("%d observations without an employer gini; using 0", int(g.isna().sum()))
    return g.fillna(0.0).to_numpy(float)


def build_feature_vector(observation, risk_map: OccupationRiskMap, gini_map: pd.DataFrame | None = None) -> dict[str, float]:
    """Feature vector for a single observation (a mapping or Series)."""
    row = pd.DataFrame([dict(observation)])
    frame = feature_frame(row, risk_map.lookup(row["occupation_code"]), lookup_gini(row, gini_map))
    return {t: float(v) for t, v in frame.iloc[0].items()}


class FeatureBuilder(TransformerMixin, BaseEstimator):
    """Turn person-year observations into the 30-term design matrix.

    ``fit`` learns the occupation risk map from observations with a known
    outcome unless a prebuilt ``risk_map`` is supplied. Employer Gini values
    come from ``gini_map`` when given, otherwise from the observations'
    ``employer_gini`` column.
    """

    def __init__(self, n_risk_classes=10, default_risk_class=5, risk_map=None, gini_map=None):
        self.n_risk_classes = n_risk_classes
        self.default_risk_class = default_risk_class
        self.risk_map = risk_map
        self.gini_map = gini_map

    def fit(self, X, y=None):
        X = check_frame(X, OBSERVATION_COLUMNS, "observations")
        if self.risk_map is not None:
            self.risk_map_ = self.risk_map
        else:
            if y is None:
                if "outcome" not in X.columns:
                    raise InputError("no outcome column and no y given to build the risk map")
                y = X["outcome"]
            y = pd.Series(np.asarray(y, dtype=object), index=X.index)
            known = y.notna()
            self.risk_map_ = build_risk_map(
                X.loc[known, "occupation_code"],
                y[known].astype(float),
                n_classes=self.n_risk_classes,
                default_class=self.default_risk_class,
            )
        self.n_features_in_ = len(OBSERVATION_COLUMNS)
        return self

    def transform(self, X):
        check_is_fitted(self, "risk_map_")
        X = check_frame(X, OBSERVATION_COLUMNS, "observations")
        check_no_missing(X, [c for c in OBSERVATION_COLUMNS if not c.startswith("years_since")], "observations")
        return feature_frame(X, self.risk_map_.lookup(X["occupation_code"]), lookup_gini(X, self.gini_map))

    def get_feature_names_out(self, input_features=None):
        return np.asarray(TERMS, dtype=object)


def band_coefficient_floor(coefficients, ages=range(17, 71)) -> dict[str, float]:
    """Smallest combined coefficient of each spell band of 5+ days.

    Adds the band's main effect and every interaction it enters, evaluated for
    each integer age in ``ages`` and both genders; ``days_beyond_60`` terms are
    included for the 60+ band at their own floor. A positive floor means adding
    a spell of that band can only raise the linear predictor.
    """
    beta = dict(coefficients)

    def c(name):
        return beta.get(name, 0.0)

    floors = {}
    for band in ("n_5_9", "n_10_14", "n_15_29", "n_30_44", "n_45_59", "n_60plus"):
        values = []
        for age in ages:
            f43 = 1.0 if 43 <= age <= 53 else 0.0
            for female in (0.0, 1.0):
                v = c(band) + age * c(f"age:{band}") + female * c(f"female:{band}")
                v += f43 * c(f"age_43_53:{band}")
                values.append(v)
        floors[band] = min(values)
    floors["days_beyond_60"] = min(c("days_beyond_60"), c("days_beyond_60") + c("female:days_beyond_60"))
    return floors


__all__ = [
    "SPELL_BANDS",
    "BAND_COLUMNS",
    "TERMS",
    "TERM_LABELS",
    "SpellBucketCounts",
    "bucket_spells",
    "gini",
    "grouped_gini",
    "employer_gini_map",
    "oa_fraction",
    "OccupationRiskMap",
    "build_risk_map",
    "feature_frame",
    "build_feature_vector",
    "FeatureBuilder",
    "band_coefficient_floor",
]
