import numpy as np
import pandas as pd
import pytest

from dprisk.analytics import (
    ScenarioSpec,
    critical_duration,
    critical_duration_table,
    critical_threshold,
    flag_highest_decile,
    risk_table,
    run_scenario,
    score_population,
    spell_free_scores,
)
from dprisk.exceptions import InputError
from dprisk.features import build_feature_vector
from dprisk.glm import load_table1, predict
from dprisk.synth import SynthConfig
from oracles import exhaustive_threshold

RISK_MAP = SynthConfig().latent_risk_map()


def test_score_empty_population(small_synth):
    out = score_population(small_synth.observations.iloc[:0], load_table1(), RISK_MAP)
    assert list(out.columns) == ["person_id", "year", "probability"] and out.empty


def test_score_single_row_equals_predict(small_synth):
    row = small_synth.observations.iloc[[7]]
    got = score_population(row, load_table1(), RISK_MAP)["probability"].iloc[0]
    want = predict(build_feature_vector(row.iloc[0], RISK_MAP), load_table1())
    assert got == want


def test_score_calibration(small_synth):
    obs = small_synth.observations
    known = obs[obs["outcome"].notna()]
    p = score_population(known, load_table1(), RISK_MAP)["probability"]
    assert abs(p.mean() - known["outcome"].astype(float).mean()) < 0.004


# -- risk table --------------------------------------------------------------


def scored_frame(probs, codes, ages):
    n = len(probs)
    return pd.DataFrame({"person_id": [f"p{i:03d}" for i in range(n)], "year": 2019,
                         "probability": probs, "occupation_code": codes, "age": ages})


def test_risk_table_cell_sums():
    t = risk_table(scored_frame([0.01, 0.02, 0.03], ["a"] * 3, [40, 50, 60]), min_cell=1)
    cell = t[(t["occupation_code"] == "a") & (t["age_band"] == "17+")].iloc[0]
    assert cell["mean_risk"] == pytest.approx(0.02)
    assert cell["expected_dps"] == pytest.approx(0.06)
    older = t[(t["occupation_code"] == "a") & (t["age_band"] == "55+")].iloc[0]
    assert older["n"] == 1 and older["expected_dps"] == pytest.approx(0.03)


def test_risk_table_suppresses_small_cells():
    t = risk_table(scored_frame([0.01] * 5 + [0.02] * 40, ["a"] * 5 + ["b"] * 40, [40] * 45))
    a = t[(t["occupation_code"] == "a") & (t["age_band"] == "17+")].iloc[0]
    assert a["suppressed"] and np.isnan(a["mean_risk"])
    total = t[(t["occupation_code"] == "Total") & (t["age_band"] == "17+")].iloc[0]
    assert total["n"] == 45 and total["expected_dps"] == pytest.approx(0.85)


def test_risk_table_needs_fields():
    with pytest.raises(InputError):
        risk_table(pd.DataFrame({"person_id": ["a"], "year": [2019], "probability": [0.1]}))


# -- decile flag -------------------------------------------------------------


def test_decile_of_distinct_scores():
    s = scored_frame(np.linspace(0.001, 0.1, 100), ["a"] * 100, [40] * 100)
    flags = flag_highest_decile(s)
    assert flags.sum() == 10
    assert set(s.loc[flags, "probability"]) == set(np.linspace(0.001, 0.1, 100)[-10:])


def test_decile_ties_by_person_id():
    s = scored_frame([0.05] * 100, ["a"] * 100, [40] * 100).sample(frac=1, random_state=1)
    flags = flag_highest_decile(s)
    assert sorted(s.loc[flags, "person_id"]) == [f"p{i:03d}" for i in range(10)]


def test_decile_respects_years():
    s = scored_frame(np.linspace(0, 1, 20), ["a"] * 20, [40] * 20)
    s.loc[:9, "year"] = 2016
    flags = flag_highest_decile(s, years=[2016])
    assert flags.sum() == 1 and s.loc[flags, "year"].iloc[0] == 2016


# -- critical duration -------------------------------------------------------


def test_hand_checked_threshold():
    t, obj, crossing, flagged = critical_threshold([2, 5, 10, 20, 30], [0, 0, 1, 1, 1])
    assert (t, obj, crossing, flagged) == (6, 3.0, 3, 3)


def test_all_flagged_gives_one():
    assert critical_threshold([1, 4, 9], [1, 1, 1])[0] == 1


def test_flagged_without_days_is_absent():
    assert critical_threshold([0, 0, 5], [1, 1, 0]) is None


@pytest.mark.parametrize("seed", range(20))
def test_threshold_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    days = rng.integers(0, 420, n) * (rng.random(n) < 0.7)
    flags = rng.random(n) < 0.15
    got = critical_threshold(days, flags)
    want = exhaustive_threshold(days.tolist(), flags.tolist())
    assert got == (None if want is None else pytest.approx(want))
    if got is not None:
        assert got[0] == want[0]


def cd_frame(days, flags, age=50, prev=0, n60=0, code="a"):
    return pd.DataFrame({"annual_sa_days": days, "top_decile_flag": np.asarray(flags, bool),
                         "age": age, "previous_dp_flag": prev, "n_60plus": n60, "occupation_code": code})


def test_critical_duration_filters_eligibles():
    frame = pd.concat([cd_frame([2, 5, 10, 20, 30], [0, 0, 1, 1, 1]),
                       cd_frame([1, 1], [1, 1], age=40), cd_frame([1], [1], prev=1), cd_frame([70], [1], n60=1)])
    r = critical_duration(frame, "a")
    assert r.eligible_n == 5 and r.threshold_days == 6 and r.share == 1.0


def test_critical_duration_absent_when_no_flags():
    r = critical_duration(cd_frame([3, 4], [0, 0]))
    assert r.threshold_days is None and "no highest-risk" in r.status


def test_critical_duration_table_has_all_row():
    frame = pd.concat([cd_frame([2, 5, 10], [0, 1, 1], code="a"), cd_frame([3, 8], [1, 0], code="b")])
    t = critical_duration_table(frame)
    assert t["occupation_code"].tolist() == ["a", "b", "ALL"]
    assert t["threshold_days"].tolist() == [3, 1, 3]


# -- scenario ----------------------------------------------------------------


def spec(**kw):
    base = dict(bands=("1-5", "6-30", "31+"), reduction=0.2, cost_per_sa_day=250.0,
                avg_employer_dp_cost=60000.0, replications=3, seed=4)
    base.update(kw)
    return ScenarioSpec(**base)


def test_zero_reduction_is_identity(small_synth):
    r = run_scenario(small_synth.tables, spec(reduction=0.0), load_table1(), RISK_MAP)
    assert (r.relative_dp_risk_change, r.delta_expected_dps, r.delta_direct_sa_cost,
            r.delta_pension_payments) == (0.0, 0.0, 0.0, 0.0)


def test_full_removal_equals_spell_free_rescoring(small_synth):
    tables = small_synth.tables
    year = int(tables.employment["year"].max())
    r = run_scenario(tables, spec(reduction=1.0, replications=1), load_table1(), RISK_MAP, years=[year])
    from dprisk.features import employer_gini_map
    from dprisk.ingest import assemble_observations, merge_spell_frame

    merged = merge_spell_frame(tables.spells)
    obs = assemble_observations(tables, [year], merged=merged,
                                gini_map=employer_gini_map(merged, tables.employment))
    free = spell_free_scores(obs, load_table1(), RISK_MAP)["probability"].sum()
    base = score_population(obs, load_table1(), RISK_MAP)["probability"].sum()
    assert r.baseline_expected_dps == pytest.approx(base, rel=1e-12)
    assert r.delta_expected_dps == pytest.approx(free - base, rel=1e-9, abs=1e-9)
    assert r.removed_days == pytest.approx(obs["annual_sa_days"].sum())


def test_scenario_costs_and_sign(small_synth):
    s = spec(bands=("6-30", "31+"), age_min=17, age_max=70)
    r = run_scenario(small_synth.tables, s, load_table1(), RISK_MAP)
    assert r.relative_dp_risk_change <= 0
    assert r.delta_direct_sa_cost == pytest.approx(-r.removed_days * 250.0)
    assert r.delta_pension_payments == pytest.approx(r.delta_expected_dps * 60000.0)


def test_scenario_seed_reproducible(small_synth):
    a = run_scenario(small_synth.tables, spec(), load_table1(), RISK_MAP)
    b = run_scenario(small_synth.tables, spec(), load_table1(), RISK_MAP)
    assert a.replicates == b.replicates and a.delta_expected_dps == b.delta_expected_dps


def test_scenario_empty_band_notice(small_synth):
    s = spec(age_min=200)
    r = run_scenario(small_synth.tables, s, load_table1(), RISK_MAP)
    assert r.delta_expected_dps == 0.0 and r.notice


@pytest.mark.parametrize("kw", [dict(bands=("2-3",)), dict(reduction=1.5), dict(replications=0)])
def test_scenario_spec_validation(kw):
    with pytest.raises(InputError):
        spec(**kw)
