import json

import pandas as pd
import pytest

from dprisk.cli import main, split_sizes
from dprisk.features import TERMS, OccupationRiskMap
from dprisk.glm import load_table1
from dprisk.ingest import read_observations
from oracles import pairwise_auc

SCENARIO = {"cost_per_sa_day": 250.0, "avg_employer_dp_cost": 60000.0, "replications": 2}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps({"synth": {"n_persons": 2500}, "scenario": SCENARIO}))
    data, out = root / "data", root / "out"
    common = ["--config", str(cfg), "--seed", "3"]
    steps = [
        ["generate", "--out", str(data)],
        ["features", "--data", str(data), "--out", str(out)],
        ["fit", "--out", str(out)],
        ["score", "--out", str(out)],
        ["report", "--out", str(out)],
        ["critical-duration", "--out", str(out)],
        ["scenario", "--data", str(data), "--out", str(out)],
        ["evaluate", "--out", str(out)],
    ]
    codes = [main([s[0], *common, *s[1:]]) for s in steps]
    return root, data, out, codes


def test_chain_succeeds(pipeline):
    _, _, _, codes = pipeline
    assert codes == [0] * 8


def test_outputs_schema_valid(pipeline):
    _, data, out, _ = pipeline
    expected = {
        "scored.csv": ["person_id", "year", "probability", "top_decile_flag"],
        "risk_table.csv": ["occupation_code", "age_band", "n", "mean_risk", "expected_dps", "suppressed"],
        "critical_duration.csv": ["occupation_code", "eligible_n", "threshold_days", "objective", "components"],
        "scenario_report.csv": ["band", "reduction", "relative_dp_risk_change", "delta_expected_dps",
                                "delta_direct_sa_cost", "delta_pension_payments"],
        "features.csv": ["person_id", "year", *TERMS],
        "coefficients.csv": ["term_name", "estimate", "std_error"],
        "gini.csv": ["employer_id", "year", "gini"],
    }
    for name, cols in expected.items():
        assert list(pd.read_csv(out / name, nrows=5).columns) == cols, name
    scored = pd.read_csv(out / "scored.csv")
    assert scored["probability"].between(0, 1, inclusive="neither").all()
    assert set(scored["top_decile_flag"]) <= {0, 1}
    assert pd.read_csv(out / "scenario_report.csv")["band"].tolist() == ["1-5", "6-30", "31+"]
    assert not list(out.glob(".staging-*"))


def test_evaluate_auc_against_pairwise_oracle(pipeline):
    _, _, out, _ = pipeline
    from dprisk.cli import RunConfig, _split
    from dprisk.features import FeatureBuilder
    from dprisk.glm import predict

    metrics = dict(line.split("=", 1) for line in (out / "evaluation.txt").read_text().splitlines())
    obs = read_observations(out / "observations.csv")
    _, _, test = _split(obs, RunConfig(seed=3))
    rm = OccupationRiskMap.read_csv(out / "risk_map.csv")
    p = predict(FeatureBuilder(risk_map=rm).fit(test).transform(test), load_table1())
    oracle = pairwise_auc(list(p), list(test["outcome"].astype(int)))
    assert abs(float(metrics["auc"]) - oracle) < 0.03


def test_generate_deterministic(tmp_path, capsys):
    assert main(["generate", "--seed", "7", "--n-persons", "400", "--out", str(tmp_path / "a")]) == 0
    first = capsys.readouterr().out
    assert main(["generate", "--seed", "7", "--n-persons", "400", "--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == first


def test_manifest_replays(pipeline, tmp_path):
    _, _, out, _ = pipeline
    manifest = json.loads((out / "run_score.json").read_text())
    assert "coefficients" not in manifest["inputs"]
    assert manifest["inputs"]["observations.csv"]
    replay = tmp_path / "replay"
    replay.mkdir()
    for name in ("observations.csv", "risk_map.csv"):
        (replay / name).write_bytes((out / name).read_bytes())
    assert main(["score", "--config", str(out / "run_score.json"), "--out", str(replay)]) == 0
    again = json.loads((replay / "run_score.json").read_text())
    assert again["outputs"] == manifest["outputs"]


def test_missing_input_exit_2(tmp_path, capsys):
    assert main(["score", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InputError" and "observations.csv" in err["message"]


def test_schema_error_exit_4(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    (data / "persons.csv").write_text("person_id,birth_year\na,1970\n")
    for name in ("spells", "employment", "pensions"):
        (data / f"{name}.csv").write_text("x\n")
    assert main(["features", "--data", str(data), "--out", str(tmp_path / "out")]) == 4
    assert not any((tmp_path / "out").iterdir())


def test_numerical_failure_exit_3_leaves_no_outputs(pipeline, tmp_path):
    _, _, out, _ = pipeline
    obs = read_observations(out / "observations.csv")
    males = obs[obs["female"] == 0]
    males.to_csv(tmp_path / "observations.csv", index=False)
    (tmp_path / "risk_map.csv").write_bytes((out / "risk_map.csv").read_bytes())
    assert main(["fit", "--out", str(tmp_path)]) == 3
    assert sorted(p.name for p in tmp_path.iterdir()) == ["observations.csv", "risk_map.csv"]


def test_scenario_requires_costs(pipeline, tmp_path):
    _, data, out, _ = pipeline
    assert main(["scenario", "--data", str(data), "--out", str(out)]) == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nonsense": 1}')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("n,expected", [(10**6, (500_000, 200_000)), (700, (500, 200)), (70, (50, 20))])
def test_split_sizes(n, expected):
    assert split_sizes(n, 500_000, 200_000) == expected


def test_outcome_kinds_restriction(pipeline, tmp_path):
    root, data, out, _ = pipeline
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"outcome_kinds": ["dp_full", "dp_partial"]}))
    assert main(["features", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path)]) == 0
    narrow = read_observations(tmp_path / "observations.csv")["outcome"].sum()
    wide = read_observations(out / "observations.csv")["outcome"].sum()
    assert 0 < narrow < wide
    cfg.write_text(json.dumps({"outcome_kinds": ["oa"]}))
    assert main(["features", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "x")]) == 2
