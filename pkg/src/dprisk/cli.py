"""Command-line pipeline: generate | features | fit | score | report |
critical-duration | scenario | evaluate.

Raw register CSVs live in ``--data``; every subcommand reads and writes its
artifacts in ``--out``. Each run writes ``run_<command>.json`` recording the
resolved configuration and input/output digests; passing that file back as
``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .analytics import (
    ScenarioSpec,
    critical_duration_table,
    flag_highest_decile,
    risk_table,
    run_scenario,
    score_population,
)
from .exceptions import DPRiskError, InputError, NumericalError, SchemaError
from .features import FeatureBuilder, OccupationRiskMap
from .glm import (
    TABLE1_FILE,
    CoefficientSet,
    ModelMatrix,
    auc,
    backward_eliminate,
    fit_irls,
    load_table1,
    log_likelihood,
    null_log_likelihood,
)
from .ingest import DP_KINDS, SCHEMAS, assemble_observations, load_inputs, read_observations
from .synth import SynthConfig, generate

logger = logging.getLogger("dprisk")

COMMANDS = ("generate", "features", "fit", "score", "report", "critical-duration", "scenario", "evaluate")
PAPER_TEACHING_SIZE = 500_000
PAPER_TEST_SIZE = 200_000


@dataclass
class RunConfig:
    data: str | None = None
    out: str = "."
    coefficients: str | None = None
    seed: int = 0
    teaching_size: int = PAPER_TEACHING_SIZE
    test_size: int = PAPER_TEST_SIZE
    min_cell: int = 30
    age_bands: dict = field(default_factory=lambda: {"17+": 17, "55+": 55})
    pooled_years: list = field(default_factory=lambda: [2019, 2020, 2021])
    report_year: int | None = None
    observed_through: int | None = None
    outcome_kinds: list = field(default_factory=lambda: list(DP_KINDS))
    n_risk_classes: int = 10
    default_risk_class: int = 5
    eliminate: bool = False
    max_terms: int = 30
    all_data: bool = False
    scenario: dict = field(default_factory=lambda: {
        "bands": [["1-5"], ["6-30"], ["31+"]],
        "reduction": 0.2,
        "replications": 10,
        "cost_per_sa_day": None,
        "avg_employer_dp_cost": None,
        "year": None,
        "age_min": None,
        "age_max": None,
    })
    synth: dict = field(default_factory=dict)
    verbosity: int = 0

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from None
        if "command" in raw and "config" in raw:  # a run manifest
            raw = raw["config"]
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls()
        for key, value in raw.items():
            if key == "scenario":
                merged = dict(cfg.scenario)
                merged.update(value)
                value = merged
            setattr(cfg, key, value)
        return cfg


def split_sizes(n: int, teaching: int, test: int) -> tuple[int, int]:
    """Teaching/test sizes, scaled down proportionally when ``n`` is smaller."""
    if n >= teaching + test:
        return teaching, test
    scale = n / (teaching + test)
    return int(teaching * scale), int(test * scale)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def _staged(out: Path):
    """Write into a scratch directory; move files into ``out`` only on success."""
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    for f in sorted(stage.iterdir()):
        f.replace(out / f.name)
    stage.rmdir()


def _require(paths):
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise InputError("missing input files: " + ", ".join(missing))


def _coefficients(cfg: RunConfig) -> tuple[CoefficientSet, str]:
    if cfg.coefficients:
        _require([cfg.coefficients])
        return CoefficientSet.read_csv(cfg.coefficients), str(cfg.coefficients)
    return load_table1(), f"package:{TABLE1_FILE}"


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def _write_kv(values: dict, path: Path) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))


def _split(obs: pd.DataFrame, cfg: RunConfig):
    known = obs[obs["outcome"].notna()]
    teach_n, test_n = split_sizes(len(known), cfg.teaching_size, cfg.test_size)
    order = np.random.default_rng(cfg.seed).permutation(len(known))
    teach = known.iloc[np.sort(order[:teach_n])]
    test = known.iloc[np.sort(order[teach_n:teach_n + test_n])]
    return known, teach, test


def _model_inputs(out: Path, cfg: RunConfig):
    _require([out / "observations.csv", out / "risk_map.csv"])
    obs = read_observations(out / "observations.csv")
    risk_map = OccupationRiskMap.read_csv(out / "risk_map.csv", default_class=cfg.default_risk_class)
    return obs, risk_map


# -- subcommands -------------------------------------------------------------


def cmd_generate(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    synth = dict(cfg.synth)
    synth["seed"] = cfg.seed
    result = generate(SynthConfig.from_dict(synth), out_dir=stage)
    logger.info("synthetic manifest: %s", result.manifest["row_counts"])
    return [stage / f"{name}.csv" for name in SCHEMAS] + [stage / "manifest.json"]


def _observed_through(cfg: RunConfig, data: Path):
    if cfg.observed_through is not None:
        return cfg.observed_through
    manifest = data / "manifest.json"
    if manifest.is_file():
        return json.loads(manifest.read_text()).get("observed_through")
    return None


def cmd_features(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    data = _data_dir(cfg)
    tables = load_inputs(data)
    unknown = set(cfg.outcome_kinds) - set(DP_KINDS)
    if unknown or not cfg.outcome_kinds:
        raise InputError(f"outcome_kinds must be a non-empty subset of {', '.join(DP_KINDS)}")
    obs = assemble_observations(
        tables, observed_through=_observed_through(cfg, data), outcome_kinds=cfg.outcome_kinds
    )
    builder = FeatureBuilder(n_risk_classes=cfg.n_risk_classes, default_risk_class=cfg.default_risk_class)
    builder.fit(obs)
    X = builder.transform(obs)
    gini = obs[["employer_id", "year", "employer_gini"]].drop_duplicates().rename(columns={"employer_gini": "gini"})
    _write_csv(obs, stage / "observations.csv")
    _write_csv(pd.concat([obs[["person_id", "year"]], X], axis=1), stage / "features.csv")
    builder.risk_map_.to_csv(stage / "risk_map.csv")
    _write_csv(gini.sort_values(["employer_id", "year"]), stage / "gini.csv")
    return [stage / n for n in ("observations.csv", "features.csv", "risk_map.csv", "gini.csv")]


def cmd_fit(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    obs, risk_map = _model_inputs(out, cfg)
    known, teach, test = _split(obs, cfg)
    train = known if cfg.all_data else teach
    builder = FeatureBuilder(risk_map=risk_map).fit(train)
    matrix = ModelMatrix.from_frame(builder.transform(train), train["outcome"].astype(float))
    test_matrix = None
    if len(test) and not cfg.all_data:
        test_matrix = ModelMatrix.from_frame(builder.transform(test), test["outcome"].astype(float))
    if cfg.eliminate:
        fit = backward_eliminate(matrix, max_terms=cfg.max_terms, test=test_matrix)
    else:
        fit = fit_irls(matrix)
    if not fit.converged:
        raise NumericalError(f"IRLS did not converge ({fit.diagnostics.get('reason')})")
    fit.coefficients.to_csv(stage / "coefficients.csv")
    _write_csv(fit.summary(), stage / "fit_summary.csv")
    metrics = {
        "n_train": matrix.n,
        "n_terms": fit.k,
        "log_likelihood": f"{fit.log_likelihood:.10g}",
        "aic": f"{fit.aic:.10g}",
        "mcfadden_r2": f"{fit.mcfadden_r2:.10g}",
        "iterations": fit.iterations,
        "converged": fit.converged,
    }
    if test_matrix is not None and 0 < test_matrix.y.sum() < test_matrix.n:
        eta = test_matrix.columns(fit.coefficients.terms) @ fit.coefficients.estimates
        metrics["n_test"] = test_matrix.n
        metrics["test_auc"] = f"{auc(eta, test_matrix.y):.10g}"
    _write_kv(metrics, stage / "metrics.txt")
    files = [stage / "coefficients.csv", stage / "fit_summary.csv", stage / "metrics.txt"]
    if cfg.eliminate:
        _write_csv(pd.DataFrame(fit.elimination_path), stage / "elimination_path.csv")
        files.append(stage / "elimination_path.csv")
    return files


def _scored(obs, risk_map, coefficients, cfg: RunConfig) -> pd.DataFrame:
    scored = score_population(obs, coefficients, risk_map)
    years = [y for y in cfg.pooled_years if y in set(scored["year"])] or None
    scored["top_decile_flag"] = flag_highest_decile(scored, years=years).astype(int)
    return scored


def cmd_score(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    obs, risk_map = _model_inputs(out, cfg)
    coefficients, _ = _coefficients(cfg)
    _write_csv(_scored(obs, risk_map, coefficients, cfg), stage / "scored.csv")
    return [stage / "scored.csv"]


def _load_scored(out: Path) -> pd.DataFrame:
    _require([out / "scored.csv", out / "observations.csv"])
    scored = pd.read_csv(out / "scored.csv", dtype={"person_id": str})
    missing = {"person_id", "year", "probability", "top_decile_flag"} - set(scored.columns)
    if missing:
        raise SchemaError(f"scored.csv missing columns: {', '.join(sorted(missing))}")
    return scored


def cmd_report(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    scored = _load_scored(out)
    obs = read_observations(out / "observations.csv")
    year = cfg.report_year if cfg.report_year is not None else int(scored["year"].max())
    table = risk_table(scored[scored["year"] == year], obs, age_bands=cfg.age_bands, min_cell=cfg.min_cell)
    _write_csv(table, stage / "risk_table.csv")
    return [stage / "risk_table.csv"]


def cmd_critical_duration(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    scored = _load_scored(out)
    obs = read_observations(out / "observations.csv")
    years = [y for y in cfg.pooled_years if y in set(scored["year"])] or sorted(scored["year"].unique())
    frame = scored[scored["year"].isin(years)].merge(obs, on=["person_id", "year"], how="left")
    frame["top_decile_flag"] = frame["top_decile_flag"].astype(bool)
    _write_csv(critical_duration_table(frame), stage / "critical_duration.csv")
    return [stage / "critical_duration.csv"]


def cmd_scenario(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    sc = cfg.scenario
    for key in ("cost_per_sa_day", "avg_employer_dp_cost"):
        if sc.get(key) is None:
            raise InputError(f"scenario.{key} must be set in the config")
    data = _data_dir(cfg)
    _require([out / "risk_map.csv"])
    tables = load_inputs(data)
    risk_map = OccupationRiskMap.read_csv(out / "risk_map.csv", default_class=cfg.default_risk_class)
    coefficients, _ = _coefficients(cfg)
    years = [sc["year"]] if sc.get("year") is not None else None
    rows = []
    for bands in sc["bands"]:
        spec = ScenarioSpec(
            bands=tuple(bands) if not isinstance(bands, str) else (bands,),
            reduction=float(sc["reduction"]),
            cost_per_sa_day=float(sc["cost_per_sa_day"]),
            avg_employer_dp_cost=float(sc["avg_employer_dp_cost"]),
            replications=int(sc["replications"]),
            seed=cfg.seed,
            age_min=sc.get("age_min"),
            age_max=sc.get("age_max"),
        )
        r = run_scenario(tables, spec, coefficients, risk_map, years=years)
        rows.append({
            "band": "|".join(spec.bands),
            "reduction": spec.reduction,
            "relative_dp_risk_change": r.relative_dp_risk_change,
            "delta_expected_dps": r.delta_expected_dps,
            "delta_direct_sa_cost": r.delta_direct_sa_cost,
            "delta_pension_payments": r.delta_pension_payments,
        })
    _write_csv(pd.DataFrame(rows), stage / "scenario_report.csv")
    return [stage / "scenario_report.csv"]


def cmd_evaluate(cfg: RunConfig, out: Path, stage: Path) -> list[Path]:
    obs, risk_map = _model_inputs(out, cfg)
    coefficients, source = _coefficients(cfg)
    _, _, test = _split(obs, cfg)
    if test.empty:
        raise InputError("no held-out rows with known outcome")
    X = FeatureBuilder(risk_map=risk_map).fit(test).transform(test)[list(coefficients.terms)]
    matrix = ModelMatrix.from_frame(X, test["outcome"].astype(float))
    ll = log_likelihood(matrix, coefficients)
    ll0 = null_log_likelihood(matrix.y)
    eta = matrix.X @ coefficients.estimates
    metrics = {
        "coefficients": source,
        "n_test": matrix.n,
        "prevalence": f"{matrix.y.mean():.10g}",
        "auc": f"{auc(eta, matrix.y):.10g}",
        "log_likelihood": f"{ll:.10g}",
        "aic": f"{2 * len(coefficients) - 2 * ll:.10g}",
        "mcfadden_r2": f"{1 - ll / ll0:.10g}",
    }
    _write_kv(metrics, stage / "evaluation.txt")
    return [stage / "evaluation.txt"]


HANDLERS = {
    "generate": cmd_generate,
    "features": cmd_features,
    "fit": cmd_fit,
    "score": cmd_score,
    "report": cmd_report,
    "critical-duration": cmd_critical_duration,
    "scenario": cmd_scenario,
    "evaluate": cmd_evaluate,
}

# artifacts each command reads from --out (digested into the run manifest)
READS = {
    "fit": ("observations.csv", "risk_map.csv"),
    "score": ("observations.csv", "risk_map.csv"),
    "report": ("scored.csv", "observations.csv"),
    "critical-duration": ("scored.csv", "observations.csv"),
    "scenario": ("risk_map.csv",),
    "evaluate": ("observations.csv", "risk_map.csv"),
}


def _data_dir(cfg: RunConfig) -> Path:
    if not cfg.data:
        raise InputError("--data directory with the four input CSVs is required")
    data = Path(cfg.data)
    _require([data / f"{name}.csv" for name in SCHEMAS])
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dprisk", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"dprisk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file or a previous run manifest")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="artifact directory")
        p.add_argument("--data", help="directory with persons/spells/employment/pensions CSVs")
        p.add_argument("--coefficients", help="coefficient CSV (default: packaged published set)")
        p.add_argument("-v", "--verbose", action="count", default=None)
        if name == "generate":
            p.add_argument("--n-persons", type=int)
        if name == "fit":
            p.add_argument("--eliminate", action="store_true", default=None)
            p.add_argument("--max-terms", type=int)
            p.add_argument("--all-data", action="store_true", default=None)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key in ("seed", "out", "data", "coefficients"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if args.verbose is not None:
        cfg.verbosity = args.verbose
    if getattr(args, "n_persons", None) is not None:
        cfg.synth = {**cfg.synth, "n_persons": args.n_persons}
    for key in ("eliminate", "max_terms", "all_data"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def run(command: str, cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    if cfg.data and command not in ("generate",):
        _data_dir(cfg)
    _require([out / name for name in READS.get(command, ())])
    inputs = {}
    for name in READS.get(command, ()):
        inputs[name] = _sha256(out / name)
    if command in ("features", "scenario"):
        data = _data_dir(cfg)
        inputs.update({f"data/{n}.csv": _sha256(data / f"{n}.csv") for n in SCHEMAS})
    if cfg.coefficients:
        inputs["coefficients"] = _sha256(Path(cfg.coefficients))
    with _staged(out) as stage:
        files = HANDLERS[command](cfg, out, stage)
        manifest = {
            "command": command,
            "dprisk_version": __version__,
            "config": asdict(cfg),
            "inputs": inputs,
            "outputs": {f.name: _sha256(f) for f in files},
        }
        (stage / f"run_{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(cfg.verbosity, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        manifest = run(args.command, cfg)
    except DPRiskError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return InputError.exit_code
    for name, digest in manifest["outputs"].items():
        print(f"{name}\t{digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
