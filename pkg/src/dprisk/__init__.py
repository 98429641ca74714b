"""Disability-pension risk modelling from sickness-absence and pension registers."""

from .analytics import (
    CriticalDurationResult,
    ScenarioResult,
    ScenarioSpec,
    critical_duration,
    critical_duration_table,
    flag_highest_decile,
    risk_table,
    run_scenario,
    score_population,
)
from .features import TERMS, FeatureBuilder, OccupationRiskMap, bucket_spells, build_risk_map, gini, oa_fraction
from .glm import (
    CoefficientSet,
    FitResult,
    LogisticIRLS,
    ModelMatrix,
    auc,
    backward_eliminate,
    fit_irls,
    load_table1,
    log_likelihood,
    model_metrics,
    predict,
)
from .ingest import (
    InputTables,
    MergedSpell,
    PensionEvent,
    RawSpell,
    assemble_observations,
    label_outcome,
    load_inputs,
    merge_spells,
    parse_inputs,
)
from .synth import SynthConfig, generate, simulate_outcomes

__version__ = "0.1.0"

__all__ = [
    "assemble_observations",
    "auc",
    "backward_eliminate",
    "bucket_spells",
    "build_risk_map",
    "CoefficientSet",
    "critical_duration",
    "critical_duration_table",
    "CriticalDurationResult",
    "FeatureBuilder",
    "fit_irls",
    "FitResult",
    "flag_highest_decile",
    "generate",
    "gini",
    "InputTables",
    "label_outcome",
    "load_inputs",
    "load_table1",
    "log_likelihood",
    "LogisticIRLS",
    "merge_spells",
    "MergedSpell",
    "model_metrics",
    "ModelMatrix",
    "oa_fraction",
    "OccupationRiskMap",
    "parse_inputs",
    "PensionEvent",
    "predict",
    "RawSpell",
    "risk_table",
    "run_scenario",
    "ScenarioResult",
    "ScenarioSpec",
    "score_population",
    "simulate_outcomes",
    "SynthConfig",
    "TERMS",
]
