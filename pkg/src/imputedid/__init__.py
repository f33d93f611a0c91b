"""Imputation difference-in-differences for staggered adoption designs."""

from .data import (
    AdoptionSchedule,
    ObservationRecord,
    ObservationTable,
    TreatmentView,
    ValidationReport,
    build_table,
    derive_treatment,
    read_csv,
    validate,
    write_csv,
)
from .imputation import (
    CounterfactualModel,
    EffectSet,
    EstimateReport,
    EventStudyCurve,
    att_by_horizon,
    att_by_subgroup,
    att_overall,
    estimate,
    fit_counterfactual,
    impute_effects,
    placebo,
)
from .indices import CompositeIndex, ReferenceTable, pc1_index, standardize, zscore_against
from .inference import BootstrapPlan, BootstrapResult, cluster_bootstrap, contrast_test
from .pretrend import LeadProfile, fit_leads, joint_test
from .regression import DesignSpec, FitResult, fit_absorbed, fit_wls
from .simulate import DgpConfig, GroundTruth, generate, preset
from .twfe import estimate_twfe, selection_test, trend_test

__all__ = [
    "AdoptionSchedule",
    "att_by_horizon",
    "att_by_subgroup",
    "att_overall",
    "BootstrapPlan",
    "BootstrapResult",
    "build_table",
    "cluster_bootstrap",
    "CompositeIndex",
    "contrast_test",
    "CounterfactualModel",
    "derive_treatment",
    "DesignSpec",
    "DgpConfig",
    "EffectSet",
    "estimate",
    "estimate_twfe",
    "EstimateReport",
    "EventStudyCurve",
    "fit_absorbed",
    "fit_counterfactual",
    "fit_leads",
    "fit_wls",
    "FitResult",
    "generate",
    "GroundTruth",
    "impute_effects",
    "joint_test",
    "LeadProfile",
    "ObservationRecord",
    "ObservationTable",
    "pc1_index",
    "placebo",
    "preset",
    "read_csv",
    "ReferenceTable",
    "selection_test",
    "standardize",
    "TreatmentView",
    "trend_test",
    "validate",
    "ValidationReport",
    "write_csv",
    "zscore_against",
]

__version__ = "0.1.0"
