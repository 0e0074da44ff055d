"""Nonlinear longitudinal models (growth curves, change scores, covariates,
parallel processes, mediation and mixtures) fitted by full-information
maximum likelihood."""
from .api import GrowthMixtureModel, LatentGrowthModel
from .curves import FunctionalForm
from .dataset import ColumnRoles, LongitudinalDataset, load_wide_csv, write_wide_csv
from .estimator import FitConfig, FitResult, derive_starts, fit
from .fiml import neg2ll_mixture, neg2ll_single
from .model_builder import ModelSpec, build_structural, implied_moments, parameter_template
from .params import Parameter, ParameterSet
from .postfit import criteria_table, derived_params, factor_scores, lrt, posterior_classify
from .simulate import SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "ColumnRoles", "FitConfig", "FitResult", "FunctionalForm", "GrowthMixtureModel", "LatentGrowthModel",
    "LongitudinalDataset", "ModelSpec", "Parameter", "ParameterSet", "SimConfig", "build_structural",
    "criteria_table", "derive_starts", "derived_params", "factor_scores", "fit", "implied_moments",
    "load_wide_csv", "lrt", "neg2ll_mixture", "neg2ll_single", "parameter_template", "posterior_classify",
    "simulate", "write_wide_csv",
]
