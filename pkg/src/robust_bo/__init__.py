"""Bayesian optimization that filters outliers with a Student-t likelihood GP."""

__version__ = "0.1.0"

from robust_bo.acquisition import ei_gaussian, ei_student_t, expected_improvement, maximize_acquisition
from robust_bo.diagnostics import ClassificationReport, FilterConfig, classify_outliers, schedule_says_filter
from robust_bo.engine import BoConfig, FitSettings, Mode, Observation, RunLog, initial_design, run_bo
from robust_bo.errors import ContractViolation, InsufficientData, NumericalFailure
from robust_bo.gp import Dataset, Predictive, fit_gp_gaussian, log_marginal_likelihood, predict_gaussian
from robust_bo.kernels import KernelFamily, KernelParams, ard_distance, kernel_value
from robust_bo.laplace import (
    StudentTLikParams,
    laplace_fit,
    observation_predictive,
    predict_studentt_laplace,
)
from robust_bo.tprocess import TProcessParams, fit_tprocess, mvt_log_density, predict_tprocess

__all__ = [
    "BoConfig", "ClassificationReport", "ContractViolation", "Dataset", "FilterConfig",
    "FitSettings", "InsufficientData", "KernelFamily", "KernelParams", "Mode", "NumericalFailure",
    "Observation", "Predictive", "RunLog", "StudentTLikParams", "TProcessParams", "ard_distance",
    "classify_outliers", "ei_gaussian", "ei_student_t", "expected_improvement", "fit_gp_gaussian",
    "fit_tprocess", "initial_design", "kernel_value", "laplace_fit", "log_marginal_likelihood",
    "maximize_acquisition", "mvt_log_density", "observation_predictive", "predict_gaussian",
    "predict_studentt_laplace", "predict_tprocess", "run_bo", "schedule_says_filter",
]
