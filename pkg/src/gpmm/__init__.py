"""Generalized probabilistic monitoring model."""

__version__ = "0.1.0"

from .contribution import ContributionReport, diagnose, gdc, rbc, rgdc, rrbc
from .datagen import FaultSpec, Scenario, ScenarioKind, generate, inject_fault
from .em_random import EmConfig, FitDiagnostics, fit_random, solve_lambda_cubic
from .em_sequential import (
    decompose_subsequences,
    fit_sequential,
    kalman_backward,
    kalman_forward,
    smoothed_means,
)
from .kernels import BACKEND
from .model import (
    ModelParameters,
    joint_model,
    log_likelihood,
    make_parameters,
    benchmark_parameters,
    posterior_s_given_x,
    posterior_s_given_xy,
    posterior_z_given_xy,
    posterior_z_given_y,
)
from .monitoring import (
    MonitoringResult,
    StatisticKind,
    StatisticSpec,
    build_spec,
    build_spec_qseq,
    build_spec_tseq,
    build_specs_random,
    build_specs_slow,
    control_limit,
    fit_slow_feature_model,
    monitor,
)

__all__ = [
    "BACKEND", "ContributionReport", "EmConfig", "FaultSpec", "FitDiagnostics", "ModelParameters",
    "MonitoringResult", "Scenario", "ScenarioKind", "StatisticKind", "StatisticSpec",
    "build_spec", "build_spec_qseq", "build_spec_tseq", "build_specs_random", "build_specs_slow",
    "control_limit", "decompose_subsequences", "diagnose", "fit_random", "fit_sequential",
    "fit_slow_feature_model", "gdc", "generate", "inject_fault", "joint_model", "kalman_backward",
    "kalman_forward", "log_likelihood", "make_parameters", "monitor", "benchmark_parameters",
    "posterior_s_given_x", "posterior_s_given_xy", "posterior_z_given_xy", "posterior_z_given_y",
    "rbc", "rgdc", "rrbc", "smoothed_means", "solve_lambda_cubic",
]
