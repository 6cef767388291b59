"""Bayesian sparse polynomial chaos expansions."""

from ._backend import BACKEND, available_backends
from .detsolve import DeterministicFit, SolveError, solve_exact, solve_least_squares, solve_ridge
from .model import LogDensityModel, R2D2Config
from .polybasis import (BasisError, MomentSequence, MultiIndexBasis, basis_size, build_basis,
                        build_univariate, enumerate_multi_indices, evaluate_design, gauss_nodes,
                        gauss_rule, moments_analytic, moments_from_samples)
from .posterior import pce_moments, predict, rmse, sobol_indices
from .sampler import (Diagnostics, PosteriorDraws, SamplerConfig, SamplerError, compute_diagnostics,
                      sample)
from .select import SelectionResult, refit_sparse, select_projpred, select_sobol

__all__ = [
    "BACKEND", "available_backends",
    "DeterministicFit", "SolveError", "solve_exact", "solve_least_squares", "solve_ridge",
    "LogDensityModel", "R2D2Config",
    "BasisError", "MomentSequence", "MultiIndexBasis", "basis_size", "build_basis", "build_univariate",
    "enumerate_multi_indices", "evaluate_design", "gauss_nodes", "gauss_rule", "moments_analytic",
    "moments_from_samples",
    "pce_moments", "predict", "rmse", "sobol_indices",
    "Diagnostics", "PosteriorDraws", "SamplerConfig", "SamplerError", "compute_diagnostics", "sample",
    "SelectionResult", "refit_sparse", "select_projpred", "select_sobol",
]
