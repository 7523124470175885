"""Penalized B-spline functional regression under the LPRE loss, with optimal subsampling."""

from .baselines import fit_flad, fit_fls, flad_objective
from .basis import (BasisConfig, CurveSet, DesignMatrix, FunctionalSample, basis_matrix,
                    build_design, eval_basis, eval_basis_deriv, knots_rule_n14, make_basis,
                    penalty_matrix, project_covariate)
from .datagen import SimConfig, gen_covariates, gen_errors, gen_response, simulate, true_beta
from .lpre import (ExpOverflowError, FitResult, SingularHessianError, fit_newton,
                   lpre_gradient, lpre_hessian, lpre_loss, predict_beta, predict_response,
                   sandwich_variance)
from .subsampling import (PilotFitError, SubsampleDraw, SubsampleFit, SubsampleScheme,
                          ZeroScoreError, draw_with_replacement, fit_weighted, probs_faopt,
                          probs_flopt, probs_uniform, subsample_variance, two_step_fit,
                          weighted_loss)
from .tuning import BICUndefinedError, MetricReport, bic, imse, mape_mppe, rpse, select_lambda

__version__ = "0.1.0"

__all__ = [
    "BasisConfig", "CurveSet", "DesignMatrix", "FunctionalSample", "basis_matrix",
    "build_design", "eval_basis", "eval_basis_deriv", "knots_rule_n14", "make_basis",
    "penalty_matrix", "project_covariate",
    "ExpOverflowError", "FitResult", "SingularHessianError", "fit_newton", "lpre_gradient",
    "lpre_hessian", "lpre_loss", "predict_beta", "predict_response", "sandwich_variance",
    "PilotFitError", "SubsampleDraw", "SubsampleFit", "SubsampleScheme", "ZeroScoreError",
    "draw_with_replacement", "fit_weighted", "probs_faopt", "probs_flopt", "probs_uniform",
    "subsample_variance", "two_step_fit", "weighted_loss",
    "fit_flad", "fit_fls", "flad_objective",
    "SimConfig", "gen_covariates", "gen_errors", "gen_response", "simulate", "true_beta",
    "BICUndefinedError", "MetricReport", "bic", "imse", "mape_mppe", "rpse", "select_lambda",
]
