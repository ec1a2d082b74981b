"""Informational global optimization on Gaussian-process surrogates."""

from .covariance import CovarianceSpec, covariance, covariance_matrix, matern
from .kriging import Design, FitBounds, KrigingSystem, TrendBasis, assemble_system, fit_covariance
from .simulation import LocationSet, MinimizerPmf, PathEnsemble
from .optimizer import History, RunConfig, StoppingRule, run

__all__ = [
    "CovarianceSpec", "covariance", "covariance_matrix", "matern",
    "Design", "FitBounds", "KrigingSystem", "TrendBasis", "assemble_system",
    "fit_covariance", "LocationSet", "MinimizerPmf", "PathEnsemble",
    "History", "RunConfig", "StoppingRule", "run",
]
