"""Finite-horizon Bayesian MDPs with a pooled Poisson rate, solved by decomposition."""

from .bayes import (
    PosteriorParams,
    PredictiveDist,
    PriorBelief,
    TruncationConfig,
    convolve,
    posterior_params,
    predictive,
    prior_from_moments,
    stochastically_dominates,
)
from .cbm import CbmInstance, CbmSolveResult, closed_form_last_epoch, solve_cbm_decomposed

__version__ = "0.1.0"

__all__ = [
    "PriorBelief",
    "PosteriorParams",
    "PredictiveDist",
    "TruncationConfig",
    "posterior_params",
    "predictive",
    "prior_from_moments",
    "stochastically_dominates",
    "convolve",
    "CbmInstance",
    "CbmSolveResult",
    "solve_cbm_decomposed",
    "closed_form_last_epoch",
    "__version__",
]
