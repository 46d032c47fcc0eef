"""Shrinkage-covariance Hotelling-type tests for replicated expression data.

A library plus CLI for gene-level hypothesis testing in designed
experiments: empirical-Bayes fitting of an inverse-Wishart covariance
prior across genes, exact-F moderated statistics under contrast matrices,
step-up false-discovery-rate selection, and a simulation benchmark of the
operating characteristics.
"""

from .model import (
    FitConfig,
    FitReport,
    GeneSample,
    SimplePrior,
    WishartPrior,
    fit_simple_prior,
    fit_wishart_prior,
    marginal_loglik,
    posterior_cov,
)
from .multiplicity import GeneTable, bh_select, confusion
from .stats import (
    Contrast,
    Method,
    TestResult,
    apply_contrast,
    ht2,
    make_contrast,
    run_tests,
    sh_ht2,
    sh_ut2,
    ut2,
)

__all__ = [
    "Contrast",
    "FitConfig",
    "FitReport",
    "GeneSample",
    "GeneTable",
    "Method",
    "SimplePrior",
    "TestResult",
    "WishartPrior",
    "apply_contrast",
    "bh_select",
    "confusion",
    "fit_simple_prior",
    "fit_wishart_prior",
    "ht2",
    "make_contrast",
    "marginal_loglik",
    "posterior_cov",
    "run_tests",
    "sh_ht2",
    "sh_ut2",
    "ut2",
]

__version__ = "0.1.0"
