"""Bayesian optimization with shape-constrained Gaussian process surrogates."""

from shapebo.kernel import (
    DerivRequest,
    HyperParams,
    UnsupportedOrderError,
    assemble_cov_matrix,
    se_cov,
    se_cov_deriv,
)

__version__ = "0.1.0"

__all__ = [
    "DerivRequest",
    "HyperParams",
    "UnsupportedOrderError",
    "assemble_cov_matrix",
    "se_cov",
    "se_cov_deriv",
]
