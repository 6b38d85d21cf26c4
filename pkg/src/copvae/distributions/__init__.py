"""Posterior families and their building blocks."""

from copvae.distributions.copula import (
    GaussianCopulaPosterior,
    copula_density,
    copula_joint_logpdf,
    copula_sample,
    correlation_from_chol,
)
from copvae.distributions.mixture import (
    GaussianMixture,
    full_from_diag,
    gm_mass,
    gm_pdf,
    gm_rejection_sample,
    gm_truncated_logpdf,
)
from copvae.distributions.prior import UniformPrior
from copvae.distributions.truncnorm import (
    TruncatedGaussian1D,
    trunc_gauss_cdf,
    trunc_gauss_logpdf,
    trunc_gauss_pdf,
    trunc_gauss_quantile,
)

__all__ = [
    "GaussianCopulaPosterior", "GaussianMixture", "TruncatedGaussian1D", "UniformPrior",
    "copula_density", "copula_joint_logpdf", "copula_sample", "correlation_from_chol",
    "full_from_diag", "gm_mass", "gm_pdf", "gm_rejection_sample", "gm_truncated_logpdf",
    "trunc_gauss_cdf", "trunc_gauss_logpdf", "trunc_gauss_pdf", "trunc_gauss_quantile",
]
