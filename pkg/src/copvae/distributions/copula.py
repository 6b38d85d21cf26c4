"""Gaussian copula with truncated-Gaussian marginals on the unit hypercube.

The dependence structure comes from a lower-triangular factor L. Its rows
are normalized to unit length, which turns L L^T into a correlation matrix
and keeps Phi(v) exactly uniform per coordinate. Sampling is closed form:
v = L_hat eps, u = Phi(v), z_d = F_d^-1(u_d).
"""

from dataclasses import dataclass, field

import numpy as np

from copvae.distributions import truncnorm as tn
from copvae.errors import DomainError, ParameterError
from copvae.mathcore import ad
from copvae.mathcore.special import LOG_SQRT_2PI, std_normal_cdf, std_normal_quantile


def tril_indices(d):
    """(row, col) of the strictly lower triangle, row-major."""
    return np.tril_indices(d, -1)


def chol_from_params_t(l_diag, l_off, d):
    """Assemble L (..., d, d) from its diagonal and row-major off-diagonal."""
    rows, cols = tril_indices(d)
    terms = []
    for i in range(d):
        e = np.zeros((d, d))
        e[i, i] = 1.0
        terms.append(ad.expand_dims(ad.expand_dims(l_diag[..., i], -1), -1) * e)
    for p, (i, j) in enumerate(zip(rows, cols)):
        e = np.zeros((d, d))
        e[i, j] = 1.0
        terms.append(ad.expand_dims(ad.expand_dims(l_off[..., p], -1), -1) * e)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def normalize_chol_t(l):
    """Divide each row of L by its Euclidean norm."""
    norms = ad.sqrt(ad.square(l).sum(axis=-1, keepdims=True))
    return l / norms


def log_density_t(v, l_hat):
    """Gaussian-copula log-density in normal scores v (..., H, D).

    Equals -1/2 log|Sigma_hat| - 1/2 v^T (Sigma_hat^-1 - I) v for
    Sigma_hat = L_hat L_hat^T, evaluated with one triangular solve.
    ``l_hat`` has shape (..., D, D) and is shared across the H axis.
    """
    d = l_hat.shape[-1]
    eye = np.eye(d)
    diag = (l_hat * eye).sum(axis=-1)
    logdet = ad.log(diag).sum(axis=-1)
    lt = ad.expand_dims(l_hat, -3)
    w = ad.solve(lt, ad.expand_dims(v, -1))[..., 0]
    quad = ad.square(w).sum(axis=-1) - ad.square(v).sum(axis=-1)
    return -ad.expand_dims(logdet, -1) - 0.5 * quad


def colour_t(l_hat, eps):
    """v = L_hat eps for eps (..., H, D)."""
    return (ad.expand_dims(l_hat, -3) @ ad.expand_dims(ad.as_tensor(eps), -1))[..., 0]


def marginal_sample_t(u, mu, sigma):
    """Per-coordinate truncated quantile on [0, 1]; mu, sigma are (..., D)."""
    return tn.quantile_t(u, ad.expand_dims(mu, -2), ad.expand_dims(sigma, -2), 0.0, 1.0)


def marginal_logpdf_t(z, mu, sigma):
    return tn.logpdf_t(z, ad.expand_dims(mu, -2), ad.expand_dims(sigma, -2), 0.0, 1.0).sum(axis=-1)


def sample_t(mu, sigma, l_hat, eps):
    """Reparameterized draws and their log q; eps (..., H, D) is standard normal.

    The copula term is evaluated at v directly, which equals
    Phi^-1(F(z)) identically but avoids a lossy round trip in the tails.
    """
    v = colour_t(l_hat, eps)
    z = marginal_sample_t(ad.ndtr(v), mu, sigma)
    logq = log_density_t(v, l_hat) + marginal_logpdf_t(z, mu, sigma)
    return z, logq


def joint_logpdf_t(z, mu, sigma, l_hat):
    """log q(z) for z (..., H, D) through the marginal CDFs."""
    u = tn.cdf_t(z, ad.expand_dims(mu, -2), ad.expand_dims(sigma, -2), 0.0, 1.0)
    v = ad.ndtri(ad.clip(u, 1e-300, 1.0 - 2.0 ** -53))
    return log_density_t(v, l_hat) + marginal_logpdf_t(z, mu, sigma)


# ---------------------------------------------------------------- numpy API

def correlation_from_chol(l):
    """Sigma_hat = D^-1/2 L L^T D^-1/2 with D = diag(L L^T)."""
    l = np.asarray(l, dtype=float)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {l.shape}")
    if np.any(np.triu(l, 1) != 0.0):
        raise ParameterError("chol factor must be lower-triangular")
    if np.any(np.diag(l) <= 0.0):
        raise ParameterError("chol factor needs a strictly positive diagonal")
    sigma = l @ l.T
    inv_sd = 1.0 / np.sqrt(np.diag(sigma))
    out = sigma * inv_sd[:, None] * inv_sd[None, :]
    np.fill_diagonal(out, 1.0)
    return out


def _check_correlation(sigma_hat):
    s = np.asarray(sigma_hat, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ParameterError("correlation matrix must be square")
    if not np.allclose(np.diag(s), 1.0, atol=1e-12) or not np.allclose(s, s.T, atol=1e-12):
        raise ParameterError("correlation matrix must be symmetric with unit diagonal")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("correlation matrix is not positive-definite") from exc


def copula_density(sigma_hat, u):
    """c(u) = |S|^-1/2 exp(-1/2 v^T (S^-1 - I) v) with v = Phi^-1(u)."""
    l_hat = _check_correlation(sigma_hat)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    pts = np.atleast_2d(u)
    v = std_normal_quantile(pts)
    out = np.exp(log_density_t(v, l_hat).value)
    return out[0] if u.ndim == 1 else out


@dataclass(frozen=True)
class GaussianCopulaPosterior:
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    sigma_hat: np.ndarray = field(init=False, repr=False)
    chol_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        chol = np.atleast_2d(np.asarray(self.chol, dtype=float))
        d = mu.size
        if sigma.shape != (d,) or chol.shape != (d, d):
            raise ParameterError("mu, sigma and chol dimensions disagree")
        if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
            raise ParameterError("marginal sigmas must be positive")
        sigma_hat = correlation_from_chol(chol)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "sigma_hat", sigma_hat)
        object.__setattr__(self, "chol_hat", chol / np.linalg.norm(chol, axis=1, keepdims=True))

    @classmethod
    def from_correlation(cls, mu, sigma, sigma_hat):
        return cls(mu, sigma, _check_correlation(sigma_hat))

    @property
    def dim(self):
        return self.mu.size


def copula_joint_logpdf(post, z, marginal="truncated"):
    """log c(F_1(z_1), ..., F_D(z_D)) + sum_d log q_d(z_d).

    ``marginal="untruncated"`` swaps in plain Gaussian marginals, the
    unnormalized-on-the-box reading kept for comparison.
    """
    z = np.asarray(z, dtype=float)
    pts = np.atleast_2d(z)
    if np.any((pts <= 0.0) | (pts >= 1.0)):
        raise DomainError("z must lie in the open unit hypercube")
    if marginal == "truncated":
        out = joint_logpdf_t(pts, post.mu, post.sigma, post.chol_hat).value
    elif marginal == "untruncated":
        t = (pts - post.mu) / post.sigma
        u = std_normal_cdf(t)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise DomainError("marginal CDF saturated")
        v = std_normal_quantile(u)
        marg = (-0.5 * t * t - np.log(post.sigma) - LOG_SQRT_2PI).sum(axis=-1)
        out = log_density_t(v, post.chol_hat).value + marg
    else:
        raise ParameterError(f"unknown marginal mode {marginal!r}")
    return out[0] if z.ndim == 1 else out


def copula_sample(post, h, rng):
    """``h`` draws in [0, 1]^D; no rejection step is needed."""
    if h < 1:
        raise ParameterError("h must be >= 1")
    eps = rng.standard_normal((h, post.dim))
    z, _ = sample_t(post.mu, post.sigma, post.chol_hat, eps)
    return z.value
