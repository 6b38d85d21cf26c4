"""Standard normal CDF, density and quantile function."""

import math

import numpy as np
from scipy.special import erfc

from copvae.errors import DomainError

SQRT2 = math.sqrt(2.0)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Acklam's rational approximation, refined below to full double precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def std_normal_cdf(x):
    """Phi(x) through the complementary error function.

    Using ``erfc(-x / sqrt 2) / 2`` keeps full relative precision in the lower
    tail and saturates smoothly to 1 in the upper one.
    """
    return 0.5 * erfc(-np.asarray(x, dtype=float) / SQRT2)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - LOG_SQRT_2PI)


def std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - LOG_SQRT_2PI


def _horner(coeffs, x):
    out = np.full_like(x, coeffs[0])
    for c in coeffs[1:]:
        out = out * x + c
    return out


def _lower_tail_guess(q):
    """Initial quantile for q in (0, 0.5]; result is <= 0."""
    x = np.empty_like(q)
    tail = q < _P_LOW
    if tail.any():
        t = np.sqrt(-2.0 * np.log(q[tail]))
        x[tail] = _horner(_C, t) / (_horner(_D, t) * t + 1.0)
    mid = ~tail
    if mid.any():
        r = q[mid] - 0.5
        s = r * r
        x[mid] = _horner(_A, s) * r / (_horner(_B, s) * s + 1.0)
    return x


def _bisect_quantile(q, lo=-40.0, hi=0.0, iters=200):
    """Bracketed fallback: solve Phi(x) = q on [lo, hi] elementwise."""
    q = np.asarray(q, dtype=float)
    lo = np.full_like(q, lo)
    hi = np.full_like(q, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = std_normal_cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(1.0, np.abs(lo))):
            break
    return 0.5 * (lo + hi)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` for p strictly inside (0, 1).

    Works on min(p, 1 - p), which is exact for p >= 0.5, so both tails keep
    relative precision. Two Halley steps polish the rational guess; entries
    whose residual is still off (or non-finite) are re-solved by bisection.
    """
    p_arr = np.asarray(p, dtype=float)
    scalar = p_arr.ndim == 0
    p_arr = np.atleast_1d(p_arr)
    if not np.all((p_arr > 0.0) & (p_arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")

    upper = p_arr > 0.5
    q = np.where(upper, 1.0 - p_arr, p_arr)
    x = _lower_tail_guess(q)
    for _ in range(2):
        e = std_normal_cdf(x) - q
        u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)

    resid = np.abs(std_normal_cdf(x) - q)
    bad = ~np.isfinite(x) | (x > 0.0) | (resid > 1e-13 * q)
    if bad.any():
        x[bad] = _bisect_quantile(q[bad])

    x = np.where(upper, -x, x)
    return float(x[0]) if scalar else x
