"""Gaussian mixtures with diagonal or rotation-scaling covariances on a box.

A full covariance is carried as Sigma = R S S R^T, with R the product of
plane rotations over the component's angles and S = diag(s). The diagonal
family is the special case R = I, s = sigma, and both families share every
code path below except the whitening step, so they agree bit-for-bit when
the angles are zero.

Taped helpers take batched parameters with shapes
``alpha (..., K)``, ``mu (..., K, D)``, ``scale (..., K, D)`` and, for the
full family, ``rot (..., K, D, D)``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from copvae.errors import DomainError, ParameterError, RejectionExhaustedError
from copvae.mathcore import ad, n_angles, rotation_matrix

LOG_2PI = math.log(2.0 * math.pi)
DENSITY_FLOOR = 1e-300
MAX_ROUNDS = 100_000


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture on the hypercube ``[low, high]^D``.

    ``scales`` holds per-axis sigmas (diagonal) or the scalings s (full);
    ``angles`` is None for the diagonal family.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    angles: np.ndarray | None = None
    low: float = 0.0
    high: float = 1.0
    rotations: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        sc = np.atleast_2d(np.asarray(self.scales, dtype=float))
        k, d = mu.shape
        if w.shape != (k,) or sc.shape != (k, d):
            raise ParameterError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, scales {sc.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError("mixture weights must be non-negative and sum to 1")
        if not np.all(np.isfinite(sc)) or np.any(sc <= 0):
            raise ParameterError("covariance is not positive-definite: scales must be > 0")
        if not self.low < self.high:
            raise ParameterError("need low < high")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "scales", sc)
        if self.angles is None:
            rot = np.broadcast_to(np.eye(d), (k, d, d))
        else:
            ang = np.asarray(self.angles, dtype=float).reshape(k, n_angles(d))
            object.__setattr__(self, "angles", ang)
            rot = np.stack([rotation_matrix(a, d) for a in ang])
        object.__setattr__(self, "rotations", rot)

    @property
    def kind(self):
        return "diag" if self.angles is None else "full"

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def volume(self):
        return (self.high - self.low) ** self.dim

    def covariances(self):
        r, s = self.rotations, self.scales
        rs = r * s[:, None, :]
        return rs @ np.swapaxes(rs, -1, -2)

    def taped(self):
        """(alpha, mu, scale, rot) as constant arrays with no batch axis."""
        rot = None if self.angles is None else self.rotations
        return self.weights, self.means, self.scales, rot


def mc_points(n, d, rng, low=0.0, high=1.0):
    """``n`` uniform points on the box from a randomly scrambled Sobol sequence.

    Each point is marginally uniform, so the mass estimate stays unbiased,
    while the low discrepancy cuts its spread on narrow components by well
    over an order of magnitude compared with i.i.d. draws.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = qmc.Sobol(d, scramble=True, seed=rng).random(n)
    return low + (high - low) * u


# ---------------------------------------------------------------- taped core

def whiten_t(diff, scale, rot):
    """S^-1 R^T diff along the last axis; ``diff`` is (..., K, D)."""
    if rot is not None:
        diff = (ad.expand_dims(diff, -2) @ rot)[..., 0, :]
    return diff / scale


def colour_t(eps, scale, rot):
    """R S eps, the inverse of :func:`whiten_t`."""
    out = eps * scale
    if rot is not None:
        out = (ad.expand_dims(out, -2) @ ad.swapaxes(rot, -1, -2))[..., 0, :]
    return out


def component_logpdf_t(z, mu, scale, rot):
    """log N(z | mu_k, Sigma_k) for z (..., H, D); returns (..., H, K)."""
    d = z.shape[-1]
    diff = ad.expand_dims(z, -2) - ad.expand_dims(mu, -3)
    y = whiten_t(
        diff,
        ad.expand_dims(scale, -3),
        None if rot is None else ad.expand_dims(rot, -4),
    )
    logdet = ad.log(scale).sum(axis=-1)
    return -0.5 * ad.square(y).sum(axis=-1) - ad.expand_dims(logdet, -2) - 0.5 * d * LOG_2PI


def logpdf_t(z, alpha, mu, scale, rot):
    """Unnormalized-over-domain mixture log-density, shape (..., H)."""
    comp = component_logpdf_t(z, mu, scale, rot)
    return ad.logsumexp(ad.expand_dims(ad.log(alpha), -2) + comp, axis=-1)


def whitening_matrix_t(scale, rot):
    """W = S^-1 R^T with shape (..., K, D, D)."""
    inv = 1.0 / ad.expand_dims(scale, -1)
    if rot is None:
        return inv * np.eye(scale.shape[-1])
    return inv * ad.swapaxes(rot, -1, -2)


def mc_mass_t(alpha, mu, whiten, u, volume, chunk=None):
    """Monte Carlo in-domain mass C = vol/N * sum_n q(u_n), a fused primitive.

    ``u`` (N, D) are uniform points shared by every batch entry. Gradients
    w.r.t. alpha, mu and the whitening matrices W are accumulated in the
    same pass from y = W(u - mu): dN/dmu = N W^T y and
    dN/dW = N (W^-T - y (u - mu)^T), averaged over the points.
    """
    a = ad.value_of(alpha)
    m = ad.value_of(mu)
    w = ad.value_of(whiten)
    u = np.asarray(u, dtype=float)
    batch = a.shape[:-1]
    k, d = m.shape[-2:]
    m2 = np.broadcast_to(m, batch + (k, d)).reshape(-1, d)
    w2 = np.broadcast_to(w, batch + (k, d, d)).reshape(-1, d, d)
    a2 = a.reshape(-1)
    nbk, n = m2.shape[0], u.shape[0]
    need_grad = any(isinstance(t, ad.Tensor) and t.requires_grad for t in (mu, whiten))
    _, logdet = np.linalg.slogdet(w2)
    norm = np.exp(logdet - 0.5 * d * LOG_2PI)

    shift = np.einsum("bij,bj->bi", w2, m2)[:, :, None]
    if chunk is None:
        chunk = max(1, int(2 ** 21 // max(1, nbk)))
    s0 = np.zeros(nbk)
    s1 = np.zeros((nbk, d)) if need_grad else None
    s2 = np.zeros((nbk, d, d)) if need_grad else None
    for start in range(0, n, chunk):
        uc = u[start:start + chunk]
        y = np.matmul(w2, uc.T) - shift
        q = y[:, 0] * y[:, 0]
        for i in range(1, d):
            q += y[:, i] * y[:, i]
        e = np.exp(-0.5 * q)
        s0 += e.sum(axis=-1)
        if need_grad:
            ey = y * e[:, None, :]
            s1 += ey.sum(axis=-1)
            s2 += np.matmul(ey, uc)
    if need_grad:
        s2 -= s1[:, :, None] * m2[:, None, :]

    factor = volume / n
    per_comp = factor * norm * s0
    total = (a2 * per_comp).reshape(batch + (k,)).sum(axis=-1)

    def coef(g):
        return (np.broadcast_to(np.asarray(g)[..., None], batch + (k,)).reshape(-1)
                * a2 * factor * norm)

    def grad_alpha(g):
        return ad.unbroadcast((np.asarray(g)[..., None] * per_comp.reshape(batch + (k,))),
                              a.shape)

    def grad_mu(g):
        gm = coef(g)[:, None] * np.einsum("bji,bj->bi", w2, s1)
        return ad.unbroadcast(gm.reshape(batch + (k, d)), m.shape)

    def grad_whiten(g):
        inv_t = np.swapaxes(np.linalg.inv(w2), -1, -2)
        gw = coef(g)[:, None, None] * (inv_t * s0[:, None, None] - s2)
        return ad.unbroadcast(gw.reshape(batch + (k, d, d)), w.shape)

    return ad.make(total, "gm_mc_mass",
                   (alpha, grad_alpha), (mu, grad_mu), (whiten, grad_whiten))


def truncated_logpdf_t(z, alpha, mu, scale, rot, u, volume):
    """log q(z) - log C with C the Monte Carlo in-domain mass (floored)."""
    mass = mc_mass_t(alpha, mu, whitening_matrix_t(scale, rot), u, volume)
    log_mass = ad.log(ad.clip(mass, DENSITY_FLOOR, None))
    return logpdf_t(z, alpha, mu, scale, rot) - ad.expand_dims(log_mass, -1)


def transform_t(mu, scale, rot, comp, eps):
    """Reparameterized draws z = mu_k + R_k S_k eps for chosen components.

    ``mu`` (B, K, D), ``comp`` (B, H) integer picks, ``eps`` (B, H, D).
    """
    rows = np.arange(comp.shape[0])[:, None]
    mu_k = mu[rows, comp]
    scale_k = scale[rows, comp]
    rot_k = None if rot is None else rot[rows, comp]
    return mu_k + colour_t(ad.Tensor(eps), scale_k, rot_k)


# ---------------------------------------------------------------- sampling

def draw_truncated(alpha, mu, scale, rot, h, rng, low=0.0, high=1.0,
                   max_rounds=MAX_ROUNDS, ids=None):
    """Rejection-sample component picks and noise so every draw lands in the box.

    Batched over a leading axis B. The first round draws H candidates per
    entry; each later round draws fresh candidates for exactly the indices
    still outside the domain and overwrites them. Returns
    ``(comp, eps, z, rounds)`` with z of shape (B, H, D). On exhaustion the
    error names the first unfinished row, through ``ids`` when given.
    """
    alpha = np.asarray(alpha, dtype=float)
    mu = np.asarray(mu, dtype=float)
    scale = np.asarray(scale, dtype=float)
    rot = None if rot is None else np.asarray(rot, dtype=float)
    b, k, d = mu.shape
    cum = np.cumsum(alpha, axis=-1)

    def draw(rows):
        # rows: flat batch index of every candidate, shape (n,)
        r = rng.random(rows.size)
        c = np.minimum((r[:, None] >= cum[rows]).sum(-1), k - 1)
        e = rng.standard_normal((rows.size, d))
        sub_rot = None if rot is None else rot[rows]
        z = transform_t(mu[rows], scale[rows], sub_rot, c[:, None], e[:, None, :]).value[:, 0]
        return c, e, z

    def outside(z):
        return np.any((z < low) | (z > high), axis=-1)

    rows = np.repeat(np.arange(b), h)
    comp, eps, z = draw(rows)
    bad = np.flatnonzero(outside(z))
    drawn, accepted = rows.size, rows.size - bad.size
    rounds = 0
    while bad.size:
        if rounds >= max_rounds:
            row = int(rows[bad[0]])
            scenario = row if ids is None else ids[row]
            raise RejectionExhaustedError(rounds, accepted / drawn, scenario)
        rounds += 1
        c_new, e_new, z_new = draw(rows[bad])
        comp[bad], eps[bad], z[bad] = c_new, e_new, z_new
        out = outside(z_new)
        drawn += bad.size
        accepted += int((~out).sum())
        bad = bad[out]
    return comp.reshape(b, h), eps.reshape(b, h, d), z.reshape(b, h, d), rounds


# ---------------------------------------------------------------- numpy API

def gm_pdf(gm, z):
    """Mixture density over R^D (not renormalized to the domain)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("z must be finite")
    alpha, mu, scale, rot = gm.taped()
    pts = np.atleast_2d(z)
    out = np.exp(logpdf_t(ad.Tensor(pts), alpha, mu, scale, rot).value)
    return out[0] if z.ndim == 1 else out


def gm_mass(gm, n_mc, rng):
    """MC estimate of the in-domain mass vol(A)/N * sum q(u_i) over ``n_mc`` points."""
    alpha, mu, scale, rot = gm.taped()
    u = mc_points(n_mc, gm.dim, rng, gm.low, gm.high)
    w = whitening_matrix_t(ad.Tensor(scale), None if rot is None else ad.Tensor(rot))
    return float(mc_mass_t(alpha, mu, w, u, gm.volume).value)


def gm_truncated_logpdf(gm, z, n_mc=65536, rng=None):
    """log gm_pdf(z) - log C over the box, with C from ``n_mc`` uniform draws."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if not np.all((z >= gm.low) & (z <= gm.high)):
        raise DomainError("z lies outside the mixture domain")
    rng = np.random.default_rng(0) if rng is None else rng
    mass = max(gm_mass(gm, n_mc, rng), DENSITY_FLOOR)
    alpha, mu, scale, rot = gm.taped()
    out = logpdf_t(ad.Tensor(z), alpha, mu, scale, rot).value - math.log(mass)
    return out


def gm_rejection_sample(gm, h, rng, max_rounds=MAX_ROUNDS, return_rounds=False):
    """``h`` draws from the mixture restricted to its box (rejection sampling)."""
    if h < 1:
        raise ParameterError("h must be >= 1")
    alpha, mu, scale, rot = gm.taped()
    _, _, z, rounds = draw_truncated(
        alpha[None], mu[None], scale[None], None if rot is None else rot[None],
        h, rng, gm.low, gm.high, max_rounds, ids=[None],
    )
    return (z[0], rounds) if return_rounds else z[0]


def full_from_diag(gm):
    """The same mixture expressed in the full family with zero angles."""
    return GaussianMixture(gm.weights, gm.means, gm.scales,
                           np.zeros((gm.n_components, n_angles(gm.dim))), gm.low, gm.high)


