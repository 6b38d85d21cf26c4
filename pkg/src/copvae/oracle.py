"""Ground-truth posteriors from a grid sweep through the frozen decoder.

For one scenario (m, w) every grid point z_j is pushed through the decoder
with the same w, scored by delta_j = ||m - F([z_j, w])||^2, and the n_f
best points become the centres of a weighted Gaussian KDE with weights
proportional to 1 / delta_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from copvae import nn
from copvae.errors import ConfigurationError

DELTA_FLOOR = 1e-12
N_GRID = 200
N_F = 2000


def unit_grid(n, d):
    """All points of the n**d lattice spanning [0, 1]^d, endpoints included.

    Halving the spacing (n -> 2n - 1) keeps every old point, so refinement
    can only lower the best discrepancy.
    """
    axis = np.linspace(0.0, 1.0, n)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=-1)


def cell_centres(n):
    return (np.arange(n) + 0.5) / n


def grid_discrepancies(m, w, decoder, n_grid=N_GRID, d=None):
    """(grid points (G, D), delta (G,)) for one scenario."""
    m = np.asarray(m, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    d = decoder.n_in - w.size if d is None else d
    if d < 1 or decoder.n_in != d + w.size:
        raise ConfigurationError("decoder input width does not match [z, w]")
    z = unit_grid(n_grid, d)
    x = np.hstack([z, np.broadcast_to(w, (z.shape[0], w.size))])
    pred = nn.predict(decoder, x)
    delta = np.sum((pred - m) ** 2, axis=1)
    return z, delta


@dataclass(frozen=True)
class GroundTruthPosterior:
    points: np.ndarray
    weights: np.ndarray
    bandwidth: np.ndarray
    scenario_id: int | None = None

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def h(self):
        return np.sqrt(np.diag(self.bandwidth))

    def mode_point(self):
        return self.points[np.argmax(self.weights)]


def scott_bandwidth(points, fallback):
    """diag(h_d^2) with h_d = n^(-1/(d+4)) * std_d (unweighted)."""
    n, d = points.shape
    sd = points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    h = n ** (-1.0 / (d + 4)) * sd
    h = np.where(h > 0, h, fallback)
    return np.diag(h * h)


def build_ground_truth(m, w, decoder, n_grid=N_GRID, n_f=N_F, scenario_id=None):
    z, delta = grid_discrepancies(m, w, decoder, n_grid)
    if not 1 <= n_f <= z.shape[0]:
        raise ConfigurationError(f"n_f={n_f} must lie in [1, {z.shape[0]}]")
    return ground_truth_from_scores(z, delta, n_f, 1.0 / (n_grid - 1), scenario_id)


def ground_truth_from_scores(z, delta, n_f, fallback, scenario_id=None):
    keep = np.argsort(delta, kind="stable")[:n_f]
    pts = z[keep]
    raw = 1.0 / np.maximum(delta[keep], DELTA_FLOOR)
    weights = raw / raw.sum()
    return GroundTruthPosterior(pts, weights, scott_bandwidth(pts, fallback), scenario_id)


def _kernel_logs(gt, z):
    """log of each weighted kernel at each z: shape (P, n_f)."""
    h = gt.h
    d = gt.dim
    diff = (z[:, None, :] - gt.points[None, :, :]) / h
    log_norm = -0.5 * d * math.log(2.0 * math.pi) - np.log(h).sum()
    return np.log(gt.weights)[None, :] - 0.5 * np.sum(diff * diff, axis=-1) + log_norm


def gt_density(gt: GroundTruthPosterior, z, chunk=4096):
    """Sum_j w_j N(z; z_j, S) at points z (..., D)."""
    z = np.asarray(z, dtype=float)
    pts = z.reshape(-1, gt.dim)
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        out[lo:lo + chunk] = np.exp(_kernel_logs(gt, pts[lo:lo + chunk])).sum(axis=1)
    return out.reshape(z.shape[:-1])


def gt_logpdf(gt, z, floor=1e-300):
    return np.log(np.maximum(gt_density(gt, z), floor))


def gt_density_grid(gt: GroundTruthPosterior, axis):
    """Density on the product grid axis x axis (D = 2), as one matrix product.

    The kernels are axis-aligned, so each one factorizes into a row and a
    column profile and the weighted sum collapses to A diag(w) B^T.
    """
    if gt.dim != 2:
        raise ConfigurationError("grid evaluation is implemented for D = 2")
    axis = np.asarray(axis, dtype=float)
    h = gt.h
    a = np.exp(-0.5 * ((axis[:, None] - gt.points[None, :, 0]) / h[0]) ** 2)
    b = np.exp(-0.5 * ((axis[:, None] - gt.points[None, :, 1]) / h[1]) ** 2)
    norm = 1.0 / (2.0 * math.pi * h[0] * h[1])
    return norm * (a * gt.weights[None, :]) @ b.T


def gt_sample(gt: GroundTruthPosterior, n, rng):
    """Draws from the KDE (not restricted to the box)."""
    idx = rng.choice(gt.points.shape[0], size=n, p=gt.weights)
    return gt.points[idx] + rng.standard_normal((n, gt.dim)) * gt.h


def grid_argmax(gt: GroundTruthPosterior, n_grid=N_GRID):
    axis = np.linspace(0.0, 1.0, n_grid)
    dens = gt_density_grid(gt, axis)
    i, j = np.unravel_index(np.argmax(dens), dens.shape)
    return np.array([axis[i], axis[j]])


def domain_mass(gt: GroundTruthPosterior, n, rng):
    """MC estimate of the KDE mass inside the unit box."""
    u = rng.random((n, gt.dim))
    return float(gt_density(gt, u).mean())


def domain_mass_exact(gt: GroundTruthPosterior):
    """Closed-form in-box mass of the axis-aligned KDE (a product of CDFs)."""
    from scipy.special import ndtr

    h = gt.h
    lo = ndtr((0.0 - gt.points) / h)
    hi = ndtr((1.0 - gt.points) / h)
    return float(np.sum(gt.weights * np.prod(hi - lo, axis=1)))
