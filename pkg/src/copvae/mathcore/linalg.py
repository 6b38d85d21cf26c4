"""Small dense linear-algebra helpers: Cholesky and plane-rotation products."""

from itertools import combinations

import numpy as np

from copvae.errors import ArityError, NotPositiveDefiniteError, ParameterError
from copvae.mathcore import autodiff as ad


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError(f"{name} has non-finite entries")
    return a


def cholesky(a):
    """Lower-triangular L with L @ L.T == a (Cholesky-Banachiewicz).

    Raises NotPositiveDefiniteError on the first non-positive pivot.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ParameterError(f"cholesky needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    low = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j] - low[i, :j] @ low[j, :j]
            if i == j:
                if s <= 0.0:
                    raise NotPositiveDefiniteError(
                        f"non-positive pivot {s:.3g} at row {i}"
                    )
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    return low


def n_angles(d):
    return d * (d - 1) // 2


def rotation_planes(d):
    """Coordinate planes (i, j), i < j, in lexicographic order."""
    return list(combinations(range(d), 2))


def plane_rotation(gamma, i, j, d):
    """Identity with the 2x2 counterclockwise block of ``gamma`` in plane (i, j)."""
    r = np.eye(d)
    c, s = np.cos(gamma), np.sin(gamma)
    r[i, i] = c
    r[j, j] = c
    r[i, j] = -s
    r[j, i] = s
    return r


def rotation_matrix(angles, d):
    """R = R_1 @ R_2 @ ... @ R_n over the lexicographic planes of R^d.

    Each factor is a plane rotation, so R is orthogonal with det(R) = +1.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    planes = rotation_planes(d)
    if angles.shape != (len(planes),):
        raise ArityError(
            f"{d}-D rotation needs {len(planes)} angles, got {angles.size}"
        )
    r = np.eye(d)
    for gamma, (i, j) in zip(angles, planes):
        r = r @ plane_rotation(gamma, i, j, d)
    return r


def rotation_tensor(angles, d):
    """Differentiable batched twin of :func:`rotation_matrix`.

    ``angles`` has shape (..., d(d-1)/2); the result has shape (..., d, d) and
    applies the planes in the same lexicographic left-to-right order.
    """
    angles = ad.as_tensor(angles)
    planes = rotation_planes(d)
    if angles.shape[-1:] != (len(planes),):
        raise ArityError(
            f"{d}-D rotation needs {len(planes)} angles, got shape {angles.shape}"
        )
    eye = np.eye(d)
    r = None
    for p, (i, j) in enumerate(planes):
        diag = np.zeros((d, d))
        diag[i, i] = diag[j, j] = 1.0
        skew = np.zeros((d, d))
        skew[j, i], skew[i, j] = 1.0, -1.0
        gamma = ad.expand_dims(ad.expand_dims(angles[..., p], -1), -1)
        plane = eye + (ad.cos(gamma) - 1.0) * diag + ad.sin(gamma) * skew
        r = plane if r is None else ad.matmul(r, plane)
    if r is None:
        r = ad.Tensor(np.broadcast_to(eye, angles.shape[:-1] + (d, d)))
    return r
