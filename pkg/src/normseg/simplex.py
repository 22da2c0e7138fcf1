"""Geometry of the probability simplex.

The simplex carries the Fisher-Rao metric, under which it is isometric to an
octant of the radius-2 sphere via ``phi -> 2 sqrt(phi)``.  The exponential map
below is the pullback of the great-circle geodesic under that isometry; it is
what the label-space solver uses to keep assignment iterates strictly inside
the simplex.  The Euclidean projection is the standard sort-and-threshold
algorithm and is used by the assignment-space solver.

All functions broadcast over leading axes; the simplex axis is the last one.
"""

import numpy as np

from .errors import GeometryError

_TINY = 1e-14


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex.

    Solves min ||x - v||^2 subject to x >= 0, sum(x) = 1, row-wise over the
    last axis, by sorting and thresholding.

    Parameters
    ----------
    v : ndarray, shape (..., L)

    Returns
    -------
    ndarray, shape (..., L)
        Componentwise ``max(v - lam, 0)`` with ``lam`` the unique threshold.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 1:
        raise ValueError("empty simplex axis")
    a = -np.sort(-v, axis=-1)
    css = np.cumsum(a, axis=-1)
    ks = np.arange(1, v.shape[-1] + 1, dtype=np.float64)
    # prefix of the sorted vector where a_k > (cumsum_k - 1)/k; rho = its length
    cond = a > (css - 1.0) / ks
    rho = np.count_nonzero(cond, axis=-1)
    lam = (np.take_along_axis(css, rho[..., None] - 1, axis=-1) - 1.0) / rho[..., None]
    return np.maximum(v - lam, 0.0)


def clip_box(v, lo, hi):
    """Componentwise projection onto the box [lo, hi]."""
    return np.clip(v, lo, hi)


def simplex_tangent_check(phi, x, tol=1e-9):
    """True where ``x`` sums to zero (tangent to the simplex) within ``tol``."""
    return np.abs(np.sum(x, axis=-1)) <= tol


def simplex_exp(phi, x):
    """Fisher-Rao exponential map on the open simplex.

    Parameters
    ----------
    phi : ndarray, shape (..., L)
        Base point(s), strictly positive rows summing to one.
    x : ndarray, shape (..., L)
        Tangent vector(s); rows sum to zero.

    Returns
    -------
    ndarray, shape (..., L)
        Point(s) on the simplex closure.  Tiny negative round-off is clipped
        and rows are renormalized to sum exactly to one.
    """
    phi = np.asarray(phi, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if np.any(phi <= 0.0):
        raise GeometryError("simplex_exp requires a strictly interior base point")
    sq = np.sqrt(phi)
    xs = x / sq
    nx = np.linalg.norm(xs, axis=-1, keepdims=True)
    # guard the zero-tangent rows; their output is the base point itself
    safe = np.maximum(nx, _TINY)
    unit2 = (xs / safe) ** 2
    out = 0.5 * (phi + unit2) + 0.5 * (phi - unit2) * np.cos(nx) + (np.sin(nx) / safe) * xs * sq
    out = np.where(nx > _TINY, out, phi)
    out = np.maximum(out, 0.0)
    return out / np.sum(out, axis=-1, keepdims=True)


def simplex_riemannian_gradient(phi, euclidean_grad):
    """Fisher-Rao gradient of a function with Euclidean gradient ``euclidean_grad``.

    grad = g * phi - (phi . g) phi.  The result sums to zero.
    """
    phi = np.asarray(phi, dtype=np.float64)
    g = np.asarray(euclidean_grad, dtype=np.float64)
    inner = np.sum(phi * g, axis=-1, keepdims=True)
    return g * phi - inner * phi
