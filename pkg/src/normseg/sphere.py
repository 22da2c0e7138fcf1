"""Intrinsic geometry of the unit sphere S^2.

Geodesic distance, exponential and logarithm maps, parallel transport along
the connecting geodesic, and weighted Karcher means.  These are the kernels
the label-space model is built from: triangle labels live on S^2 and the
regularizer couples neighbouring per-triangle means through geodesic
distances.

All functions broadcast over leading axes; vectors sit on the last axis of
length 3.  Inputs are assumed unit length (callers normalize); dot products
are clamped before arccos.
"""

import numpy as np

from .errors import GeometryError, SolverError

# angle beyond which two points count as antipodal (log direction undefined)
ANTIPODAL_MARGIN = 1e-8
_TINY = 1e-14

KARCHER_MAX_ITERS = 200
ARMIJO_C = 1e-4
ARMIJO_MAX_HALVINGS = 60


def sph_distance(a, b):
    """Geodesic distance arccos(<a, b>), clamped; shape (...,)."""
    dot = np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0)
    return np.arccos(dot)


def sph_log(base, target, check_antipodal=True):
    """Log map: tangent vector at ``base`` pointing to ``target``.

    Returns theta * (target - <base,target> base) / |...| with theta the
    geodesic distance; zero where target == base.  Raises GeometryError for
    antipodal pairs (theta > pi - ANTIPODAL_MARGIN), where the direction is
    undefined.
    """
    base = np.asarray(base, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    dot = np.clip(np.sum(base * target, axis=-1, keepdims=True), -1.0, 1.0)
    theta = np.arccos(dot)
    if check_antipodal and np.any(theta > np.pi - ANTIPODAL_MARGIN):
        raise GeometryError("log map undefined for antipodal points")
    perp = target - dot * base
    nrm = np.linalg.norm(perp, axis=-1, keepdims=True)
    scale = np.where(nrm > _TINY, theta / np.maximum(nrm, _TINY), 0.0)
    return scale * perp


def sph_exp(base, x):
    """Exp map: cos(|x|) base + sin(|x|) x/|x|; result renormalized to unit."""
    base = np.asarray(base, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(nrm, _TINY)
    out = np.cos(nrm) * base + np.sin(nrm) * (x / safe)
    out = np.where(nrm > _TINY, out, base)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def sph_transport(src, dst, x):
    """Parallel transport of tangent ``x`` at ``src`` to ``dst``.

    Implemented as the minimal rotation taking src to dst,
    R(x) = x - ((src+dst).x / (1 + src.dst)) (src+dst) + 2 (src.x) dst,
    which equals the two-log transport formula on tangent vectors and is
    stable at src == dst (identity).  Errors on antipodal src/dst.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    c = np.sum(src * dst, axis=-1, keepdims=True)
    if np.any(np.arccos(np.clip(c, -1.0, 1.0)) > np.pi - ANTIPODAL_MARGIN):
        raise GeometryError("transport undefined for antipodal points")
    q = src + dst
    qx = np.sum(q * x, axis=-1, keepdims=True)
    ax = np.sum(src * x, axis=-1, keepdims=True)
    return x - (qx / (1.0 + c)) * q + 2.0 * ax * dst


def _weighted_log_sum(m, labels, weights):
    """sum_l w_l log_m(g_l), skipping zero-weight labels; errors on antipodal
    positive-weight labels.  m: (3,), labels: (L,3), weights: (L,)."""
    dot = np.clip(labels @ m, -1.0, 1.0)
    theta = np.arccos(dot)
    pos = weights > 0.0
    if np.any(pos & (theta > np.pi - ANTIPODAL_MARGIN)):
        raise GeometryError("Karcher iterate antipodal to a positive-weight label")
    perp = labels - dot[:, None] * m[None, :]
    nrm = np.linalg.norm(perp, axis=-1)
    scale = np.where((nrm > _TINY) & pos, weights * theta / np.maximum(nrm, _TINY), 0.0)
    return scale @ perp, theta


def karcher_init(weights, labels, preferred):
    """Safe starting point for a Karcher mean solve.

    Returns the label ``preferred`` unless some positive-weight label is
    antipodal to it, in which case the start is nudged 1e-3 along a fixed
    tangent direction (the coordinate axis least aligned with the label) so
    the first log evaluation is defined.  Deterministic.
    """
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    g = labels[preferred]
    ang = sph_distance(labels, g[None, :])
    if not np.any((weights > 0.0) & (ang > np.pi - ANTIPODAL_MARGIN)):
        return g.copy()
    axis = np.argmin(np.abs(g))
    t = np.zeros(3)
    t[axis] = 1.0
    t -= (t @ g) * g
    t /= np.linalg.norm(t)
    return sph_exp(g, 1e-3 * t)


def karcher_mean(weights, labels, init=None, tol=1e-8):
    """Weighted Karcher mean of label directions on S^2.

    Minimizes sum_l w_l d(m, g_l)^2 by Riemannian gradient descent
    m <- exp_m(eta sum_l w_l log_m(g_l)) with Armijo backtracking from
    eta = 1, until the residual |sum_l w_l log_m(g_l)| <= tol.

    Parameters
    ----------
    weights : ndarray, shape (L,)
        Nonnegative weights; zero-weight labels are skipped entirely, so a
        one-hot weight vector returns its label exactly.
    labels : ndarray, shape (L, 3)
        Unit label directions.
    init : ndarray, shape (3,), optional
        Starting point; defaults to ``karcher_init`` at the argmax weight.
    tol : float
        Residual norm tolerance.

    Returns
    -------
    (mean, residual, iterations)

    Raises
    ------
    GeometryError
        If an iterate comes within ANTIPODAL_MARGIN of the antipode of a
        positive-weight label.
    SolverError
        No convergence after 200 iterations, or Armijo failure.
    """
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0.0):
        raise ValueError("negative Karcher weights")
    if init is None:
        m = karcher_init(weights, labels, int(np.argmax(weights)))
    else:
        m = np.asarray(init, dtype=np.float64).copy()
        m /= np.linalg.norm(m)

    def objective(p):
        d = sph_distance(labels, p[None, :])
        return float(weights @ d**2)

    f = objective(m)
    for it in range(KARCHER_MAX_ITERS):
        v, _ = _weighted_log_sum(m, labels, weights)
        res = float(np.linalg.norm(v))
        if res <= tol:
            return m, res, it
        # direction v is -grad/2, so sufficient decrease uses 2|v|^2
        eta = 1.0
        for _ in range(ARMIJO_MAX_HALVINGS):
            cand = sph_exp(m, eta * v)
            fc = objective(cand)
            if fc <= f - ARMIJO_C * eta * 2.0 * res**2:
                m, f = cand, fc
                break
            eta *= 0.5
        else:
            raise SolverError("Karcher mean: Armijo failed after 60 halvings")
    raise SolverError(f"Karcher mean: no convergence after {KARCHER_MAX_ITERS} iterations")
