"""Single-triangle assignment QP: active-set KKT solve.

The assignment subproblem per triangle is
    min_phi  phi.s + (rho/2) |Y^T phi + mu|^2   over the simplex.
Given a guess of the active set (components fixed to zero), stationarity plus
the sum constraint form a small linear system in the free components and the
equality multiplier gamma:

    [ rho Y_I Y_I^T   -1 ] [ phi_I ]   [ -s_I - rho (Y mu)_I ]
    [     1^T          0 ] [ gamma ] = [          1          ]

The inequality multipliers on the active set are recovered from stationarity.
The solution is exact (KKT sufficient, convex QP) whenever the sign checks
phi >= 0 and alpha >= 0 pass.
"""

import numpy as np

_SIGN_SLACK = 1e-12


def kkt_active_set(s, Y, mu, rho, active):
    """Solve the equality-constrained KKT system for a fixed active set.

    Parameters
    ----------
    s : ndarray, shape (L,)
    Y : ndarray, shape (L, 3)
        Tangent vectors (rows).
    mu : ndarray, shape (3,)
    rho : float
    active : ndarray of bool, shape (L,)
        Components forced to zero.

    Returns
    -------
    (phi, alpha, gamma) with phi zero on the active set, alpha zero off it.

    Raises
    ------
    numpy.linalg.LinAlgError
        Singular or ill-conditioned reduced system.
    """
    free = np.nonzero(~active)[0]
    n = len(free)
    if n == 0:
        raise np.linalg.LinAlgError("empty free set")
    YI = Y[free]
    M = np.empty((n + 1, n + 1))
    M[:n, :n] = rho * (YI @ YI.T)
    M[:n, n] = -1.0
    M[n, :n] = 1.0
    M[n, n] = 0.0
    rhs = np.empty(n + 1)
    rhs[:n] = -(s[free] + rho * (YI @ mu))
    rhs[n] = 1.0
    sol = np.linalg.solve(M, rhs)
    if not np.all(np.isfinite(sol)) or np.linalg.norm(M @ sol - rhs) > 1e-8 * (
        1.0 + np.linalg.norm(rhs)
    ):
        raise np.linalg.LinAlgError("ill-conditioned KKT system")
    phi = np.zeros(len(s))
    phi[free] = sol[:n]
    gamma = sol[n]
    alpha = s + rho * (Y @ (Y.T @ phi + mu)) - gamma
    alpha[free] = 0.0
    return phi, alpha, gamma


def kkt_accept(s, Y, mu, rho, phi_stage1, tol3):
    """Second stage of the assignment update: fix near-zero components to
    zero, solve the KKT system, and accept iff phi >= 0 and alpha >= 0.

    A failed sign check means the active-set estimate was wrong, not that
    the QP is unsolvable, so the estimate is repaired and re-solved a
    bounded number of times: negative phi components are activated, the
    most negative alpha multiplier is released, and singular systems shed
    the free component with the smallest stage-1 weight.  The gradient
    descent stage stops at the first coordinate to reach its floor, which
    routinely leaves other boundary-bound coordinates above ``tol3``;
    without the repair that incomplete estimate rejects the solve on about
    half of random instances.

    Returns the exact QP solution, or None (caller falls back to
    ``phi_stage1``) when the repair budget runs out.
    """
    active = phi_stage1 <= tol3
    for _ in range(2 * len(s) + 2):
        if active.all():
            return None
        try:
            phi, alpha, _ = kkt_active_set(s, Y, mu, rho, active)
        except np.linalg.LinAlgError:
            free = np.nonzero(~active)[0]
            if free.size <= 1:
                return None
            active[free[np.argmin(phi_stage1[free])]] = True
            continue
        if phi.min() < -_SIGN_SLACK:
            active |= phi < -_SIGN_SLACK
            continue
        if active.any():
            worst = np.argmin(np.where(active, alpha, np.inf))
            if alpha[worst] < -_SIGN_SLACK:
                active[worst] = False
                continue
        phi = np.maximum(phi, 0.0)
        return phi / phi.sum()
    return None
