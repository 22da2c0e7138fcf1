"""Independent oracles for derived quantities.

Everything here is implemented from definitions using numpy/scipy only, never
by calling the package's own kernels, so agreement is evidence rather than
tautology.
"""

import itertools

import numpy as np
from scipy.integrate import solve_ivp


# ---------------------------------------------------------------------------
# simplex projection


def project_simplex_dykstra(v, max_iters=20000, tol=1e-14):
    """Euclidean projection onto the probability simplex via Dykstra's
    alternating projections between the hyperplane {sum x = 1} and the
    nonnegative orthant.  Converges to the exact projection onto the
    intersection (both sets convex), unlike plain alternating projection.
    """
    v = np.asarray(v, dtype=np.float64)
    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    for _ in range(max_iters):
        y = x + p
        y = y - (y.sum() - 1.0) / y.size  # hyperplane projection
        p = x + p - y
        x_new = np.maximum(y + q, 0.0)  # orthant projection
        q = y + q - x_new
        if np.abs(x_new - x).max() <= tol:
            x = x_new
            break
        x = x_new
    return x


def project_simplex_enum(v):
    """Exact simplex projection by support enumeration.

    For each candidate support S the equality-constrained projection is
    x_S = v_S - (sum(v_S) - 1)/|S|; the true projection is the feasible
    candidate with the smallest distance to v.
    """
    v = np.asarray(v, dtype=np.float64)
    L = v.size
    best = None
    best_d = np.inf
    for k in range(1, L + 1):
        for S in itertools.combinations(range(L), k):
            S = list(S)
            x = np.zeros(L)
            x[S] = v[S] - (v[S].sum() - 1.0) / k
            if np.min(x[S]) < -1e-15:
                continue
            d = np.sum((x - v) ** 2)
            if d < best_d:
                best_d = d
                best = x
    return np.maximum(best, 0.0)


# ---------------------------------------------------------------------------
# sphere geometry


def sphere_exp_ode(base, x, rtol=1e-12, atol=1e-14):
    """Endpoint of the unit-sphere geodesic with initial velocity x, obtained
    by integrating the geodesic equation x'' = -|x'|^2 x instead of using the
    closed form.
    """
    base = np.asarray(base, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)

    def rhs(_, yv):
        pos, vel = yv[:3], yv[3:]
        return np.concatenate([vel, -np.dot(vel, vel) * pos])

    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate([base, x]),
                    rtol=rtol, atol=atol, dense_output=False)
    out = sol.y[:3, -1]
    return out / np.linalg.norm(out)


def karcher_objective(m, weights, labels):
    """Weighted sum of squared geodesic distances, the Riemannian center of
    mass objective."""
    c = np.clip(labels @ np.asarray(m, dtype=np.float64), -1.0, 1.0)
    return float(np.sum(np.asarray(weights) * np.arccos(c) ** 2))


def fibonacci_sphere(n):
    """Deterministic near-uniform sphere sample for brute-force searches."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(golden * i), r * np.sin(golden * i), z], axis=1)


def karcher_best_sampled(weights, labels, n=20000):
    """Smallest objective value over a dense deterministic sphere sample plus
    the labels themselves; a global-minimum plausibility bound."""
    pts = np.vstack([fibonacci_sphere(n), labels])
    c = np.clip(pts @ labels.T, -1.0, 1.0)
    vals = (np.arccos(c) ** 2) @ np.asarray(weights)
    return float(vals.min())


# ---------------------------------------------------------------------------
# Fisher-Rao simplex geometry


def simplex_exp_octant(p, x):
    """Fisher-Rao exponential map via the isometry q = 2*sqrt(p) onto the
    radius-2 sphere octant: push the tangent forward, follow the spherical
    geodesic, map back."""
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    q = 2.0 * np.sqrt(p)
    w = x / np.sqrt(p)  # dq = dp / sqrt(p)
    nw = np.linalg.norm(w)
    if nw < 1e-300:
        return p.copy()
    ang = nw / 2.0  # radius-2 sphere
    q_new = np.cos(ang) * q + 2.0 * np.sin(ang) * (w / nw)
    out = (q_new / 2.0) ** 2
    return out / out.sum()


# ---------------------------------------------------------------------------
# per-triangle assignment QP


def qp_simplex_enum(s, Y, mu, rho):
    """Global minimum of  s.phi + (rho/2)|sum_l phi_l Y_l + mu|^2  over the
    probability simplex, by stationary-point enumeration over supports.

    The objective is convex in phi (Gram matrix of Y is PSD), so the best
    feasible KKT point over all supports is the global minimum.  Singular
    systems are solved in the least-squares sense and kept only if they
    satisfy the stationarity residual.
    """
    s = np.asarray(s, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    L = s.size
    G = rho * (Y @ Y.T)
    b = s + rho * (Y @ mu)

    def value(phi):
        r = phi @ Y + mu
        return float(phi @ s + 0.5 * rho * r @ r)

    best = np.inf
    for k in range(1, L + 1):
        for S in itertools.combinations(range(L), k):
            S = list(S)
            n = len(S)
            # stationarity on the support with the sum constraint:
            # G_SS phi_S + b_S + gamma 1 = 0, 1^T phi_S = 1
            M = np.zeros((n + 1, n + 1))
            M[:n, :n] = G[np.ix_(S, S)]
            M[:n, n] = 1.0
            M[n, :n] = 1.0
            rhs = np.concatenate([-b[S], [1.0]])
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            if np.linalg.norm(M @ sol - rhs) > 1e-9 * (1.0 + np.linalg.norm(rhs)):
                continue
            phi_S = sol[:n]
            if np.min(phi_S) < -1e-12:
                continue
            phi = np.zeros(L)
            phi[S] = np.maximum(phi_S, 0.0)
            phi /= phi.sum()
            best = min(best, value(phi))
    return best


# ---------------------------------------------------------------------------
# finite differences


def central_diff(f, x, h=1e-6):
    """Dense central finite-difference gradient of a scalar function of a
    flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
