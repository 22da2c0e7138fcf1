"""Assignment-space segmentation: convex relaxation with a primal-dual solver.

The model assigns each triangle a point on the probability simplex over the
label set, minimizing

    sum_T |T| <phi_T, s_T>  +  beta * sum_e |e| |phi_{e+} - phi_{e-}|_1

where s_T holds geodesic distances between the triangle normal and the label
directions.  The total-variation term couples neighbouring triangles through
the jump operator K below; the saddle-point form is solved with a primal-dual
iteration whose steps live in area/length weighted inner products.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .errors import SolverError

_POWER_ITERS = 100
_POWER_RTOL = 1e-6
_STEP_SAFETY = 0.99
_NORM_SLACK = 1.01


@dataclass(frozen=True)
class CpConfig:
    """Primal-dual solver parameters; tau/sigma default to 0.99 / |K|.

    Explicit tau/sigma must satisfy tau * sigma * |K|^2 <= 1; the solver
    checks this against the estimated operator norm.
    """

    tau: float | None = None
    sigma: float | None = None
    theta: float = 1.0
    max_iters: int = 20000
    primal_tol: float = 1e-7

    def __post_init__(self):
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.primal_tol <= 0:
            raise ValueError("primal_tol must be positive")


@dataclass(frozen=True)
class CpResult:
    phi: np.ndarray
    dual: np.ndarray
    iterations: int
    converged: bool
    operator_norm: float
    runtime_s: float
    primal_changes: np.ndarray = field(repr=False, default=None)


def jump_apply(phi, beta, mesh, geometry):
    """K phi: per-edge scaled jump beta * (phi_{e+} - phi_{e-})."""
    return beta * (phi[mesh.edge_plus] - phi[mesh.edge_minus])


def jump_adjoint(p, beta, mesh, geometry):
    """K^T p in the area/length weighted pairing, one row per triangle.

    (K^T p)_T = (beta / |T|) * sum_{e incident} |e| * sign(T, e) * p_e with
    sign +1 when T is the lower-index triangle of the edge.
    """
    p = np.asarray(p)
    out = np.zeros((mesh.num_triangles,) + p.shape[1:])
    w = geometry.edge_lengths[:, None] * p if p.ndim == 2 else geometry.edge_lengths * p
    np.add.at(out, mesh.edge_plus, w)
    np.subtract.at(out, mesh.edge_minus, w)
    if p.ndim == 2:
        return beta * out / geometry.areas[:, None]
    return beta * out / geometry.areas


def estimate_operator_norm(mesh, geometry, beta):
    """Upper bound on |K| by power iteration on K^T K, with 1% slack.

    Rayleigh quotients use the weighted inner products, so the returned value
    bounds the operator norm between the weighted spaces the solver runs in.
    Deterministic (fixed-seed starting field).
    """
    if beta == 0.0:
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(mesh.num_triangles)
    v /= np.sqrt(np.sum(geometry.areas * v * v))
    lam = 0.0
    for _ in range(_POWER_ITERS):
        w = jump_adjoint(jump_apply(v, beta, mesh, geometry), beta, mesh, geometry)
        lam_new = float(np.sum(geometry.areas * v * w))
        nrm = np.sqrt(np.sum(geometry.areas * w * w))
        if nrm <= 0.0:
            raise SolverError("power iteration collapsed to the zero field")
        v = w / nrm
        if lam > 0.0 and abs(lam_new - lam) <= _POWER_RTOL * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam) * _NORM_SLACK)


def initial_assignment(s):
    """One-hot assignment at the per-triangle best label (fidelity argmin)."""
    phi = np.zeros_like(s)
    phi[np.arange(s.shape[0]), np.argmin(s, axis=1)] = 1.0
    return phi


def chambolle_pock(similarity, beta, mesh, geometry, config=None, phi0=None, d0=None):
    """Run the primal-dual iteration to convergence; returns a CpResult.

    phi0 defaults to the one-hot fidelity argmin and d0 to zero.  Convergence
    is declared when the area-weighted primal change drops below
    ``config.primal_tol`` relative to the previous iterate's norm.
    """
    config = config or CpConfig()
    s = np.ascontiguousarray(similarity, dtype=np.float64)
    opnorm = estimate_operator_norm(mesh, geometry, beta)
    if config.tau is not None:
        tau = config.tau
        sigma = config.sigma if config.sigma is not None else config.tau
        if tau * sigma * opnorm**2 > 1.0 + 1e-12:
            raise SolverError(
                f"step sizes violate tau*sigma*|K|^2 <= 1 (got {tau * sigma * opnorm**2:.6g})"
            )
    elif opnorm == 0.0:
        tau = sigma = 1.0
    else:
        tau = sigma = _STEP_SAFETY / opnorm
    if phi0 is None:
        phi0 = initial_assignment(s)
    else:
        phi0 = np.ascontiguousarray(phi0, dtype=np.float64)
        if np.any(phi0 < -1e-12) or np.max(np.abs(phi0.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("phi0 must be simplex-valued per triangle")
    d0 = np.zeros((mesh.num_edges, s.shape[1])) if d0 is None else np.ascontiguousarray(d0, dtype=np.float64)
    t0 = time.perf_counter()
    phi, dual, iters, history, converged = backends.cp_solve(
        s,
        geometry.areas,
        geometry.edge_lengths,
        mesh.edge_plus,
        mesh.edge_minus,
        float(beta),
        float(tau),
        float(sigma),
        float(config.theta),
        int(config.max_iters),
        float(config.primal_tol),
        phi0,
        d0,
    )
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(history))):
        raise SolverError("primal-dual iteration produced non-finite values")
    return CpResult(
        phi=phi,
        dual=dual,
        iterations=iters,
        converged=converged,
        operator_norm=opnorm,
        runtime_s=time.perf_counter() - t0,
        primal_changes=history,
    )
