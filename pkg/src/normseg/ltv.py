"""Label-space segmentation: splitting scheme on the sphere-valued model.

Each triangle carries a simplex assignment phi_T and a spherical mean m_T;
tangent variables tie them to the label directions through three constraints,

    (C1)  sum_l phi_l Y_l = 0            in T_m S^2,
    (C2)  exp_m(Y_l) = g_l               for every label l,
    (C3)  X_e = log_{m_{e+}}(m_{e-})     for every interior edge,

and the total variation beta * sum_e |e| |X_e| acts on the edge differences.
The scaled-multiplier splitting updates Y, X, phi, m in turn, transports all
tangent data to the new means, then steps the multipliers by the constraint
residuals.  Subproblem tolerances tighten geometrically with the outer
iteration count and floor at 1e-8.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import backends
from ._qp import kkt_active_set
from .errors import SolverError
from .labels import _as_label_set
from .sphere import karcher_init, sph_exp, sph_log, sph_transport

DIAGNOSTIC_COLUMNS = (
    "k",
    "objective",
    "res_coupling",
    "res_label",
    "res_edge",
    "qp_fallbacks",
    "max_tangency",
    "wall_time_s",
)

_TOL_FLOOR = 1e-8
_TOL_RATE = 0.0025


@dataclass(frozen=True)
class AdmmConfig:
    """Splitting-scheme parameters (rho and beta are passed to admm_solve).

    ``eps`` recentralizes the assignment before its interior-point stage;
    tol1/tol2/tol3 are the stage-1 gradient, stage-1 boundary and stage-2
    active-set thresholds of the assignment subproblem.
    """

    max_iters: int = 3000
    primal_tol: float = 1e-4
    change_tol: float = 1e-6
    karcher_tol: float = 1e-9
    eps: float = 1e-3
    tol1: float = 1e-8
    tol2: float = 1e-8
    tol3: float = 1e-6
    armijo_c: float = 1e-4
    max_halvings: int = 60
    stage1_max_iters: int = 200
    y_max_inner: int = 200
    m_max_steps: int = 20


@dataclass(frozen=True)
class Multipliers:
    """Scaled multipliers: mu tangent at m_T, xi tangent at m_{e+}, nu ambient."""

    mu: np.ndarray
    nu: np.ndarray
    xi: np.ndarray


@dataclass
class AdmmState:
    """All variables of the splitting scheme plus the problem data.

    Tangent conventions: Y[t, l] and mu[t] live in T_{m[t]}; X[e] and xi[e]
    live in T_{m[eplus(e)]}; nu is a plain ambient vector per (t, l).
    ``qp_fallbacks`` holds the KKT fallback count of the latest assignment
    update.
    """

    phi: np.ndarray
    m: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    xi: np.ndarray
    rho: float
    beta: float
    k: int
    similarity: np.ndarray
    labels: np.ndarray
    mesh: object
    geometry: object
    config: AdmmConfig
    qp_fallbacks: int = 0

    @property
    def multipliers(self):
        return Multipliers(mu=self.mu, nu=self.nu, xi=self.xi)


@dataclass(frozen=True)
class AdmmDiagnostics:
    """Per-iteration diagnostics plus termination data.

    ``history`` has one row per outer iteration with DIAGNOSTIC_COLUMNS.
    """

    history: np.ndarray = field(repr=False)
    iterations: int = 0
    converged: bool = False
    res_coupling: float = np.inf
    res_label: float = np.inf
    res_edge: float = np.inf
    qp_fallbacks: int = 0
    runtime_s: float = 0.0


@dataclass(frozen=True)
class AdmmResult:
    phi: np.ndarray
    means: np.ndarray
    diagnostics: AdmmDiagnostics
    state: AdmmState

    def __iter__(self):
        return iter((self.phi, self.means, self.diagnostics))


def iteration_tolerance(k):
    """Subproblem tolerance at outer iteration k: max(1e-8, 10^(-0.0025 k))."""
    return max(_TOL_FLOOR, 10.0 ** (-_TOL_RATE * k))


def solve_kkt_active_set(s, Y, mu, rho, active):
    """Reduced KKT solve of one triangle's assignment QP with a fixed active set.

    Zeros phi on ``active``, solves the remaining stationarity + sum-to-one
    system, and returns (phi, alpha, gamma) with alpha zero off the active
    set.  Raises numpy.linalg.LinAlgError when the reduced system is singular
    or poorly solved.
    """
    return kkt_active_set(s, Y, mu, rho, active)


def init_state(similarity, labels, mesh, geometry, beta, rho, config=None):
    """Initial splitting state from the per-triangle fidelity minimizers.

    phi starts at the recentralized one-hot argmin assignment, m at the
    corresponding Karcher means (antipodal-safe start at the argmin label),
    Y and X at exact logs, multipliers at zero.
    """
    config = config or AdmmConfig()
    g = _as_label_set(labels).vectors
    similarity = np.ascontiguousarray(similarity, dtype=np.float64)
    T, L = similarity.shape
    best = np.argmin(similarity, axis=1)
    phi = np.zeros((T, L))
    phi[np.arange(T), best] = 1.0
    phi = (phi + config.eps) / (1.0 + config.eps * L)
    init = np.empty((T, 3))
    for t in range(T):
        init[t] = karcher_init(phi[t], g, int(best[t]))
    m, _, _ = backends.karcher_batch(phi, g, init, config.karcher_tol)
    return AdmmState(
        phi=phi,
        m=m,
        Y=sph_log(m[:, None, :], g[None, :, :]),
        X=sph_log(m[mesh.edge_plus], m[mesh.edge_minus]),
        mu=np.zeros((T, 3)),
        nu=np.zeros((T, L, 3)),
        xi=np.zeros((mesh.num_edges, 3)),
        rho=float(rho),
        beta=float(beta),
        k=0,
        similarity=similarity,
        labels=g,
        mesh=mesh,
        geometry=geometry,
        config=config,
    )


def y_subproblem(state):
    """Per-triangle descent on the tangent blocks Y; updates and returns them."""
    cfg = state.config
    state.Y, _ = backends.y_step(
        state.phi, state.Y, state.mu, state.nu, state.m, state.labels,
        iteration_tolerance(state.k), cfg.armijo_c, cfg.max_halvings, cfg.y_max_inner,
    )
    return state.Y


def x_subproblem(state):
    """Closed-form shrinkage update of the edge differences X."""
    mesh = state.mesh
    v = sph_log(state.m[mesh.edge_plus], state.m[mesh.edge_minus]) + state.xi
    kappa = state.beta / state.rho
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    state.X = (1.0 - kappa / np.maximum(np.maximum(kappa, nv), 1e-300)) * v
    return state.X


def phi_subproblem(state):
    """Two-stage per-triangle assignment update; KKT fallbacks are counted."""
    cfg = state.config
    state.phi, state.qp_fallbacks = backends.phi_step(
        state.similarity, state.Y, state.mu, state.phi, state.rho,
        cfg.eps, cfg.tol1, cfg.tol2, cfg.tol3,
        cfg.stage1_max_iters, cfg.armijo_c, cfg.max_halvings,
    )
    return state.phi


def _retangent(v, base):
    # transports preserve tangency only to roundoff; without this the error
    # compounds over thousands of re-anchorings
    return v - np.sum(v * base, axis=-1, keepdims=True) * base


def m_subproblem(state):
    """Coupled descent on the mean field, then re-anchor all tangent data.

    Y, X, mu, xi are parallel-transported to the tangent spaces at the new
    means as part of this update.
    """
    cfg = state.config
    mesh = state.mesh
    geom = state.geometry
    ep = mesh.edge_plus
    m_new, _, _ = backends.m_step(
        state.m, state.Y, state.nu, state.xi - state.X, state.labels,
        geom.areas, geom.edge_lengths, ep, mesh.edge_minus,
        iteration_tolerance(state.k), cfg.m_max_steps, cfg.armijo_c, cfg.max_halvings,
    )
    state.Y = _retangent(sph_transport(state.m[:, None, :], m_new[:, None, :], state.Y),
                         m_new[:, None, :])
    state.mu = _retangent(sph_transport(state.m, m_new, state.mu), m_new)
    state.X = _retangent(sph_transport(state.m[ep], m_new[ep], state.X), m_new[ep])
    state.xi = _retangent(sph_transport(state.m[ep], m_new[ep], state.xi), m_new[ep])
    state.m = m_new
    return state.m


def constraint_residuals(state):
    """Current violations of the three constraint blocks.

    Returns (res1 (T,3), res2 (T,L,3), res3 (E,3)): the coupling sum, the
    label-reconstruction error and the edge-log mismatch.
    """
    mesh = state.mesh
    res1 = np.einsum("tl,tlj->tj", state.phi, state.Y)
    res2 = sph_exp(state.m[:, None, :], state.Y) - state.labels[None, :, :]
    res3 = sph_log(state.m[mesh.edge_plus], state.m[mesh.edge_minus]) - state.X
    return res1, res2, res3


def update_multipliers(state, residuals=None):
    """Scaled multiplier steps: each multiplier moves by its residual block."""
    res1, res2, res3 = residuals if residuals is not None else constraint_residuals(state)
    state.mu = state.mu + res1
    state.nu = state.nu + res2
    state.xi = state.xi + res3
    return state.multipliers


def residual_norms(state, residuals):
    """Weighted norms of the three residual blocks (areas / areas / lengths)."""
    res1, res2, res3 = residuals
    areas = state.geometry.areas
    elens = state.geometry.edge_lengths
    r1 = np.sqrt(np.sum(areas * np.einsum("tj,tj->t", res1, res1)))
    r2 = np.sqrt(np.sum(areas * np.einsum("tlj,tlj->t", res2, res2)))
    r3 = np.sqrt(np.sum(elens * np.einsum("ej,ej->e", res3, res3)))
    return float(r1), float(r2), float(r3)


def _objective(state):
    fid = np.sum(state.geometry.areas * np.einsum("tl,tl->t", state.phi, state.similarity))
    tv = np.sum(state.geometry.edge_lengths * np.linalg.norm(state.X, axis=1))
    return float(fid + state.beta * tv)


def _max_tangency(state):
    ep = state.mesh.edge_plus
    return float(
        max(
            np.max(np.abs(np.einsum("tj,tlj->tl", state.m, state.Y))),
            np.max(np.abs(np.sum(state.m * state.mu, axis=1))),
            np.max(np.abs(np.sum(state.m[ep] * state.X, axis=1))),
            np.max(np.abs(np.sum(state.m[ep] * state.xi, axis=1))),
        )
    )


def admm_solve(similarity, labels, mesh, geometry, beta, rho=1.0, config=None):
    """Run the splitting scheme to convergence.

    Returns an AdmmResult that unpacks as (phi, means, diagnostics).
    Convergence requires all three weighted residual norms at or below
    ``config.primal_tol`` and the relative change of (phi, m) at or below
    ``config.change_tol``.
    """
    config = config or AdmmConfig()
    state = init_state(similarity, labels, mesh, geometry, beta, rho, config)
    diag = np.zeros((config.max_iters, len(DIAGNOSTIC_COLUMNS)))
    total_fallbacks = 0
    iters = 0
    converged = False
    r1 = r2 = r3 = np.inf
    t0 = time.perf_counter()
    for k in range(config.max_iters):
        iters = k + 1
        phi_old = state.phi
        m_old = state.m
        y_subproblem(state)
        x_subproblem(state)
        phi_subproblem(state)
        m_subproblem(state)
        res = constraint_residuals(state)
        update_multipliers(state, res)
        r1, r2, r3 = residual_norms(state, res)
        if not np.isfinite(r1 + r2 + r3):
            raise SolverError(f"splitting diverged at iteration {k}: non-finite residual")
        total_fallbacks += state.qp_fallbacks
        num = np.sqrt(np.sum((state.phi - phi_old) ** 2) + np.sum((state.m - m_old) ** 2))
        den = np.sqrt(np.sum(phi_old**2) + np.sum(m_old**2))
        diag[k] = (
            k,
            _objective(state),
            r1,
            r2,
            r3,
            state.qp_fallbacks,
            _max_tangency(state),
            time.perf_counter() - t0,
        )
        state.k = k + 1
        if max(r1, r2, r3) <= config.primal_tol and num <= config.change_tol * den:
            converged = True
            break
    diagnostics = AdmmDiagnostics(
        history=diag[:iters].copy(),
        iterations=iters,
        converged=converged,
        res_coupling=r1,
        res_label=r2,
        res_edge=r3,
        qp_fallbacks=total_fallbacks,
        runtime_s=time.perf_counter() - t0,
    )
    return AdmmResult(phi=state.phi, means=state.m, diagnostics=diagnostics, state=state)
