"""Evaluation: TV functionals, model objectives, hard labelings, sweeps.

The two regularizers are compared through their values on assignment fields
(tv_assignment penalizes simplex jumps, tv_label geodesic distances between
per-triangle Karcher means) and through area-weighted correctness against a
reference labeling.  ``beta_sweep`` reruns a solver across a grid of
regularization weights and reports the best one.
"""

import concurrent.futures
import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import backends
from .atv import chambolle_pock
from .errors import NormsegError
from .labels import _as_label_set
from .ltv import admm_solve
from .sphere import karcher_init, sph_distance

SWEEP_CSV_HEADER = ("beta", "correctness", "labels_used", "objective", "iterations", "runtime_s")

# usage threshold of the secondary labels-used count: share of total area
AREA_USE_FRACTION = 1e-3


def tv_assignment(phi, mesh, geometry):
    """Assignment-space total variation: sum_e |e| * |phi_{e+} - phi_{e-}|_1."""
    jumps = np.abs(phi[mesh.edge_plus] - phi[mesh.edge_minus]).sum(axis=1)
    return float(np.sum(geometry.edge_lengths * jumps))


def label_means(phi, labels, karcher_tol=1e-9):
    """Per-triangle Karcher means of the labels weighted by phi, (T, 3).

    Means start at the argmax label of each row (nudged if a positive-weight
    label is antipodal), mirroring the hard-label extraction.
    """
    g = _as_label_set(labels).vectors
    phi = np.asarray(phi, dtype=np.float64)
    best = np.argmax(phi, axis=1)
    init = np.empty((phi.shape[0], 3))
    for t in range(phi.shape[0]):
        init[t] = karcher_init(phi[t], g, int(best[t]))
    m, _, _ = backends.karcher_batch(phi, g, init, karcher_tol)
    return m


def tv_label(phi, labels, mesh, geometry, karcher_tol=1e-9):
    """Label-space total variation: sum_e |e| * d(m_{e+}, m_{e-}) with
    m the per-triangle Karcher means of ``phi``."""
    m = label_means(phi, labels, karcher_tol)
    d = sph_distance(m[mesh.edge_plus], m[mesh.edge_minus])
    return float(np.sum(geometry.edge_lengths * d))


def fidelity(phi, similarity, geometry):
    """Area-weighted fidelity sum_T |T| <phi_T, s_T>."""
    return float(np.sum(geometry.areas * np.einsum("tl,tl->t", phi, similarity)))


def objective_atv(phi, similarity, beta, mesh, geometry):
    """Assignment-space model objective: fidelity + beta * tv_assignment."""
    return fidelity(phi, similarity, geometry) + beta * tv_assignment(phi, mesh, geometry)


def objective_ltv(phi, similarity, beta, labels, mesh, geometry):
    """Label-space model objective: fidelity + beta * tv_label."""
    return fidelity(phi, similarity, geometry) + beta * tv_label(phi, labels, mesh, geometry)


def hard_labels_atv(phi):
    """Per-triangle argmax label of the assignment; ties go to the lowest index."""
    return np.argmax(phi, axis=1)


def hard_labels_ltv(m, labels):
    """Per-triangle label nearest to the mean m_T; ties go to the lowest index."""
    g = _as_label_set(labels).vectors
    d = sph_distance(np.asarray(m)[:, None, :], g[None, :, :])
    return np.argmin(d, axis=1)


def correctness(pred, reference, areas):
    """Area fraction of triangles whose predicted label matches the reference."""
    pred = np.asarray(pred)
    reference = np.asarray(reference)
    if pred.shape != reference.shape:
        raise ValueError(f"labeling shapes differ: {pred.shape} vs {reference.shape}")
    return float(np.sum(areas[pred == reference]) / np.sum(areas))


def labels_used(labeling):
    """Number of distinct labels assigned to at least one triangle."""
    return int(np.unique(np.asarray(labeling)).size)


def labels_used_area(labeling, areas, min_fraction=AREA_USE_FRACTION):
    """Number of labels covering at least ``min_fraction`` of the total area."""
    labeling = np.asarray(labeling)
    share = np.bincount(labeling, weights=areas) / np.sum(areas)
    return int(np.count_nonzero(share >= min_fraction))


@dataclass(frozen=True)
class SweepRow:
    beta: float
    correctness: float
    labels_used: int
    objective: float
    iterations: int
    runtime_s: float
    labels_used_area: int
    error: str | None = None


@dataclass(frozen=True)
class SweepReport:
    """Sweep outcome: one row per beta (ascending) and the winning beta.

    ``beta_star`` is None when every row failed.
    """

    model: str
    rows: tuple
    beta_star: float | None

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SWEEP_CSV_HEADER)
            for r in self.rows:
                w.writerow(
                    [r.beta, r.correctness, r.labels_used, r.objective, r.iterations, r.runtime_s]
                )

    def as_dict(self):
        return {
            "model": self.model,
            "beta_star": self.beta_star,
            "rows": [asdict(r) for r in self.rows],
        }


def default_grid(beta_base):
    """Seven-point grid beta_base * 2^{-3..3}."""
    return [beta_base * 2.0**k for k in range(-3, 4)]


def _sweep_row(model, beta, similarity, labels, mesh, geometry, reference, rho, cp_config, admm_config):
    try:
        if model == "atv":
            result = chambolle_pock(similarity, beta, mesh, geometry, cp_config)
            phi = result.phi
            hard = hard_labels_atv(phi)
            objective = objective_atv(phi, similarity, beta, mesh, geometry)
            iterations, runtime = result.iterations, result.runtime_s
        else:
            phi, means, diagnostics = admm_solve(
                similarity, labels, mesh, geometry, beta, rho, admm_config
            )
            hard = hard_labels_ltv(means, labels)
            objective = objective_ltv(phi, similarity, beta, labels, mesh, geometry)
            iterations, runtime = diagnostics.iterations, diagnostics.runtime_s
    except (NormsegError, np.linalg.LinAlgError) as exc:
        return SweepRow(
            beta=beta,
            correctness=float("nan"),
            labels_used=0,
            objective=float("nan"),
            iterations=0,
            runtime_s=float("nan"),
            labels_used_area=0,
            error=f"{type(exc).__name__}: {exc}",
        )
    return SweepRow(
        beta=beta,
        correctness=correctness(hard, reference, geometry.areas),
        labels_used=labels_used(hard),
        objective=objective,
        iterations=iterations,
        runtime_s=runtime,
        labels_used_area=labels_used_area(hard, geometry.areas),
    )


def beta_sweep(model, grid, similarity, labels, mesh, geometry, reference,
               rho=1.0, cp_config=None, admm_config=None, jobs=1):
    """Run one solver across a beta grid and score each run.

    ``reference`` is the hard labeling to compare against (for the noise
    protocol: the clean-mesh fidelity argmin).  Failures are recorded in
    their row's ``error`` field and excluded from the beta_star choice.
    """
    model = model.lower()
    if model not in ("atv", "ltv"):
        raise ValueError(f"model must be 'atv' or 'ltv', got {model!r}")
    grid = sorted(float(b) for b in grid)
    if not grid:
        raise ValueError("beta grid is empty")
    if len(set(grid)) != len(grid):
        raise ValueError("beta grid values must be distinct")
    label_set = _as_label_set(labels)
    reference = np.asarray(reference)
    args = [
        (model, b, similarity, label_set, mesh, geometry, reference, rho, cp_config, admm_config)
        for b in grid
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row_star, args))
    else:
        rows = [_sweep_row(*a) for a in args]
    best = None
    for r in rows:
        if np.isnan(r.correctness):
            continue
        if best is None or r.correctness > best.correctness:
            best = r
    return SweepReport(
        model=model,
        rows=tuple(rows),
        beta_star=None if best is None else best.beta,
    )


def _sweep_row_star(args):
    return _sweep_row(*args)
