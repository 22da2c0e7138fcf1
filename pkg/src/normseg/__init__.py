"""Segmentation of triangulated surfaces by labeling triangle normals.

Each triangle of a closed oriented mesh is assigned one of a prescribed set
of unit normal directions by minimizing a fidelity term plus one of two
total-variation regularizers: jumps of the simplex-valued assignment
(``atv``) or geodesic distances between per-triangle directional means
(``ltv``).  See the README for the CLI front end.
"""

from .atv import CpConfig, CpResult, chambolle_pock, estimate_operator_norm, jump_adjoint, jump_apply
from .backends import BACKEND_NAME, get_backend
from .errors import GeometryError, LabelError, MeshError, NormsegError, SolverError
from .labels import (
    LabelSet,
    equator_pole_labels,
    fibonacci_labels,
    load_labels,
    save_labels,
    similarity_field,
)
from .ltv import (
    AdmmConfig,
    AdmmDiagnostics,
    AdmmResult,
    AdmmState,
    admm_solve,
    init_state,
    iteration_tolerance,
    m_subproblem,
    phi_subproblem,
    solve_kkt_active_set,
    update_multipliers,
    x_subproblem,
    y_subproblem,
)
from .mesh import (
    GeometryCache,
    TriangleMesh,
    add_vertex_noise,
    build_mesh,
    compute_geometry,
    icosphere,
    label_colors,
    load_mesh,
    save_mesh,
)
from .metrics import (
    SweepReport,
    SweepRow,
    beta_sweep,
    correctness,
    default_grid,
    hard_labels_atv,
    hard_labels_ltv,
    label_means,
    labels_used,
    labels_used_area,
    objective_atv,
    objective_ltv,
    tv_assignment,
    tv_label,
)
from .simplex import clip_box, project_simplex, simplex_exp, simplex_riemannian_gradient
from .sphere import karcher_mean, sph_distance, sph_exp, sph_log, sph_transport

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmDiagnostics",
    "AdmmResult",
    "AdmmState",
    "BACKEND_NAME",
    "CpConfig",
    "CpResult",
    "GeometryCache",
    "GeometryError",
    "LabelError",
    "LabelSet",
    "MeshError",
    "NormsegError",
    "SolverError",
    "SweepReport",
    "SweepRow",
    "TriangleMesh",
    "add_vertex_noise",
    "admm_solve",
    "beta_sweep",
    "build_mesh",
    "chambolle_pock",
    "clip_box",
    "compute_geometry",
    "correctness",
    "default_grid",
    "equator_pole_labels",
    "estimate_operator_norm",
    "fibonacci_labels",
    "get_backend",
    "hard_labels_atv",
    "hard_labels_ltv",
    "icosphere",
    "init_state",
    "iteration_tolerance",
    "jump_adjoint",
    "jump_apply",
    "karcher_mean",
    "label_colors",
    "label_means",
    "labels_used",
    "labels_used_area",
    "load_labels",
    "load_mesh",
    "m_subproblem",
    "objective_atv",
    "objective_ltv",
    "phi_subproblem",
    "project_simplex",
    "save_labels",
    "save_mesh",
    "similarity_field",
    "simplex_exp",
    "simplex_riemannian_gradient",
    "solve_kkt_active_set",
    "sph_distance",
    "sph_exp",
    "sph_log",
    "sph_transport",
    "tv_assignment",
    "tv_label",
    "update_multipliers",
    "x_subproblem",
    "y_subproblem",
]
