"""Exception types shared across the package."""


class NormsegError(Exception):
    """Base class for all package errors."""


class MeshError(NormsegError):
    """Mesh is unreadable, non-manifold, has boundary, or degenerate triangles."""


class LabelError(NormsegError):
    """Label set is malformed (non-unit rows, bad file, too few labels)."""


class GeometryError(NormsegError):
    """Sphere/simplex operation outside its domain (antipodal points, boundary)."""


class SolverError(NormsegError):
    """A solver failed to make progress (Armijo exhaustion, non-convergence)."""
