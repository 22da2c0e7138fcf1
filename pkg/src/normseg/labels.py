"""Label sets (prescribed unit directions) and the fidelity term.

A segmentation assigns each triangle one of L prescribed directions on S^2.
The fidelity of label l on triangle T is the geodesic distance between the
triangle normal and g_l, collected in the similarity field s with
s[T, l] = d(n_T, g_l) in [0, pi].
"""

from dataclasses import dataclass

import numpy as np

from .errors import LabelError
from .sphere import sph_distance

_NORM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class LabelSet:
    """Unit label directions, shape (L, 3)."""

    vectors: np.ndarray

    def __len__(self):
        return self.vectors.shape[0]

    def pairwise_distances(self):
        """Geodesic distance matrix between labels, shape (L, L)."""
        return sph_distance(self.vectors[:, None, :], self.vectors[None, :, :])


def _as_label_set(vectors):
    if isinstance(vectors, LabelSet):
        return vectors
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != 3:
        raise LabelError("labels must have shape (L, 3)")
    if vectors.shape[0] < 2:
        raise LabelError("need at least two labels")
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOLERANCE):
        raise LabelError("label row norm deviates from 1 by more than 1e-3")
    return LabelSet(vectors / norms[:, None])


def equator_pole_labels(n_equator):
    """n equally spaced equatorial directions plus the two poles (L = n + 2).

    Label l (1-based l = 1..n) is (sin(2 pi l / n), cos(2 pi l / n), 0);
    the poles (0, 0, +-1) are appended.
    """
    if n_equator < 1:
        raise LabelError("need at least one equatorial label")
    l = np.arange(1, n_equator + 1, dtype=np.float64)
    ang = 2.0 * np.pi * l / n_equator
    vecs = np.zeros((n_equator + 2, 3))
    vecs[:n_equator, 0] = np.sin(ang)
    vecs[:n_equator, 1] = np.cos(ang)
    vecs[n_equator] = (0.0, 0.0, 1.0)
    vecs[n_equator + 1] = (0.0, 0.0, -1.0)
    return _as_label_set(vecs)


def fibonacci_labels(count):
    """Fibonacci lattice of ``count`` roughly equidistributed directions."""
    if count < 2:
        raise LabelError("need at least two labels")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    az = 2.0 * np.pi * i / golden**2
    vecs = np.column_stack([r * np.cos(az), r * np.sin(az), z])
    return _as_label_set(vecs)


def load_labels(path):
    """Read a label CSV (one ``x,y,z`` row per label, '#' comments allowed).

    Rows are renormalized; a row whose norm deviates from 1 by more than 1e-3
    is rejected.
    """
    rows = []
    try:
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                parts = [float(x) for x in s.split(",")]
                if len(parts) != 3:
                    raise LabelError(f"{path}: expected 3 values per row")
                rows.append(parts)
    except (OSError, ValueError) as exc:
        raise LabelError(f"{path}: malformed label file") from exc
    return _as_label_set(np.array(rows, dtype=np.float64))


def save_labels(label_set, path):
    """Write labels as a plain x,y,z CSV."""
    with open(path, "w", encoding="ascii") as fh:
        for v in label_set.vectors:
            fh.write(f"{v[0]:.17g},{v[1]:.17g},{v[2]:.17g}\n")


def similarity_field(normals, label_set):
    """Geodesic distances between triangle normals and labels, shape (T, L)."""
    normals = np.asarray(normals, dtype=np.float64)
    return sph_distance(normals[:, None, :], label_set.vectors[None, :, :])
