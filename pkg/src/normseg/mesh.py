"""Triangle meshes: connectivity, geometry, file IO, test surfaces.

Meshes are closed oriented 2-manifolds: every edge has exactly two incident
triangles with opposite traversal directions.  Edges are stored sorted by
their (min vertex, max vertex) pair; the "plus" side of an edge is the
incident triangle with the lower index, which fixes the sign convention of
the jump operator across the package.

ASCII OFF/OBJ/PLY are supported.  The PLY writer can attach per-face colors,
which is how segmentations are exported for viewing.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

from .errors import MeshError

MAX_SUBDIVISIONS = 8
_DEGENERATE_REL_AREA = 1e-14


@dataclass(frozen=True)
class TriangleMesh:
    """Closed oriented triangle mesh.

    Attributes
    ----------
    vertices : ndarray, shape (V, 3)
    triangles : ndarray, shape (F, 3)
        Vertex indices, consistently oriented.
    edge_vertices : ndarray, shape (E, 2)
        Endpoints (min, max) of each undirected edge, lexicographically sorted.
    edge_plus, edge_minus : ndarray, shape (E,)
        Incident triangle indices; plus is the lower triangle index.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edge_vertices: np.ndarray
    edge_plus: np.ndarray
    edge_minus: np.ndarray

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def num_edges(self):
        return self.edge_vertices.shape[0]


@dataclass(frozen=True)
class GeometryCache:
    """Per-entity geometric quantities of a mesh.

    areas : (F,) triangle areas; normals : (F, 3) unit outward normals in
    triangle orientation; edge_lengths : (E,) aligned with the mesh edge
    arrays.
    """

    areas: np.ndarray
    normals: np.ndarray
    edge_lengths: np.ndarray


def build_mesh(vertices, triangles):
    """Assemble a TriangleMesh and verify the closed-manifold invariants.

    Raises MeshError for non-triangle input, out-of-range indices, boundary
    edges (one incident triangle), non-manifold edges (more than two), or
    inconsistent orientation (an edge traversed twice in the same direction).
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError("vertices must have shape (V, 3)")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("faces must be triangles")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshError("triangle index out of range")

    edges = {}
    for t, (a, b, c) in enumerate(triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            if u == v:
                raise MeshError(f"triangle {t} repeats vertex {u}")
            key = (u, v) if u < v else (v, u)
            rec = edges.setdefault(key, [])
            rec.append((t, u < v))
    ev = np.empty((len(edges), 2), dtype=np.int64)
    ep = np.empty(len(edges), dtype=np.int64)
    em = np.empty(len(edges), dtype=np.int64)
    for i, key in enumerate(sorted(edges)):
        rec = edges[key]
        if len(rec) == 1:
            raise MeshError(f"boundary edge {key}: mesh is not closed")
        if len(rec) > 2:
            raise MeshError(f"non-manifold edge {key}: {len(rec)} incident triangles")
        (t0, fw0), (t1, fw1) = rec
        if fw0 == fw1:
            raise MeshError(f"inconsistent triangle orientation across edge {key}")
        ev[i] = key
        ep[i], em[i] = (t0, t1) if t0 < t1 else (t1, t0)
    return TriangleMesh(vertices, triangles, ev, ep, em)


def compute_geometry(mesh):
    """Areas, unit normals (in triangle orientation), and edge lengths.

    Raises MeshError if any triangle area is below 1e-14 times the squared
    bounding-box diagonal (degenerate).
    """
    v = mesh.vertices
    t = mesh.triangles
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    cr = np.cross(e1, e2)
    nrm = np.linalg.norm(cr, axis=1)
    scale = np.linalg.norm(v.max(axis=0) - v.min(axis=0))
    if np.any(nrm / 2.0 <= _DEGENERATE_REL_AREA * max(scale, 1e-300) ** 2):
        raise MeshError("degenerate triangle (area ~ 0)")
    areas = nrm / 2.0
    normals = cr / nrm[:, None]
    ends = v[mesh.edge_vertices]
    lengths = np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1)
    return GeometryCache(areas, normals, lengths)


# ---------------------------------------------------------------------------
# synthetic surfaces


def icosphere(subdivisions, radius=1.0):
    """Icosahedron subdivided ``subdivisions`` times, vertices on the sphere.

    Produces 20 * 4^subdivisions triangles with consistent outward
    orientation.  subdivisions must be in [0, 8].
    """
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ValueError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}]")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
        (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
        (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) for v in verts]
    verts = [v / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    vertices = radius * np.array(verts)
    return build_mesh(vertices, np.array(faces, dtype=np.int64))


def add_vertex_noise(mesh, variance_factor, seed):
    """Perturb vertices with i.i.d. Gaussian noise scaled to local edge length.

    Each vertex moves by N(0, sigma^2 I3) with sigma^2 = variance_factor * e^2,
    where e is the mean length of the edges incident to that vertex.
    Deterministic for a fixed seed; connectivity is unchanged.
    """
    if variance_factor < 0.0:
        raise ValueError("variance_factor must be nonnegative")
    v = mesh.vertices
    ev = mesh.edge_vertices
    lengths = np.linalg.norm(v[ev[:, 1]] - v[ev[:, 0]], axis=1)
    total = np.zeros(len(v))
    count = np.zeros(len(v))
    for col in (0, 1):
        np.add.at(total, ev[:, col], lengths)
        np.add.at(count, ev[:, col], 1.0)
    mean_edge = total / np.maximum(count, 1.0)
    sigma = np.sqrt(variance_factor) * mean_edge
    rng = np.random.default_rng(seed)
    noisy = v + rng.normal(size=v.shape) * sigma[:, None]
    return build_mesh(noisy, mesh.triangles)


# ---------------------------------------------------------------------------
# file IO


def load_mesh(path):
    """Read an ASCII OFF/OBJ/PLY file into a TriangleMesh (validated)."""
    path = str(path)
    lower = path.lower()
    if lower.endswith(".off"):
        v, f = _read_off(path)
    elif lower.endswith(".obj"):
        v, f = _read_obj(path)
    elif lower.endswith(".ply"):
        v, f = _read_ply(path)
    else:
        raise MeshError(f"unsupported mesh format: {path}")
    return build_mesh(v, f)


def save_mesh(mesh, path, face_colors=None):
    """Write a mesh as ASCII OFF/OBJ/PLY chosen by extension.

    ``face_colors`` (F, 3) uint8 is honored by the PLY writer only.
    """
    path = str(path)
    lower = path.lower()
    if lower.endswith(".off"):
        _write_off(mesh, path)
    elif lower.endswith(".obj"):
        _write_obj(mesh, path)
    elif lower.endswith(".ply"):
        _write_ply(mesh, path, face_colors)
    else:
        raise MeshError(f"unsupported mesh format: {path}")


def label_colors(num_labels):
    """Distinct per-label RGB colors (uint8) via golden-angle hue rotation."""
    cols = np.empty((num_labels, 3), dtype=np.uint8)
    for i in range(num_labels):
        h = (i * 0.6180339887498949) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.65, 0.95)
        cols[i] = (int(r * 255), int(g * 255), int(b * 255))
    return cols


def _data_lines(path):
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                yield s


def _read_off(path):
    lines = _data_lines(path)
    try:
        header = next(lines)
        if header != "OFF":
            if header.startswith("OFF"):  # counts on the header line
                counts = header[3:].split()
            else:
                raise MeshError(f"{path}: missing OFF header")
        else:
            counts = next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = np.array([next(lines).split()[:3] for _ in range(nv)], dtype=np.float64)
        faces = []
        for _ in range(nf):
            parts = next(lines).split()
            if int(parts[0]) != 3:
                raise MeshError(f"{path}: non-triangle face")
            faces.append(parts[1:4])
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OFF file") from exc
    return verts, np.array(faces, dtype=np.int64)


def _write_off(mesh, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"OFF\n{mesh.num_vertices} {mesh.num_triangles} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def _read_obj(path):
    verts, faces = [], []
    try:
        for line in _data_lines(path):
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshError(f"{path}: non-triangle face")
                # tokens may be v, v/vt, v/vt/vn, or v//vn; 1-based indices
                faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OBJ file") from exc
    if not verts or not faces:
        raise MeshError(f"{path}: empty OBJ mesh")
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _write_obj(mesh, path):
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def _read_ply(path):
    lines = list(_data_lines(path))
    if not lines or lines[0] != "ply":
        raise MeshError(f"{path}: missing ply header")
    if not any(l.startswith("format ascii") for l in lines[1:10]):
        raise MeshError(f"{path}: only ascii PLY is supported")
    elements = []  # (name, count, n_scalar_props_before_list)
    i = 1
    try:
        while lines[i] != "end_header":
            parts = lines[i].split()
            if parts[0] == "element":
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                elements[-1][2].append(parts[1:])
            i += 1
        body = lines[i + 1 :]
        verts = faces = None
        pos = 0
        for name, count, props in elements:
            rows = body[pos : pos + count]
            pos += count
            if name == "vertex":
                names = [p[-1] for p in props]
                ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
                verts = np.array(
                    [[float(r.split()[j]) for j in (ix, iy, iz)] for r in rows],
                    dtype=np.float64,
                )
            elif name == "face":
                faces = []
                for r in rows:
                    parts = r.split()
                    if int(parts[0]) != 3:
                        raise MeshError(f"{path}: non-triangle face")
                    faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
                faces = np.array(faces, dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed PLY file") from exc
    if verts is None or faces is None:
        raise MeshError(f"{path}: PLY file lacks vertex or face element")
    return verts, faces


def _write_ply(mesh, path, face_colors=None):
    if face_colors is not None:
        face_colors = np.asarray(face_colors, dtype=np.uint8)
        if face_colors.shape != (mesh.num_triangles, 3):
            raise ValueError("face_colors must have shape (F, 3)")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.num_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.num_triangles}\n")
        fh.write("property list uchar int vertex_indices\n")
        if face_colors is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for i, t in enumerate(mesh.triangles):
            row = f"3 {t[0]} {t[1]} {t[2]}"
            if face_colors is not None:
                c = face_colors[i]
                row += f" {c[0]} {c[1]} {c[2]}"
            fh.write(row + "\n")
