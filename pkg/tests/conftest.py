"""Shared fixtures: small analytic meshes, cached icospheres, label sets."""

import numpy as np
import pytest

from normseg.mesh import build_mesh, compute_geometry, icosphere
from normseg.labels import equator_pole_labels, similarity_field


def oriented(vertices, triangles):
    """Orient each triangle of a convex solid outward, then build the mesh.

    Convexity makes the outward test local: the face normal must point away
    from the solid's centroid.  build_mesh still validates global consistency.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    center = vertices.mean(axis=0)
    fixed = []
    for tri in triangles:
        a, b, c = vertices[tri]
        n = np.cross(b - a, c - a)
        if np.dot(n, (a + b + c) / 3.0 - center) < 0.0:
            tri = tri[::-1]
        fixed.append(tri)
    return build_mesh(vertices, np.asarray(fixed))


def square_bipyramid(half_side=0.125, apex=0.35):
    """Closed bipyramid over a square of side 2*half_side in the z=0 plane.

    With half_side=0.125 the four equator edges have length 1/4, so the
    equator cycle has total length 1.  Triangles 0..3 touch the top apex,
    4..7 the bottom one.
    """
    s = half_side
    verts = [
        (s, s, 0.0), (-s, s, 0.0), (-s, -s, 0.0), (s, -s, 0.0),
        (0.0, 0.0, apex), (0.0, 0.0, -apex),
    ]
    tris = [
        (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4),
        (1, 0, 5), (2, 1, 5), (3, 2, 5), (0, 3, 5),
    ]
    return oriented(verts, tris)


def elongated_bipyramid(half_side=0.125, band=0.3, apex=0.35):
    """Bipyramid with a prismatic band between two square rings.

    Rings sit at z = +/- band/2; both ring cycles have total length 1 when
    half_side=0.125.  Triangles 0..3 are the top cap, 4..11 the band,
    12..15 the bottom cap.
    """
    s = half_side
    zt = band / 2.0
    top = [(s, s, zt), (-s, s, zt), (-s, -s, zt), (s, -s, zt)]
    bot = [(s, s, -zt), (-s, s, -zt), (-s, -s, -zt), (s, -s, -zt)]
    verts = top + bot + [(0.0, 0.0, zt + apex), (0.0, 0.0, -zt - apex)]
    tris = [(0, 1, 8), (1, 2, 8), (2, 3, 8), (3, 0, 8)]
    for i in range(4):
        j = (i + 1) % 4
        tris.append((i, 4 + i, j))
        tris.append((j, 4 + i, 4 + j))
    tris += [(5, 4, 9), (6, 5, 9), (7, 6, 9), (4, 7, 9)]
    return oriented(verts, tris)


@pytest.fixture(scope="session")
def ico2():
    mesh = icosphere(2)
    return mesh, compute_geometry(mesh)


@pytest.fixture(scope="session")
def ico3():
    mesh = icosphere(3)
    return mesh, compute_geometry(mesh)


@pytest.fixture(scope="session")
def labels22():
    return equator_pole_labels(20)


@pytest.fixture(scope="session")
def ico3_similarity(ico3, labels22):
    _, geom = ico3
    return similarity_field(geom.normals, labels22)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260816)
