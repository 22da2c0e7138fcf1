"""Mesh construction, icosphere generation, geometry, noise, and file IO."""

import numpy as np
import pytest

from normseg.errors import MeshError
from normseg.mesh import (
    TriangleMesh,
    add_vertex_noise,
    build_mesh,
    compute_geometry,
    icosphere,
    label_colors,
    load_mesh,
    save_mesh,
)

from conftest import oriented, square_bipyramid


TETRA_VERTS = np.array(
    [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)]
)
TETRA_TRIS = np.array([(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)])


def test_tetrahedron_edge_count():
    mesh = build_mesh(TETRA_VERTS, TETRA_TRIS)
    assert mesh.num_triangles == 4
    assert mesh.num_edges == 6
    # V - E + F = 2
    assert mesh.num_vertices - mesh.num_edges + mesh.num_triangles == 2


def test_every_edge_has_two_distinct_sides():
    mesh = build_mesh(TETRA_VERTS, TETRA_TRIS)
    assert np.all(mesh.edge_plus != mesh.edge_minus)
    assert mesh.edge_plus.shape == (mesh.num_edges,)


def test_open_mesh_rejected():
    with pytest.raises(MeshError):
        build_mesh(TETRA_VERTS, TETRA_TRIS[:3])


def test_inconsistent_orientation_rejected():
    tris = TETRA_TRIS.copy()
    tris[3] = tris[3][::-1]
    with pytest.raises(MeshError):
        build_mesh(TETRA_VERTS, tris)


def test_non_manifold_edge_rejected():
    verts = np.vstack([TETRA_VERTS, [(0.0, 0.0, 3.0)]])
    tris = np.vstack([TETRA_TRIS, [(0, 1, 4)]])
    with pytest.raises(MeshError):
        build_mesh(verts, tris)


def test_icosphere_counts():
    assert icosphere(0).num_triangles == 20
    assert icosphere(3).num_triangles == 1280
    mesh = icosphere(4)
    assert mesh.num_triangles == 5120
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max() <= 1e-12


def test_icosphere_radius_scaling():
    mesh = icosphere(2, radius=2.5)
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 2.5).max() <= 1e-12


def test_geometry_right_triangle():
    # closed tetrahedron containing the unit right triangle in the z=0 plane
    verts = np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.3, 0.3, -1.0)])
    mesh = oriented(verts, [(0, 1, 2), (0, 3, 1), (1, 3, 2), (0, 2, 3)])
    geom = compute_geometry(mesh)
    # locate the z=0 face
    idx = int(np.argmax([np.all(mesh.vertices[t][:, 2] == 0.0) for t in mesh.triangles]))
    assert geom.areas[idx] == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(geom.normals[idx], (0.0, 0.0, 1.0), atol=1e-14)


def test_geometry_normals_unit_and_outward(ico3):
    mesh, geom = ico3
    assert np.abs(np.linalg.norm(geom.normals, axis=1) - 1.0).max() <= 1e-12
    centers = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(np.einsum("tj,tj->t", geom.normals, centers) > 0.0)


def test_icosphere4_area_close_to_sphere():
    geom = compute_geometry(icosphere(4))
    assert abs(geom.areas.sum() - 4.0 * np.pi) / (4.0 * np.pi) < 0.01


def test_degenerate_triangle_rejected():
    verts = TETRA_VERTS.copy()
    verts[3] = verts[0]  # collapses three faces
    mesh = TriangleMesh(
        vertices=verts,
        triangles=TETRA_TRIS,
        edge_vertices=build_mesh(TETRA_VERTS, TETRA_TRIS).edge_vertices,
        edge_plus=build_mesh(TETRA_VERTS, TETRA_TRIS).edge_plus,
        edge_minus=build_mesh(TETRA_VERTS, TETRA_TRIS).edge_minus,
    )
    with pytest.raises(MeshError):
        compute_geometry(mesh)


def test_edge_lengths_match_vertices():
    mesh = square_bipyramid()
    geom = compute_geometry(mesh)
    ev = mesh.vertices[mesh.edge_vertices]
    direct = np.linalg.norm(ev[:, 0] - ev[:, 1], axis=1)
    assert np.allclose(geom.edge_lengths, direct, atol=1e-14)
    # the four equator edges (between vertices 0..3) have length 1/4
    on_eq = np.all(mesh.edge_vertices < 4, axis=1)
    assert on_eq.sum() == 4
    assert np.allclose(geom.edge_lengths[on_eq], 0.25, atol=1e-15)


def test_noise_zero_variance_is_identity(ico2):
    mesh, _ = ico2
    noisy = add_vertex_noise(mesh, 0.0, seed=3)
    assert np.array_equal(noisy.vertices, mesh.vertices)


def test_noise_deterministic_per_seed(ico2):
    mesh, _ = ico2
    a = add_vertex_noise(mesh, 0.04, seed=11)
    b = add_vertex_noise(mesh, 0.04, seed=11)
    c = add_vertex_noise(mesh, 0.04, seed=12)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.vertices, c.vertices)


def test_noise_displacement_scale():
    mesh = icosphere(4)
    noisy = add_vertex_noise(mesh, 0.04, seed=0)
    disp = noisy.vertices - mesh.vertices
    # per-vertex sigma = sqrt(c) * mean incident edge length; on the near
    # uniform icosphere the pooled per-coordinate std is close to 0.2 * ebar
    geom = compute_geometry(mesh)
    ebar = geom.edge_lengths.mean()
    assert np.std(disp) == pytest.approx(0.2 * ebar, rel=0.05)


@pytest.mark.parametrize("ext", ["off", "obj", "ply"])
def test_mesh_io_roundtrip(tmp_path, ext):
    mesh = square_bipyramid()
    path = tmp_path / f"m.{ext}"
    save_mesh(mesh, str(path))
    back = load_mesh(str(path))
    assert np.allclose(back.vertices, mesh.vertices, atol=1e-12)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_off_quad_face_rejected(tmp_path):
    path = tmp_path / "quad.off"
    path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(MeshError, match="non-triangle face"):
        load_mesh(str(path))


def test_label_colors_distinct():
    cols = label_colors(22)
    assert cols.shape == (22, 3)
    assert np.unique(np.round(cols, 6), axis=0).shape[0] == 22
