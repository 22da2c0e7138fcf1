"""Scoring and protocol helpers: TV values, correctness, sweeps."""

import numpy as np
import pytest

from normseg.labels import LabelSet, equator_pole_labels, similarity_field
from normseg.ltv import AdmmConfig
from normseg.atv import CpConfig
from normseg.mesh import build_mesh, compute_geometry
from normseg.metrics import (
    AREA_USE_FRACTION,
    SWEEP_CSV_HEADER,
    beta_sweep,
    correctness,
    default_grid,
    fidelity,
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

from conftest import elongated_bipyramid, square_bipyramid
from test_mesh import TETRA_TRIS, TETRA_VERTS

G1 = np.array([1.0, 0.0, 0.0])
G2 = np.array([0.0, 1.0, 0.0])
G3 = (G1 + G2) / np.sqrt(2.0)


def one_hot(assignment, num_labels):
    phi = np.zeros((len(assignment), num_labels))
    phi[np.arange(len(assignment)), assignment] = 1.0
    return phi


# ---------------------------------------------------------------------------
# regularizer values on the two analytic configurations


def test_tv_values_two_region_bipyramid():
    # one interface ring of total length 1 between orthogonal labels
    mesh = square_bipyramid()
    geom = compute_geometry(mesh)
    labels = np.stack([G1, G2])
    phi = one_hot([0, 0, 0, 0, 1, 1, 1, 1], 2)
    assert tv_assignment(phi, mesh, geom) == pytest.approx(2.0, abs=1e-12)
    assert tv_label(phi, labels, mesh, geom) == pytest.approx(np.pi / 2.0, abs=1e-12)


def test_tv_values_three_region_bipyramid():
    # two interface rings, middle band at the halfway label: the assignment
    # TV doubles while the label-space TV stays at the geodesic distance
    mesh = elongated_bipyramid()
    geom = compute_geometry(mesh)
    labels = np.stack([G1, G2, G3])
    phi = one_hot([0] * 4 + [2] * 8 + [1] * 4, 3)
    assert tv_assignment(phi, mesh, geom) == pytest.approx(4.0, abs=1e-12)
    assert tv_label(phi, labels, mesh, geom) == pytest.approx(np.pi / 2.0, abs=1e-12)


def test_tv_zero_on_constant_assignment():
    mesh = square_bipyramid()
    geom = compute_geometry(mesh)
    labels = np.stack([G1, G2])
    phi = one_hot([0] * 8, 2)
    assert tv_assignment(phi, mesh, geom) == 0.0
    assert tv_label(phi, labels, mesh, geom) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# fidelity and objectives


def test_fidelity_hand_value():
    mesh = build_mesh(TETRA_VERTS, TETRA_TRIS)
    geom = compute_geometry(mesh)
    s = np.arange(8.0).reshape(4, 2)
    phi = one_hot([0, 1, 0, 1], 2)
    expected = float(np.sum(geom.areas * np.array([0.0, 3.0, 4.0, 7.0])))
    assert fidelity(phi, s, geom) == pytest.approx(expected, rel=1e-14)


def test_objectives_compose():
    mesh = square_bipyramid()
    geom = compute_geometry(mesh)
    labels = np.stack([G1, G2])
    lset = LabelSet(vectors=labels)
    s = similarity_field(geom.normals, lset)
    phi = one_hot([0, 0, 0, 0, 1, 1, 1, 1], 2)
    beta = 0.37
    assert objective_atv(phi, s, beta, mesh, geom) == pytest.approx(
        fidelity(phi, s, geom) + beta * tv_assignment(phi, mesh, geom), rel=1e-14
    )
    assert objective_ltv(phi, s, beta, labels, mesh, geom) == pytest.approx(
        fidelity(phi, s, geom) + beta * tv_label(phi, labels, mesh, geom), rel=1e-14
    )


# ---------------------------------------------------------------------------
# hard labelings and correctness


def test_hard_labels_atv_argmax_and_ties():
    phi = np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [1.0, 0.0, 0.0]])
    assert np.array_equal(hard_labels_atv(phi), [1, 0, 0])


def test_hard_labels_ltv_nearest_label():
    labels = equator_pole_labels(4).vectors
    m = labels[[2, 0, 5]] + np.array([0.01, -0.02, 0.005])
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    assert np.array_equal(hard_labels_ltv(m, labels), [2, 0, 5])


def test_correctness_area_weighted():
    areas = np.array([3.0, 1.0])
    assert correctness([0, 1], [0, 1], areas) == 1.0
    assert correctness([1, 0], [0, 1], areas) == 0.0
    assert correctness([0, 0], [0, 1], areas) == pytest.approx(0.75)
    with pytest.raises(ValueError, match="shapes"):
        correctness([0, 1, 2], [0, 1], areas)


def test_labels_used_counts():
    assert labels_used([0, 0, 3, 3, 7]) == 3
    areas = np.array([10.0, 10.0, 10.0, 10.0, 1e-4])
    assert labels_used_area([0, 0, 3, 3, 7], areas) == 2
    assert labels_used_area([0, 0, 3, 3, 7], areas, min_fraction=1e-9) == 3
    assert 0.0 < AREA_USE_FRACTION < 1.0


def test_label_means_one_hot():
    labels = equator_pole_labels(4).vectors
    phi = one_hot([0, 3, 5], len(labels))
    m = label_means(phi, labels)
    assert np.abs(m - labels[[0, 3, 5]]).max() <= 1e-12


# ---------------------------------------------------------------------------
# sweep protocol


def test_default_grid_seven_points():
    grid = default_grid(0.125)
    assert len(grid) == 7
    assert grid[3] == pytest.approx(0.125)
    assert np.allclose(np.diff(np.log2(grid)), 1.0)


@pytest.fixture(scope="module")
def tetra_sweep_problem():
    mesh = build_mesh(TETRA_VERTS, TETRA_TRIS)
    geom = compute_geometry(mesh)
    lset = equator_pole_labels(1)
    s = similarity_field(geom.normals, lset)
    ref = np.argmin(s, axis=1)
    return mesh, geom, lset, s, ref


def test_beta_sweep_atv(tetra_sweep_problem):
    mesh, geom, lset, s, ref = tetra_sweep_problem
    grid = [0.001, 0.01]
    report = beta_sweep(
        "atv", grid, s, lset, mesh, geom, ref, cp_config=CpConfig(max_iters=500)
    )
    assert report.model == "atv"
    assert [r.beta for r in report.rows] == grid
    assert report.beta_star in grid
    best = max(r.correctness for r in report.rows)
    star = next(r for r in report.rows if r.beta == report.beta_star)
    assert star.correctness == best
    for r in report.rows:
        assert r.error is None
        assert r.iterations > 0
        assert r.runtime_s > 0.0


def test_beta_sweep_ltv_and_error_row(tetra_sweep_problem):
    mesh, geom, lset, s, ref = tetra_sweep_problem
    report = beta_sweep(
        "ltv",
        [0.01, float("nan")],
        s,
        lset,
        mesh,
        geom,
        ref,
        admm_config=AdmmConfig(max_iters=60),
    )
    good = next(r for r in report.rows if r.beta == 0.01)
    bad = next(r for r in report.rows if np.isnan(r.beta))
    assert good.error is None
    assert good.correctness == pytest.approx(1.0)
    assert bad.error is not None and "SolverError" in bad.error
    assert np.isnan(bad.correctness)
    # failed rows never win the selection
    assert report.beta_star == pytest.approx(0.01)


def test_beta_sweep_rejects_bad_input(tetra_sweep_problem):
    mesh, geom, lset, s, ref = tetra_sweep_problem
    with pytest.raises(ValueError, match="model"):
        beta_sweep("foo", [0.1], s, lset, mesh, geom, ref)
    with pytest.raises(ValueError, match="empty"):
        beta_sweep("atv", [], s, lset, mesh, geom, ref)
    with pytest.raises(ValueError, match="distinct"):
        beta_sweep("atv", [0.1, 0.1], s, lset, mesh, geom, ref)


def test_sweep_csv_header():
    assert SWEEP_CSV_HEADER == (
        "beta",
        "correctness",
        "labels_used",
        "objective",
        "iterations",
        "runtime_s",
    )
