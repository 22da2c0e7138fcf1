"""Unit-sphere geometry kernels: exp, log, distance, transport, Karcher mean."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normseg.errors import GeometryError
from normseg.sphere import (
    karcher_init,
    karcher_mean,
    sph_distance,
    sph_exp,
    sph_log,
    sph_transport,
)

import oracles

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_tangents(rng, base, scale=1.0):
    t = rng.normal(size=base.shape) * scale
    return t - np.einsum("...j,...j->...", t, base)[..., None] * base


# ---------------------------------------------------------------------------
# distance


def test_distance_degenerate_pairs():
    assert sph_distance(E1, E1) == 0.0
    assert sph_distance(E1, -E1) == pytest.approx(np.pi, abs=1e-15)
    assert sph_distance(E1, E2) == pytest.approx(np.pi / 2.0, abs=1e-15)


def test_distance_symmetric(rng):
    a = random_units(rng, 50)
    b = random_units(rng, 50)
    assert np.allclose(sph_distance(a, b), sph_distance(b, a), atol=1e-15)


# ---------------------------------------------------------------------------
# exp / log


def test_log_at_base_is_zero():
    assert np.allclose(sph_log(E1, E1), 0.0, atol=1e-15)


def test_log_orthogonal_pair():
    assert np.allclose(sph_log(E1, E2), (np.pi / 2.0) * E2, atol=1e-14)


def test_exp_zero_tangent():
    assert np.allclose(sph_exp(E1, np.zeros(3)), E1, atol=1e-15)


def test_exp_quarter_circle():
    assert np.allclose(sph_exp(E1, (np.pi / 2.0) * E2), E2, atol=1e-14)


def test_exp_full_period():
    assert np.allclose(sph_exp(E1, (2.0 * np.pi) * E2), E1, atol=1e-10)


def test_exp_against_geodesic_ode(rng):
    # closed form vs numerical integration of x'' = -|x'|^2 x
    base = random_units(rng, 10)
    tans = random_tangents(rng, base)
    for b, t in zip(base, tans):
        assert np.allclose(sph_exp(b, t), oracles.sphere_exp_ode(b, t), atol=1e-9)


def test_exp_log_roundtrip(rng):
    base = random_units(rng, 1000)
    target = random_units(rng, 1000)
    keep = sph_distance(base, target) < np.pi - 1e-3
    base, target = base[keep], target[keep]
    x = sph_log(base, target)
    assert np.abs(sph_exp(base, x) - target).max() <= 1e-12
    assert np.abs(np.linalg.norm(x, axis=1) - sph_distance(base, target)).max() <= 1e-12


def test_log_antipodal_guard():
    with pytest.raises(GeometryError):
        sph_log(E1, -E1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_exp_log_roundtrip_property(seed):
    r = np.random.default_rng(seed)
    b = random_units(r, 1)[0]
    t = random_tangents(r, b[None, :], scale=1.0)[0]
    n = np.linalg.norm(t)
    if n >= np.pi - 1e-3:
        t *= (np.pi - 1e-2) / n
    p = sph_exp(b, t)
    assert np.linalg.norm(p) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sph_log(b, p), t, atol=1e-11)


# ---------------------------------------------------------------------------
# parallel transport


def test_transport_identity_when_stationary(rng):
    b = random_units(rng, 5)
    x = random_tangents(rng, b)
    assert np.allclose(sph_transport(b, b, x), x, atol=1e-15)


def test_transport_preserves_inner_products(rng):
    src = random_units(rng, 200)
    dst = random_units(rng, 200)
    keep = sph_distance(src, dst) < np.pi - 1e-3
    src, dst = src[keep], dst[keep]
    x = random_tangents(rng, src)
    y = random_tangents(rng, src)
    tx = sph_transport(src, dst, x)
    ty = sph_transport(src, dst, y)
    before = np.einsum("kj,kj->k", x, y)
    after = np.einsum("kj,kj->k", tx, ty)
    assert np.abs(before - after).max() <= 1e-12
    # transported vectors are tangent at the destination
    assert np.abs(np.einsum("kj,kj->k", tx, dst)).max() <= 1e-12


def test_transport_of_geodesic_tangent(rng):
    src = random_units(rng, 50)
    dst = random_units(rng, 50)
    keep = sph_distance(src, dst) < np.pi - 1e-3
    src, dst = src[keep], dst[keep]
    moved = sph_transport(src, dst, sph_log(src, dst))
    assert np.abs(moved + sph_log(dst, src)).max() <= 1e-12


# ---------------------------------------------------------------------------
# Karcher mean


def test_karcher_single_support():
    labels = np.stack([E1, E2, E3])
    w = np.array([0.0, 0.0, 1.0])
    m = karcher_mean(w, labels)
    assert np.allclose(m, E3, atol=1e-12)


def test_karcher_two_point_midpoint():
    labels = np.stack([E1, E2])
    m = karcher_mean(np.array([0.5, 0.5]), labels)
    assert np.allclose(m, (E1 + E2) / np.sqrt(2.0), atol=1e-8)


def test_karcher_residual_and_global_plausibility(rng):
    for _ in range(20):
        labels = random_units(rng, 5)
        hemi = labels[0]
        labels = np.where((labels @ hemi)[:, None] < 0.2, hemi, labels)
        labels /= np.linalg.norm(labels, axis=1, keepdims=True)
        w = rng.random(5)
        w /= w.sum()
        m = karcher_mean(w, labels, init=karcher_init(w, labels, labels[0]))
        resid = np.linalg.norm(np.einsum("l,lj->j", w, sph_log(np.broadcast_to(m, (5, 3)), labels)))
        assert resid <= 1e-8
        f = oracles.karcher_objective(m, w, labels)
        assert f <= oracles.karcher_best_sampled(w, labels, n=10000) + 1e-6


def test_karcher_antipodal_weight_guard():
    labels = np.stack([E1, -E1])
    with pytest.raises(GeometryError):
        karcher_mean(np.array([1.0, 0.5]) / 1.5, labels, init=E1)
