import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import normint as ni
from normint import quadrics as Q
from conftest import (
    brute_force_vertex_quadric_value,
    flat_normal_map,
    random_normal_map,
    random_point_mesh,
)


def test_pixel_metric_frontal():
    M = Q.pixel_metric([0, 0, 1], 1e-5)
    assert np.allclose(M, np.diag([1e-5, 1e-5, 1 + 1e-5]))


def test_pixel_metric_rank_one():
    n = np.array([0.3, -0.5, 0.81])
    n /= np.linalg.norm(n)
    M = Q.pixel_metric(n, 0.0)
    w = np.linalg.eigvalsh(M)
    assert np.allclose(sorted(w), [0, 0, 1], atol=1e-12)


def test_pixel_metric_slanted_outer_product():
    n = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    M = Q.pixel_metric(n, 0.0)
    assert np.allclose(M, [[0.5, 0, 0.5], [0, 0, 0], [0.5, 0, 0.5]])


def test_pixel_metric_positive_definite_with_lambda():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        lam = 10.0 ** rng.uniform(-8, -2)
        w = np.sort(np.linalg.eigvalsh(Q.pixel_metric(n, lam)))
        # Exact spectrum is (lam, lam, 1 + lam); allow eigensolver noise.
        assert np.allclose(w, [lam, lam, 1 + lam], rtol=1e-6, atol=1e-15)


def _rasterized(nm, cam, lam=1e-5):
    mesh = ni.ScreenMesh.from_mask(nm)
    ni.rasterize(mesh, nm, cam, lam)
    return mesh


def test_vertex_quadric_flat_tangent_displacements_free(ortho):
    nm = flat_normal_map(4)
    mesh = _rasterized(nm, ortho, lam=0.0)
    v = [v for v in mesh.alive_vertices()
         if not mesh.is_boundary_vertex(int(v))][0]
    q = Q.vertex_quadric(mesh, int(v))
    for dx in ([1.0, 0, 0], [0, 1.0, 0], [0.5, -0.3, 0]):
        assert abs(q(dx) - q([0, 0, 0])) < 1e-12


def test_vertex_quadric_flat_normal_displacement(ortho):
    nm = flat_normal_map(4)
    mesh = _rasterized(nm, ortho, lam=0.0)
    v = [v for v in mesh.alive_vertices()
         if not mesh.is_boundary_vertex(int(v))][0]
    q = Q.vertex_quadric(mesh, int(v))
    h = 0.37
    a3_sum = sum(mesh.f_A3[f] for f in mesh.vertex_faces(int(v)))
    assert np.isclose(q([0, 0, h]) - q([0, 0, 0]), h * h * a3_sum, rtol=1e-12)


def test_vertex_quadric_value_at_zero_is_c(ortho):
    nm = random_normal_map(5, seed=8)
    mesh = _rasterized(nm, ortho)
    v = int(mesh.alive_vertices()[7])
    q = Q.vertex_quadric(mesh, v)
    assert q([0.0, 0.0, 0.0]) == q.c


def test_vertex_quadric_empty_star():
    nm = flat_normal_map(3)
    mesh = ni.ScreenMesh.from_mask(nm)
    ni.rasterize(mesh, nm, ni.Camera.orthographic())
    v = int(mesh.alive_vertices()[0])
    for f in mesh.vertex_faces(v):
        mesh.f_alive[f] = False
    with pytest.raises(ni.EmptyStar):
        Q.vertex_quadric(mesh, v)


def test_brute_force_oracle_random_meshes(ortho):
    """vertex_quadric must match the direct per-pixel deviation sum."""
    rng = np.random.default_rng(0)
    lam = 1e-5
    for trial in range(12):
        nm = random_normal_map(6, seed=100 + trial)
        mesh = _rasterized(nm, ortho, lam)
        for v in rng.choice(mesh.alive_vertices(), size=4, replace=False):
            q = Q.vertex_quadric(mesh, int(v))
            for _ in range(4):
                dx = rng.normal(size=3)
                ref = brute_force_vertex_quadric_value(mesh, nm, int(v), dx, lam)
                assert np.isclose(q(dx), ref, rtol=1e-9, atol=1e-12)


def test_bulk_rebuild_matches_single_vertex(ortho):
    nm = random_normal_map(7, seed=21)
    mesh = _rasterized(nm, ortho)
    Q.rebuild_vertex_quadrics(mesh)
    for v in mesh.alive_vertices()[::5]:
        q = Q.vertex_quadric(mesh, int(v))
        A6 = mesh.QA[v]
        A = np.array([[A6[0], A6[1], A6[2]],
                      [A6[1], A6[3], A6[4]],
                      [A6[2], A6[4], A6[5]]])
        assert np.allclose(A, q.A, rtol=1e-10, atol=1e-12)
        assert np.allclose(mesh.Qb[v], q.b, rtol=1e-10, atol=1e-12)
        assert np.isclose(mesh.Qc[v], q.c, rtol=1e-10, atol=1e-12)


def test_rebuild_kernel_matches_numpy_reference(ortho):
    nm = random_normal_map(9, seed=22)
    mesh = _rasterized(nm, ortho)
    Q.rebuild_vertex_quadrics(mesh)
    qa = mesh.QA.copy()
    qb = mesh.Qb.copy()
    qc = mesh.Qc.copy()
    Q.rebuild_vertex_quadrics_reference(mesh)
    assert np.allclose(qa, mesh.QA, rtol=1e-10, atol=1e-12)
    assert np.allclose(qb, mesh.Qb, rtol=1e-10, atol=1e-12)
    assert np.allclose(qc, mesh.Qc, rtol=1e-10, atol=1e-12)


def test_screen_quadric_zero_jacobian():
    q = Q.Quadric(np.eye(3), np.array([1.0, 2.0, 3.0]), 4.0)
    sq = Q.screen_quadric(q, np.zeros((3, 2)))
    assert np.allclose(sq.A, 0) and np.allclose(sq.b, 0) and sq.c == 4.0


def test_screen_quadric_orthonormal_isometry():
    J = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    sq = Q.screen_quadric(Q.Quadric(np.eye(3), np.zeros(3), 0.0), J)
    assert np.allclose(sq.A, np.eye(2))


@given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, 3, elements=st.floats(-2, 2)),
       arrays(np.float64, (3, 2), elements=st.floats(-2, 2)),
       arrays(np.float64, 2, elements=st.floats(-3, 3)))
@settings(max_examples=80, deadline=None)
def test_screen_quadric_composition_identity(A, b, J, du):
    A = A + A.T  # symmetric, sign-indefinite is fine for the identity
    q = Q.Quadric(A, b, 1.7)
    sq = Q.screen_quadric(q, J)
    lhs = sq(du)
    rhs = q(J @ du)
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_optimal_displacement_at_minimum():
    sq = Q.ScreenQuadric(np.eye(2), np.zeros(2), 0.0)
    assert np.allclose(Q.optimal_displacement(sq), 0.0)


def test_optimal_displacement_identity_system():
    sq = Q.ScreenQuadric(np.eye(2), np.array([1.0, 2.0]), 0.0)
    assert np.allclose(Q.optimal_displacement(sq), [-1.0, -2.0])


def test_optimal_displacement_gradient_vanishes():
    rng = np.random.default_rng(4)
    for _ in range(50):
        B = rng.normal(size=(2, 2))
        A = B @ B.T + 0.05 * np.eye(2)
        b = rng.normal(size=2)
        sq = Q.ScreenQuadric(A, b, rng.normal())
        du = Q.optimal_displacement(sq)
        eps = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            g = (sq(du + e) - sq(du - e)) / (2 * eps)
            assert abs(g) < 1e-6 * max(1.0, abs(sq(du)))
        # Spot-check global optimality on a ring of samples.
        for ang in np.linspace(0, 2 * np.pi, 16, endpoint=False):
            step = 0.3 * np.array([np.cos(ang), np.sin(ang)])
            assert sq(du) <= sq(du + step) + 1e-12


def test_optimal_displacement_singular_raises():
    sq = Q.ScreenQuadric(np.array([[1.0, 0.0], [0.0, 1e-14]]),
                         np.array([1.0, 1.0]), 0.0)
    with pytest.raises(ni.SingularSystem):
        Q.optimal_displacement(sq)


def test_edge_metric_frontal(ortho):
    nm = flat_normal_map(4)
    mesh = _rasterized(nm, ortho)
    h = int(mesh.interior_edges()[0])
    Me, ne = Q.edge_metric(mesh, h)
    assert np.allclose(ne, [0, 0, 1])


def test_edge_metric_common_normal_factorisation(ortho):
    n = np.array([0.2, -0.1, 1.0])
    n /= np.linalg.norm(n)
    nm = ni.NormalMap(np.tile(n, (6, 6, 1)), np.ones((6, 6), bool))
    mesh = _rasterized(nm, ortho, lam=0.0)
    h = None
    for e in mesh.interior_edges():
        f1 = int(mesh.he_face[e])
        f2 = int(mesh.he_face[mesh.he_twin[e]])
        if mesh.f_npix[f1] > 0 and mesh.f_npix[f2] > 0:
            h = int(e)
            break
    Me, ne = Q.edge_metric(mesh, h)
    f1 = int(mesh.he_face[h])
    f2 = int(mesh.he_face[mesh.he_twin[h]])
    expected = (mesh.f_A3[f1] + mesh.f_A3[f2]) * np.outer(n, n)
    assert np.allclose(Me, expected, rtol=1e-9, atol=1e-12)
    assert np.allclose(ne, n, atol=1e-12)


def test_edge_metric_boundary_raises(ortho):
    nm = flat_normal_map(3)
    mesh = _rasterized(nm, ortho)
    h = [int(e) for e in np.where(mesh.he_alive)[0]
         if mesh.is_boundary_edge(int(e))][0]
    with pytest.raises(ni.BoundaryEdge):
        Q.edge_metric(mesh, h)


def test_empty_bin_fallback_contract(ortho):
    mesh = random_point_mesh(25, 12, seed=3)
    nm = flat_normal_map(12)
    ni.rasterize(mesh, nm, ortho, 1e-5)
    empty = [int(f) for f in mesh.alive_faces() if mesh.f_npix[f] == 0]
    assert empty
    M = Q.face_mean_metric(mesh, empty[0])
    # Flat input: every neighbor mean metric equals e_z e_z^t + lam I.
    assert np.allclose(M, Q.pixel_metric([0, 0, 1], 1e-5), atol=1e-12)


def test_quadric_addition_matches_union(ortho):
    nm = random_normal_map(5, seed=31)
    mesh = _rasterized(nm, ortho)
    v, w = (int(x) for x in mesh.alive_vertices()[[3, 9]])
    qv = Q.vertex_quadric(mesh, v)
    qw = Q.vertex_quadric(mesh, w)
    s = qv + qw
    rng = np.random.default_rng(0)
    for _ in range(10):
        dx = rng.normal(size=3)
        assert np.isclose(s(dx), qv(dx) + qw(dx), rtol=1e-12)
