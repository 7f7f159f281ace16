import numpy as np
import pytest
from scipy.spatial import Delaunay

import normint as ni


def flat_normal_map(width, height=None, mask=None):
    """Constant frontal normals; the ODT term dominates everything."""
    height = height or width
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (height, width, 1))
    if mask is None:
        mask = np.ones((height, width), dtype=bool)
    return ni.NormalMap(normals, mask)


def random_normal_map(width, height=None, seed=0, spread=0.3):
    height = height or width
    rng = np.random.default_rng(seed)
    n = rng.normal(size=(height, width, 3)) * spread
    n[..., 2] = 1.0
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return ni.NormalMap(n, np.ones((height, width), dtype=bool))


def oriented_faces(pts, simplices):
    """Ensure positive signed area on every triangle."""
    p0 = pts[simplices[:, 0]]
    p1 = pts[simplices[:, 1]]
    p2 = pts[simplices[:, 2]]
    ar = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) \
        - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    out = simplices.copy()
    out[ar < 0] = out[ar < 0][:, [0, 2, 1]]
    return out


def random_point_mesh(n_points, size, seed, margin=1.0):
    """Delaunay mesh over random points inside the image square."""
    rng = np.random.default_rng(seed)
    while True:
        pts = rng.uniform(margin, size - margin, size=(n_points, 2))
        tri = Delaunay(pts)
        faces = oriented_faces(pts, tri.simplices)
        try:
            mesh = ni.ScreenMesh.from_faces(pts, faces, size, size)
            mesh.audit(check_area=False)
            return mesh
        except (ni.NormintError, AssertionError):
            continue


def classical_delaunay_violations(mesh, rel_tol=1e-7):
    """Count interior edges failing the empty-circumcircle test.

    Near-cocircular quads (within rel_tol of the determinant scale) count
    as ties, not violations.
    """
    bad = 0
    for h in mesh.interior_edges():
        th = int(mesh.he_twin[h])
        a = int(mesh.he_to[th])
        c = int(mesh.he_to[h])
        b = int(mesh.he_to[mesh.he_next[h]])
        d = int(mesh.he_to[mesh.he_next[th]])
        pa, pb, pc, pd = (mesh.v_pos[x] for x in (a, b, c, d))
        rows = np.array([
            [pa[0] - pd[0], pa[1] - pd[1],
             (pa[0] ** 2 + pa[1] ** 2) - (pd[0] ** 2 + pd[1] ** 2)],
            [pc[0] - pd[0], pc[1] - pd[1],
             (pc[0] ** 2 + pc[1] ** 2) - (pd[0] ** 2 + pd[1] ** 2)],
            [pb[0] - pd[0], pb[1] - pd[1],
             (pb[0] ** 2 + pb[1] ** 2) - (pd[0] ** 2 + pd[1] ** 2)],
        ])
        s = (pc[0] - pa[0]) * (pb[1] - pa[1]) \
            - (pc[1] - pa[1]) * (pb[0] - pa[0])
        det = float(np.linalg.det(rows))
        scale = np.linalg.norm(rows[0]) * np.linalg.norm(rows[1]) \
            * np.linalg.norm(rows[2])
        if s * det > rel_tol * scale:
            bad += 1
    return bad


def brute_force_vertex_quadric_value(mesh, nm, v, dx, lam):
    """Direct per-pixel evaluation of the vertex deviation energy."""
    from normint import quadrics as Q

    total = 0.0
    uv = mesh.v_pos[v]
    for f in mesh.vertex_faces(v):
        J = Q.face_jacobian(mesh, f)
        pix = mesh.face_pixels(f)
        a3 = mesh.f_A3[f]
        if len(pix) == 0:
            M = Q.face_mean_metric(mesh, f)
            up = mesh.face_centroids(np.array([f]))[0]
            d = J @ (uv - up) + dx
            total += a3 * float(d @ M @ d)
            continue
        s = a3 / len(pix)
        for p in pix:
            j, i = divmod(int(p), mesh.width)
            up = np.array([i + 0.5, j + 0.5])
            M = Q.pixel_metric(nm.normals[j, i], lam)
            d = J @ (uv - up) + dx
            total += s * float(d @ M @ d)
    return total


@pytest.fixture
def ortho():
    return ni.Camera.orthographic()
