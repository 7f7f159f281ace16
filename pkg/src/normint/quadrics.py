"""Screen-space quadric error objects.

A vertex quadric measures, as a quadratic in the 3D displacement dx of the
vertex, the metric-weighted deviation between the moved vertex and the
surface samples in its star:

    Q(dx) = <dx, A dx> + 2 <b, dx> + c

accumulated over incident faces as (A3/|P|) sum_p |J (u_v - u_p) + dx|^2_{M_p}
with the per-pixel metric M_p = n_p n_p^t + lam I.  Restricting dx to the
vertex tangent space via the vertex Jacobian J_v turns it into a 2D screen
quadric A~ = J^t A J, b~ = J^t b, c~ = c whose minimiser drives vertex
placement and collapse costs.

Faces that own no pixel contribute A3 * |J (u_v - centroid)|^2_{M} with M
averaged from their edge neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import camera as cam_mod
from .errors import BoundaryEdge, EmptyStar, SingularSystem
from .mesh import ScreenMesh

COND_LIMIT = 1e12


def pixel_metric(n, lam: float) -> np.ndarray:
    """M = n n^t + lam I for a unit normal."""
    n = np.asarray(n, dtype=np.float64)
    return np.outer(n, n) + lam * np.eye(3)


@dataclass
class Quadric:
    A: np.ndarray               # (3, 3) symmetric PSD
    b: np.ndarray               # (3,)
    c: float

    def __call__(self, dx) -> float:
        dx = np.asarray(dx, dtype=np.float64)
        return float(dx @ self.A @ dx + 2.0 * self.b @ dx + self.c)

    def __add__(self, other: "Quadric") -> "Quadric":
        return Quadric(self.A + other.A, self.b + other.b, self.c + other.c)

    def rebased(self, d) -> "Quadric":
        """The same error measured relative to a point offset by d."""
        d = np.asarray(d, dtype=np.float64)
        Ad = self.A @ d
        return Quadric(self.A.copy(), self.b + Ad,
                       float(self.c + 2.0 * self.b @ d + d @ Ad))

    @staticmethod
    def zero() -> "Quadric":
        return Quadric(np.zeros((3, 3)), np.zeros(3), 0.0)


@dataclass
class ScreenQuadric:
    A: np.ndarray               # (2, 2)
    b: np.ndarray               # (2,)
    c: float

    def __call__(self, du) -> float:
        du = np.asarray(du, dtype=np.float64)
        return float(du @ self.A @ du + 2.0 * self.b @ du + self.c)


def screen_quadric(q: Quadric, J: np.ndarray) -> ScreenQuadric:
    """Restrict a 3D quadric to tangent displacements dx = J du."""
    J = np.asarray(J, dtype=np.float64)
    return ScreenQuadric(J.T @ q.A @ J, J.T @ q.b, float(q.c))


def optimal_displacement(sq: ScreenQuadric) -> np.ndarray:
    """Minimiser of the screen quadric; SingularSystem when ill-conditioned."""
    a00, a01 = sq.A[0, 0], sq.A[0, 1]
    a11 = sq.A[1, 1]
    det = a00 * a11 - a01 * a01
    tr = a00 + a11
    if det <= 0.0 or det < tr * tr / COND_LIMIT:
        raise SingularSystem(f"screen quadric condition beyond {COND_LIMIT:g}")
    return np.array([-(a11 * sq.b[0] - a01 * sq.b[1]) / det,
                     -(-a01 * sq.b[0] + a00 * sq.b[1]) / det])


def _sym6_to_mat(m6):
    return np.array([[m6[0], m6[1], m6[2]],
                     [m6[1], m6[3], m6[4]],
                     [m6[2], m6[4], m6[5]]])


def face_mean_metric(mesh: ScreenMesh, f: int) -> np.ndarray:
    """Mean per-pixel metric of a face (neighbor average for empty bins)."""
    out = np.empty(6)
    K._face_mean_metric(np.int64(f), mesh.he_next, mesh.he_twin, mesh.he_face,
                        mesh.f_he, mesh.f_alive, mesh.f_normal, mesh.f_npix,
                        mesh.f_S2, mesh.lam, out)
    return _sym6_to_mat(out)


def face_jacobian(mesh: ScreenMesh, f) -> np.ndarray:
    face_ids = np.atleast_1d(np.asarray(f))
    J = cam_mod.jacobian_from_normal(mesh.cam, mesh.f_normal[face_ids],
                                     mesh.face_centroids(face_ids), clamp=True)
    return J[0] if np.isscalar(f) or np.ndim(f) == 0 else J


def vertex_quadric(mesh: ScreenMesh, v: int) -> Quadric:
    """Accumulate the star of v; requires a rasterized mesh."""
    faces = mesh.vertex_faces(v)
    if not faces:
        raise EmptyStar(f"vertex {v} has no incident faces")
    uv = mesh.v_pos[v]
    A = np.zeros((3, 3))
    b = np.zeros(3)
    c = 0.0
    for f in faces:
        P0, q1e, c0e, J = _face_effective_terms(mesh, f)
        y = J @ uv
        P0y = P0 @ y
        A += P0
        b += P0y - q1e
        c += y @ P0y - 2.0 * y @ q1e + c0e
    return Quadric(A, b, float(c))


def _face_effective_terms(mesh: ScreenMesh, f: int):
    J = face_jacobian(mesh, int(f))
    a3 = mesh.f_A3[f]
    npix = int(mesh.f_npix[f])
    if npix > 0:
        scale = a3 / npix
        P0 = scale * (_sym6_to_mat(mesh.f_S2[f])
                      + npix * mesh.lam * np.eye(3))
        q1e = scale * mesh.f_q1[f]
        c0e = scale * mesh.f_c0[f]
    else:
        M = face_mean_metric(mesh, f)
        centroid = mesh.face_centroids(np.array([f]))[0]
        y = J @ centroid
        P0 = a3 * M
        q1e = a3 * (M @ y)
        c0e = a3 * float(y @ M @ y)
    return P0, q1e, c0e, J


def vertex_screen_quadric(mesh: ScreenMesh, v: int) -> ScreenQuadric:
    """Vertex quadric restricted to the tangent plane of the vertex normal."""
    q = vertex_quadric(mesh, v)
    n = vertex_normal(mesh, v)
    J = cam_mod.jacobian_from_normal(mesh.cam, n, mesh.v_pos[v], clamp=True)
    return screen_quadric(q, J)


def vertex_normal(mesh: ScreenMesh, v: int) -> np.ndarray:
    nx, ny, nz = K._vertex_normal(np.int64(v), mesh.v_out, mesh.he_to,
                                  mesh.he_next, mesh.he_twin, mesh.he_face,
                                  mesh.f_alive, mesh.f_normal, mesh.f_A3)
    return np.array([nx, ny, nz])


def edge_metric(mesh: ScreenMesh, edge) -> tuple[np.ndarray, np.ndarray]:
    """Combined metric and normal of the two faces adjacent to an edge."""
    h = mesh._resolve_edge(edge)
    th = int(mesh.he_twin[h])
    f1 = int(mesh.he_face[h])
    f2 = int(mesh.he_face[th])
    if f1 < 0 or f2 < 0:
        raise BoundaryEdge("edge metric needs an interior edge")
    Me = mesh.f_A3[f1] * face_mean_metric(mesh, f1) \
        + mesh.f_A3[f2] * face_mean_metric(mesh, f2)
    ne = mesh.f_A3[f1] * mesh.f_normal[f1] + mesh.f_A3[f2] * mesh.f_normal[f2]
    nn = np.linalg.norm(ne)
    if nn < 1e-12:
        ne = np.array([0.0, 0.0, 1.0])
    else:
        ne = ne / nn
    return Me, ne


def rebuild_vertex_quadrics(mesh: ScreenMesh) -> None:
    """Rebuild every live vertex's quadric from the current pixel bins.

    This is the per-iteration rebuild that resets the additive drift
    accumulated by collapses; bins must be fresh (rasterize first).
    """
    mesh.ensure_quadric_arrays()
    cam = mesh.cam
    K.rebuild_quadrics_kernel(
        mesh.f_he, mesh.he_to, mesh.he_next, mesh.he_twin, mesh.he_face,
        mesh.f_alive, mesh.v_pos, mesh.f_normal, mesh.f_A3, mesh.f_npix,
        mesh.f_S2, mesh.f_q1, mesh.f_c0, mesh.lam,
        cam.kind, cam.fx, cam.fy, cam.cx, cam.cy,
        mesh.QA, mesh.Qb, mesh.Qc, np.empty(6))


def rebuild_vertex_quadrics_reference(mesh: ScreenMesh) -> None:
    """Vectorised numpy twin of the rebuild kernel (kept as a test oracle)."""
    mesh.ensure_quadric_arrays()
    mesh.QA[:] = 0.0
    mesh.Qb[:] = 0.0
    mesh.Qc[:] = 0.0
    sel = mesh.alive_faces()
    if len(sel) == 0:
        return
    nv = len(mesh.v_out)

    centroids = mesh.face_centroids(sel)
    J = cam_mod.jacobian_from_normal(mesh.cam, mesh.f_normal[sel], centroids,
                                     clamp=True)                  # (S, 3, 2)
    npix = mesh.f_npix[sel].astype(np.float64)
    a3 = mesh.f_A3[sel]
    lam = mesh.lam

    # Effective per-face terms (see _face_effective_terms).
    nonempty = npix > 0
    P0 = np.empty((len(sel), 3, 3))
    q1e = np.empty((len(sel), 3))
    c0e = np.empty(len(sel))
    if np.any(nonempty):
        s = a3[nonempty] / npix[nonempty]
        S2 = mesh.f_S2[sel[nonempty]]
        M = np.empty((int(nonempty.sum()), 3, 3))
        M[:, 0, 0] = S2[:, 0]
        M[:, 0, 1] = M[:, 1, 0] = S2[:, 1]
        M[:, 0, 2] = M[:, 2, 0] = S2[:, 2]
        M[:, 1, 1] = S2[:, 3]
        M[:, 1, 2] = M[:, 2, 1] = S2[:, 4]
        M[:, 2, 2] = S2[:, 5]
        M += (npix[nonempty] * lam)[:, None, None] * np.eye(3)
        P0[nonempty] = s[:, None, None] * M
        q1e[nonempty] = s[:, None] * mesh.f_q1[sel[nonempty]]
        c0e[nonempty] = s * mesh.f_c0[sel[nonempty]]
    if np.any(~nonempty):
        for i in np.where(~nonempty)[0]:
            f = int(sel[i])
            M = face_mean_metric(mesh, f)
            y = J[i] @ centroids[i]
            P0[i] = mesh.f_A3[f] * M
            q1e[i] = mesh.f_A3[f] * (M @ y)
            c0e[i] = mesh.f_A3[f] * float(y @ M @ y)

    corners = np.stack(mesh.face_corner_ids(sel), axis=1)          # (S, 3)
    comb = (0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)
    for k in range(3):
        vid = corners[:, k]
        uv = mesh.v_pos[vid]                                       # (S, 2)
        y = np.einsum("sij,sj->si", J, uv)                         # (S, 3)
        P0y = np.einsum("sij,sj->si", P0, y)
        for m, (i, j) in enumerate(comb):
            mesh.QA[:, m] += np.bincount(vid, weights=P0[:, i, j],
                                         minlength=nv)
        bw = P0y - q1e
        for m in range(3):
            mesh.Qb[:, m] += np.bincount(vid, weights=bw[:, m], minlength=nv)
        cw = np.einsum("si,si->s", y, P0y) \
            - 2.0 * np.einsum("si,si->s", y, q1e) + c0e
        mesh.Qc += np.bincount(vid, weights=cw, minlength=nv)
