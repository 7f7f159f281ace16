"""Mesh-based normal integration: one depth value per vertex.

The discrete optimality system couples each vertex to its edge neighbors
with cotangent weights; per face f the normals contribute

    m_f = mean_p <r_p, n_p>^2
    b_f = D * mean_p <r_p, n_p> (n_x, n_y)_p     (component-wise D)

and each vertex equation reads

    sum_w sum_f w_{f,vw} (m_f (z_v - z_w) + <b_f, u_v - u_w>) = 0.

The matrix is a weighted cotan Laplacian: symmetric, PSD, with the constant
vector in its kernel.  The gauge is fixed to mean(z) = 0 inside a Jacobi-
preconditioned conjugate gradient.  Orthographic depths are linear in z;
perspective solves for log-depth, exponentiated on unprojection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import camera as cam_mod
from .camera import Camera
from .errors import DegenerateAngle
from .mesh import ScreenMesh
from .normalmap import NormalMap


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    residual: float


@dataclass
class IntegrationSystem:
    L: sp.csr_matrix
    rhs: np.ndarray
    vertex_ids: np.ndarray       # compact row -> mesh vertex id
    index_of_vertex: np.ndarray  # mesh vertex id -> compact row (-1 dead)
    cam: Camera
    gauge: str = "mean-zero"


def face_coefficients(mesh: ScreenMesh, f: int) -> tuple[float, np.ndarray]:
    """(m_f, b_f) for one face; empty bins fall back to the face normal
    sampled at the centroid."""
    m, bx, by = _face_coefficients_arrays(mesh, np.array([f], dtype=np.int64))
    return float(m[0]), np.array([bx[0], by[0]])


def _face_coefficients_arrays(mesh: ScreenMesh, sel):
    cam = mesh.cam
    npix = mesh.f_npix[sel].astype(np.float64)
    m = np.empty(len(sel))
    bx = np.empty(len(sel))
    by = np.empty(len(sel))
    nonempty = npix > 0
    if np.any(nonempty):
        inv = 1.0 / npix[nonempty]
        m[nonempty] = mesh.f_msum[sel[nonempty]] * inv
        bx[nonempty] = mesh.f_bsum[sel[nonempty], 0] * inv
        by[nonempty] = mesh.f_bsum[sel[nonempty], 1] * inv
    if np.any(~nonempty):
        idx = sel[~nonempty]
        n = mesh.f_normal[idx]
        r = cam_mod.ray(cam, mesh.face_centroids(idx))
        rdn = np.einsum("fi,fi->f", r, n)
        m[~nonempty] = rdn * rdn
        bx[~nonempty] = rdn * n[:, 0]
        by[~nonempty] = rdn * n[:, 1]
    du, dv = cam_mod.integration_constant(cam)
    return m, du * bx, dv * by


def assemble(mesh: ScreenMesh, nm: NormalMap, cam: Camera) -> IntegrationSystem:
    """Build the sparse vertex system from the current mesh and pixel bins."""
    if mesh.nm is None:
        raise ValueError("rasterize the mesh before assembling")
    sel = mesh.alive_faces()
    verts = mesh.alive_vertices()
    nv = len(verts)
    index = np.full(len(mesh.v_out), -1, dtype=np.int64)
    index[verts] = np.arange(nv)

    m_f, bfx, bfy = _face_coefficients_arrays(mesh, sel)
    ca, cb, cc = mesh.face_corner_ids(sel)
    corners = np.stack([ca, cb, cc], axis=1).astype(np.int64)
    pos = mesh.v_pos

    rows = []
    cols = []
    vals = []
    rhs = np.zeros(nv)
    for k in range(3):
        x = corners[:, k]
        v = corners[:, (k + 1) % 3]
        w = corners[:, (k + 2) % 3]
        e1 = pos[v] - pos[x]
        e2 = pos[w] - pos[x]
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(cross <= 0):
            raise DegenerateAngle("degenerate triangle in cotan assembly")
        cot = np.einsum("fi,fi->f", e1, e2) / cross
        wm = cot * m_f
        iv = index[v]
        iw = index[w]
        rows.extend([iv, iw, iv, iw])
        cols.extend([iv, iw, iw, iv])
        vals.extend([wm, wm, -wm, -wm])
        duv = pos[v] - pos[w]
        be = cot * (bfx * duv[:, 0] + bfy * duv[:, 1])
        np.add.at(rhs, iv, -be)
        np.add.at(rhs, iw, be)
    L = sp.coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv)).tocsr()
    return IntegrationSystem(L, rhs, verts.astype(np.int64), index, cam)


def solve(system: IntegrationSystem, tol: float = 1e-8,
          max_iter: int | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Jacobi-preconditioned CG on the mean-zero subspace.

    Returns (z, info); a failed run returns the best iterate with
    info.converged False rather than raising.
    """
    L = system.L
    n = L.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    b = system.rhs - np.mean(system.rhs)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(True, 0, 0.0)
    d = L.diagonal()
    d = np.where(d > 1e-300, d, 1.0)

    x = np.zeros(n)
    r = b.copy()
    z = r / d
    z -= np.mean(z)
    p = z.copy()
    rz = float(r @ z)
    best_x = x.copy()
    best_res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Ap = L @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= tol:
            break
        z = r / d
        z -= np.mean(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    converged = best_res <= tol
    zed = best_x - np.mean(best_x)
    return zed, SolveInfo(converged, it, best_res)


@dataclass
class DepthMesh:
    """Screen mesh plus one solved depth per live vertex."""

    mesh: ScreenMesh
    z: np.ndarray                # per compact vertex (matches vertex_ids)
    vertex_ids: np.ndarray
    cam: Camera
    pixel_pitch: float = 1.0

    def positions3d(self) -> np.ndarray:
        uv = self.mesh.v_pos[self.vertex_ids]
        if self.cam.is_perspective:
            depth = np.exp(self.z)
            g = cam_mod.unnormalized_ray(self.cam, uv)
            return depth[:, None] * g
        s = self.pixel_pitch
        return np.column_stack([uv[:, 0] * s, uv[:, 1] * s, self.z * s])

    def faces_compact(self) -> np.ndarray:
        remap = np.full(len(self.mesh.v_out), -1, dtype=np.int64)
        remap[self.vertex_ids] = np.arange(len(self.vertex_ids))
        return remap[self.mesh.faces_array()]

    def write_obj(self, path):
        xyz = self.positions3d()
        faces = self.faces_compact() + 1
        with open(path, "w") as fh:
            fh.write("# normint surface\n")
            for p in xyz:
                fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
            for f in faces:
                fh.write(f"f {f[0]} {f[1]} {f[2]}\n")

    def write_depth_csv(self, path):
        with open(path, "w") as fh:
            fh.write("vertex,u,v,z\n")
            for vid, zz in zip(self.vertex_ids, self.z):
                u, v = self.mesh.v_pos[vid]
                fh.write(f"{vid},{u:.9g},{v:.9g},{zz:.9g}\n")


def unproject(mesh: ScreenMesh, z: np.ndarray, cam: Camera,
              vertex_ids=None, pixel_pitch: float = 1.0) -> DepthMesh:
    if vertex_ids is None:
        vertex_ids = mesh.alive_vertices().astype(np.int64)
    return DepthMesh(mesh, np.asarray(z, dtype=np.float64),
                     np.asarray(vertex_ids, dtype=np.int64), cam, pixel_pitch)


def integrate_mesh(mesh: ScreenMesh, nm: NormalMap, cam: Camera,
                   tol: float = 1e-8):
    """assemble + solve + unproject in one call."""
    system = assemble(mesh, nm, cam)
    z, info = solve(system, tol=tol)
    return unproject(mesh, z, cam, system.vertex_ids), info
