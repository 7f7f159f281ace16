"""Software rasterizer: bins foreground pixel centers into mesh faces and
maintains the per-face photometric aggregates.

Every foreground pixel center is owned by exactly one face (ties on shared
edges go to the lower face id).  A full pass rebuilds everything; a dirty
pass only reassigns pixels whose owner died or was reshaped, which is exact
because local edits preserve the union of the edited faces.

Per face, one pass accumulates (with p running over the owned pixels,
J the face Jacobian, u_p the pixel center and n_p the pixel normal):

    nsum = sum n_p                       S2 = sum n_p n_p^t
    q1   = sum M_p J u_p                 c0 = sum |J u_p|^2_{M_p}
    msum = sum <r_p, n_p>^2              bsum = sum <r_p, n_p> (n_x, n_y)_p

where M_p = n_p n_p^t + lam I.  Faces smaller than a pixel may own nothing;
they inherit an area-weighted normal from their edge neighbors and fall back
to neighbor metrics where sums are needed.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from . import camera as cam_mod
from .camera import Camera
from .errors import DegenerateFace
from .mesh import ScreenMesh
from .normalmap import NormalMap


def rasterize(mesh: ScreenMesh, nm: NormalMap, cam: Camera,
              lam: float = 1e-5, dirty_only: bool = False) -> None:
    if mesh.nm is not None and mesh.nm is not nm:
        raise ValueError("mesh is bound to a different normal map")
    rebind = mesh.cam != cam or mesh.rays is None
    mesh.nm = nm
    mesh.cam = cam
    mesh.lam = float(lam)
    if rebind:
        mesh.rays = nm.flat_rays(cam)

    fg = nm.mask.reshape(-1)
    owner = mesh.pix_owner
    if dirty_only:
        sel = np.where(mesh.f_alive & (mesh.f_state != K.STATE_CLEAN))[0]
        if len(sel) == 0:
            return
        reset = fg & (owner >= 0)
        reset[reset] = mesh.f_state[owner[reset]] != K.STATE_CLEAN
        owner[reset] = -1
    else:
        sel = np.where(mesh.f_alive)[0]
        owner[fg] = -1
    sel = sel.astype(np.int32)

    K.raster_claim_kernel(sel, mesh.f_he, mesh.he_to, mesh.he_next,
                          mesh.v_pos, mesh.width, mesh.height, fg, owner)
    unclaimed = int(np.count_nonzero(fg & (owner == -1)))
    if unclaimed:
        score = np.full(mesh.width * mesh.height, -np.inf)
        K.raster_fallback_kernel(sel, mesh.f_he, mesh.he_to, mesh.he_next,
                                 mesh.v_pos, mesh.width, mesh.height, fg,
                                 owner, score)

    _aggregate(mesh, nm, cam, sel, fg)
    mesh.f_state[sel] = K.STATE_CLEAN


def _aggregate(mesh: ScreenMesh, nm: NormalMap, cam: Camera, sel, fg):
    nf = len(mesh.f_he)
    owner = mesh.pix_owner
    in_sel = np.zeros(nf, dtype=bool)
    in_sel[sel] = True
    owned = (owner >= 0) & fg
    psel = np.where(owned)[0]
    psel = psel[in_sel[owner[psel]]]
    po = owner[psel]

    normals = nm.flat_normals()
    npx = np.bincount(po, minlength=nf)[sel].astype(np.int32)
    mesh.f_npix[sel] = npx
    n_p = normals[psel]
    for k in range(3):
        mesh.f_nsum[sel, k] = np.bincount(po, weights=n_p[:, k], minlength=nf)[sel]

    # Face normals: direct for pixel-backed faces, propagated from edge
    # neighbors (area-weighted) for empty ones.
    nonempty = sel[npx > 0]
    ns = mesh.f_nsum[nonempty]
    norms = np.linalg.norm(ns, axis=1)
    good = norms > 1e-12
    mesh.f_normal[nonempty[good]] = ns[good] / norms[good][:, None]

    a2 = _areas(mesh, sel)
    if np.any(a2 <= K.EPS_AREA):
        worst = sel[int(np.argmin(a2))]
        raise DegenerateFace(f"face {worst} area {float(np.min(a2)):.3g}")
    mesh.f_A2[sel] = a2

    _assign_face_frames(mesh, cam, nonempty)
    empty = sel[npx == 0]
    resolved = mesh.f_alive.copy()
    resolved[empty] = False
    for _ in range(8):
        if len(empty) == 0:
            break
        nbrs = _face_neighbors(mesh, empty)           # (E, 3)
        ok = (nbrs >= 0) & resolved[np.maximum(nbrs, 0)]
        w = np.where(ok, mesh.f_A3[np.maximum(nbrs, 0)], 0.0)
        acc = np.einsum("ek,ekj->ej", w, mesh.f_normal[np.maximum(nbrs, 0)])
        nn = np.linalg.norm(acc, axis=1)
        done = nn > 1e-12
        if not np.any(done):
            break
        fixed = empty[done]
        mesh.f_normal[fixed] = acc[done] / nn[done][:, None]
        _assign_face_frames(mesh, cam, fixed)
        resolved[fixed] = True
        empty = empty[~done]
    if len(empty):
        # Isolated empty cluster: keep previous normals, refresh areas only.
        _assign_face_frames(mesh, cam, empty)

    _phase2(mesh, nm, cam, sel, psel, po, nf)


def _areas(mesh, face_ids):
    a, b, c = mesh.face_corner_ids(face_ids)
    pa = mesh.v_pos[a]
    pb = mesh.v_pos[b]
    pc = mesh.v_pos[c]
    return 0.5 * ((pb[:, 0] - pa[:, 0]) * (pc[:, 1] - pa[:, 1])
                  - (pb[:, 1] - pa[:, 1]) * (pc[:, 0] - pa[:, 0]))


def _face_neighbors(mesh, face_ids):
    h = mesh.f_he[face_ids]
    n1 = mesh.he_face[mesh.he_twin[h]]
    n2 = mesh.he_face[mesh.he_twin[mesh.he_next[h]]]
    n3 = mesh.he_face[mesh.he_twin[mesh.he_next[mesh.he_next[h]]]]
    return np.stack([n1, n2, n3], axis=1)


def _assign_face_frames(mesh, cam, face_ids):
    if len(face_ids) == 0:
        return
    centroids = mesh.face_centroids(face_ids)
    J = cam_mod.jacobian_from_normal(cam, mesh.f_normal[face_ids], centroids,
                                     clamp=True)
    factor = cam_mod.area_factor(J)
    mesh.f_A3[face_ids] = factor * mesh.f_A2[face_ids]


def _phase2(mesh, nm, cam, sel, psel, po, nf):
    """Jacobian-weighted pixel sums; requires face normals to be final."""
    centroids = mesh.face_centroids(sel)
    J = cam_mod.jacobian_from_normal(cam, mesh.f_normal[sel], centroids,
                                     clamp=True)
    sel_index = np.full(nf, -1, dtype=np.int64)
    sel_index[sel] = np.arange(len(sel))
    mesh.f_S2[sel] = 0.0
    mesh.f_q1[sel] = 0.0
    mesh.f_c0[sel] = 0.0
    mesh.f_msum[sel] = 0.0
    mesh.f_bsum[sel] = 0.0
    K.aggregate_pixels_kernel(
        psel, mesh.pix_owner, nm.flat_normals(), mesh.rays,
        np.ascontiguousarray(J.reshape(len(sel), 6)), sel_index,
        mesh.width, mesh.lam,
        mesh.f_S2, mesh.f_q1, mesh.f_c0, mesh.f_msum, mesh.f_bsum)
