"""Screen-space triangle mesh on a half-edge structure backed by flat arrays.

Connectivity lives in parallel int32 arrays (to-vertex convention); per-face
photometric aggregates (pixel bins, face normal, Jacobian-derived areas,
metric sums) live in parallel float arrays so the numba kernels can chew on
them directly.  Faces are oriented counter-clockwise in (u, v) coordinates,
meaning positive signed area; boundary halfedges carry face id -1 and form
the boundary loops.  For boundary vertices, ``v_out`` always references the
outgoing boundary halfedge.

Local edits (collapse / flip / move) preserve the covered region: collapses
relocate the merged vertex inside the kernel of its link polygon, boundary
vertices only ever move or vanish along straight boundary runs, so the union
of faces -- and with it the set of covered pixel centers -- is invariant.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import (
    BoundaryEdge,
    BoundaryRuleViolation,
    DegenerateFace,
    EmptyMask,
    InversionRejected,
    LinkConditionViolation,
    NonConvexQuad,
)
from .normalmap import NormalMap

EPS_AREA = K.EPS_AREA

_STATUS_ERR = {
    K.ERR_LINK: LinkConditionViolation,
    K.ERR_INVERT: InversionRejected,
    K.ERR_BOUNDARY: BoundaryRuleViolation,
    K.ERR_DEAD: LinkConditionViolation,
    K.ERR_CONVEX: NonConvexQuad,
}


class ScreenMesh:
    def __init__(self, points, faces, width, height, _twin=None):
        points = np.ascontiguousarray(points, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        self.width = int(width)
        self.height = int(height)
        self._build(points, faces, twin=_twin)
        self._alloc_face_data()
        self.initial_total_area = float(np.sum(self.f_A2[self.f_alive]))

        # Pixel binding, filled in by the rasterizer.
        self.pix_owner = np.full(self.width * self.height, -1, dtype=np.int32)
        self.nm: NormalMap | None = None
        self.cam = None
        self.lam = 0.0
        self.rays = None

        # Vertex quadrics and per-vertex screen caches (lazy).
        self.QA = None
        self.Qb = None
        self.Qc = None
        self.VC = None
        self.VJ = None

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    def _build(self, points, faces, twin=None):
        nv = len(points)
        nf = len(faces)
        if nf == 0:
            raise EmptyMask("mesh needs at least one face")
        hfrom = faces.reshape(-1)
        hto = faces[:, [1, 2, 0]].reshape(-1)
        nh_int = 3 * nf
        idx = np.arange(nh_int, dtype=np.int64)
        he_next = (idx // 3) * 3 + (idx + 1) % 3

        if twin is None:
            keys = hfrom * (nv + 1) + hto
            rkeys = hto * (nv + 1) + hfrom
            order = np.argsort(keys, kind="stable")
            sorted_keys = keys[order]
            if nh_int > 1 and np.any(sorted_keys[1:] == sorted_keys[:-1]):
                raise ValueError("non-manifold input: duplicated directed edge")
            pos = np.searchsorted(sorted_keys, rkeys)
            pos_c = np.minimum(pos, nh_int - 1)
            found = sorted_keys[pos_c] == rkeys
            twin = np.where(found, order[pos_c], -1)

        unmatched = np.where(twin < 0)[0]
        nb = len(unmatched)
        nh = nh_int + nb
        he_to = np.concatenate([hto, hfrom[unmatched]]).astype(np.int32)
        he_twin = np.empty(nh, dtype=np.int32)
        he_twin[:nh_int] = twin
        bids = np.arange(nh_int, nh, dtype=np.int32)
        he_twin[unmatched] = bids
        he_twin[nh_int:] = unmatched
        he_face = np.empty(nh, dtype=np.int32)
        he_face[:nh_int] = (idx // 3).astype(np.int32)
        he_face[nh_int:] = -1
        he_next_full = np.empty(nh, dtype=np.int32)
        he_next_full[:nh_int] = he_next

        # Chain boundary loops fan-by-fan: walk around the head vertex of
        # each boundary halfedge until the fan's unmatched predecessor is
        # found.  This keeps bowtie (two-fan) vertices consistent.
        b_of_inner = np.full(nh_int, -1, dtype=np.int32)
        b_of_inner[unmatched] = bids
        for i in range(nb):
            b = nh_int + i
            m = unmatched[i]          # interior halfedge p -> q of this edge
            e = m
            for _ in range(K.MAX_RING + 1):
                pe = he_next[he_next[e]]   # halfedge of e's face ending at p
                te = twin[pe]
                if te < 0:
                    he_next_full[b] = b_of_inner[pe]
                    break
                e = te
            else:
                raise ValueError("non-manifold vertex fan while chaining boundary")

        he_prev = np.empty(nh, dtype=np.int32)
        he_prev[he_next_full] = np.arange(nh, dtype=np.int32)

        v_out = np.full(nv, -1, dtype=np.int32)
        v_out[hfrom] = np.arange(nh_int, dtype=np.int32)
        v_bnd = np.zeros(nv, dtype=bool)
        bfrom = he_to[he_twin[bids]]
        v_bnd[bfrom] = True
        v_out[bfrom] = bids          # boundary-canonical outgoing halfedge

        self.v_pos = points.copy()
        self.v_out = v_out
        self.v_alive = v_out >= 0
        self.v_bnd = v_bnd
        self.he_to = he_to
        self.he_next = he_next_full
        self.he_prev = he_prev
        self.he_twin = he_twin
        self.he_face = he_face
        self.he_alive = np.ones(nh, dtype=bool)
        self.he_stamp = np.zeros(nh, dtype=np.int32)
        self.f_he = (3 * np.arange(nf, dtype=np.int32))
        self.f_alive = np.ones(nf, dtype=bool)

        self._split_bowties()
        self._n_v_alive = int(np.count_nonzero(self.v_alive))
        self._n_f_alive = nf

    def _split_bowties(self):
        """Duplicate vertices whose outgoing halfedges form several fans.

        Pixel masks can pinch at a corner shared by two diagonal pixels;
        duplicating the shared corner (same position) restores manifoldness
        without changing geometry.
        """
        # A pinched vertex of an embedded mesh carries one outgoing boundary
        # halfedge per fan; a single one everywhere means no bowties and the
        # orbit labelling below can be skipped.
        bids = np.where(self.he_face < 0)[0]
        bfrom = self.he_to[self.he_twin[bids]]
        if len(bfrom) == 0 or np.bincount(bfrom).max() <= 1:
            return
        nh = len(self.he_to)
        rot = self.he_next[self.he_twin[np.arange(nh)]]
        # Cycle representatives by pointer doubling.
        rep = np.arange(nh, dtype=np.int64)
        jump = rot.astype(np.int64)
        for _ in range(64):
            new_rep = np.minimum(rep, rep[jump])
            jump = jump[jump]
            if np.array_equal(new_rep, rep):
                break
            rep = new_rep
        hfrom = self.he_to[self.he_twin]
        # Count distinct orbit reps per source vertex.
        order = np.lexsort((rep, hfrom))
        sf = hfrom[order]
        sr = rep[order]
        newv = (sf != np.roll(sf, 1)) | (sr != np.roll(sr, 1))
        if len(order):
            newv[0] = True
        grp_first = np.where(newv)[0]
        grp_vertex = sf[grp_first]
        counts = np.bincount(grp_vertex, minlength=len(self.v_out))
        multi = np.where(counts > 1)[0]
        if len(multi) == 0:
            return
        extra_pos = []
        for v in multi:
            sel = np.where(hfrom == v)[0]
            reps = rep[sel]
            keep = rep[self.v_out[v]]
            for r in np.unique(reps):
                if r == keep:
                    continue
                orbit = sel[reps == r]
                new_id = len(self.v_out)
                extra_pos.append(self.v_pos[v].copy())
                self.he_to[self.he_twin[orbit]] = new_id
                bnd = orbit[self.he_face[orbit] < 0]
                self._append_vertex_slot(
                    bool(len(bnd)), np.int32(bnd[0] if len(bnd) else orbit[0]))
        if extra_pos:
            self.v_pos = np.vstack([self.v_pos, np.array(extra_pos)])

    def _append_vertex_slot(self, is_bnd, out_he):
        self.v_out = np.append(self.v_out, np.int32(out_he))
        self.v_alive = np.append(self.v_alive, True)
        self.v_bnd = np.append(self.v_bnd, is_bnd)

    def _alloc_face_data(self):
        nf = len(self.f_he)
        self.f_state = np.full(nf, K.STATE_DIRTY, dtype=np.uint8)
        self.f_normal = np.zeros((nf, 3))
        self.f_normal[:, 2] = 1.0
        self.f_A2 = self._areas_all()
        if np.any(self.f_A2[self.f_alive] <= EPS_AREA):
            raise DegenerateFace("input face with non-positive area")
        self.f_A3 = self.f_A2.copy()
        self.f_npix = np.zeros(nf, dtype=np.int32)
        self.f_nsum = np.zeros((nf, 3))
        self.f_S2 = np.zeros((nf, 6))
        self.f_q1 = np.zeros((nf, 3))
        self.f_c0 = np.zeros(nf)
        self.f_msum = np.zeros(nf)
        self.f_bsum = np.zeros((nf, 2))

    def _areas_all(self):
        a, b, c = self.face_corner_ids()
        pa = self.v_pos[a]
        pb = self.v_pos[b]
        pc = self.v_pos[c]
        return 0.5 * ((pb[:, 0] - pa[:, 0]) * (pc[:, 1] - pa[:, 1])
                      - (pb[:, 1] - pa[:, 1]) * (pc[:, 0] - pa[:, 0]))

    @classmethod
    def from_mask(cls, nm: NormalMap) -> "ScreenMesh":
        """Two triangles per foreground pixel, vertices at pixel corners.

        Each pixel square is split along its (i, j) -> (i+1, j+1) diagonal.
        The pixel center lies exactly on that diagonal and the rasterizer
        breaks the tie toward the lower face id, so the pair is emitted in a
        checkerboard order: this alternates which triangle of the quad owns
        the center, cancelling the sub-pixel offset between sample positions
        and face centroids that would otherwise bias the integration like a
        uniform image translation.
        """
        if nm.foreground_count() == 0:
            raise EmptyMask("mask has no foreground pixels")
        h, w = nm.mask.shape
        jj, ii = np.nonzero(nm.mask)
        corner = lambda ci, cj: (cj * (w + 1) + ci)
        a = corner(ii, jj)
        b = corner(ii + 1, jj)
        c = corner(ii + 1, jj + 1)
        d = corner(ii, jj + 1)
        lower = np.stack([a, b, c], axis=1)       # below-right of the diagonal
        upper = np.stack([a, c, d], axis=1)       # above-left of the diagonal
        odd = ((ii + jj) & 1).astype(np.int64)
        npx = len(ii)
        faces = np.empty((2 * npx, 3), dtype=np.int64)
        oddb = odd.astype(bool)
        faces[0::2] = np.where(oddb[:, None], upper, lower)
        faces[1::2] = np.where(oddb[:, None], lower, upper)
        # Compact the used corner-grid ids via a flag array (faster than
        # np.unique on multi-million entry meshes).
        flat = faces.reshape(-1)
        used_mask = np.zeros((w + 1) * (h + 1), dtype=bool)
        used_mask[flat] = True
        remap = np.cumsum(used_mask, dtype=np.int64) - 1
        used = np.nonzero(used_mask)[0]
        faces = remap[flat].reshape(-1, 3)
        pts = np.stack([used % (w + 1), used // (w + 1)], axis=1).astype(np.float64)

        # Grid connectivity is known analytically; skip the generic sort-
        # based twin matching.  Per pixel: face L = (A, B, C) carries the
        # bottom, right and diagonal halfedges, U = (A, C, D) the diagonal,
        # top and left ones.
        pm = np.full(h * w, -1, dtype=np.int64)
        pm[jj * w + ii] = np.arange(npx)
        fl = 2 * np.arange(npx) + odd
        fu = 2 * np.arange(npx) + 1 - odd
        twin = np.full(6 * npx, -1, dtype=np.int64)
        twin[3 * fl + 2] = 3 * fu
        twin[3 * fu] = 3 * fl + 2
        below = np.where(jj > 0, pm[(jj - 1) * w + ii], -1)
        hasb = below >= 0
        fu_nb = 2 * below + odd          # neighbor parity is 1 - odd
        twin[3 * fl[hasb]] = 3 * fu_nb[hasb] + 1
        twin[3 * fu_nb[hasb] + 1] = 3 * fl[hasb]
        left = np.where(ii > 0, pm[jj * w + np.maximum(ii - 1, 0)], -1)
        hasl = left >= 0
        fl_nb = 2 * left + (1 - odd)
        twin[3 * fu[hasl] + 2] = 3 * fl_nb[hasl] + 1
        twin[3 * fl_nb[hasl] + 1] = 3 * fu[hasl] + 2
        return cls(pts, faces, w, h, _twin=twin)

    @classmethod
    def from_faces(cls, points, faces, width=None, height=None) -> "ScreenMesh":
        pts = np.asarray(points, dtype=np.float64)
        if width is None:
            width = int(np.ceil(pts[:, 0].max()))
        if height is None:
            height = int(np.ceil(pts[:, 1].max()))
        return cls(pts, faces, max(width, 1), max(height, 1))

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self._n_v_alive

    @property
    def n_faces(self) -> int:
        return self._n_f_alive

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.he_alive)) // 2

    def face_corner_ids(self, face_ids=None):
        f_he = self.f_he if face_ids is None else self.f_he[face_ids]
        a = self.he_to[f_he]
        b = self.he_to[self.he_next[f_he]]
        c = self.he_to[self.he_next[self.he_next[f_he]]]
        return a, b, c

    def alive_faces(self):
        return np.where(self.f_alive)[0].astype(np.int32)

    def alive_vertices(self):
        return np.where(self.v_alive)[0].astype(np.int32)

    def faces_array(self):
        """(F_alive, 3) vertex ids, in ascending face id order."""
        sel = self.alive_faces()
        a, b, c = self.face_corner_ids(sel)
        return np.stack([a, b, c], axis=1)

    def halfedge_from_to(self, v: int, w: int) -> int:
        h0 = int(self.v_out[v])
        h = h0
        for _ in range(K.MAX_RING + 1):
            if self.he_to[h] == w:
                return h
            h = int(self.he_next[self.he_twin[h]])
            if h == h0:
                return -1
        return -1

    def ring_vertices(self, v: int):
        out = np.empty(K.MAX_RING, dtype=np.int32)
        n = K._ring_neighbors(np.int64(v), self.v_out, self.he_to,
                              self.he_next, self.he_twin, out)
        if n < 0:
            raise ValueError(f"vertex {v} ring exceeds {K.MAX_RING}")
        return out[:n].copy()

    def vertex_faces(self, v: int):
        faces = []
        h0 = int(self.v_out[v])
        h = h0
        for _ in range(K.MAX_RING + 1):
            f = int(self.he_face[h])
            if f >= 0 and self.f_alive[f]:
                faces.append(f)
            h = int(self.he_next[self.he_twin[h]])
            if h == h0:
                break
        return faces

    def is_boundary_vertex(self, v: int) -> bool:
        return bool(self.v_bnd[v])

    def is_boundary_edge(self, h: int) -> bool:
        return self.he_face[h] < 0 or self.he_face[self.he_twin[h]] < 0

    def edge_canonical(self, h: int) -> int:
        t = int(self.he_twin[h])
        return h if h < t else t

    def interior_edges(self):
        """Canonical halfedge ids of all live interior edges, ascending."""
        h = np.where(self.he_alive)[0]
        h = h[h < self.he_twin[h]]
        inter = (self.he_face[h] >= 0) & (self.he_face[self.he_twin[h]] >= 0)
        return h[inter].astype(np.int32)

    def face_pixels(self, f: int):
        """Flat pixel ids currently binned to face f."""
        return np.where(self.pix_owner == f)[0]

    def face_centroids(self, face_ids):
        a, b, c = self.face_corner_ids(face_ids)
        return (self.v_pos[a] + self.v_pos[b] + self.v_pos[c]) / 3.0

    def ensure_quadric_arrays(self):
        nv = len(self.v_out)
        if self.QA is None or len(self.QA) != nv:
            self.QA = np.zeros((nv, 6))
            self.Qb = np.zeros((nv, 3))
            self.Qc = np.zeros(nv)
            self.VC = np.zeros((nv, 5))
            self.VJ = np.zeros((nv, 6))

    # ------------------------------------------------------------------
    # Local edits
    # ------------------------------------------------------------------

    def _conn_args(self):
        return (self.he_to, self.he_next, self.he_prev, self.he_twin,
                self.he_face, self.he_alive)

    def collapse(self, edge, new_pos) -> int:
        """Contract edge (v, w) into a single vertex at ``new_pos``.

        ``edge`` is a halfedge id or a (v, w) pair.  Raises a
        MeshEditRejected subclass and leaves the mesh untouched when the
        link condition, inversion guard or boundary policy fails.  Returns
        the id of the surviving vertex.
        """
        h = self._resolve_edge(edge)
        if self.he_face[h] < 0:
            h = int(self.he_twin[h])
        v = int(self.he_to[self.he_twin[h]])
        w = int(self.he_to[h])
        new_pos = np.asarray(new_pos, dtype=np.float64)
        px, py = float(new_pos[0]), float(new_pos[1])
        if px == self.v_pos[v, 0] and py == self.v_pos[v, 1]:
            t = 0.0
        elif px == self.v_pos[w, 0] and py == self.v_pos[w, 1]:
            t = 1.0
        else:
            t = 0.5
        if getattr(self, "_v_mark", None) is None or \
                len(self._v_mark) != len(self.v_out):
            self._v_mark = np.zeros(len(self.v_out), dtype=np.int64)
            self._mark_token = 0
        self._mark_token += 1
        status = K._collapse_check(
            np.int64(h), t, px, py, *self._conn_args(), self.v_out,
            self.v_pos, self.v_alive, self.v_bnd, self.f_he, self.f_alive,
            EPS_AREA, self._v_mark, np.int64(self._mark_token))
        if status != K.OK:
            raise _STATUS_ERR[status](f"collapse ({v},{w}) refused")
        ring = np.empty(K.MAX_RING, dtype=np.int32)
        boundary = self.he_face[self.he_twin[h]] < 0
        merged, _ = K._collapse_apply(
            np.int64(h), px, py, *self._conn_args(), self.v_out, self.v_pos,
            self.v_alive, self.v_bnd, self.f_he, self.f_alive, self.f_state,
            self.f_normal, self.f_A2, self.f_A3, self.f_npix, ring,
            np.zeros((0, 3)))
        self._n_v_alive -= 1
        self._n_f_alive -= 1 if boundary else 2
        return int(merged)

    def flip(self, edge):
        """Replace the diagonal of the two triangles adjacent to ``edge``."""
        h = self._resolve_edge(edge)
        if self.is_boundary_edge(h):
            raise BoundaryEdge("cannot flip a boundary edge")
        status = K._flip_check(np.int64(h), self.he_to, self.he_next,
                               self.he_twin, self.he_face, self.he_alive,
                               self.v_out, self.v_pos, EPS_AREA)
        if status != K.OK:
            raise _STATUS_ERR[status](f"flip of halfedge {h} refused")
        f1 = int(self.he_face[h])
        f2 = int(self.he_face[self.he_twin[h]])
        th = int(self.he_twin[h])
        a = int(self.he_to[th])
        c = int(self.he_to[h])
        b = int(self.he_to[self.he_next[h]])
        d = int(self.he_to[self.he_next[th]])
        K._flip_apply(np.int64(h), self.he_to, self.he_next, self.he_prev,
                      self.he_twin, self.he_face, self.v_out, self.f_he)
        if self.nm is not None:
            cxs = np.array([self.v_pos[a, 0], self.v_pos[d, 0],
                            self.v_pos[c, 0], self.v_pos[b, 0]])
            cys = np.array([self.v_pos[a, 1], self.v_pos[d, 1],
                            self.v_pos[c, 1], self.v_pos[b, 1]])
            K._redistribute_quad_pixels(f1, f2, np.int64(d), np.int64(b),
                                        self.v_pos, self.pix_owner, cxs, cys,
                                        self.width, self.height)
            for f in (f1, f2):
                self._refresh_face(f)
        else:
            self.f_state[f1] = K.STATE_DIRTY
            self.f_state[f2] = K.STATE_DIRTY

    def move_vertex(self, v: int, du):
        """Displace a vertex; the move is halved (up to 5 times) against
        face inversion and refused if still invalid.  Boundary vertices are
        restricted to sliding along straight boundary runs."""
        du = np.asarray(du, dtype=np.float64)
        if du[0] == 0.0 and du[1] == 0.0:
            return
        if self.v_bnd[v]:
            du = self._project_boundary_motion(v, du)
            if du is None or (du[0] == 0.0 and du[1] == 0.0):
                return
        pos = self.v_pos[v].copy()
        step = du.copy()
        for _ in range(6):
            cand = pos + step
            if self._star_valid(v, cand):
                self.v_pos[v] = cand
                for f in self.vertex_faces(v):
                    ratio = self.f_A3[f] / self.f_A2[f]
                    a2 = K._face_area2(np.int64(f), self.f_he, self.he_to,
                                       self.he_next, self.v_pos)
                    self.f_A2[f] = a2
                    self.f_A3[f] = ratio * a2
                    self.f_state[f] = K.STATE_DIRTY
                return
            step = step * 0.5
        raise InversionRejected(f"vertex {v} displacement inverts its star")

    def _project_boundary_motion(self, v, du):
        p, q = K._boundary_neighbors(np.int64(v), self.v_out, self.he_to,
                                     self.he_prev, self.he_twin, self.he_face)
        if p < 0:
            return None
        a = self.v_pos[v] - self.v_pos[p]
        b = self.v_pos[q] - self.v_pos[v]
        cross = a[0] * b[1] - a[1] * b[0]
        if abs(cross) > K.EPS_COLINEAR or np.dot(a, b) <= 0:
            return None          # corner vertex: pinned
        d = self.v_pos[q] - self.v_pos[p]
        d = d / np.linalg.norm(d)
        t = float(np.dot(du, d))
        # Stay strictly between the boundary neighbors.
        lo = -float(np.dot(self.v_pos[v] - self.v_pos[p], d)) + 1e-9
        hi = float(np.dot(self.v_pos[q] - self.v_pos[v], d)) - 1e-9
        t = min(max(t, lo), hi)
        return t * d

    def _star_valid(self, v, pos):
        h0 = int(self.v_out[v])
        h = h0
        for _ in range(K.MAX_RING + 1):
            f = int(self.he_face[h])
            if f >= 0 and self.f_alive[f]:
                a0 = int(self.he_to[h])
                a1 = int(self.he_to[self.he_next[h]])
                ar = 0.5 * K._orient2d(pos[0], pos[1],
                                       self.v_pos[a0, 0], self.v_pos[a0, 1],
                                       self.v_pos[a1, 0], self.v_pos[a1, 1])
                if ar <= EPS_AREA:
                    return False
            h = int(self.he_next[self.he_twin[h]])
            if h == h0:
                break
        return True

    def _refresh_face(self, f):
        K._refresh_face_from_pixels(
            np.int64(f), self.f_he, self.he_to, self.he_next, self.he_twin,
            self.he_face, self.f_alive, self.v_pos, self.f_normal, self.f_A2,
            self.f_A3, self.f_npix, self.f_nsum, self.f_S2, self.f_q1,
            self.f_c0, self.f_msum, self.f_bsum, self.pix_owner,
            self.nm.flat_normals(), self.rays, self.width, self.height,
            self.lam, self.cam.kind, self.cam.fx, self.cam.fy,
            self.cam.cx, self.cam.cy)
        self.f_state[f] = K.STATE_CLEAN

    def _resolve_edge(self, edge) -> int:
        if isinstance(edge, tuple):
            v, w = edge
            h = self.halfedge_from_to(int(v), int(w))
            if h < 0:
                raise ValueError(f"no edge between {v} and {w}")
            return h
        h = int(edge)
        if not self.he_alive[h]:
            raise ValueError(f"halfedge {h} is dead")
        return h

    # ------------------------------------------------------------------
    # Audit
    # ------------------------------------------------------------------

    def audit(self, check_area=True, check_bins=False):
        """Validate every structural invariant; raises AssertionError."""
        alive_h = np.where(self.he_alive)[0]
        for h in alive_h:
            t = self.he_twin[h]
            assert self.he_alive[t], f"halfedge {h} has dead twin"
            assert self.he_twin[t] == h, f"twin involution broken at {h}"
            assert self.he_next[self.he_prev[h]] == h, f"prev/next broken at {h}"
            f = self.he_face[h]
            if f >= 0:
                assert self.f_alive[f], f"halfedge {h} in dead face"
        for f in np.where(self.f_alive)[0]:
            h = self.f_he[f]
            assert self.he_alive[h] and self.he_face[h] == f
            h2 = self.he_next[h]
            h3 = self.he_next[h2]
            assert self.he_next[h3] == h, f"face {f} cycle not length 3"
            assert self.he_face[h2] == f and self.he_face[h3] == f
            ar = K._face_area2(np.int64(f), self.f_he, self.he_to,
                               self.he_next, self.v_pos)
            assert ar > EPS_AREA, f"face {f} area {ar}"
        # Vertex fans: a single rotation orbit through v_out, and boundary
        # canonical halfedges on boundary vertices.
        seen = np.zeros(len(self.he_to), dtype=bool)
        for v in np.where(self.v_alive)[0]:
            h0 = self.v_out[v]
            assert self.he_alive[h0], f"v_out dead at {v}"
            assert self.he_to[self.he_twin[h0]] == v, f"v_out wrong origin at {v}"
            if self.v_bnd[v]:
                assert self.he_face[h0] < 0, f"boundary vertex {v} non-canonical v_out"
            h = h0
            cnt = 0
            bnd_out = 0
            for _ in range(K.MAX_RING + 1):
                assert not seen[h], f"halfedge {h} in two vertex fans"
                seen[h] = True
                if self.he_face[h] < 0:
                    bnd_out += 1
                cnt += 1
                h = self.he_next[self.he_twin[h]]
                if h == h0:
                    break
            else:
                raise AssertionError(f"vertex {v} fan does not close")
            assert bnd_out == (1 if self.v_bnd[v] else 0), \
                f"vertex {v} boundary halfedge count {bnd_out}"
            assert (0 <= self.v_pos[v, 0] <= self.width
                    and 0 <= self.v_pos[v, 1] <= self.height), \
                f"vertex {v} outside the image rectangle"
        assert seen.sum() == len(alive_h), "orphan halfedges"
        if check_area:
            total = float(np.sum(self.f_A2[self.f_alive]))
            assert abs(total - self.initial_total_area) <= \
                1e-6 * max(self.initial_total_area, 1.0), \
                f"area drifted: {total} vs {self.initial_total_area}"
        if check_bins and self.nm is not None:
            self._audit_bins()

    def _audit_bins(self):
        fg = self.nm.mask.reshape(-1)
        owners = self.pix_owner[fg]
        assert np.all(owners >= 0), "unassigned foreground pixel"
        assert np.all(self.f_alive[owners]), "pixel owned by dead face"
        # Owners contain their pixel centers up to a small slack.
        jj, ii = np.nonzero(self.nm.mask)
        x = ii + 0.5
        y = jj + 0.5
        a, b, c = self.face_corner_ids(owners)
        pa, pb, pc = self.v_pos[a], self.v_pos[b], self.v_pos[c]
        o1 = (pb[:, 0] - pa[:, 0]) * (y - pa[:, 1]) - (pb[:, 1] - pa[:, 1]) * (x - pa[:, 0])
        o2 = (pc[:, 0] - pb[:, 0]) * (y - pb[:, 1]) - (pc[:, 1] - pb[:, 1]) * (x - pb[:, 0])
        o3 = (pa[:, 0] - pc[:, 0]) * (y - pc[:, 1]) - (pa[:, 1] - pc[:, 1]) * (x - pc[:, 0])
        slack = -1e-6
        assert np.all((o1 >= slack) & (o2 >= slack) & (o3 >= slack)), \
            "pixel center escaped its owner face"

    # ------------------------------------------------------------------
    # Debug dumps
    # ------------------------------------------------------------------

    def to_svg(self, path):
        lines = [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {self.width} {self.height}">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        h = np.where(self.he_alive)[0]
        h = h[h < self.he_twin[h]]
        src = self.he_to[self.he_twin[h]]
        dst = self.he_to[h]
        for s, d in zip(src, dst):
            p = self.v_pos[s]
            q = self.v_pos[d]
            lines.append(
                f'<line x1="{p[0]:.3f}" y1="{p[1]:.3f}" x2="{q[0]:.3f}" '
                f'y2="{q[1]:.3f}" stroke="black" stroke-width="0.08"/>')
        lines.append("</svg>\n")
        with open(path, "w") as fh:
            fh.write("\n".join(lines))

    def write_obj_flat(self, path):
        """The 2D mesh as an OBJ with z = 0 (debugging aid)."""
        verts = self.alive_vertices()
        remap = np.full(len(self.v_out), -1, dtype=np.int64)
        remap[verts] = np.arange(len(verts))
        with open(path, "w") as fh:
            for v in verts:
                fh.write(f"v {self.v_pos[v, 0]:.9g} {self.v_pos[v, 1]:.9g} 0\n")
            a, b, c = self.face_corner_ids(self.alive_faces())
            for i in range(len(a)):
                fh.write(f"f {remap[a[i]] + 1} {remap[b[i]] + 1} {remap[c[i]] + 1}\n")
