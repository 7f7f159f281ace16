"""Numba kernels: half-edge surgery, decimation queue, flip sweeps, rasterization.

All kernels operate on the flat arrays owned by ScreenMesh.  Connectivity
uses the to-vertex convention: halfedge h runs from ``to[twin[h]]`` to
``to[h]``; boundary halfedges carry face id -1 and are chained into boundary
loops via next/prev.  For boundary vertices, ``v_out`` always stores the
outgoing boundary halfedge, which makes boundary tests O(1).

Status codes shared with the Python layer:
    0 OK, 1 link condition, 2 inversion/thin face, 3 boundary rule,
    4 dead element, 5 non-convex quad.
"""

import math

import numpy as np
from numba import njit

OK = 0
ERR_LINK = 1
ERR_INVERT = 2
ERR_BOUNDARY = 3
ERR_DEAD = 4
ERR_CONVEX = 5

EPS_SLANT = 0.05
EPS_AREA = 1e-6
EPS_COLINEAR = 1e-6
INF_COST = 1e300

STATE_CLEAN = 0
STATE_DIRTY = 1
STATE_DEAD = 2

MODE_THRESHOLD = 0
MODE_VERTEX_TARGET = 1

MAX_RING = 512


# ---------------------------------------------------------------------------
# Scalar geometry
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _orient2d(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True, inline="always")
def _hfrom(he_to, he_twin, h):
    return he_to[he_twin[h]]


@njit(cache=True)
def _face_corners(f, f_he, he_to, he_next):
    h = f_he[f]
    nh = he_next[h]
    return he_to[h], he_to[nh], he_to[he_next[nh]]


@njit(cache=True)
def _face_area2(f, f_he, he_to, he_next, v_pos):
    a, b, c = _face_corners(f, f_he, he_to, he_next)
    return 0.5 * _orient2d(v_pos[a, 0], v_pos[a, 1], v_pos[b, 0], v_pos[b, 1],
                           v_pos[c, 0], v_pos[c, 1])


@njit(cache=True)
def _ray_scalar(kind, fx, fy, cx, cy, ux, uy):
    if kind == 0:
        return 0.0, 0.0, 1.0
    gx = (ux - cx) / fx
    gy = (uy - cy) / fy
    gn = math.sqrt(gx * gx + gy * gy + 1.0)
    return gx / gn, gy / gn, 1.0 / gn


@njit(cache=True, fastmath=True)
def _clamped_jacobian(kind, fx, fy, cx, cy, nx, ny, nz, ux, uy):
    """3x2 tangent Jacobian from a unit normal, slant-clamped toward the ray.

    Returns the six entries (J00, J01, J10, J11, J20, J21), rows = xyz,
    columns = the two screen directions.
    """
    rx, ry, rz = _ray_scalar(kind, fx, fy, cx, cy, ux, uy)
    c = nx * rx + ny * ry + nz * rz
    if c < EPS_SLANT:
        tx = nx - c * rx
        ty = ny - c * ry
        tz = nz - c * rz
        tn = math.sqrt(tx * tx + ty * ty + tz * tz)
        if tn < 1e-12:
            # Normal anti-parallel to the ray: deterministic fallback tangent.
            if abs(rx) <= abs(ry) and abs(rx) <= abs(rz):
                ex, ey, ez = 1.0, 0.0, 0.0
            elif abs(ry) <= abs(rz):
                ex, ey, ez = 0.0, 1.0, 0.0
            else:
                ex, ey, ez = 0.0, 0.0, 1.0
            d = ex * rx + ey * ry + ez * rz
            tx = ex - d * rx
            ty = ey - d * ry
            tz = ez - d * rz
            tn = math.sqrt(tx * tx + ty * ty + tz * tz)
        s = math.sqrt(1.0 - EPS_SLANT * EPS_SLANT)
        nx = EPS_SLANT * rx + s * tx / tn
        ny = EPS_SLANT * ry + s * ty / tn
        nz = EPS_SLANT * rz + s * tz / tn
        c = EPS_SLANT

    if kind == 0:
        return 1.0, 0.0, 0.0, 1.0, -nx / nz, -ny / nz

    gx = (ux - cx) / fx
    gy = (uy - cy) / fy
    gn = math.sqrt(gx * gx + gy * gy + 1.0)
    # Column u: dg = (1/fx, 0, 0)
    dgx = 1.0 / fx
    dot = rx * dgx
    drx = (dgx - rx * dot) / gn
    dry = (-ry * dot) / gn
    drz = (-rz * dot) / gn
    coef = (nx * drx + ny * dry + nz * drz) / c
    j00 = drx - coef * rx
    j10 = dry - coef * ry
    j20 = drz - coef * rz
    # Column v: dg = (0, 1/fy, 0)
    dgy = 1.0 / fy
    dot = ry * dgy
    drx = (-rx * dot) / gn
    dry = (dgy - ry * dot) / gn
    drz = (-rz * dot) / gn
    coef = (nx * drx + ny * dry + nz * drz) / c
    j01 = drx - coef * rx
    j11 = dry - coef * ry
    j21 = drz - coef * rz
    return j00, j01, j10, j11, j20, j21


@njit(cache=True, inline="always")
def _sym3_matvec(m, vx, vy, vz):
    """m is a length-6 view [xx, xy, xz, yy, yz, zz]."""
    return (m[0] * vx + m[1] * vy + m[2] * vz,
            m[1] * vx + m[3] * vy + m[4] * vz,
            m[2] * vx + m[4] * vy + m[5] * vz)


# ---------------------------------------------------------------------------
# Ring traversal helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ring_neighbors(v, v_out, he_to, he_next, he_twin, out):
    """Collect the one-ring neighbor vertices of v into ``out``.

    Returns the count, or -1 when the ring exceeds the buffer (treated as a
    refusal by callers).
    """
    h0 = v_out[v]
    h = h0
    count = 0
    for _ in range(MAX_RING + 1):
        if count >= out.shape[0]:
            return -1
        out[count] = he_to[h]
        count += 1
        h = he_next[he_twin[h]]
        if h == h0:
            return count
    return -1


@njit(cache=True, fastmath=True)
def _vertex_normal(v, v_out, he_to, he_next, he_twin, he_face,
                   f_alive, f_normal, f_A3):
    """Area-weighted average of incident live face normals."""
    nx = 0.0
    ny = 0.0
    nz = 0.0
    h0 = v_out[v]
    h = h0
    for _ in range(MAX_RING + 1):
        f = he_face[h]
        if f >= 0 and f_alive[f]:
            w = f_A3[f]
            nx += w * f_normal[f, 0]
            ny += w * f_normal[f, 1]
            nz += w * f_normal[f, 2]
        h = he_next[he_twin[h]]
        if h == h0:
            break
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nn < 1e-12:
        return 0.0, 0.0, 1.0
    return nx / nn, ny / nn, nz / nn


@njit(cache=True, fastmath=True)
def _cache_from_normal(v, nx, ny, nz, v_pos, QA, Qb, VC, VJ,
                       cam_kind, fx, fy, cx, cy):
    """Fill VC/VJ of v from an already-known vertex normal."""
    j = _clamped_jacobian(cam_kind, fx, fy, cx, cy, nx, ny, nz,
                          v_pos[v, 0], v_pos[v, 1])
    VJ[v, 0] = j[0]
    VJ[v, 1] = j[1]
    VJ[v, 2] = j[2]
    VJ[v, 3] = j[3]
    VJ[v, 4] = j[4]
    VJ[v, 5] = j[5]
    a = QA[v]
    yux, yuy, yuz = _sym3_matvec(a, j[0], j[2], j[4])
    yvx, yvy, yvz = _sym3_matvec(a, j[1], j[3], j[5])
    VC[v, 0] = j[0] * yux + j[2] * yuy + j[4] * yuz
    VC[v, 1] = j[0] * yvx + j[2] * yvy + j[4] * yvz
    VC[v, 2] = j[1] * yvx + j[3] * yvy + j[5] * yvz
    VC[v, 3] = j[0] * Qb[v, 0] + j[2] * Qb[v, 1] + j[4] * Qb[v, 2]
    VC[v, 4] = j[1] * Qb[v, 0] + j[3] * Qb[v, 1] + j[5] * Qb[v, 2]


@njit(cache=True, fastmath=True)
def _cache_from_acc(v, v_nacc, v_pos, QA, Qb, VC, VJ,
                    cam_kind, fx, fy, cx, cy):
    """Cache refresh using the maintained area-weighted normal accumulator."""
    nx = v_nacc[v, 0]
    ny = v_nacc[v, 1]
    nz = v_nacc[v, 2]
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nn < 1e-12:
        nx = 0.0
        ny = 0.0
        nz = 1.0
    else:
        nx /= nn
        ny /= nn
        nz /= nn
    _cache_from_normal(v, nx, ny, nz, v_pos, QA, Qb, VC, VJ,
                       cam_kind, fx, fy, cx, cy)


@njit(cache=True, fastmath=True)
def _vertex_cache_update(v, v_out, v_pos, he_to, he_next, he_twin, he_face,
                         f_alive, f_normal, f_A3, QA, Qb, VC, VJ,
                         cam_kind, fx, fy, cx, cy):
    """Refresh the screen-restricted quadric cache of vertex v.

    VC[v] = (At00, At01, At11, bt0, bt1) with At = J^t A J, bt = J^t b.
    VJ[v] keeps the 3x2 Jacobian so collapses can translate screen motion
    into tangent-space motion.
    """
    nx, ny, nz = _vertex_normal(v, v_out, he_to, he_next, he_twin, he_face,
                                f_alive, f_normal, f_A3)
    j = _clamped_jacobian(cam_kind, fx, fy, cx, cy, nx, ny, nz,
                          v_pos[v, 0], v_pos[v, 1])
    VJ[v, 0] = j[0]
    VJ[v, 1] = j[1]
    VJ[v, 2] = j[2]
    VJ[v, 3] = j[3]
    VJ[v, 4] = j[4]
    VJ[v, 5] = j[5]
    a = QA[v]
    # y_k = A @ J[:, k]
    yux, yuy, yuz = _sym3_matvec(a, j[0], j[2], j[4])
    yvx, yvy, yvz = _sym3_matvec(a, j[1], j[3], j[5])
    VC[v, 0] = j[0] * yux + j[2] * yuy + j[4] * yuz
    VC[v, 1] = j[0] * yvx + j[2] * yvy + j[4] * yvz
    VC[v, 2] = j[1] * yvx + j[3] * yvy + j[5] * yvz
    VC[v, 3] = j[0] * Qb[v, 0] + j[2] * Qb[v, 1] + j[4] * Qb[v, 2]
    VC[v, 4] = j[1] * Qb[v, 0] + j[3] * Qb[v, 1] + j[5] * Qb[v, 2]


@njit(cache=True)
def _boundary_neighbors(x, v_out, he_to, he_prev, he_twin, he_face):
    """Previous and next vertex along the boundary loop through x."""
    hb = v_out[x]
    if he_face[hb] >= 0:
        return -1, -1
    q = he_to[hb]
    hp = he_prev[hb]
    p = he_to[he_twin[hp]]
    return p, q


@njit(cache=True)
def _colinear_removable(x, v_out, v_pos, he_to, he_prev, he_twin, he_face):
    """True when removing boundary vertex x keeps the boundary polyline."""
    p, q = _boundary_neighbors(x, v_out, he_to, he_prev, he_twin, he_face)
    if p < 0:
        return False
    ax = v_pos[x, 0] - v_pos[p, 0]
    ay = v_pos[x, 1] - v_pos[p, 1]
    bx = v_pos[q, 0] - v_pos[x, 0]
    by = v_pos[q, 1] - v_pos[x, 1]
    cross = ax * by - ay * bx
    dot = ax * bx + ay * by
    return abs(cross) <= EPS_COLINEAR and dot > 0.0


# ---------------------------------------------------------------------------
# Collapse cost
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _edge_cost(h, he_to, he_next, he_prev, he_twin, he_face, he_alive,
               v_out, v_pos, v_alive, v_bnd, QcA, VC):
    """Minimal joint screen-quadric value along the edge of halfedge h.

    Returns (cost, t) with the merge point (1-t) u_v + t u_w; t respects the
    boundary rules (merges land on boundary endpoints; boundary edges only
    collapse when the removed vertex lies on a straight boundary run).
    Uncollapsible edges return (INF_COST, 0.5).
    """
    if not he_alive[h]:
        return INF_COST, 0.5
    t_h = he_twin[h]
    v = he_to[t_h]
    w = he_to[h]
    if not (v_alive[v] and v_alive[w]):
        return INF_COST, 0.5
    f1 = he_face[h]
    f2 = he_face[t_h]
    edge_boundary = f1 < 0 or f2 < 0
    vb = v_bnd[v]
    wb = v_bnd[w]
    if (not edge_boundary) and vb and wb:
        return INF_COST, 0.5

    dux = v_pos[w, 0] - v_pos[v, 0]
    duy = v_pos[w, 1] - v_pos[v, 1]
    av = VC[v, 0] * dux * dux + 2.0 * VC[v, 1] * dux * duy + VC[v, 2] * duy * duy
    lv = VC[v, 3] * dux + VC[v, 4] * duy
    aw = VC[w, 0] * dux * dux + 2.0 * VC[w, 1] * dux * duy + VC[w, 2] * duy * duy
    lw = VC[w, 3] * dux + VC[w, 4] * duy
    c0 = QcA[v] + QcA[w]

    # g(t) = av t^2 + 2 lv t + aw (t-1)^2 + 2 lw (t-1) + c0
    if edge_boundary:
        best = INF_COST
        bt = 0.5
        if _colinear_removable(w, v_out, v_pos, he_to, he_prev, he_twin, he_face):
            g0 = aw - 2.0 * lw + c0
            best = g0
            bt = 0.0
        if _colinear_removable(v, v_out, v_pos, he_to, he_prev, he_twin, he_face):
            g1 = av + 2.0 * lv + c0
            if g1 < best:
                best = g1
                bt = 1.0
        if best >= INF_COST:
            return INF_COST, 0.5
        return max(best, 0.0), bt
    if vb:
        return max(aw - 2.0 * lw + c0, 0.0), 0.0
    if wb:
        return max(av + 2.0 * lv + c0, 0.0), 1.0

    den = av + aw
    if den > 1e-300:
        t = (aw - lv - lw) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        g = av * t * t + 2.0 * lv * t + aw * (t - 1.0) * (t - 1.0) \
            + 2.0 * lw * (t - 1.0) + c0
        return max(g, 0.0), t
    # Degenerate quadratic: sample midpoint first (tie-break), then ends.
    gm = 0.25 * av + lv + 0.25 * aw - lw + c0
    best = gm
    bt = 0.5
    g0 = aw - 2.0 * lw + c0
    if g0 < best:
        best = g0
        bt = 0.0
    g1 = av + 2.0 * lv + c0
    if g1 < best:
        best = g1
        bt = 1.0
    return max(best, 0.0), bt


# ---------------------------------------------------------------------------
# Collapse preconditions and surgery
# ---------------------------------------------------------------------------

@njit(cache=True)
def _collapse_check(h, t, px, py, he_to, he_next, he_prev, he_twin, he_face,
                    he_alive, v_out, v_pos, v_alive, v_bnd,
                    f_he, f_alive, eps_area, v_mark, mark_token):
    """Validate collapsing the edge of h into position (px, py).

    ``h`` must be oriented so that he_face[h] >= 0; ``t`` is the merge
    parameter used to recognise endpoint merges exactly.  ``v_mark`` is a
    scratch per-vertex token array; ``mark_token`` must be fresh per call.
    """
    if not he_alive[h]:
        return ERR_DEAD
    th = he_twin[h]
    v = he_to[th]
    w = he_to[h]
    if not (v_alive[v] and v_alive[w]):
        return ERR_DEAD
    f1 = he_face[h]
    f2 = he_face[th]
    if f1 < 0:
        return ERR_DEAD  # caller orients h onto the face side
    edge_boundary = f2 < 0
    vb = v_bnd[v]
    wb = v_bnd[w]

    if edge_boundary:
        if t == 0.0:
            if not _colinear_removable(w, v_out, v_pos, he_to, he_prev,
                                       he_twin, he_face):
                return ERR_BOUNDARY
        elif t == 1.0:
            if not _colinear_removable(v, v_out, v_pos, he_to, he_prev,
                                       he_twin, he_face):
                return ERR_BOUNDARY
        else:
            return ERR_BOUNDARY
        # Refuse collapsing a triangle whose two other edges are also
        # boundary: it would orphan the opposite vertex.
        if he_face[he_twin[he_next[h]]] < 0 and \
           he_face[he_twin[he_prev[h]]] < 0:
            return ERR_LINK
    else:
        if vb and wb:
            return ERR_BOUNDARY
        if vb and t != 0.0:
            return ERR_BOUNDARY
        if wb and t != 1.0:
            return ERR_BOUNDARY

    # Link condition via vertex marking, fused with the inversion test:
    # shared neighbors of v and w must be exactly the opposite vertices,
    # and every surviving incident face must stay positive at (px, py).
    b = he_to[he_next[h]]
    d = -1
    if not edge_boundary:
        d = he_to[he_next[th]]
        if b == d:
            return ERR_LINK
    h0 = v_out[v]
    hh = h0
    steps = 0
    for _ in range(MAX_RING + 1):
        steps += 1
        v_mark[he_to[hh]] = mark_token
        f = he_face[hh]
        if f >= 0 and f != f1 and f != f2:
            a0 = he_to[hh]
            a1 = he_to[he_next[hh]]
            ar = 0.5 * _orient2d(px, py, v_pos[a0, 0], v_pos[a0, 1],
                                 v_pos[a1, 0], v_pos[a1, 1])
            if ar <= eps_area:
                return ERR_INVERT
        hh = he_next[he_twin[hh]]
        if hh == h0:
            break
    if steps > MAX_RING:
        return ERR_LINK
    common = 0
    h0 = v_out[w]
    hh = h0
    steps = 0
    for _ in range(MAX_RING + 1):
        steps += 1
        x = he_to[hh]
        if x != v and v_mark[x] == mark_token:
            if x != b and x != d:
                return ERR_LINK
            common += 1
        f = he_face[hh]
        if f >= 0 and f != f1 and f != f2:
            a0 = he_to[hh]
            a1 = he_to[he_next[hh]]
            ar = 0.5 * _orient2d(px, py, v_pos[a0, 0], v_pos[a0, 1],
                                 v_pos[a1, 0], v_pos[a1, 1])
            if ar <= eps_area:
                return ERR_INVERT
        hh = he_next[he_twin[hh]]
        if hh == h0:
            break
    if steps > MAX_RING:
        return ERR_LINK
    expected = 1 if edge_boundary else 2
    if common != expected:
        return ERR_LINK
    return OK


@njit(cache=True)
def _collapse_apply(h, px, py, he_to, he_next, he_prev, he_twin, he_face,
                    he_alive, v_out, v_pos, v_alive, v_bnd,
                    f_he, f_alive, f_state, f_normal, f_A2, f_A3, f_npix,
                    ring_out, v_nacc):
    """Contract the edge of h (face side) into (px, py).

    The from-vertex of h survives, the to-vertex dies.  Surviving ring faces
    get their screen area refreshed (the area factor is kept) and are marked
    dirty.  ``v_nacc`` is the optional (may be empty) per-vertex accumulator
    of area-weighted face normals, kept consistent through the edit.
    Returns (merged vertex id, ring size); preconditions must have been
    checked.
    """
    th = he_twin[h]
    v = he_to[th]
    w = he_to[h]
    f1 = he_face[h]
    f2 = he_face[th]
    edge_boundary = f2 < 0
    wb = v_bnd[w]
    w_bout = v_out[w]  # boundary-canonical when w is a boundary vertex

    h1 = he_next[h]
    h2 = he_next[h1]
    b = he_to[h1]
    th1 = he_twin[h1]
    th2 = he_twin[h2]
    track = v_nacc.shape[0] > 0
    if track:
        # Dying faces leave their corners' normal accumulators.
        for k in range(3):
            vv = v if k == 0 else (w if k == 1 else b)
            v_nacc[vv, 0] -= f_A3[f1] * f_normal[f1, 0]
            v_nacc[vv, 1] -= f_A3[f1] * f_normal[f1, 1]
            v_nacc[vv, 2] -= f_A3[f1] * f_normal[f1, 2]

    t1 = -1
    t2 = -1
    d = -1
    tt1 = -1
    tt2 = -1
    if not edge_boundary:
        t1 = he_next[th]
        t2 = he_next[t1]
        d = he_to[t1]
        tt1 = he_twin[t1]
        tt2 = he_twin[t2]
        if track:
            for k in range(3):
                vv = w if k == 0 else (v if k == 1 else d)
                v_nacc[vv, 0] -= f_A3[f2] * f_normal[f2, 0]
                v_nacc[vv, 1] -= f_A3[f2] * f_normal[f2, 1]
                v_nacc[vv, 2] -= f_A3[f2] * f_normal[f2, 2]

    # 1. Redirect all halfedges pointing at w to point at v.
    hh = w_bout
    for _ in range(MAX_RING + 1):
        he_to[he_twin[hh]] = v
        hh = he_next[he_twin[hh]]
        if hh == w_bout:
            break

    # 2. Glue the two edges of f1 into one.
    he_twin[th1] = th2
    he_twin[th2] = th1

    # 3. Other side: glue f2's edges, or shorten the boundary loop.
    nb = -1
    if not edge_boundary:
        he_twin[tt1] = tt2
        he_twin[tt2] = tt1
    else:
        pb = he_prev[th]
        nb = he_next[th]
        he_next[pb] = nb
        he_prev[nb] = pb

    # 4. Retire dead elements.
    he_alive[h] = False
    he_alive[h1] = False
    he_alive[h2] = False
    he_alive[th] = False
    f_alive[f1] = False
    f_state[f1] = STATE_DEAD
    f_npix[f1] = 0
    if not edge_boundary:
        he_alive[t1] = False
        he_alive[t2] = False
        f_alive[f2] = False
        f_state[f2] = STATE_DEAD
        f_npix[f2] = 0
    v_alive[w] = False

    # 5. Outgoing-halfedge fixes (boundary vertices keep a boundary halfedge).
    if v_out[b] == h2:
        v_out[b] = th1
    if d >= 0 and v_out[d] == t2:
        v_out[d] = tt1
    if edge_boundary:
        v_out[v] = nb
    elif wb:
        v_out[v] = w_bout
        v_bnd[v] = True
    elif v_out[v] == h or v_out[v] == t1:
        v_out[v] = th2

    # 6. Merge position.
    v_pos[v, 0] = px
    v_pos[v, 1] = py

    # 7. Refresh ring faces and collect ring vertices.
    h0 = v_out[v]
    hh = h0
    count = 0
    for _ in range(MAX_RING + 1):
        if count < ring_out.shape[0]:
            ring_out[count] = he_to[hh]
            count += 1
        f = he_face[hh]
        if f >= 0 and f_alive[f]:
            ratio = f_A3[f] / f_A2[f]
            a2 = _face_area2(f, f_he, he_to, he_next, v_pos)
            f_A2[f] = a2
            a3_new = ratio * a2
            if track:
                delta = a3_new - f_A3[f]
                c0 = he_to[hh]
                c1 = he_to[he_next[hh]]
                v_nacc[v, 0] += delta * f_normal[f, 0]
                v_nacc[v, 1] += delta * f_normal[f, 1]
                v_nacc[v, 2] += delta * f_normal[f, 2]
                v_nacc[c0, 0] += delta * f_normal[f, 0]
                v_nacc[c0, 1] += delta * f_normal[f, 1]
                v_nacc[c0, 2] += delta * f_normal[f, 2]
                v_nacc[c1, 0] += delta * f_normal[f, 0]
                v_nacc[c1, 1] += delta * f_normal[f, 1]
                v_nacc[c1, 2] += delta * f_normal[f, 2]
            f_A3[f] = a3_new
            f_state[f] = STATE_DIRTY
        hh = he_next[he_twin[hh]]
        if hh == h0:
            break
    return v, count


# ---------------------------------------------------------------------------
# Flip test and surgery
# ---------------------------------------------------------------------------

@njit(cache=True)
def _face_mean_metric(f, he_next, he_twin, he_face, f_he, f_alive,
                      f_normal, f_npix, f_S2, lam, out6):
    """Mean per-pixel metric of a face; neighbor average for empty bins."""
    if f_npix[f] > 0:
        inv = 1.0 / f_npix[f]
        for k in range(6):
            out6[k] = f_S2[f, k] * inv
    else:
        cnt = 0
        for k in range(6):
            out6[k] = 0.0
        h0 = f_he[f]
        hh = h0
        for _ in range(3):
            g = he_face[he_twin[hh]]
            if g >= 0 and f_alive[g] and f_npix[g] > 0:
                inv = 1.0 / f_npix[g]
                for k in range(6):
                    out6[k] += f_S2[g, k] * inv
                cnt += 1
            hh = he_next[hh]
        if cnt > 0:
            for k in range(6):
                out6[k] /= cnt
        else:
            nx = f_normal[f, 0]
            ny = f_normal[f, 1]
            nz = f_normal[f, 2]
            out6[0] = nx * nx
            out6[1] = nx * ny
            out6[2] = nx * nz
            out6[3] = ny * ny
            out6[4] = ny * nz
            out6[5] = nz * nz
    out6[0] += lam
    out6[3] += lam
    out6[5] += lam


@njit(cache=True, fastmath=True)
def _flip_wanted(h, he_to, he_next, he_twin, he_face, f_he, f_alive,
                 v_pos, f_normal, f_A3, f_npix, f_S2, lam,
                 cam_kind, fx, fy, cx, cy, me_buf, mf_buf, mg_buf,
                 px, py, lift):
    """Metric Delaunay test: True when the current diagonal should flip.

    Projects the two-triangle patch into the edge tangent plane, lifts the
    corners by the patch metric, and keeps the diagonal that is lower in the
    lifted tetrahedron.  Ties keep the current edge.
    """
    th = he_twin[h]
    f1 = he_face[h]
    f2 = he_face[th]
    a = he_to[th]
    c = he_to[h]
    b = he_to[he_next[h]]
    d = he_to[he_next[th]]

    # Edge normal and combined metric.
    nx = f_A3[f1] * f_normal[f1, 0] + f_A3[f2] * f_normal[f2, 0]
    ny = f_A3[f1] * f_normal[f1, 1] + f_A3[f2] * f_normal[f2, 1]
    nz = f_A3[f1] * f_normal[f1, 2] + f_A3[f2] * f_normal[f2, 2]
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nn < 1e-12:
        return False
    nx /= nn
    ny /= nn
    nz /= nn
    _face_mean_metric(f1, he_next, he_twin, he_face, f_he, f_alive,
                      f_normal, f_npix, f_S2, lam, mf_buf)
    _face_mean_metric(f2, he_next, he_twin, he_face, f_he, f_alive,
                      f_normal, f_npix, f_S2, lam, mg_buf)
    for k in range(6):
        me_buf[k] = f_A3[f1] * mf_buf[k] + f_A3[f2] * mg_buf[k]

    mx = 0.5 * (v_pos[a, 0] + v_pos[c, 0])
    my = 0.5 * (v_pos[a, 1] + v_pos[c, 1])
    j = _clamped_jacobian(cam_kind, fx, fy, cx, cy, nx, ny, nz, mx, my)

    # Deterministic tangent basis against the smallest normal component.
    if abs(nx) <= abs(ny) and abs(nx) <= abs(nz):
        ex, ey, ez = 1.0, 0.0, 0.0
    elif abs(ny) <= abs(nz):
        ex, ey, ez = 0.0, 1.0, 0.0
    else:
        ex, ey, ez = 0.0, 0.0, 1.0
    dd = ex * nx + ey * ny + ez * nz
    t1x = ex - dd * nx
    t1y = ey - dd * ny
    t1z = ez - dd * nz
    tn = math.sqrt(t1x * t1x + t1y * t1y + t1z * t1z)
    t1x /= tn
    t1y /= tn
    t1z /= tn
    t2x = ny * t1z - nz * t1y
    t2y = nz * t1x - nx * t1z
    t2z = nx * t1y - ny * t1x

    # Metric in the tangent basis.
    y1x, y1y, y1z = _sym3_matvec(me_buf, t1x, t1y, t1z)
    y2x, y2y, y2z = _sym3_matvec(me_buf, t2x, t2y, t2z)
    m00 = t1x * y1x + t1y * y1y + t1z * y1z
    m01 = t1x * y2x + t1y * y2y + t1z * y2z
    m11 = t2x * y2x + t2y * y2y + t2z * y2z

    idx = 0
    for vv in (a, c, b, d):
        du = v_pos[vv, 0] - mx
        dv = v_pos[vv, 1] - my
        wx = j[0] * du + j[1] * dv
        wy = j[2] * du + j[3] * dv
        wz = j[4] * du + j[5] * dv
        qx = t1x * wx + t1y * wy + t1z * wz
        qy = t2x * wx + t2y * wy + t2z * wz
        px[idx] = qx
        py[idx] = qy
        lift[idx] = m00 * qx * qx + 2.0 * m01 * qx * qy + m11 * qy * qy
        idx += 1

    s = _orient2d(px[0], py[0], px[1], py[1], px[2], py[2])
    if s == 0.0:
        return False
    # Incircle determinant of (a, c, b) against d in lifted coordinates.
    r0x = px[0] - px[3]
    r0y = py[0] - py[3]
    r0l = lift[0] - lift[3]
    r1x = px[1] - px[3]
    r1y = py[1] - py[3]
    r1l = lift[1] - lift[3]
    r2x = px[2] - px[3]
    r2y = py[2] - py[3]
    r2l = lift[2] - lift[3]
    det = (r0x * (r1y * r2l - r1l * r2y)
           - r0y * (r1x * r2l - r1l * r2x)
           + r0l * (r1x * r2y - r1y * r2x))
    # Near-cocircular configurations keep the current edge: the determinant
    # must clear a tolerance scaled like the determinant's own magnitude,
    # otherwise floating-point noise re-flips ties forever.
    n0 = math.sqrt(r0x * r0x + r0y * r0y + r0l * r0l)
    n1 = math.sqrt(r1x * r1x + r1y * r1y + r1l * r1l)
    n2 = math.sqrt(r2x * r2x + r2y * r2y + r2l * r2l)
    margin = 1e-10 * n0 * n1 * n2
    return s * det > margin


@njit(cache=True)
def _flip_check(h, he_to, he_next, he_twin, he_face, he_alive, v_out,
                v_pos, eps_area):
    """Executable flip: interior edge, strictly convex quad, no double edge."""
    if not he_alive[h]:
        return ERR_DEAD
    th = he_twin[h]
    f1 = he_face[h]
    f2 = he_face[th]
    if f1 < 0 or f2 < 0:
        return ERR_BOUNDARY
    a = he_to[th]
    c = he_to[h]
    b = he_to[he_next[h]]
    d = he_to[he_next[th]]
    # New faces (a, d, b) and (d, c, b) must be strictly positive.
    ar1 = 0.5 * _orient2d(v_pos[a, 0], v_pos[a, 1], v_pos[d, 0], v_pos[d, 1],
                          v_pos[b, 0], v_pos[b, 1])
    ar2 = 0.5 * _orient2d(v_pos[d, 0], v_pos[d, 1], v_pos[c, 0], v_pos[c, 1],
                          v_pos[b, 0], v_pos[b, 1])
    if ar1 <= eps_area or ar2 <= eps_area:
        return ERR_CONVEX
    # Refuse if b and d are already connected.
    h0 = v_out[d]
    hh = h0
    for _ in range(MAX_RING + 1):
        if he_to[hh] == b:
            return ERR_CONVEX
        hh = he_next[he_twin[hh]]
        if hh == h0:
            break
    return OK


@njit(cache=True)
def _flip_apply(h, he_to, he_next, he_prev, he_twin, he_face,
                v_out, f_he):
    """Replace the diagonal of the quad around h with the other diagonal."""
    th = he_twin[h]
    f1 = he_face[h]
    f2 = he_face[th]
    a = he_to[th]
    c = he_to[h]
    h1 = he_next[h]
    h2 = he_next[h1]
    b = he_to[h1]
    t1 = he_next[th]
    t2 = he_next[t1]
    d = he_to[t1]

    he_to[h] = b
    he_to[th] = d

    # Face f1 becomes (a, d, b): cycle t1 -> h -> h2.
    he_next[t1] = h
    he_next[h] = h2
    he_next[h2] = t1
    he_prev[t1] = h2
    he_prev[h] = t1
    he_prev[h2] = h
    he_face[t1] = f1
    he_face[h] = f1
    he_face[h2] = f1
    f_he[f1] = h

    # Face f2 becomes (d, c, b): cycle h1 -> th -> t2.
    he_next[h1] = th
    he_next[th] = t2
    he_next[t2] = h1
    he_prev[h1] = t2
    he_prev[th] = h1
    he_prev[t2] = th
    he_face[h1] = f2
    he_face[th] = f2
    he_face[t2] = f2
    f_he[f2] = th

    if v_out[a] == h:
        v_out[a] = t1
    if v_out[c] == th:
        v_out[c] = h1
    return d, b


@njit(cache=True, fastmath=True)
def _refresh_face_from_pixels(f, f_he, he_to, he_next, he_twin, he_face,
                              f_alive, v_pos,
                              f_normal, f_A2, f_A3, f_npix, f_nsum, f_S2,
                              f_q1, f_c0, f_msum, f_bsum,
                              pix_owner, normals, rays, width, height, lam,
                              cam_kind, fx, fy, cx, cy):
    """Recompute all per-face aggregates of f from its owned pixels."""
    va, vb, vc = _face_corners(f, f_he, he_to, he_next)
    xmin = min(v_pos[va, 0], min(v_pos[vb, 0], v_pos[vc, 0]))
    xmax = max(v_pos[va, 0], max(v_pos[vb, 0], v_pos[vc, 0]))
    ymin = min(v_pos[va, 1], min(v_pos[vb, 1], v_pos[vc, 1]))
    ymax = max(v_pos[va, 1], max(v_pos[vb, 1], v_pos[vc, 1]))
    i0 = max(int(math.floor(xmin - 0.5)), 0)
    i1 = min(int(math.ceil(xmax)), width - 1)
    j0 = max(int(math.floor(ymin - 0.5)), 0)
    j1 = min(int(math.ceil(ymax)), height - 1)

    npix = 0
    nsx = 0.0
    nsy = 0.0
    nsz = 0.0
    s2 = np.zeros(6, dtype=np.float64)
    for jj in range(j0, j1 + 1):
        base = jj * width
        for ii in range(i0, i1 + 1):
            p = base + ii
            if pix_owner[p] == f:
                npix += 1
                nxp = normals[p, 0]
                nyp = normals[p, 1]
                nzp = normals[p, 2]
                nsx += nxp
                nsy += nyp
                nsz += nzp
                s2[0] += nxp * nxp
                s2[1] += nxp * nyp
                s2[2] += nxp * nzp
                s2[3] += nyp * nyp
                s2[4] += nyp * nzp
                s2[5] += nzp * nzp
    f_npix[f] = npix
    f_nsum[f, 0] = nsx
    f_nsum[f, 1] = nsy
    f_nsum[f, 2] = nsz
    for k in range(6):
        f_S2[f, k] = s2[k]

    if npix > 0:
        nn = math.sqrt(nsx * nsx + nsy * nsy + nsz * nsz)
        if nn > 1e-12:
            f_normal[f, 0] = nsx / nn
            f_normal[f, 1] = nsy / nn
            f_normal[f, 2] = nsz / nn
    else:
        # Area-weighted average of edge-adjacent live faces.
        ax = 0.0
        ay = 0.0
        az = 0.0
        h0 = f_he[f]
        hh = h0
        for _ in range(3):
            g = he_face[he_twin[hh]]
            if g >= 0 and f_alive[g] and g != f:
                ax += f_A3[g] * f_normal[g, 0]
                ay += f_A3[g] * f_normal[g, 1]
                az += f_A3[g] * f_normal[g, 2]
            hh = he_next[hh]
        nn = math.sqrt(ax * ax + ay * ay + az * az)
        if nn > 1e-12:
            f_normal[f, 0] = ax / nn
            f_normal[f, 1] = ay / nn
            f_normal[f, 2] = az / nn

    nx = f_normal[f, 0]
    ny = f_normal[f, 1]
    nz = f_normal[f, 2]
    gx = (v_pos[va, 0] + v_pos[vb, 0] + v_pos[vc, 0]) / 3.0
    gy = (v_pos[va, 1] + v_pos[vb, 1] + v_pos[vc, 1]) / 3.0
    j = _clamped_jacobian(cam_kind, fx, fy, cx, cy, nx, ny, nz, gx, gy)
    jtj00 = j[0] * j[0] + j[2] * j[2] + j[4] * j[4]
    jtj01 = j[0] * j[1] + j[2] * j[3] + j[4] * j[5]
    jtj11 = j[1] * j[1] + j[3] * j[3] + j[5] * j[5]
    det = jtj00 * jtj11 - jtj01 * jtj01
    factor = math.sqrt(det) if det > 0.0 else 1.0
    a2 = _face_area2(f, f_he, he_to, he_next, v_pos)
    f_A2[f] = a2
    f_A3[f] = factor * a2

    q1x = 0.0
    q1y = 0.0
    q1z = 0.0
    c0 = 0.0
    msum = 0.0
    bsx = 0.0
    bsy = 0.0
    if npix > 0:
        for jj in range(j0, j1 + 1):
            base = jj * width
            for ii in range(i0, i1 + 1):
                p = base + ii
                if pix_owner[p] == f:
                    ux = ii + 0.5
                    uy = jj + 0.5
                    yx = j[0] * ux + j[1] * uy
                    yy = j[2] * ux + j[3] * uy
                    yz = j[4] * ux + j[5] * uy
                    nxp = normals[p, 0]
                    nyp = normals[p, 1]
                    nzp = normals[p, 2]
                    s = nxp * yx + nyp * yy + nzp * yz
                    q1x += nxp * s + lam * yx
                    q1y += nyp * s + lam * yy
                    q1z += nzp * s + lam * yz
                    c0 += s * s + lam * (yx * yx + yy * yy + yz * yz)
                    rdn = rays[p, 0] * nxp + rays[p, 1] * nyp + rays[p, 2] * nzp
                    msum += rdn * rdn
                    bsx += rdn * nxp
                    bsy += rdn * nyp
    f_q1[f, 0] = q1x
    f_q1[f, 1] = q1y
    f_q1[f, 2] = q1z
    f_c0[f] = c0
    f_msum[f] = msum
    f_bsum[f, 0] = bsx
    f_bsum[f, 1] = bsy


@njit(cache=True)
def _redistribute_quad_pixels(f1, f2, dv, bv, v_pos, pix_owner,
                              corners_x, corners_y, width, height):
    """After a flip, split the quad's pixels along the new diagonal (d, b)."""
    xmin = corners_x[0]
    xmax = corners_x[0]
    ymin = corners_y[0]
    ymax = corners_y[0]
    for k in range(1, 4):
        xmin = min(xmin, corners_x[k])
        xmax = max(xmax, corners_x[k])
        ymin = min(ymin, corners_y[k])
        ymax = max(ymax, corners_y[k])
    i0 = max(int(math.floor(xmin - 0.5)), 0)
    i1 = min(int(math.ceil(xmax)), width - 1)
    j0 = max(int(math.floor(ymin - 0.5)), 0)
    j1 = min(int(math.ceil(ymax)), height - 1)
    lo = f1 if f1 < f2 else f2
    dx = v_pos[dv, 0]
    dy = v_pos[dv, 1]
    bx = v_pos[bv, 0]
    by = v_pos[bv, 1]
    for jj in range(j0, j1 + 1):
        base = jj * width
        for ii in range(i0, i1 + 1):
            p = base + ii
            own = pix_owner[p]
            if own == f1 or own == f2:
                s = _orient2d(dx, dy, bx, by, ii + 0.5, jj + 0.5)
                if s > 0.0:
                    pix_owner[p] = f1
                elif s < 0.0:
                    pix_owner[p] = f2
                else:
                    pix_owner[p] = lo


# ---------------------------------------------------------------------------
# Rasterization aggregation
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def aggregate_pixels_kernel(psel, pix_owner, normals, rays, JJ, sel_index,
                            width, lam,
                            f_S2, f_q1, f_c0, f_msum, f_bsum):
    """Accumulate the Jacobian-weighted pixel sums of the selected faces.

    ``JJ`` holds the 3x2 face Jacobians (flattened to 6) of the selected
    faces; ``sel_index`` maps face ids to rows of JJ.  Rows of the output
    arrays for the selected faces must be zeroed by the caller.
    """
    for k in range(psel.shape[0]):
        p = psel[k]
        f = pix_owner[p]
        row = sel_index[f]
        j0 = JJ[row, 0]
        j1 = JJ[row, 1]
        j2 = JJ[row, 2]
        j3 = JJ[row, 3]
        j4 = JJ[row, 4]
        j5 = JJ[row, 5]
        uy, ux = divmod(p, width)
        px = ux + 0.5
        py = uy + 0.5
        yx = j0 * px + j1 * py
        yy = j2 * px + j3 * py
        yz = j4 * px + j5 * py
        nx = normals[p, 0]
        ny = normals[p, 1]
        nz = normals[p, 2]
        s = nx * yx + ny * yy + nz * yz
        f_S2[f, 0] += nx * nx
        f_S2[f, 1] += nx * ny
        f_S2[f, 2] += nx * nz
        f_S2[f, 3] += ny * ny
        f_S2[f, 4] += ny * nz
        f_S2[f, 5] += nz * nz
        f_q1[f, 0] += nx * s + lam * yx
        f_q1[f, 1] += ny * s + lam * yy
        f_q1[f, 2] += nz * s + lam * yz
        f_c0[f] += s * s + lam * (yx * yx + yy * yy + yz * yz)
        rdn = rays[p, 0] * nx + rays[p, 1] * ny + rays[p, 2] * nz
        f_msum[f] += rdn * rdn
        f_bsum[f, 0] += rdn * nx
        f_bsum[f, 1] += rdn * ny


# ---------------------------------------------------------------------------
# Vertex quadric rebuild
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def rebuild_quadrics_kernel(f_he, he_to, he_next, he_twin, he_face, f_alive,
                            v_pos, f_normal, f_A3, f_npix, f_S2, f_q1, f_c0,
                            lam, cam_kind, fx, fy, cx, cy, QA, Qb, Qc,
                            me_buf):
    """Accumulate every live face's deviation terms into its three corner
    vertices' quadrics.  Equivalent to summing, per corner v,

        (A3/|P|) sum_p |J (u_v - u_p) + dx|^2_{M_p}

    with the empty-bin fallback of a single virtual pixel at the centroid.
    """
    QA[:] = 0.0
    Qb[:] = 0.0
    Qc[:] = 0.0
    nf = f_he.shape[0]
    for f in range(nf):
        if not f_alive[f]:
            continue
        h = f_he[f]
        va = he_to[h]
        vb = he_to[he_next[h]]
        vc = he_to[he_next[he_next[h]]]
        gx = (v_pos[va, 0] + v_pos[vb, 0] + v_pos[vc, 0]) / 3.0
        gy = (v_pos[va, 1] + v_pos[vb, 1] + v_pos[vc, 1]) / 3.0
        j = _clamped_jacobian(cam_kind, fx, fy, cx, cy, f_normal[f, 0],
                              f_normal[f, 1], f_normal[f, 2], gx, gy)
        npix = f_npix[f]
        a3 = f_A3[f]
        if npix > 0:
            s = a3 / npix
            p00 = s * (f_S2[f, 0] + npix * lam)
            p01 = s * f_S2[f, 1]
            p02 = s * f_S2[f, 2]
            p11 = s * (f_S2[f, 3] + npix * lam)
            p12 = s * f_S2[f, 4]
            p22 = s * (f_S2[f, 5] + npix * lam)
            q1x = s * f_q1[f, 0]
            q1y = s * f_q1[f, 1]
            q1z = s * f_q1[f, 2]
            c0 = s * f_c0[f]
        else:
            _face_mean_metric(f, he_next, he_twin, he_face, f_he, f_alive,
                              f_normal, f_npix, f_S2, lam, me_buf)
            p00 = a3 * me_buf[0]
            p01 = a3 * me_buf[1]
            p02 = a3 * me_buf[2]
            p11 = a3 * me_buf[3]
            p12 = a3 * me_buf[4]
            p22 = a3 * me_buf[5]
            yx = j[0] * gx + j[1] * gy
            yy = j[2] * gx + j[3] * gy
            yz = j[4] * gx + j[5] * gy
            q1x = p00 * yx + p01 * yy + p02 * yz
            q1y = p01 * yx + p11 * yy + p12 * yz
            q1z = p02 * yx + p12 * yy + p22 * yz
            c0 = yx * q1x + yy * q1y + yz * q1z
        for k in range(3):
            if k == 0:
                v = va
            elif k == 1:
                v = vb
            else:
                v = vc
            ux = v_pos[v, 0]
            uy = v_pos[v, 1]
            yx = j[0] * ux + j[1] * uy
            yy = j[2] * ux + j[3] * uy
            yz = j[4] * ux + j[5] * uy
            pyx = p00 * yx + p01 * yy + p02 * yz
            pyy = p01 * yx + p11 * yy + p12 * yz
            pyz = p02 * yx + p12 * yy + p22 * yz
            QA[v, 0] += p00
            QA[v, 1] += p01
            QA[v, 2] += p02
            QA[v, 3] += p11
            QA[v, 4] += p12
            QA[v, 5] += p22
            Qb[v, 0] += pyx - q1x
            Qb[v, 1] += pyy - q1y
            Qb[v, 2] += pyz - q1z
            Qc[v] += yx * pyx + yy * pyy + yz * pyz \
                - 2.0 * (yx * q1x + yy * q1y + yz * q1z) + c0


# ---------------------------------------------------------------------------
# Binary heap (cost, edge id) with lazy staleness
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _heap_less(hc, he_, i, jj):
    if hc[i] != hc[jj]:
        return hc[i] < hc[jj]
    return he_[i] < he_[jj]


@njit(cache=True)
def _heap_push(hc, he_, hs, ht, size, cost, edge, stamp, t):
    i = size
    hc[i] = cost
    he_[i] = edge
    hs[i] = stamp
    ht[i] = t
    while i > 0:
        p = (i - 1) // 2
        if _heap_less(hc, he_, i, p):
            hc[i], hc[p] = hc[p], hc[i]
            he_[i], he_[p] = he_[p], he_[i]
            hs[i], hs[p] = hs[p], hs[i]
            ht[i], ht[p] = ht[p], ht[i]
            i = p
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_pop(hc, he_, hs, ht, size):
    cost = hc[0]
    edge = he_[0]
    stamp = hs[0]
    t = ht[0]
    size -= 1
    if size > 0:
        hc[0] = hc[size]
        he_[0] = he_[size]
        hs[0] = hs[size]
        ht[0] = ht[size]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < size and _heap_less(hc, he_, l, m):
                m = l
            if r < size and _heap_less(hc, he_, r, m):
                m = r
            if m == i:
                break
            hc[i], hc[m] = hc[m], hc[i]
            he_[i], he_[m] = he_[m], he_[i]
            hs[i], hs[m] = hs[m], hs[i]
            ht[i], ht[m] = ht[m], ht[i]
            i = m
    return cost, edge, stamp, t, size


# ---------------------------------------------------------------------------
# Decimation driver
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ensure_cache(v, v_stale, v_nacc, v_pos, QA, Qb, VC, VJ,
                  cam_kind, fx, fy, cx, cy):
    if v_stale[v]:
        _cache_from_acc(v, v_nacc, v_pos, QA, Qb, VC, VJ,
                        cam_kind, fx, fy, cx, cy)
        v_stale[v] = False


@njit(cache=True)
def decimate_kernel(he_to, he_next, he_prev, he_twin, he_face, he_alive,
                    he_stamp,
                    v_pos, v_out, v_alive, v_bnd,
                    f_he, f_alive, f_state, f_normal, f_A2, f_A3, f_npix,
                    QA, Qb, Qc, VC, VJ,
                    cam_kind, fx, fy, cx, cy,
                    mode, tau, target_vertices, n_alive_vertices,
                    heap_cost, heap_edge, heap_stamp, heap_t):
    """Greedy edge-collapse pass over a priority queue of collapse costs.

    Threshold mode executes every collapse whose recomputed cost stays at or
    below tau; vertex-target mode collapses cheapest-first until the live
    vertex count reaches the target.  Stale queue entries are re-validated on
    pop: dead edges and outdated stamps are dropped, upward-drifted costs
    are re-enqueued.  Screen-quadric caches of ring vertices are refreshed
    lazily at pop time; queue priorities of not-yet-refreshed edges are
    estimates that the pop-time recomputation corrects.  Returns
    (collapses, live vertex count).
    """
    nh = he_to.shape[0]
    cap = heap_cost.shape[0]
    ring = np.empty(MAX_RING, dtype=np.int32)
    v_stale = np.zeros(v_out.shape[0], dtype=np.bool_)
    v_mark = np.zeros(v_out.shape[0], dtype=np.int64)
    mark_token = 0
    # Area-weighted normal accumulators, maintained incrementally so cache
    # refreshes avoid ring walks entirely.
    v_nacc = np.zeros((v_out.shape[0], 3), dtype=np.float64)
    # Cache epochs: an entry pushed while both endpoint caches were fresh
    # records their epoch sum; unchanged epochs at pop time mean the pushed
    # cost is still exact and the recomputation can be skipped.
    v_epoch = np.zeros(v_out.shape[0], dtype=np.int32)
    for f in range(f_he.shape[0]):
        if f_alive[f]:
            hh0 = f_he[f]
            a3 = f_A3[f]
            for k in range(3):
                vv = he_to[hh0]
                v_nacc[vv, 0] += a3 * f_normal[f, 0]
                v_nacc[vv, 1] += a3 * f_normal[f, 1]
                v_nacc[vv, 2] += a3 * f_normal[f, 2]
                hh0 = he_next[hh0]
    # Entry bookkeeping: each edge keeps at most one live queue entry
    # (counted under the halfedge id it was pushed with); costs are treated
    # as estimates and re-validated against the live state on pop.
    entries = np.zeros(nh, dtype=np.int8)

    # Fresh screen-quadric caches for every live vertex.
    for v in range(v_out.shape[0]):
        if v_alive[v]:
            _cache_from_acc(v, v_nacc, v_pos, QA, Qb, VC, VJ,
                            cam_kind, fx, fy, cx, cy)

    size = 0
    for h in range(nh):
        if he_alive[h] and h < he_twin[h]:
            cost, t = _edge_cost(h, he_to, he_next, he_prev, he_twin, he_face,
                                 he_alive, v_out, v_pos, v_alive, v_bnd,
                                 Qc, VC)
            if cost >= INF_COST:
                continue
            if mode == MODE_THRESHOLD and cost > tau:
                continue
            size = _heap_push(heap_cost, heap_edge, heap_stamp, heap_t,
                              size, cost, h,
                              v_epoch[he_to[h]] + v_epoch[he_to[he_twin[h]]],
                              t)
            entries[h] += 1

    collapses = 0
    pops = 0
    max_pops = 64 * nh + 1024
    nv = n_alive_vertices
    while size > 0 and pops < max_pops:
        if mode == MODE_VERTEX_TARGET and nv <= target_vertices:
            break
        cost, h, stamp, tpop, size = _heap_pop(heap_cost, heap_edge,
                                               heap_stamp, heap_t, size)
        entries[h] -= 1
        pops += 1
        if not he_alive[h]:
            continue
        canon = h if h < he_twin[h] else he_twin[h]
        vv = he_to[he_twin[canon]]
        ww = he_to[canon]
        if stamp >= 0 and v_epoch[vv] + v_epoch[ww] == stamp:
            # Both endpoint caches are untouched since the push: the stored
            # cost and merge parameter are still exact.
            cost2 = cost
            t2 = tpop
        else:
            _ensure_cache(vv, v_stale, v_nacc, v_pos, QA, Qb,
                          VC, VJ, cam_kind, fx, fy, cx, cy)
            _ensure_cache(ww, v_stale, v_nacc, v_pos, QA, Qb,
                          VC, VJ, cam_kind, fx, fy, cx, cy)
            cost2, t2 = _edge_cost(canon, he_to, he_next, he_prev, he_twin,
                                   he_face, he_alive, v_out, v_pos, v_alive,
                                   v_bnd, Qc, VC)
        if cost2 >= INF_COST:
            continue
        if mode == MODE_THRESHOLD and cost > tau:
            break
        if mode == MODE_THRESHOLD and cost2 > tau:
            continue
        if cost2 > cost * (1.0 + 1e-12) + 1e-15:
            # Cost drifted upward since the entry was pushed: restore order.
            if size < cap:
                size = _heap_push(heap_cost, heap_edge, heap_stamp, heap_t,
                                  size, cost2, canon,
                                  v_epoch[vv] + v_epoch[ww], t2)
                entries[canon] += 1
            continue

        # Orient onto the face side; mirror t accordingly.
        hx = canon
        tx = t2
        if he_face[hx] < 0:
            hx = he_twin[hx]
            tx = 1.0 - t2
        vfrom = he_to[he_twin[hx]]
        wto = he_to[hx]
        pxm = (1.0 - tx) * v_pos[vfrom, 0] + tx * v_pos[wto, 0]
        pym = (1.0 - tx) * v_pos[vfrom, 1] + tx * v_pos[wto, 1]

        mark_token += 1
        status = _collapse_check(hx, tx, pxm, pym, he_to, he_next, he_prev,
                                 he_twin, he_face, he_alive, v_out, v_pos,
                                 v_alive, v_bnd, f_he, f_alive, EPS_AREA,
                                 v_mark, mark_token)
        if status != OK:
            continue

        # Rebase both endpoint quadrics to the merge point, then sum them.
        for endpoint in range(2):
            src = vfrom if endpoint == 0 else wto
            dux = pxm - v_pos[src, 0]
            duy = pym - v_pos[src, 1]
            dx = VJ[src, 0] * dux + VJ[src, 1] * duy
            dy = VJ[src, 2] * dux + VJ[src, 3] * duy
            dz = VJ[src, 4] * dux + VJ[src, 5] * duy
            ax, ay, az = _sym3_matvec(QA[src], dx, dy, dz)
            Qc[src] += dx * ax + dy * ay + dz * az \
                + 2.0 * (Qb[src, 0] * dx + Qb[src, 1] * dy + Qb[src, 2] * dz)
            Qb[src, 0] += ax
            Qb[src, 1] += ay
            Qb[src, 2] += az

        merged, ring_n = _collapse_apply(hx, pxm, pym, he_to, he_next,
                                         he_prev, he_twin, he_face, he_alive,
                                         v_out, v_pos, v_alive, v_bnd,
                                         f_he, f_alive, f_state, f_normal,
                                         f_A2, f_A3, f_npix, ring, v_nacc)
        for k in range(6):
            QA[merged, k] += QA[wto, k]
        for k in range(3):
            Qb[merged, k] += Qb[wto, k]
        Qc[merged] += Qc[wto]
        nv -= 1
        collapses += 1

        # Refresh the merged vertex eagerly (its quadric changed), mark the
        # ring lazily stale, then re-enqueue the merged one-ring's edges.
        # Edges still holding a queue entry are left in place: their entry
        # self-corrects on pop.  Ring entries carry estimated priorities
        # until their next pop refreshes them.
        _cache_from_acc(merged, v_nacc, v_pos, QA, Qb, VC, VJ,
                        cam_kind, fx, fy, cx, cy)
        v_stale[merged] = False
        v_epoch[merged] += 1
        for i in range(ring_n):
            x = ring[i]
            if v_alive[x]:
                v_stale[x] = True
                v_epoch[x] += 1
        h0 = v_out[merged]
        hh = h0
        for _ in range(MAX_RING + 1):
            th2 = he_twin[hh]
            if entries[hh] <= 0 and entries[th2] <= 0 and size < cap:
                canon2 = hh if hh < th2 else th2
                ncost, nt = _edge_cost(canon2, he_to, he_next, he_prev,
                                       he_twin, he_face, he_alive, v_out,
                                       v_pos, v_alive, v_bnd, Qc, VC)
                if ncost < INF_COST:
                    ep = -1
                    x0 = he_to[canon2]
                    x1 = he_to[he_twin[canon2]]
                    if not (v_stale[x0] or v_stale[x1]):
                        ep = v_epoch[x0] + v_epoch[x1]
                    size = _heap_push(heap_cost, heap_edge, heap_stamp,
                                      heap_t, size, ncost, canon2, ep, nt)
                    entries[canon2] += 1
            hh = he_next[th2]
            if hh == h0:
                break
    return collapses, nv


# ---------------------------------------------------------------------------
# Edge alignment driver
# ---------------------------------------------------------------------------

@njit(cache=True)
def flip_sweep_kernel(he_to, he_next, he_prev, he_twin, he_face, he_alive,
                      v_pos, v_out,
                      f_he, f_alive, f_state, f_normal, f_A2, f_A3,
                      f_npix, f_nsum, f_S2, f_q1, f_c0, f_msum, f_bsum,
                      pix_owner, normals, rays, width, height, lam,
                      cam_kind, fx, fy, cx, cy, max_total_flips):
    """Sweep edges in ascending id, flipping metric-non-Delaunay diagonals
    until a full sweep makes no change (or the global guard trips)."""
    nh = he_to.shape[0]
    nf = f_he.shape[0]
    total = 0
    me_buf = np.empty(6, dtype=np.float64)
    mf_buf = np.empty(6, dtype=np.float64)
    mg_buf = np.empty(6, dtype=np.float64)
    px_buf = np.empty(4, dtype=np.float64)
    py_buf = np.empty(4, dtype=np.float64)
    lift_buf = np.empty(4, dtype=np.float64)
    cxs = np.empty(4, dtype=np.float64)
    cys = np.empty(4, dtype=np.float64)
    # The patch metric is re-derived from the redistributed pixels after a
    # flip, so a quad can disagree with its own flip and oscillate; a
    # per-edge budget freezes such edges without limiting ordinary sweeps.
    budget = np.full(nh, 32, dtype=np.int32)
    # An edge's test depends only on its two faces (vertex positions are
    # frozen during edge alignment), so re-testing is needed only after one
    # of the faces changed.  Version counters make the repeated sweeps skip
    # untouched edges, with results identical to naive full sweeps.
    f_version = np.zeros(nf, dtype=np.int64)
    seen = np.full(nh, -1, dtype=np.int64)
    changed = True
    while changed and total < max_total_flips:
        changed = False
        for h in range(nh):
            if not he_alive[h]:
                continue
            th = he_twin[h]
            if h > th:
                continue
            f1 = he_face[h]
            f2 = he_face[th]
            if f1 < 0 or f2 < 0:
                continue
            if budget[h] <= 0:
                continue
            stamp = f_version[f1] + f_version[f2]
            if seen[h] == stamp:
                continue
            seen[h] = stamp
            if _flip_check(h, he_to, he_next, he_twin, he_face, he_alive,
                           v_out, v_pos, EPS_AREA) != OK:
                continue
            if not _flip_wanted(h, he_to, he_next, he_twin, he_face, f_he,
                                f_alive, v_pos, f_normal, f_A3, f_npix, f_S2,
                                lam, cam_kind, fx, fy, cx, cy,
                                me_buf, mf_buf, mg_buf,
                                px_buf, py_buf, lift_buf):
                continue
            a = he_to[th]
            c = he_to[h]
            b = he_to[he_next[h]]
            d = he_to[he_next[th]]
            cxs[0] = v_pos[a, 0]
            cys[0] = v_pos[a, 1]
            cxs[1] = v_pos[d, 0]
            cys[1] = v_pos[d, 1]
            cxs[2] = v_pos[c, 0]
            cys[2] = v_pos[c, 1]
            cxs[3] = v_pos[b, 0]
            cys[3] = v_pos[b, 1]
            budget[h] -= 1
            _flip_apply(h, he_to, he_next, he_prev, he_twin, he_face,
                        v_out, f_he)
            _redistribute_quad_pixels(f1, f2, d, b, v_pos, pix_owner,
                                      cxs, cys, width, height)
            _refresh_face_from_pixels(f1, f_he, he_to, he_next, he_twin,
                                      he_face, f_alive, v_pos, f_normal,
                                      f_A2, f_A3, f_npix, f_nsum, f_S2,
                                      f_q1, f_c0, f_msum, f_bsum,
                                      pix_owner, normals, rays, width,
                                      height, lam, cam_kind, fx, fy, cx, cy)
            _refresh_face_from_pixels(f2, f_he, he_to, he_next, he_twin,
                                      he_face, f_alive, v_pos, f_normal,
                                      f_A2, f_A3, f_npix, f_nsum, f_S2,
                                      f_q1, f_c0, f_msum, f_bsum,
                                      pix_owner, normals, rays, width,
                                      height, lam, cam_kind, fx, fy, cx, cy)
            f_version[f1] += 1
            f_version[f2] += 1
            total += 1
            changed = True
            if total >= max_total_flips:
                break
    return total


# ---------------------------------------------------------------------------
# Vertex alignment driver
# ---------------------------------------------------------------------------

@njit(cache=True)
def align_vertices_kernel(he_to, he_next, he_prev, he_twin, he_face, he_alive,
                          v_pos, v_out, v_alive, v_bnd,
                          f_he, f_alive, f_state, f_normal, f_A2, f_A3,
                          QA, Qb, Qc, VC, VJ,
                          cam_kind, fx, fy, cx, cy, alpha):
    """Newton step on each interior vertex's screen quadric, damped by alpha
    and clamped (successive halving) against face inversion."""
    moved = 0
    for v in range(v_out.shape[0]):
        if not v_alive[v] or v_bnd[v]:
            continue
        _vertex_cache_update(v, v_out, v_pos, he_to, he_next, he_twin,
                             he_face, f_alive, f_normal, f_A3, QA, Qb,
                             VC, VJ, cam_kind, fx, fy, cx, cy)
        a00 = VC[v, 0]
        a01 = VC[v, 1]
        a11 = VC[v, 2]
        b0 = VC[v, 3]
        b1 = VC[v, 4]
        det = a00 * a11 - a01 * a01
        tr = a00 + a11
        # cond(A) ~ tr^2 / det for ill-conditioned 2x2 SPD matrices.
        if det <= 0.0 or det < 1e-12 * tr * tr:
            # Near-singular system: treat the optimal displacement as zero.
            continue
        dx = -(a11 * b0 - a01 * b1) / det
        dy = -(-a01 * b0 + a00 * b1) / det
        dx *= alpha
        dy *= alpha
        if dx == 0.0 and dy == 0.0:
            continue
        applied = False
        for _ in range(6):
            ok = True
            nxp = v_pos[v, 0] + dx
            nyp = v_pos[v, 1] + dy
            h0 = v_out[v]
            hh = h0
            for _k in range(MAX_RING + 1):
                f = he_face[hh]
                if f >= 0 and f_alive[f]:
                    a0 = he_to[hh]
                    a1 = he_to[he_next[hh]]
                    ar = 0.5 * _orient2d(nxp, nyp, v_pos[a0, 0], v_pos[a0, 1],
                                         v_pos[a1, 0], v_pos[a1, 1])
                    if ar <= EPS_AREA:
                        ok = False
                        break
                hh = he_next[he_twin[hh]]
                if hh == h0:
                    break
            if ok:
                v_pos[v, 0] = nxp
                v_pos[v, 1] = nyp
                applied = True
                break
            dx *= 0.5
            dy *= 0.5
        if applied:
            moved += 1
            h0 = v_out[v]
            hh = h0
            for _k in range(MAX_RING + 1):
                f = he_face[hh]
                if f >= 0 and f_alive[f]:
                    ratio = f_A3[f] / f_A2[f]
                    a2 = _face_area2(f, f_he, he_to, he_next, v_pos)
                    f_A2[f] = a2
                    f_A3[f] = ratio * a2
                    f_state[f] = STATE_DIRTY
                hh = he_next[he_twin[hh]]
                if hh == h0:
                    break
    return moved


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

@njit(cache=True)
def raster_claim_kernel(face_ids, f_he, he_to, he_next, v_pos,
                        width, height, fg, pix_owner):
    """Assign unowned foreground pixel centers to containing faces.

    Faces are visited in the given (ascending) order and claim centers via
    an inclusive three-orientation test, so a center on a shared edge goes
    to the lowest face id.  Returns the number of claims.
    """
    claimed = 0
    for idx in range(face_ids.shape[0]):
        f = face_ids[idx]
        a, b, c = _face_corners(f, f_he, he_to, he_next)
        ax = v_pos[a, 0]
        ay = v_pos[a, 1]
        bx = v_pos[b, 0]
        by = v_pos[b, 1]
        cx = v_pos[c, 0]
        cy = v_pos[c, 1]
        ymin = min(ay, min(by, cy))
        ymax = max(ay, max(by, cy))
        j0 = max(int(math.ceil(ymin - 0.5)), 0)
        j1 = min(int(math.floor(ymax - 0.5)), height - 1)
        for jj in range(j0, j1 + 1):
            y = jj + 0.5
            # Intersect the three left-halfplane constraints with the row.
            xlo = -1.0e30
            xhi = 1.0e30
            empty = False
            for e in range(3):
                if e == 0:
                    p0x, p0y, p1x, p1y = ax, ay, bx, by
                elif e == 1:
                    p0x, p0y, p1x, p1y = bx, by, cx, cy
                else:
                    p0x, p0y, p1x, p1y = cx, cy, ax, ay
                dy = p1y - p0y
                rhs = (p1x - p0x) * (y - p0y) + dy * p0x
                if dy > 0.0:
                    if rhs / dy < xhi:
                        xhi = rhs / dy
                elif dy < 0.0:
                    if rhs / dy > xlo:
                        xlo = rhs / dy
                else:
                    if (p1x - p0x) * (y - p0y) < 0.0:
                        empty = True
                        break
            if empty or xlo > xhi:
                continue
            i0 = max(int(math.ceil(xlo - 0.5)) - 1, 0)
            i1 = min(int(math.floor(xhi - 0.5)) + 1, width - 1)
            base = jj * width
            for ii in range(i0, i1 + 1):
                p = base + ii
                if not fg[p] or pix_owner[p] != -1:
                    continue
                x = ii + 0.5
                if _orient2d(ax, ay, bx, by, x, y) >= 0.0 and \
                   _orient2d(bx, by, cx, cy, x, y) >= 0.0 and \
                   _orient2d(cx, cy, ax, ay, x, y) >= 0.0:
                    pix_owner[p] = f
                    claimed += 1
    return claimed


@njit(cache=True)
def raster_fallback_kernel(face_ids, f_he, he_to, he_next, v_pos,
                           width, height, fg, pix_owner, best_score):
    """Assign leftover pixels to the least-violating nearby face.

    Handles centers that every inclusive test rejected due to floating-point
    gaps along shared edges.  ``best_score`` must be -inf initialised.
    """
    for idx in range(face_ids.shape[0]):
        f = face_ids[idx]
        a, b, c = _face_corners(f, f_he, he_to, he_next)
        ax = v_pos[a, 0]
        ay = v_pos[a, 1]
        bx = v_pos[b, 0]
        by = v_pos[b, 1]
        cx = v_pos[c, 0]
        cy = v_pos[c, 1]
        ymin = min(ay, min(by, cy))
        ymax = max(ay, max(by, cy))
        xmin = min(ax, min(bx, cx))
        xmax = max(ax, max(bx, cx))
        j0 = max(int(math.ceil(ymin - 1.5)), 0)
        j1 = min(int(math.floor(ymax + 0.5)), height - 1)
        i0 = max(int(math.ceil(xmin - 1.5)), 0)
        i1 = min(int(math.floor(xmax + 0.5)), width - 1)
        for jj in range(j0, j1 + 1):
            base = jj * width
            y = jj + 0.5
            for ii in range(i0, i1 + 1):
                p = base + ii
                if not fg[p] or pix_owner[p] >= 0:
                    continue
                x = ii + 0.5
                s0 = _orient2d(ax, ay, bx, by, x, y)
                s1 = _orient2d(bx, by, cx, cy, x, y)
                s2 = _orient2d(cx, cy, ax, ay, x, y)
                score = min(s0, min(s1, s2))
                if score > best_score[p]:
                    best_score[p] = score
                    # Stash as negative-2-offset so phase A claims still win.
                    pix_owner[p] = -2 - f
    # Resolve stashed assignments.
    for p in range(pix_owner.shape[0]):
        if pix_owner[p] < -1:
            pix_owner[p] = -2 - pix_owner[p]
