"""Decimation driver: priority-queue edge collapses, metric edge alignment,
tangent-space vertex alignment, on a fixed iteration schedule.

One outer iteration rebuilds the vertex quadrics from fresh pixel bins,
collapses edges (threshold or vertex-target controlled), re-bins the dirty
faces, runs edge-flip alignment to convergence, takes one damped Newton step
per interior vertex, and finishes with a full rasterization pass.  Within a
collapse pass, merged quadrics are the sums of the endpoint quadrics
(rebased to the merge point); drift is reset by the next rebuild.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import quadrics as Q
from .camera import Camera
from .errors import SingularSystem
from .mesh import ScreenMesh
from .normalmap import NormalMap
from .raster import rasterize

log = logging.getLogger(__name__)

MODE_THRESHOLD = "threshold"
MODE_VERTEX_TARGET = "vertex_target"


@dataclass
class RemeshConfig:
    mode: str = MODE_VERTEX_TARGET
    threshold: float | None = None
    vertex_target: int | None = None
    lam: float = 1e-5
    alpha: float = 0.5
    iterations: int = 5
    enable_edge_alignment: bool = True
    enable_vertex_alignment: bool = True

    def __post_init__(self):
        if self.mode == MODE_THRESHOLD:
            if self.threshold is None or self.threshold <= 0:
                raise ValueError("threshold mode needs threshold > 0")
        elif self.mode == MODE_VERTEX_TARGET:
            if self.vertex_target is None or self.vertex_target < 3:
                raise ValueError("vertex-target mode needs target >= 3")
        else:
            raise ValueError(f"unknown remesh mode {self.mode!r}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @staticmethod
    def with_threshold(tau: float, **kw) -> "RemeshConfig":
        return RemeshConfig(mode=MODE_THRESHOLD, threshold=tau, **kw)

    @staticmethod
    def with_vertex_target(n: int, **kw) -> "RemeshConfig":
        return RemeshConfig(mode=MODE_VERTEX_TARGET, vertex_target=n, **kw)


@dataclass
class CollapseCandidate:
    edge: int          # canonical halfedge id
    cost: float
    t: float           # merge point (1-t) u_v + t u_w along the edge
    stamp: int


def _refresh_endpoint_caches(mesh: ScreenMesh, vertices):
    cam = mesh.cam
    for v in vertices:
        K._vertex_cache_update(
            np.int64(v), mesh.v_out, mesh.v_pos, mesh.he_to, mesh.he_next,
            mesh.he_twin, mesh.he_face, mesh.f_alive, mesh.f_normal,
            mesh.f_A3, mesh.QA, mesh.Qb, mesh.VC, mesh.VJ,
            cam.kind, cam.fx, cam.fy, cam.cx, cam.cy)


def collapse_cost(mesh: ScreenMesh, edge) -> CollapseCandidate:
    """Cost of contracting an edge to its best on-edge position.

    Endpoint quadrics must be current (rebuild_vertex_quadrics).  Boundary
    rules restrict the merge point; uncollapsible edges get infinite cost.
    """
    h = mesh._resolve_edge(edge)
    canon = mesh.edge_canonical(h)
    mesh.ensure_quadric_arrays()
    v = int(mesh.he_to[mesh.he_twin[canon]])
    w = int(mesh.he_to[canon])
    _refresh_endpoint_caches(mesh, (v, w))
    cost, t = K._edge_cost(np.int64(canon), mesh.he_to, mesh.he_next,
                           mesh.he_prev, mesh.he_twin, mesh.he_face,
                           mesh.he_alive, mesh.v_out, mesh.v_pos,
                           mesh.v_alive, mesh.v_bnd, mesh.Qc, mesh.VC)
    return CollapseCandidate(canon, float(cost), float(t),
                             int(mesh.he_stamp[canon]))


def decimate_pass(mesh: ScreenMesh, threshold: float | None = None,
                  target: int | None = None) -> int:
    """Run the collapse queue until the stop condition; returns collapses.

    Exactly one of ``threshold`` / ``target`` must be given.  Quadrics must
    have been rebuilt; merged quadrics are maintained additively inside the
    pass.
    """
    if (threshold is None) == (target is None):
        raise ValueError("pass exactly one of threshold / target")
    mesh.ensure_quadric_arrays()
    cam = mesh.cam
    if cam is None:
        raise ValueError("rasterize the mesh before decimating")
    # At most one live entry per edge, plus headroom for re-pushes.
    cap = max(2 * mesh.n_edges + 1024, 4096)
    heap_cost = np.empty(cap)
    heap_edge = np.empty(cap, dtype=np.int32)
    heap_stamp = np.empty(cap, dtype=np.int32)
    heap_t = np.empty(cap)
    mode = K.MODE_THRESHOLD if threshold is not None else K.MODE_VERTEX_TARGET
    tau = threshold if threshold is not None else 0.0
    tgt = target if target is not None else 0
    collapses, nv = K.decimate_kernel(
        mesh.he_to, mesh.he_next, mesh.he_prev, mesh.he_twin, mesh.he_face,
        mesh.he_alive, mesh.he_stamp,
        mesh.v_pos, mesh.v_out, mesh.v_alive, mesh.v_bnd,
        mesh.f_he, mesh.f_alive, mesh.f_state, mesh.f_normal, mesh.f_A2,
        mesh.f_A3, mesh.f_npix,
        mesh.QA, mesh.Qb, mesh.Qc, mesh.VC, mesh.VJ,
        cam.kind, cam.fx, cam.fy, cam.cx, cam.cy,
        mode, float(tau), int(tgt), mesh.n_vertices,
        heap_cost, heap_edge, heap_stamp, heap_t)
    mesh._n_v_alive = int(nv)
    mesh._n_f_alive = int(np.count_nonzero(mesh.f_alive))
    return int(collapses)


def align_edges(mesh: ScreenMesh) -> int:
    """Flip interior edges to the metric Delaunay configuration.

    Sweeps in ascending edge id until stable (bounded by 100 flips per
    edge); face bins stay exact because each flip redistributes the quad's
    pixels.  Returns the number of flips executed.
    """
    if mesh.nm is None:
        raise ValueError("rasterize the mesh before aligning edges")
    cam = mesh.cam
    max_flips = 100 * max(mesh.n_edges, 1)
    flips = K.flip_sweep_kernel(
        mesh.he_to, mesh.he_next, mesh.he_prev, mesh.he_twin, mesh.he_face,
        mesh.he_alive, mesh.v_pos, mesh.v_out,
        mesh.f_he, mesh.f_alive, mesh.f_state, mesh.f_normal, mesh.f_A2,
        mesh.f_A3, mesh.f_npix, mesh.f_nsum, mesh.f_S2, mesh.f_q1, mesh.f_c0,
        mesh.f_msum, mesh.f_bsum,
        mesh.pix_owner, mesh.nm.flat_normals(), mesh.rays,
        mesh.width, mesh.height, mesh.lam,
        cam.kind, cam.fx, cam.fy, cam.cx, cam.cy, max_flips)
    return int(flips)


def align_vertices(mesh: ScreenMesh, cfg: RemeshConfig) -> int:
    """One damped Newton step per interior vertex; returns vertices moved.

    The step alpha * argmin of the vertex screen quadric is halved until no
    incident face inverts; failures degrade to no movement.  Convexity of
    the quadric guarantees the applied step never increases it.
    """
    mesh.ensure_quadric_arrays()
    cam = mesh.cam
    moved = K.align_vertices_kernel(
        mesh.he_to, mesh.he_next, mesh.he_prev, mesh.he_twin, mesh.he_face,
        mesh.he_alive,
        mesh.v_pos, mesh.v_out, mesh.v_alive, mesh.v_bnd,
        mesh.f_he, mesh.f_alive, mesh.f_state, mesh.f_normal, mesh.f_A2,
        mesh.f_A3,
        mesh.QA, mesh.Qb, mesh.Qc, mesh.VC, mesh.VJ,
        cam.kind, cam.fx, cam.fy, cam.cx, cam.cy, cfg.alpha)
    return int(moved)


def iteration_targets(v0: int, target: int, iterations: int) -> list[int]:
    """Per-iteration vertex budgets decaying geometrically onto the target."""
    out = []
    for k in range(1, iterations + 1):
        nk = int(round(target * 10.0 ** ((iterations - k) / iterations)))
        out.append(max(min(nk, v0), target))
    return out


def run(mesh: ScreenMesh, nm: NormalMap, cam: Camera,
        cfg: RemeshConfig) -> ScreenMesh:
    """Full decimation schedule; mutates and returns the mesh."""
    if mesh.nm is None or np.any(mesh.f_state[mesh.f_alive] != K.STATE_CLEAN):
        rasterize(mesh, nm, cam, cfg.lam, dirty_only=False)
    v0 = mesh.n_vertices
    if cfg.mode == MODE_VERTEX_TARGET:
        budgets = iteration_targets(v0, cfg.vertex_target, cfg.iterations)
    else:
        budgets = [None] * cfg.iterations

    for k in range(cfg.iterations):
        Q.rebuild_vertex_quadrics(mesh)
        if cfg.mode == MODE_VERTEX_TARGET:
            collapses = decimate_pass(mesh, target=budgets[k])
        else:
            collapses = decimate_pass(mesh, threshold=cfg.threshold)
        rasterize(mesh, nm, cam, cfg.lam, dirty_only=True)
        flips = 0
        if cfg.enable_edge_alignment:
            flips = align_edges(mesh)
        moved = 0
        if cfg.enable_vertex_alignment:
            Q.rebuild_vertex_quadrics(mesh)
            moved = align_vertices(mesh, cfg)
        rasterize(mesh, nm, cam, cfg.lam, dirty_only=False)
        log.info("iter %d: |V|=%d, collapses=%d, flips=%d, moved=%d",
                 k + 1, mesh.n_vertices, collapses, flips, moved)
    return mesh
