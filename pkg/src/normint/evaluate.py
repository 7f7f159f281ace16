"""Metrics and experiment harness: gauge alignment, RMSE / MADE / MAE,
error maps, and the threshold / noise / resolution sweeps.

Depth error is measured on the pixel grid: the mesh depth is interpolated
barycentrically at every covered pixel center (perspective-correct inverse
depth for the perspective camera), gauge-aligned against the analytic depth
(offset for orthographic, scale for perspective), and reduced to RMSE and
mean absolute deviation.  MAE is the mean angular difference in degrees
between the unprojected face normals, resampled per pixel, and the clean
ground-truth normals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import CoverageError, DegenerateFit
from .integrate import DepthMesh
from .normalmap import GroundTruth, add_noise, synthesize


@dataclass
class EvalReport:
    rmse: float
    made: float
    mae_deg: float
    vertex_count: int
    compression_ratio: float
    stage_ms: dict = field(default_factory=dict)
    label: str = ""
    error_image: np.ndarray | None = None

    def row(self):
        return {
            "label": self.label,
            "rmse": self.rmse,
            "made": self.made,
            "mae_deg": self.mae_deg,
            "vertices": self.vertex_count,
            "compression": self.compression_ratio,
            **{f"ms_{k}": v for k, v in self.stage_ms.items()},
        }


def align_gauge(pred, gt, cam: Camera) -> np.ndarray:
    """Remove the gauge freedom of integrated depth before comparing.

    Orthographic depth is defined up to an additive constant, perspective
    depth up to a positive scale; both are fitted by least squares.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.size < 2:
        raise ValueError("need at least 2 samples for gauge alignment")
    if cam.is_perspective:
        denom = float(pred @ pred)
        if denom == 0.0:
            raise DegenerateFit("all-zero predictions cannot be scaled")
        s = float(pred @ gt) / denom
        return s * pred
    return pred + float(np.mean(gt - pred))


def _interpolate_depth(dm: DepthMesh, mask):
    """Per-pixel mesh depth via barycentric interpolation in the owner face."""
    mesh = dm.mesh
    if mesh.nm is None:
        raise ValueError("rasterize the mesh before evaluating")
    h, w = mask.shape
    owner = mesh.pix_owner.reshape(h, w)
    covered = mask & (owner >= 0)
    jj, ii = np.nonzero(covered)
    own = owner[jj, ii]
    x = ii + 0.5
    y = jj + 0.5
    a, b, c = mesh.face_corner_ids(own)
    pa, pb, pc = mesh.v_pos[a], mesh.v_pos[b], mesh.v_pos[c]

    def orient(p, q):
        return ((q[:, 0] - p[:, 0]) * (y - p[:, 1])
                - (q[:, 1] - p[:, 1]) * (x - p[:, 0]))

    wa = orient(pb, pc)
    wb = orient(pc, pa)
    wc = orient(pa, pb)
    tot = wa + wb + wc
    wa, wb, wc = wa / tot, wb / tot, wc / tot

    zmap = np.full(len(mesh.v_out), np.nan)
    zmap[dm.vertex_ids] = dm.z
    za, zb, zc = zmap[a], zmap[b], zmap[c]
    if dm.cam.is_perspective:
        inv = wa / np.exp(za) + wb / np.exp(zb) + wc / np.exp(zc)
        depth = 1.0 / inv
    else:
        depth = wa * za + wb * zb + wc * zc
    return covered, depth, own


def _face_normals_3d(dm: DepthMesh):
    """Unit normals of the unprojected faces, in the stored convention."""
    mesh = dm.mesh
    xyz = dm.positions3d()
    remap = np.full(len(mesh.v_out), -1, dtype=np.int64)
    remap[dm.vertex_ids] = np.arange(len(dm.vertex_ids))
    faces = mesh.faces_array()
    p0 = xyz[remap[faces[:, 0]]]
    p1 = xyz[remap[faces[:, 1]]]
    p2 = xyz[remap[faces[:, 2]]]
    n = np.cross(p1 - p0, p2 - p0)
    nn = np.linalg.norm(n, axis=1)
    nn = np.where(nn > 0, nn, 1.0)
    n = n / nn[:, None]
    flip = n[:, 2] < 0
    n[flip] = -n[flip]
    out = np.zeros((len(mesh.f_he), 3))
    out[mesh.alive_faces()] = n
    return out


def surface_error(dm: DepthMesh, gt: GroundTruth, cam: Camera,
                  stage_ms: dict | None = None, label: str = "",
                  min_coverage: float = 0.99) -> EvalReport:
    """Error report of a solved mesh against analytic ground truth."""
    mask = gt.mask if gt.mask is not None else np.isfinite(gt.depth)
    covered, depth, own = _interpolate_depth(dm, mask)
    n_mask = int(np.count_nonzero(mask))
    n_cov = int(np.count_nonzero(covered))
    if n_cov < min_coverage * n_mask:
        raise CoverageError(f"mesh covers {n_cov}/{n_mask} masked pixels")

    gt_cov = gt.depth[covered]
    aligned = align_gauge(depth, gt_cov, cam)
    err = aligned - gt_cov
    rmse = float(np.sqrt(np.mean(err * err)))
    made = float(np.mean(np.abs(err)))

    # Angular error against the clean synthetic normals.
    clean_nm, _ = synthesize(gt.descriptor, mask.shape[1], mask.shape[0], cam)
    fn = _face_normals_3d(dm)[own]
    gn = clean_nm.normals[covered]
    cosang = np.clip(np.einsum("pi,pi->p", fn, gn), -1.0, 1.0)
    mae = float(np.degrees(np.mean(np.arccos(cosang))))

    err_img = np.full(mask.shape, np.nan)
    err_img[covered] = np.abs(err)
    nv = dm.mesh.n_vertices
    report = EvalReport(
        rmse=rmse, made=made, mae_deg=mae, vertex_count=nv,
        compression_ratio=1.0 - nv / max(n_mask, 1),
        stage_ms=dict(stage_ms or {}), label=label, error_image=err_img)
    return report


def write_error_map(report: EvalReport, path, scale: float | None = None):
    """Absolute-error image as an 8-bit PNG (NaN outside the mask -> 0)."""
    import cv2

    img = report.error_image
    if img is None:
        raise ValueError("report carries no error image")
    finite = np.isfinite(img)
    if scale is None:
        scale = float(np.nanmax(img)) if finite.any() else 1.0
    scale = scale if scale > 0 else 1.0
    out = np.zeros(img.shape, dtype=np.uint8)
    out[finite] = np.clip(img[finite] / scale * 255.0, 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), out):
        raise IOError(f"cannot write {path}")


def write_csv(reports, path):
    rows = [r.row() for r in reports]
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def sweep(kind: str, values, descriptor, size: int, cam: Camera,
          base_cfg, seed: int = 0, vertex_fraction: float = 0.05):
    """One pipeline run per sweep point; failures are recorded, not fatal.

    kind: 'thresholds' (decimation threshold sweep), 'noise' (input normal
    perturbation in degrees), or 'resolutions' (image sizes; also times the
    undecimated full-resolution solve as the pixel-level baseline, with the
    vertex target scaled as a constant fraction of the foreground).
    """
    from . import pipeline as pl
    from .remesh import RemeshConfig

    reports = []
    for val in values:
        label = f"{kind[:-1]}={val}"
        try:
            if kind == "thresholds":
                nm, gt = synthesize(descriptor, size, size, cam)
                cfg = RemeshConfig.with_threshold(
                    float(val), lam=base_cfg.lam, alpha=base_cfg.alpha,
                    iterations=base_cfg.iterations)
                dm, _, stage_ms = pl.run_scene(nm, cam, cfg)
            elif kind == "noise":
                nm, gt = synthesize(descriptor, size, size, cam)
                noisy = add_noise(nm, float(val), seed=seed)
                cfg = base_cfg
                dm, _, stage_ms = pl.run_scene(noisy, cam, cfg)
            elif kind == "resolutions":
                n = int(val)
                desc = _scaled_descriptor(descriptor, size, n)
                nm, gt = synthesize(desc, n, n, cam)
                target = max(int(vertex_fraction * nm.foreground_count()), 16)
                cfg = RemeshConfig.with_vertex_target(
                    target, lam=base_cfg.lam, alpha=base_cfg.alpha,
                    iterations=base_cfg.iterations)
                dm, _, stage_ms = pl.run_scene(nm, cam, cfg)
                stage_ms["fullres_solve"] = pl.time_fullres_solve(nm, cam, cfg)
                stage_ms["pipeline_total"] = sum(
                    v for k, v in stage_ms.items()
                    if k in ("init", "rasterize", "remesh", "integrate"))
            else:
                raise ValueError(f"unknown sweep kind {kind!r}")
            reports.append(surface_error(dm, gt, cam, stage_ms, label))
        except Exception as exc:  # noqa: BLE001 - per-point failures recorded
            reports.append(EvalReport(
                rmse=float("nan"), made=float("nan"), mae_deg=float("nan"),
                vertex_count=0, compression_ratio=float("nan"),
                label=f"{label} FAILED: {exc}"))
    return reports


def _scaled_descriptor(descriptor, base_size, new_size):
    from .normalmap import SphereCap

    s = new_size / base_size
    if isinstance(descriptor, SphereCap):
        return SphereCap(descriptor.center_u * s, descriptor.center_v * s,
                         descriptor.radius * s,
                         descriptor.depth * s if descriptor.depth else 0.0,
                         descriptor.cap_angle_deg)
    return descriptor
