"""Projection models: viewing rays, integration constants, tangent-space Jacobians.

A camera is either orthographic or perspective (fx, fy, cx, cy in pixels).
Screen coordinates (u, v) are pixel units, u along columns, v along rows,
with pixel (i, j) owning the unit square [i, i+1] x [j, j+1] and its center
at (i + 0.5, j + 0.5).

The Jacobian of the surface parametrisation has the two tangent directions
as columns, derived from a unit normal alone.  Orthographic:

    d_u = e_x - (n_x / n_z) e_z,     d_v = e_y - (n_y / n_z) e_z

Perspective (weak perspective, unit distance):

    d_i = dr_i - (<n, dr_i> / <n, r>) r      for i in {u, v}

where r is the normalised viewing ray and dr_i its analytic derivative.
Both columns are orthogonal to the normal by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SlantError

ORTHOGRAPHIC = 0
PERSPECTIVE = 1

#: Minimum allowed cosine between normal and viewing ray.  Normals closer to
#: grazing are either rejected (strict mode) or rotated toward the ray until
#: the cosine equals this value (clamp mode, used throughout the pipeline).
EPS_SLANT = 0.05


@dataclass(frozen=True)
class Camera:
    kind: int = ORTHOGRAPHIC
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.kind not in (ORTHOGRAPHIC, PERSPECTIVE):
            raise ValueError(f"unknown camera kind {self.kind}")
        if self.kind == PERSPECTIVE and (self.fx <= 0 or self.fy <= 0):
            raise ValueError("perspective camera needs fx > 0 and fy > 0")

    @staticmethod
    def orthographic() -> "Camera":
        return Camera(ORTHOGRAPHIC)

    @staticmethod
    def perspective(fx: float, fy: float, cx: float, cy: float) -> "Camera":
        return Camera(PERSPECTIVE, fx, fy, cx, cy)

    @property
    def is_perspective(self) -> bool:
        return self.kind == PERSPECTIVE


def ray(cam: Camera, u) -> np.ndarray:
    """Unit viewing ray through screen point(s) ``u``.

    ``u`` is a length-2 point or an (..., 2) array.  Orthographic cameras
    return e_z for every pixel; perspective cameras return the normalised
    ray from the pinhole through the pixel.
    """
    u = np.asarray(u, dtype=np.float64)
    if cam.kind == ORTHOGRAPHIC:
        out = np.zeros(u.shape[:-1] + (3,))
        out[..., 2] = 1.0
        return out
    g = unnormalized_ray(cam, u)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def unnormalized_ray(cam: Camera, u) -> np.ndarray:
    """Ray direction with unit z-component (perspective), or e_z (orthographic)."""
    u = np.asarray(u, dtype=np.float64)
    g = np.empty(u.shape[:-1] + (3,))
    if cam.kind == ORTHOGRAPHIC:
        g[..., 0] = 0.0
        g[..., 1] = 0.0
    else:
        g[..., 0] = (u[..., 0] - cam.cx) / cam.fx
        g[..., 1] = (u[..., 1] - cam.cy) / cam.fy
    g[..., 2] = 1.0
    return g


def integration_constant(cam: Camera) -> tuple[float, float]:
    """Per-axis constant coupling normals to depth gradients: (1,1) or (1/fx, 1/fy)."""
    if cam.kind == ORTHOGRAPHIC:
        return (1.0, 1.0)
    return (1.0 / cam.fx, 1.0 / cam.fy)


def clamp_slant(n, r, eps: float = EPS_SLANT):
    """Rotate normals toward the ray until cos(angle) >= eps.

    Works on single vectors or batches with matching leading shape.  The
    rotation happens in the plane spanned by n and r, preserving the
    tangential direction of the normal.
    """
    n = np.asarray(n, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    c = np.sum(n * r, axis=-1, keepdims=True)
    bad = c[..., 0] < eps
    if not np.any(bad):
        return n
    out = np.array(n, copy=True)
    t = n - c * r                       # tangential component w.r.t. the ray
    tn = np.linalg.norm(t, axis=-1, keepdims=True)
    # Degenerate (n anti-parallel to r): fall back to a fixed tangent.
    tiny = tn[..., 0] < 1e-12
    if np.any(tiny):
        t = np.where(tiny[..., None], _any_orthogonal(r), t)
        tn = np.linalg.norm(t, axis=-1, keepdims=True)
    that = t / tn
    clamped = eps * r + np.sqrt(1.0 - eps * eps) * that
    out[bad] = clamped[bad]
    return out


def _any_orthogonal(r):
    """A deterministic unit vector orthogonal to each row of r."""
    r = np.asarray(r, dtype=np.float64)
    ax = np.argmin(np.abs(r), axis=-1)
    e = np.zeros_like(r)
    np.put_along_axis(e, ax[..., None], 1.0, axis=-1)
    t = e - np.sum(e * r, axis=-1, keepdims=True) * r
    return t / np.linalg.norm(t, axis=-1, keepdims=True)


def jacobian_from_normal(cam: Camera, n, u, clamp: bool = False) -> np.ndarray:
    """3x2 surface Jacobian (tangents as columns) from a unit normal.

    Raises SlantError when <n, ray> <= EPS_SLANT unless ``clamp`` is set, in
    which case the normal is first rotated toward the ray (see clamp_slant).
    Accepts batches: n of shape (..., 3) with u of shape (..., 2) yields an
    (..., 3, 2) array.
    """
    n = np.asarray(n, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    r = ray(cam, u)
    c = np.sum(n * r, axis=-1)
    if clamp:
        n = clamp_slant(n, r)
        c = np.sum(n * r, axis=-1)
    elif np.any(c <= EPS_SLANT):
        raise SlantError(
            f"normal/ray cosine {float(np.min(c)):.4g} <= {EPS_SLANT}"
        )

    if cam.kind == ORTHOGRAPHIC:
        J = np.zeros(n.shape[:-1] + (3, 2))
        ratio_x = n[..., 0] / n[..., 2]
        ratio_y = n[..., 1] / n[..., 2]
        J[..., 0, 0] = 1.0
        J[..., 2, 0] = -ratio_x
        J[..., 1, 1] = 1.0
        J[..., 2, 1] = -ratio_y
        return J

    g = unnormalized_ray(cam, u)
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    # dr_i = (I - r r^t) dg_i / |g|  with dg_u = (1/fx, 0, 0), dg_v = (0, 1/fy, 0)
    J = np.zeros(n.shape[:-1] + (3, 2))
    for i, comp in enumerate((0, 1)):
        dg = np.zeros(n.shape[:-1] + (3,))
        dg[..., comp] = 1.0 / (cam.fx if comp == 0 else cam.fy)
        dr = (dg - r * np.sum(r * dg, axis=-1, keepdims=True)) / gn
        coef = np.sum(n * dr, axis=-1) / c
        J[..., :, i] = dr - coef[..., None] * r
    return J


def area_factor(J: np.ndarray) -> np.ndarray:
    """sqrt(det(J^t J)): ratio of true surface area to screen area."""
    JtJ00 = np.sum(J[..., :, 0] * J[..., :, 0], axis=-1)
    JtJ01 = np.sum(J[..., :, 0] * J[..., :, 1], axis=-1)
    JtJ11 = np.sum(J[..., :, 1] * J[..., :, 1], axis=-1)
    det = JtJ00 * JtJ11 - JtJ01 * JtJ01
    return np.sqrt(np.maximum(det, 0.0))


def pixel_center_grid(width: int, height: int) -> np.ndarray:
    """(H, W, 2) array of pixel center coordinates."""
    uu, vv = np.meshgrid(
        np.arange(width, dtype=np.float64) + 0.5,
        np.arange(height, dtype=np.float64) + 0.5,
    )
    return np.stack([uu, vv], axis=-1)
