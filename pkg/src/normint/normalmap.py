"""Normal-map I/O, synthetic scenes with analytic ground truth, noise injection.

Normals are stored per pixel as unit 3-vectors with n_z > 0 and follow the
depth-gradient convention: for an orthographic depth map z(u, v),

    n  ~  normalize(-dz/du, -dz/dv, 1).

Integer encodings map channel values in [0, 2^b - 1] affinely onto [-1, 1]
per component (the de-facto normal-map byte format), followed by
renormalisation.  Pixels that decode to n_z <= 0 or to a zero vector are
masked out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import camera as cam_mod
from .camera import Camera
from .errors import DimensionMismatch, DomainError, FormatError


@dataclass
class NormalMap:
    """Per-pixel unit normals plus a boolean foreground mask."""

    normals: np.ndarray  # (H, W, 3) float64
    mask: np.ndarray     # (H, W) bool

    def __post_init__(self):
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise DimensionMismatch(f"normals shape {self.normals.shape}")
        if self.mask.shape != self.normals.shape[:2]:
            raise DimensionMismatch(
                f"mask {self.mask.shape} vs normals {self.normals.shape[:2]}"
            )
        if self.normals.shape[0] == 0 or self.normals.shape[1] == 0:
            raise DimensionMismatch("empty image")

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def flat_normals(self) -> np.ndarray:
        """(H*W, 3) contiguous view for the kernels."""
        return self.normals.reshape(-1, 3)

    def flat_rays(self, cam: Camera) -> np.ndarray:
        """(H*W, 3) unit viewing rays at pixel centers."""
        centers = cam_mod.pixel_center_grid(self.width, self.height)
        return np.ascontiguousarray(cam_mod.ray(cam, centers).reshape(-1, 3))

    def validate(self, tol: float = 1e-6):
        """Check the unit-length and orientation invariants on masked pixels."""
        n = self.normals[self.mask]
        if n.size == 0:
            return
        norms = np.linalg.norm(n, axis=1)
        if np.any(np.abs(norms - 1.0) >= tol):
            raise FormatError("non-unit normals inside the mask")
        if np.any(n[:, 2] <= 0):
            raise FormatError("normals with n_z <= 0 inside the mask")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Depth z = a*u + b*v + c (coordinates in pixels)."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0


@dataclass(frozen=True)
class SphereCap:
    """Front cap of a sphere; the mask is the disk where the surface slant
    stays within ``cap_angle_deg`` of frontal."""

    center_u: float
    center_v: float
    radius: float
    depth: float = 0.0          # depth of the cap pole
    cap_angle_deg: float = 60.0


@dataclass(frozen=True)
class Sinusoid:
    """Depth amp * sin(2 pi freq u / W) * sin(2 pi freq v / H)."""

    amp: float
    freq: float


@dataclass(frozen=True)
class Ridge:
    """Two planes meeting at a crease along a line through (cu, cv) with
    direction angle ``angle_deg``; depth grows with distance from the line."""

    slope: float
    angle_deg: float = 20.0
    cu: float | None = None
    cv: float | None = None


Descriptor = Plane | SphereCap | Sinusoid | Ridge


@dataclass
class GroundTruth:
    """Analytic per-pixel depth paired with the generating descriptor."""

    depth: np.ndarray           # (H, W) float64, finite on masked pixels
    descriptor: Descriptor
    mask: np.ndarray = field(default=None)  # same mask as the paired NormalMap


def _normals_from_gradient(zu, zv):
    n = np.stack([-zu, -zv, np.ones_like(zu)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def synthesize(descriptor: Descriptor, width: int, height: int,
               cam: Camera) -> tuple[NormalMap, GroundTruth]:
    """Sample a synthetic surface at pixel centers.

    Returns the normal map together with the analytic depth.  For the
    perspective camera, depth means distance along the z-axis (the ray with
    unit z-component), and normals satisfy the perspective log-depth
    gradient relation.
    """
    centers = cam_mod.pixel_center_grid(width, height)
    uu = centers[..., 0]
    vv = centers[..., 1]
    mask = np.ones((height, width), dtype=bool)

    if isinstance(descriptor, Plane):
        a, b, c = descriptor.a, descriptor.b, descriptor.c
        if cam.kind == cam_mod.ORTHOGRAPHIC:
            depth = a * uu + b * vv + c
            normals = _normals_from_gradient(
                np.full_like(uu, a), np.full_like(vv, b))
        else:
            ut = (uu - cam.cx) / cam.fx
            vt = (vv - cam.cy) / cam.fy
            denom = 1.0 - a * ut - b * vt
            if np.any(denom <= 1e-9) or c <= 0:
                raise DomainError("plane not fully in front of the camera")
            depth = c / denom
            n = np.stack([np.full_like(uu, -a), np.full_like(vv, -b),
                          np.ones_like(uu)], axis=-1)
            normals = n / np.linalg.norm(n, axis=-1, keepdims=True)

    elif isinstance(descriptor, SphereCap):
        normals, depth, mask = _synthesize_sphere(descriptor, uu, vv, cam)

    elif isinstance(descriptor, Sinusoid):
        if cam.kind != cam_mod.ORTHOGRAPHIC:
            raise DomainError("sinusoid scene is orthographic only")
        wu = 2.0 * math.pi * descriptor.freq / width
        wv = 2.0 * math.pi * descriptor.freq / height
        depth = descriptor.amp * np.sin(wu * uu) * np.sin(wv * vv)
        zu = descriptor.amp * wu * np.cos(wu * uu) * np.sin(wv * vv)
        zv = descriptor.amp * wv * np.sin(wu * uu) * np.cos(wv * vv)
        normals = _normals_from_gradient(zu, zv)

    elif isinstance(descriptor, Ridge):
        if cam.kind != cam_mod.ORTHOGRAPHIC:
            raise DomainError("ridge scene is orthographic only")
        cu = descriptor.cu if descriptor.cu is not None else width / 2.0
        cv = descriptor.cv if descriptor.cv is not None else height / 2.0
        ang = math.radians(descriptor.angle_deg)
        # Signed distance from the crease line (direction (cos, sin)).
        nx, ny = -math.sin(ang), math.cos(ang)
        d = (uu - cu) * nx + (vv - cv) * ny
        depth = descriptor.slope * np.abs(d)
        s = np.sign(d)
        s[s == 0] = 1.0
        zu = descriptor.slope * s * nx
        zv = descriptor.slope * s * ny
        normals = _normals_from_gradient(zu, zv)

    else:
        raise DomainError(f"unknown descriptor {descriptor!r}")

    if not np.any(mask):
        raise DomainError("descriptor does not intersect the image")
    gt_depth = np.where(mask, depth, np.nan)
    nm = NormalMap(np.where(mask[..., None], normals, 0.0), mask)
    nm.validate()
    return nm, GroundTruth(gt_depth, descriptor, mask=mask.copy())


def _synthesize_sphere(desc: SphereCap, uu, vv, cam: Camera):
    theta = math.radians(desc.cap_angle_deg)
    if desc.radius <= 0 or not (0 < theta < math.pi / 2):
        raise DomainError("sphere cap needs radius > 0 and cap angle in (0, 90)")
    if cam.kind == cam_mod.ORTHOGRAPHIC:
        du = uu - desc.center_u
        dv = vv - desc.center_v
        rho2 = du * du + dv * dv
        rmax = desc.radius * math.sin(theta)
        mask = rho2 <= rmax * rmax
        w = np.sqrt(np.maximum(desc.radius ** 2 - rho2, 0.0))
        # Depth of the front hemisphere with the pole at desc.depth.
        depth = desc.depth + desc.radius - w
        normals = np.stack([-du, -dv, w], axis=-1) / desc.radius
        # Outside the cap the normals are garbage; zeroed by the caller.
        normals[~mask] = (0.0, 0.0, 1.0)
        return normals, depth, mask

    # Perspective: sphere center on the optical axis continuation through
    # (center_u, center_v) at depth ``depth + radius`` of its center.
    zc = desc.depth + desc.radius
    if desc.depth <= 0:
        raise DomainError("perspective sphere must sit in front of the camera")
    g = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy,
                  np.ones_like(uu)], axis=-1)
    ray_c = np.stack([(desc.center_u - cam.cx) / cam.fx,
                      (desc.center_v - cam.cy) / cam.fy, 1.0])
    C = zc * np.asarray(ray_c)
    # Solve |t*g - C|^2 = R^2 for the near root.
    a = np.sum(g * g, axis=-1)
    b = -2.0 * np.sum(g * C, axis=-1)
    c = float(np.dot(C, C) - desc.radius ** 2)
    disc = b * b - 4.0 * a * c
    hit = disc > 0
    t = np.where(hit, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a), np.nan)
    P = t[..., None] * g
    n = (C - P) / desc.radius      # inward = stored toward-camera convention
    # Cap is measured around the sphere point closest to the camera: the
    # angle between the stored normal and the center-to-camera direction.
    axis = C / np.linalg.norm(C)
    cosang = np.clip(np.einsum("...i,i->...", n, axis), -1.0, 1.0)
    mask = hit & (cosang >= math.cos(theta))
    normals = np.where(mask[..., None], n, (0.0, 0.0, 1.0))
    depth = np.where(mask, P[..., 2], np.nan)
    return normals, depth, mask


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def add_noise(nm: NormalMap, sigma_deg: float, seed: int = 0) -> NormalMap:
    """Perturb each masked normal inside its tangent plane.

    Two i.i.d. Gaussian tangent components are drawn with a scale calibrated
    so that the *mean* angular deviation equals ``sigma_deg``; the result is
    renormalised.  Deterministic for a fixed seed; sigma = 0 returns a
    bit-identical copy.
    """
    if sigma_deg < 0:
        raise ValueError("sigma must be >= 0")
    if sigma_deg == 0:
        return NormalMap(nm.normals.copy(), nm.mask.copy())
    rng = np.random.default_rng(seed)
    n = nm.normals[nm.mask]
    t1 = cam_mod._any_orthogonal(n)
    t2 = np.cross(n, t1)
    # Rayleigh mean is scale*sqrt(pi/2); calibrate so E[angle] = sigma.
    scale = math.tan(math.radians(sigma_deg)) * math.sqrt(2.0 / math.pi)
    eps = rng.normal(0.0, scale, size=(n.shape[0], 2))
    pert = n + eps[:, :1] * t1 + eps[:, 1:] * t2
    pert /= np.linalg.norm(pert, axis=1, keepdims=True)
    out = nm.normals.copy()
    out[nm.mask] = pert
    mask = nm.mask.copy()
    # Grazing flips are possible at extreme sigma; such pixels leave the mask.
    bad = out[..., 2] <= 0
    mask &= ~bad
    out[bad] = (0.0, 0.0, 1.0)
    return NormalMap(out, mask)


# ---------------------------------------------------------------------------
# Decode / encode
# ---------------------------------------------------------------------------

ENCODINGS = ("u8", "u16", "f32")


def _read_image(path):
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"cannot read image: {path}")
    if img.ndim == 3 and img.shape[2] >= 3:
        img = np.ascontiguousarray(img[..., [2, 1, 0] + list(range(3, img.shape[2]))])
    return img


def decode(path, encoding: str, mask_source=None) -> NormalMap:
    """Load a normal map from a PNG (u8/u16) or .npy float file.

    ``mask_source`` is an optional path to a single-channel mask image; the
    alpha channel (if present) is used otherwise, and pixels whose decoded
    normal is zero-length or has n_z <= 0 are always masked out.
    """
    if encoding not in ENCODINGS:
        raise FormatError(f"unknown encoding {encoding!r}")

    alpha = None
    if encoding == "f32":
        try:
            data = np.load(str(path))
        except Exception as exc:  # noqa: BLE001 - np.load raises various types
            raise FormatError(f"cannot read float normals: {path} ({exc})") from exc
        if data.ndim != 3 or data.shape[2] < 3:
            raise FormatError(f"float normal map must be (H, W, >=3), got {data.shape}")
        n = data[..., :3].astype(np.float64)
        if data.shape[2] >= 4:
            alpha = data[..., 3] > 0
    else:
        img = _read_image(path)
        if img.ndim != 3 or img.shape[2] < 3:
            raise FormatError(f"normal map must have >= 3 channels: {path}")
        bits = 8 if encoding == "u8" else 16
        maxval = float(2 ** bits - 1)
        if img.dtype == np.uint8 and encoding == "u16":
            raise FormatError("u16 encoding requested but file is 8-bit")
        n = 2.0 * img[..., :3].astype(np.float64) / maxval - 1.0
        if img.shape[2] >= 4:
            alpha = img[..., 3] > 0

    if mask_source is not None:
        m = _read_image(mask_source)
        if m.ndim == 3:
            m = m[..., 0]
        if m.shape != n.shape[:2]:
            raise DimensionMismatch(
                f"mask {m.shape} does not match image {n.shape[:2]}")
        mask = m > 0
    elif alpha is not None:
        mask = alpha
    else:
        mask = np.ones(n.shape[:2], dtype=bool)

    norms = np.linalg.norm(n, axis=-1)
    mask = mask & (norms > 1e-6)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / np.maximum(norms, 1e-30)[..., None]
    mask = mask & (n[..., 2] > 0)
    n[~mask] = (0.0, 0.0, 1.0)
    return NormalMap(n, mask)


def encode(nm: NormalMap, path, encoding: str, mask_path=None):
    """Write a normal map (and optionally its mask) back to disk."""
    import cv2

    if encoding == "f32":
        np.save(str(path), nm.normals.astype(np.float32))
    else:
        bits = 8 if encoding == "u8" else 16
        maxval = 2 ** bits - 1
        q = np.round((nm.normals + 1.0) * 0.5 * maxval)
        q = np.clip(q, 0, maxval).astype(np.uint8 if bits == 8 else np.uint16)
        bgr = np.ascontiguousarray(q[..., ::-1])
        if not cv2.imwrite(str(path), bgr):
            raise FormatError(f"cannot write {path}")
    if mask_path is not None:
        m = (nm.mask.astype(np.uint8)) * 255
        if not cv2.imwrite(str(mask_path), m):
            raise FormatError(f"cannot write {mask_path}")
