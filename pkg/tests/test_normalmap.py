import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import normint as ni
from normint.normalmap import decode, encode


def test_decode_u8_neutral_pixel(tmp_path, ortho):
    import cv2

    img = np.zeros((2, 2, 3), dtype=np.uint8)
    img[...] = (255, 128, 128)  # BGR on disk -> (128, 128, 255) RGB
    path = tmp_path / "n.png"
    assert cv2.imwrite(str(path), img)
    nm = decode(path, "u8")
    expected = np.array([2 * 128 / 255 - 1, 2 * 128 / 255 - 1, 1.0])
    expected /= np.linalg.norm(expected)
    assert np.allclose(nm.normals[0, 0], expected, atol=1e-12)
    assert nm.mask.all()


def test_decode_f32_passthrough(tmp_path):
    n = np.zeros((3, 4, 3), dtype=np.float32)
    n[..., 2] = 1.0
    path = tmp_path / "n.npy"
    np.save(path, n)
    nm = decode(path, "f32")
    assert np.allclose(nm.normals, [0, 0, 1])


def test_decode_u16(tmp_path):
    import cv2

    img = np.zeros((1, 1, 3), dtype=np.uint16)
    img[0, 0] = (65535, 32767, 65535)  # BGR -> RGB (65535, 32767, 65535)
    path = tmp_path / "n16.png"
    assert cv2.imwrite(str(path), img)
    nm = decode(path, "u16")
    raw = np.array([2 * 65535 / 65535 - 1, 2 * 32767 / 65535 - 1,
                    2 * 65535 / 65535 - 1])
    expected = raw / np.linalg.norm(raw)
    assert np.allclose(nm.normals[0, 0], expected, atol=1e-9)
    assert abs(expected[1]) < 1e-4  # renormalised (1, ~0, 1)/sqrt(2)


def test_decode_rejects_bad_file(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"not an image")
    with pytest.raises(ni.FormatError):
        decode(path, "u8")


def test_decode_mask_dimension_mismatch(tmp_path):
    import cv2

    img = np.full((4, 4, 3), 200, dtype=np.uint8)
    mask = np.full((3, 3), 255, dtype=np.uint8)
    cv2.imwrite(str(tmp_path / "n.png"), img)
    cv2.imwrite(str(tmp_path / "m.png"), mask)
    with pytest.raises(ni.DimensionMismatch):
        decode(tmp_path / "n.png", "u8", tmp_path / "m.png")


def test_decode_masks_out_backward_normals(tmp_path):
    n = np.zeros((2, 2, 3), dtype=np.float32)
    n[..., 2] = 1.0
    n[0, 0] = (0, 0, -1)
    path = tmp_path / "n.npy"
    np.save(path, n)
    nm = decode(path, "f32")
    assert not nm.mask[0, 0]
    assert nm.mask[1, 1]


@given(st.integers(0, 2**32 - 1), st.sampled_from(["u8", "u16"]))
@settings(max_examples=20, deadline=None)
def test_roundtrip_quantization(seed, encoding):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    n = rng.normal(size=(4, 4, 3))
    n[..., 2] = np.abs(n[..., 2]) + 0.3
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    nm = ni.NormalMap(n, np.ones((4, 4), bool))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "n.png"
        encode(nm, path, encoding)
        back = decode(path, encoding)
    # Identity up to per-component quantisation, then renormalisation.
    step = 1.0 / (255 if encoding == "u8" else 65535)
    assert np.max(np.abs(back.normals - nm.normals)) < 2.5 * step


def test_synthesize_flat_plane(ortho):
    nm, gt = ni.synthesize(ni.Plane(), 8, 8, ortho)
    assert np.allclose(nm.normals, [0, 0, 1])
    assert np.allclose(gt.depth, 0.0)


def test_synthesize_tilted_plane(ortho):
    nm, gt = ni.synthesize(ni.Plane(a=-1.0), 8, 8, ortho)
    expected = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    assert np.allclose(nm.normals, expected)


def test_synthesize_sphere_pole(ortho):
    nm, gt = ni.synthesize(ni.SphereCap(8.0, 8.0, 6.0, cap_angle_deg=60.0),
                           16, 16, ortho)
    # Pixel centers straddle the pole; the four center pixels must be near
    # frontal and the closest sample dominated by n_z.
    assert nm.mask[8, 8]
    assert nm.normals[8, 8, 2] > 0.99
    nm.validate()


def test_synthesize_descriptor_outside_image(ortho):
    with pytest.raises(ni.DomainError):
        ni.synthesize(ni.SphereCap(-100.0, -100.0, 5.0), 8, 8, ortho)


def test_add_noise_zero_sigma_identity(ortho):
    nm, _ = ni.synthesize(ni.SphereCap(8.0, 8.0, 6.0), 16, 16, ortho)
    out = ni.add_noise(nm, 0.0, seed=5)
    assert np.array_equal(out.normals, nm.normals)
    assert np.array_equal(out.mask, nm.mask)


def test_add_noise_mean_angle_matches_sigma():
    n = np.tile(np.array([0.0, 0.0, 1.0]), (320, 320, 1))
    nm = ni.NormalMap(n, np.ones((320, 320), bool))
    out = ni.add_noise(nm, 3.0, seed=11)
    cos = np.clip(out.normals[..., 2], -1, 1)
    angles = np.degrees(np.arccos(cos))
    mean = float(np.mean(angles))
    assert abs(mean - 3.0) < 0.3  # within 10% of 3 degrees


def test_add_noise_deterministic():
    nm, _ = ni.synthesize(ni.SphereCap(8.0, 8.0, 6.0), 16, 16,
                          ni.Camera.orthographic())
    a = ni.add_noise(nm, 5.0, seed=42)
    b = ni.add_noise(nm, 5.0, seed=42)
    assert np.array_equal(a.normals, b.normals)
    c = ni.add_noise(nm, 5.0, seed=43)
    assert not np.array_equal(a.normals, c.normals)


def test_ridge_scene_has_two_normal_populations(ortho):
    nm, gt = ni.synthesize(ni.Ridge(slope=0.4, angle_deg=20.0), 32, 32, ortho)
    uniq = np.unique(np.round(nm.normals.reshape(-1, 3), 9), axis=0)
    assert len(uniq) == 2
    nm.validate()


def test_perspective_sphere_consistent_with_log_depth(ortho):
    """Finite differences of log depth must match the normal-derived
    gradient relation for the perspective camera."""
    cam = ni.Camera.perspective(200, 200, 32, 32)
    desc = ni.SphereCap(32.0, 32.0, 20.0, depth=100.0, cap_angle_deg=50.0)
    nm, gt = ni.synthesize(desc, 64, 64, cam)
    z = np.log(gt.depth)
    j, i = 32, 32
    assert nm.mask[j, i] and nm.mask[j, i + 1] and nm.mask[j + 1, i]
    dzdu = z[j, i + 1] - z[j, i]
    n = nm.normals[j, i]
    # d(log d)/du = -n_x / (ut n_x + vt n_y + f n_z) with f = fx = fy and
    # (ut, vt) the pixel offset from the principal point.
    ut = i + 1.0 - cam.cx
    vt = j + 0.5 - cam.cy
    expected = -n[0] / (ut * n[0] + vt * n[1] + cam.fx * n[2])
    assert abs(dzdu - expected) < 5e-4
